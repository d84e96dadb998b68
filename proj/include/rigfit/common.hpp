#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace rigfit {

// All recoverable failures surface as Error; the CLI maps them to exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& msg) : Error(msg) {}
};

// Deterministic RNG. Distribution shaping is hand-rolled on top of
// mt19937_64 so that streams are reproducible across platforms and
// standard library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  // uniform in [0, 1)
  double uniform();
  double uniform(double lo, double hi);
  // standard normal via Box-Muller
  double normal();
  double normal(double mean, double sigma);
  // uniform integer in [0, n)
  std::uint64_t below(std::uint64_t n);
  // derive an independent child stream
  Rng fork();

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Number of worker threads: RIGFIT_THREADS if set, else hardware concurrency.
int thread_count();

// Chunked parallel loop over [0, n). fn(i) must be safe to run concurrently
// for distinct i; results keyed by index stay deterministic.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace rigfit
