#include <atomic>
#include <cstdlib>
#include <vector>

#include "doctest.h"
#include "rigfit/common.hpp"

using namespace rigfit;

TEST_CASE("rng streams are deterministic") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  Rng c(42), d(43);
  bool differ = false;
  for (int i = 0; i < 10; ++i) differ |= c.next_u64() != d.next_u64();
  CHECK(differ);
}

TEST_CASE("rng uniform stays in range") {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(-2.0, 3.0);
    CHECK(u >= -2.0);
    CHECK(u < 3.0);
  }
}

TEST_CASE("rng normal matches moments roughly") {
  Rng rng(11);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sumsq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::abs(sumsq / n - 1.0) < 0.02);
}

TEST_CASE("rng below covers the range without bias at the top") {
  Rng rng(3);
  std::vector<int> hits(10, 0);
  for (int i = 0; i < 20000; ++i) ++hits[rng.below(10)];
  for (int h : hits) CHECK(h > 1500);
}

TEST_CASE("forked streams differ from the parent") {
  Rng rng(5);
  Rng child = rng.fork();
  bool differ = false;
  for (int i = 0; i < 10; ++i) differ |= rng.next_u64() != child.next_u64();
  CHECK(differ);
}

TEST_CASE("parallel_for hits every index exactly once") {
  const std::size_t n = 10000;
  std::vector<std::atomic<int>> counts(n);
  parallel_for(n, [&](std::size_t i) { counts[i].fetch_add(1); });
  for (std::size_t i = 0; i < n; ++i) CHECK(counts[i].load() == 1);
}

TEST_CASE("thread count respects the environment cap") {
  setenv("RIGFIT_THREADS", "2", 1);
  CHECK(thread_count() == 2);
  setenv("RIGFIT_THREADS", "1", 1);
  CHECK(thread_count() == 1);
  unsetenv("RIGFIT_THREADS");
  CHECK(thread_count() >= 1);
}
