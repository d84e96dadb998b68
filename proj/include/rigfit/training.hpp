#pragma once

#include <functional>

#include "rigfit/network.hpp"

namespace rigfit {

struct TrainSchedule {
  int iterations = 3000;
  int batch_size = 85;
  double lr = 1e-3;           // phase 1 default; phase 2 uses 1e-4
  double lambda0 = 0.05;      // sparsity weight
  double lambda1 = 0.1;       // adversarial weight
  double clip = 0.01;         // critic weight clipping bound
  int critic_ratio = 5;       // critic updates per generator update
  std::uint64_t seed = 1234;
  double validation_bound = -1.0;  // mean per-sample recon L1; <0 disables
  int log_every = 50;
};

struct TrainLogEntry {
  int step = 0;
  double critic_loss = 0.0;
  double gen_loss = 0.0;
  double recon_l1 = 0.0;  // mean per-sample reconstruction L1
};
using TrainLogger = std::function<void(const TrainLogEntry&)>;

// Phase 1: autoencoder with adversarial critic, Z_i = E(J_i).
// corpus rows are skinning samples (absolute free-weight vectors).
// Returns mean recon L1 on the validation rows (empty validation -> training
// corpus) and throws NumericalError if validation_bound is set and missed.
double train_autoencoder_phase(SkinDecoder& decoder, SkinEncoder& encoder,
                               Critic& critic, const Eigen::MatrixXd& corpus,
                               const Eigen::MatrixXd& validation,
                               const TrainSchedule& schedule,
                               const TrainLogger& logger = nullptr);

// Phase 2: decoder fine-tuning against the critic with Z ~ N(0, I) and
// weight clipping; encoder is no longer used.
void finetune_decoder_gan_phase(SkinDecoder& decoder, Critic& critic,
                                const Eigen::MatrixXd& corpus,
                                const TrainSchedule& schedule,
                                const TrainLogger& logger = nullptr);

}  // namespace rigfit
