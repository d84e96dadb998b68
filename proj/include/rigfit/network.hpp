#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <vector>

#include "rigfit/common.hpp"
#include "rigfit/tape.hpp"

namespace rigfit {

double swish(double x);
Eigen::MatrixXd swish(const Eigen::MatrixXd& x);

// weight is X x Y; forward is row-major batches: (B x X) * weight -> B x Y.
struct DenseLayer {
  Eigen::MatrixXd weight;
  std::optional<Eigen::VectorXd> bias;

  long param_count() const {
    return weight.size() + (bias ? bias->size() : 0);
  }
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
};

// One (X/n) x (Y/n) block shared across n contiguous input/output groups.
struct GroupwiseDenseLayer {
  int groups = 1;
  int in_dim = 0, out_dim = 0;
  Eigen::MatrixXd shared_block;  // (X/n) x (Y/n)

  long param_count() const { return shared_block.size(); }
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
};

GroupwiseDenseLayer make_groupwise_layer(int in_dim, int out_dim, int groups);

struct DecoderConfig {
  int latent_dim = 50;
  // hidden dims of the bias-free dense stack (last entry feeds the first
  // group-wise layer)
  std::vector<int> dense_dims = {80, 135, 250};
  // (output dim, group count) per group-wise layer; final output dim must
  // match the rig's weight parameter count
  std::vector<std::pair<int, int>> group_layers = {{500, 2}, {1100, 5},
                                                   {8990, 10}};

  int output_dim() const { return group_layers.back().first; }
};

// Bias-free generator: residual(0) = 0 exactly, so forward(0) returns the
// linear weights bit-identically.
struct SkinDecoder {
  DecoderConfig config;
  std::vector<DenseLayer> dense;            // never carries biases
  std::vector<GroupwiseDenseLayer> group;
  Eigen::VectorXd linear_weights;           // length = output dim

  static SkinDecoder create(const DecoderConfig& config,
                            const Eigen::VectorXd& linear_weights, Rng& rng);

  int output_dim() const { return config.output_dim(); }
  long network_float_count() const;

  Eigen::MatrixXd residual(const Eigen::MatrixXd& z_batch) const;  // B x out
  Eigen::VectorXd forward(const Eigen::VectorXd& z) const;  // linear + residual

  // flat network parameter block (dense then group blocks, column-major)
  Eigen::VectorXd params_to_vector() const;
  void params_from_vector(const Eigen::VectorXd& v);
};

struct EncoderConfig {
  int input_dim = 8990;
  int latent_dim = 50;
  int depth = 7;  // layers, halving dims toward the latent

  std::vector<int> layer_dims() const;  // output dim per layer
};

struct SkinEncoder {
  EncoderConfig config;
  std::vector<DenseLayer> layers;  // with biases

  static SkinEncoder create(const EncoderConfig& config, Rng& rng);
  Eigen::MatrixXd forward(const Eigen::MatrixXd& j_batch) const;  // B x latent
  Eigen::VectorXd params_to_vector() const;
  void params_from_vector(const Eigen::VectorXd& v);
};

struct CriticConfig {
  int input_dim = 50;
  // 4 layers up to 256, 4 layers down to 1
  std::vector<int> layer_dims = {128, 192, 224, 256, 64, 16, 4, 1};
};

struct Critic {
  CriticConfig config;
  std::vector<DenseLayer> layers;  // with biases

  static Critic create(const CriticConfig& config, Rng& rng);
  Eigen::VectorXd forward(const Eigen::MatrixXd& batch) const;  // B scores
  Eigen::VectorXd params_to_vector() const;
  void params_from_vector(const Eigen::VectorXd& v);
  void clip_weights(double c);
};

// (1/m) * sum_i (C(real_i) - C(fake_i)), sign as printed.
double critic_loss(const Critic& critic, const Eigen::MatrixXd& real_batch,
                   const Eigen::MatrixXd& fake_batch);

// sum_i (|J_i - D(Z_i)|_1 + lambda0 |D(Z_i)|_1 - lambda1 C(D(Z_i)))
double generator_loss(const SkinDecoder& decoder, const Critic& critic,
                      const Eigen::MatrixXd& j_batch,
                      const Eigen::MatrixXd& z_batch, double lambda0,
                      double lambda1);

// --- tape builders ---

ad::Var dense_forward_tape(ad::Tape& t, ad::Var x, ad::Var weight,
                           std::optional<ad::Var> bias);
ad::Var groupwise_forward_tape(ad::Tape& t, const GroupwiseDenseLayer& layer,
                               ad::Var x, ad::Var shared_block);

struct DecoderVars {
  std::vector<ad::Var> dense_w;
  std::vector<ad::Var> group_w;
};
struct StackVars {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
};

DecoderVars make_decoder_vars(ad::Tape& t, const SkinDecoder& d, bool trainable);
StackVars make_encoder_vars(ad::Tape& t, const SkinEncoder& e, bool trainable);
StackVars make_critic_vars(ad::Tape& t, const Critic& c, bool trainable);

// residual only (B x out); add linear weights outside where needed
ad::Var decoder_residual_tape(ad::Tape& t, const SkinDecoder& d,
                              const DecoderVars& vars, ad::Var z_batch);
ad::Var encoder_forward_tape(ad::Tape& t, const SkinEncoder& e,
                             const StackVars& vars, ad::Var j_batch);
ad::Var critic_forward_tape(ad::Tape& t, const Critic& c,
                            const StackVars& vars, ad::Var batch);  // B x 1

// Checkpoint: little-endian binary with a dims header; round-trips weights
// bit-identically.
void save_checkpoint(const SkinDecoder& decoder,
                     const std::filesystem::path& path);
SkinDecoder load_checkpoint(const std::filesystem::path& path);

}  // namespace rigfit
