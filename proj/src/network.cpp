#include "rigfit/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace rigfit {

double swish(double x) { return x / (1.0 + std::exp(-x)); }

Eigen::MatrixXd swish(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return swish(v); });
}

Eigen::MatrixXd DenseLayer::forward(const Eigen::MatrixXd& x) const {
  if (x.cols() != weight.rows())
    throw Error("DenseLayer: input dim " + std::to_string(x.cols()) +
                " != " + std::to_string(weight.rows()));
  Eigen::MatrixXd y = x * weight;
  if (bias) y.rowwise() += bias->transpose();
  return y;
}

Eigen::MatrixXd GroupwiseDenseLayer::forward(const Eigen::MatrixXd& x) const {
  if (x.cols() != in_dim) throw Error("GroupwiseDenseLayer: input dim mismatch");
  const int gx = in_dim / groups, gy = out_dim / groups;
  Eigen::MatrixXd y(x.rows(), out_dim);
  for (int g = 0; g < groups; ++g)
    y.middleCols(g * gy, gy) = x.middleCols(g * gx, gx) * shared_block;
  return y;
}

GroupwiseDenseLayer make_groupwise_layer(int in_dim, int out_dim, int groups) {
  if (groups < 1 || in_dim % groups != 0 || out_dim % groups != 0)
    throw Error("GroupwiseDenseLayer: group count " + std::to_string(groups) +
                " must divide both " + std::to_string(in_dim) + " and " +
                std::to_string(out_dim));
  GroupwiseDenseLayer l;
  l.groups = groups;
  l.in_dim = in_dim;
  l.out_dim = out_dim;
  l.shared_block.setZero(in_dim / groups, out_dim / groups);
  return l;
}

namespace {

// He-style scaled normal init
Eigen::MatrixXd init_weight(int in_dim, int out_dim, Rng& rng) {
  const double s = std::sqrt(2.0 / in_dim);
  Eigen::MatrixXd w(in_dim, out_dim);
  for (int c = 0; c < out_dim; ++c)
    for (int r = 0; r < in_dim; ++r) w(r, c) = s * rng.normal();
  return w;
}

long copy_out(const Eigen::MatrixXd& m, Eigen::VectorXd& v, long at) {
  std::memcpy(v.data() + at, m.data(), sizeof(double) * m.size());
  return at + m.size();
}

long copy_in(Eigen::MatrixXd& m, const Eigen::VectorXd& v, long at) {
  std::memcpy(m.data(), v.data() + at, sizeof(double) * m.size());
  return at + m.size();
}

}  // namespace

SkinDecoder SkinDecoder::create(const DecoderConfig& config,
                                const Eigen::VectorXd& linear_weights,
                                Rng& rng) {
  if (config.dense_dims.empty() || config.group_layers.empty())
    throw Error("SkinDecoder: empty layer configuration");
  if (linear_weights.size() != config.output_dim())
    throw Error("SkinDecoder: linear weight length " +
                std::to_string(linear_weights.size()) +
                " != decoder output dim " +
                std::to_string(config.output_dim()));
  SkinDecoder d;
  d.config = config;
  int in = config.latent_dim;
  for (int out : config.dense_dims) {
    d.dense.push_back({init_weight(in, out, rng), std::nullopt});
    in = out;
  }
  for (const auto& [out, n] : config.group_layers) {
    GroupwiseDenseLayer l = make_groupwise_layer(in, out, n);
    l.shared_block = init_weight(in / n, out / n, rng);
    d.group.push_back(std::move(l));
    in = out;
  }
  d.linear_weights = linear_weights;
  return d;
}

long SkinDecoder::network_float_count() const {
  long total = 0;
  for (const auto& l : dense) total += l.param_count();
  for (const auto& l : group) total += l.param_count();
  return total;
}

Eigen::MatrixXd SkinDecoder::residual(const Eigen::MatrixXd& z_batch) const {
  Eigen::MatrixXd x = z_batch;
  for (std::size_t i = 0; i < dense.size(); ++i)
    x = swish(dense[i].forward(x));
  for (std::size_t i = 0; i < group.size(); ++i) {
    x = group[i].forward(x);
    if (i + 1 < group.size()) x = swish(x);
  }
  return x;
}

Eigen::VectorXd SkinDecoder::forward(const Eigen::VectorXd& z) const {
  if (z.size() != config.latent_dim)
    throw Error("SkinDecoder::forward: latent dim mismatch");
  if (z.isZero(0.0)) return linear_weights;  // structurally exact
  return linear_weights + residual(z.transpose()).row(0).transpose();
}

Eigen::VectorXd SkinDecoder::params_to_vector() const {
  Eigen::VectorXd v(network_float_count());
  long at = 0;
  for (const auto& l : dense) at = copy_out(l.weight, v, at);
  for (const auto& l : group) at = copy_out(l.shared_block, v, at);
  return v;
}

void SkinDecoder::params_from_vector(const Eigen::VectorXd& v) {
  if (v.size() != network_float_count())
    throw Error("SkinDecoder::params_from_vector: length mismatch");
  long at = 0;
  for (auto& l : dense) at = copy_in(l.weight, v, at);
  for (auto& l : group) at = copy_in(l.shared_block, v, at);
}

std::vector<int> EncoderConfig::layer_dims() const {
  if (depth < 1) throw Error("EncoderConfig: depth must be >= 1");
  std::vector<int> dims;
  int d = input_dim;
  for (int i = 0; i < depth - 1; ++i) {
    d = std::max(latent_dim, d / 2);
    dims.push_back(d);
  }
  dims.push_back(latent_dim);
  return dims;
}

namespace {

std::vector<DenseLayer> make_stack(int in, const std::vector<int>& dims,
                                   Rng& rng) {
  std::vector<DenseLayer> layers;
  for (int out : dims) {
    DenseLayer l{init_weight(in, out, rng), Eigen::VectorXd::Zero(out)};
    layers.push_back(std::move(l));
    in = out;
  }
  return layers;
}

Eigen::MatrixXd stack_forward(const std::vector<DenseLayer>& layers,
                              const Eigen::MatrixXd& x0) {
  Eigen::MatrixXd x = x0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(x);
    if (i + 1 < layers.size()) x = swish(x);
  }
  return x;
}

Eigen::VectorXd stack_to_vector(const std::vector<DenseLayer>& layers) {
  long total = 0;
  for (const auto& l : layers) total += l.param_count();
  Eigen::VectorXd v(total);
  long at = 0;
  for (const auto& l : layers) {
    at = copy_out(l.weight, v, at);
    if (l.bias) {
      std::memcpy(v.data() + at, l.bias->data(), sizeof(double) * l.bias->size());
      at += l.bias->size();
    }
  }
  return v;
}

void stack_from_vector(std::vector<DenseLayer>& layers,
                       const Eigen::VectorXd& v) {
  long total = 0;
  for (const auto& l : layers) total += l.param_count();
  if (v.size() != total) throw Error("network stack: parameter length mismatch");
  long at = 0;
  for (auto& l : layers) {
    at = copy_in(l.weight, v, at);
    if (l.bias) {
      std::memcpy(l.bias->data(), v.data() + at, sizeof(double) * l.bias->size());
      at += l.bias->size();
    }
  }
}

}  // namespace

SkinEncoder SkinEncoder::create(const EncoderConfig& config, Rng& rng) {
  SkinEncoder e;
  e.config = config;
  e.layers = make_stack(config.input_dim, config.layer_dims(), rng);
  return e;
}

Eigen::MatrixXd SkinEncoder::forward(const Eigen::MatrixXd& j_batch) const {
  return stack_forward(layers, j_batch);
}

Eigen::VectorXd SkinEncoder::params_to_vector() const {
  return stack_to_vector(layers);
}

void SkinEncoder::params_from_vector(const Eigen::VectorXd& v) {
  stack_from_vector(layers, v);
}

Critic Critic::create(const CriticConfig& config, Rng& rng) {
  if (config.layer_dims.empty() || config.layer_dims.back() != 1)
    throw Error("Critic: final layer dim must be 1");
  Critic c;
  c.config = config;
  c.layers = make_stack(config.input_dim, config.layer_dims, rng);
  return c;
}

Eigen::VectorXd Critic::forward(const Eigen::MatrixXd& batch) const {
  return stack_forward(layers, batch).col(0);
}

Eigen::VectorXd Critic::params_to_vector() const {
  return stack_to_vector(layers);
}

void Critic::params_from_vector(const Eigen::VectorXd& v) {
  stack_from_vector(layers, v);
}

void Critic::clip_weights(double c) {
  for (auto& l : layers) {
    l.weight = l.weight.cwiseMax(-c).cwiseMin(c);
    if (l.bias) *l.bias = l.bias->cwiseMax(-c).cwiseMin(c);
  }
}

double critic_loss(const Critic& critic, const Eigen::MatrixXd& real_batch,
                   const Eigen::MatrixXd& fake_batch) {
  if (real_batch.rows() == 0) throw Error("critic_loss: empty batch");
  if (real_batch.rows() != fake_batch.rows())
    throw Error("critic_loss: batch size mismatch");
  return (critic.forward(real_batch) - critic.forward(fake_batch)).mean();
}

double generator_loss(const SkinDecoder& decoder, const Critic& critic,
                      const Eigen::MatrixXd& j_batch,
                      const Eigen::MatrixXd& z_batch, double lambda0,
                      double lambda1) {
  if (j_batch.rows() != z_batch.rows())
    throw Error("generator_loss: batch size mismatch");
  Eigen::MatrixXd out =
      decoder.residual(z_batch).rowwise() + decoder.linear_weights.transpose();
  const double recon = (j_batch - out).cwiseAbs().sum();
  const double sparsity = out.cwiseAbs().sum();
  const double adv = critic.forward(out).sum();
  return recon + lambda0 * sparsity - lambda1 * adv;
}

ad::Var dense_forward_tape(ad::Tape& t, ad::Var x, ad::Var weight,
                           std::optional<ad::Var> bias) {
  ad::Var y = t.matmul(x, weight);
  if (bias) {
    const Eigen::Index b = t.value(y).rows();
    // broadcast bias row over the batch via ones * bias^T
    const ad::Var ones = t.constant(Eigen::MatrixXd::Ones(b, 1));
    y = t.add(y, t.matmul(ones, t.transpose(*bias)));
  }
  return y;
}

ad::Var groupwise_forward_tape(ad::Tape& t, const GroupwiseDenseLayer& layer,
                               ad::Var x, ad::Var shared_block) {
  const Eigen::Index b = t.value(x).rows();
  if (t.value(x).cols() != layer.in_dim)
    throw Error("groupwise_forward_tape: input dim mismatch");
  const int gx = layer.in_dim / layer.groups;
  std::vector<ad::Var> parts;
  parts.reserve(layer.groups);
  for (int g = 0; g < layer.groups; ++g)
    parts.push_back(t.matmul(
        t.slice(x, 0, g * gx, static_cast<int>(b), gx), shared_block));
  return t.concat_cols(parts);
}

DecoderVars make_decoder_vars(ad::Tape& t, const SkinDecoder& d,
                              bool trainable) {
  DecoderVars v;
  for (const auto& l : d.dense)
    v.dense_w.push_back(trainable ? t.input(l.weight) : t.constant(l.weight));
  for (const auto& l : d.group)
    v.group_w.push_back(trainable ? t.input(l.shared_block)
                                  : t.constant(l.shared_block));
  return v;
}

StackVars make_encoder_vars(ad::Tape& t, const SkinEncoder& e, bool trainable) {
  StackVars v;
  for (const auto& l : e.layers) {
    v.weights.push_back(trainable ? t.input(l.weight) : t.constant(l.weight));
    v.biases.push_back(trainable ? t.input(*l.bias) : t.constant(*l.bias));
  }
  return v;
}

StackVars make_critic_vars(ad::Tape& t, const Critic& c, bool trainable) {
  StackVars v;
  for (const auto& l : c.layers) {
    v.weights.push_back(trainable ? t.input(l.weight) : t.constant(l.weight));
    v.biases.push_back(trainable ? t.input(*l.bias) : t.constant(*l.bias));
  }
  return v;
}

ad::Var decoder_residual_tape(ad::Tape& t, const SkinDecoder& d,
                              const DecoderVars& vars, ad::Var z_batch) {
  ad::Var x = z_batch;
  for (std::size_t i = 0; i < d.dense.size(); ++i)
    x = ad::swish(t, dense_forward_tape(t, x, vars.dense_w[i], std::nullopt));
  for (std::size_t i = 0; i < d.group.size(); ++i) {
    x = groupwise_forward_tape(t, d.group[i], x, vars.group_w[i]);
    if (i + 1 < d.group.size()) x = ad::swish(t, x);
  }
  return x;
}

namespace {

ad::Var stack_forward_tape(ad::Tape& t, const StackVars& vars, ad::Var x) {
  for (std::size_t i = 0; i < vars.weights.size(); ++i) {
    x = dense_forward_tape(t, x, vars.weights[i], vars.biases[i]);
    if (i + 1 < vars.weights.size()) x = ad::swish(t, x);
  }
  return x;
}

}  // namespace

ad::Var encoder_forward_tape(ad::Tape& t, const SkinEncoder& e,
                             const StackVars& vars, ad::Var j_batch) {
  (void)e;
  return stack_forward_tape(t, vars, j_batch);
}

ad::Var critic_forward_tape(ad::Tape& t, const Critic& c,
                            const StackVars& vars, ad::Var batch) {
  (void)c;
  return stack_forward_tape(t, vars, batch);
}

namespace {

constexpr char kMagic[8] = {'R', 'F', 'S', 'K', 'I', 'N', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  // little-endian
  char buf[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff),
                 static_cast<char>((v >> 24) & 0xff)};
  out.write(buf, 4);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& what) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4))
    throw Error("checkpoint: truncated header (" + what + ")");
  return static_cast<std::uint32_t>(buf[0]) |
         (static_cast<std::uint32_t>(buf[1]) << 8) |
         (static_cast<std::uint32_t>(buf[2]) << 16) |
         (static_cast<std::uint32_t>(buf[3]) << 24);
}

void write_doubles(std::ofstream& out, const double* data, long count) {
  // assumes little-endian host (checked at load via sentinel)
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
}

void read_doubles(std::ifstream& in, double* data, long count) {
  if (!in.read(reinterpret_cast<char*>(data),
               static_cast<std::streamsize>(count * sizeof(double))))
    throw Error("checkpoint: truncated weight data");
}

}  // namespace

void save_checkpoint(const SkinDecoder& decoder,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint: " + path.string());
  out.write(kMagic, 8);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(decoder.config.latent_dim));
  write_u32(out, static_cast<std::uint32_t>(decoder.config.dense_dims.size()));
  for (int d : decoder.config.dense_dims)
    write_u32(out, static_cast<std::uint32_t>(d));
  write_u32(out, static_cast<std::uint32_t>(decoder.config.group_layers.size()));
  for (const auto& [dim, n] : decoder.config.group_layers) {
    write_u32(out, static_cast<std::uint32_t>(dim));
    write_u32(out, static_cast<std::uint32_t>(n));
  }
  const Eigen::VectorXd params = decoder.params_to_vector();
  write_doubles(out, params.data(), params.size());
  write_doubles(out, decoder.linear_weights.data(),
                decoder.linear_weights.size());
  if (!out) throw Error("checkpoint write failed: " + path.string());
}

SkinDecoder load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw Error("checkpoint: corrupted header (bad magic): " + path.string());
  const std::uint32_t version = read_u32(in, "version");
  if (version != kVersion)
    throw Error("checkpoint: version mismatch: file has version " +
                std::to_string(version) + ", this build reads version " +
                std::to_string(kVersion));
  DecoderConfig cfg;
  cfg.latent_dim = static_cast<int>(read_u32(in, "latent dim"));
  cfg.dense_dims.resize(read_u32(in, "dense layer count"));
  for (int& d : cfg.dense_dims) d = static_cast<int>(read_u32(in, "dense dim"));
  cfg.group_layers.resize(read_u32(in, "group layer count"));
  for (auto& [dim, n] : cfg.group_layers) {
    dim = static_cast<int>(read_u32(in, "group dim"));
    n = static_cast<int>(read_u32(in, "group count"));
  }
  if (cfg.dense_dims.empty() || cfg.group_layers.empty() ||
      cfg.latent_dim <= 0)
    throw Error("checkpoint: corrupted header (bad dims): " + path.string());
  Rng dummy(0);
  SkinDecoder d = SkinDecoder::create(
      cfg, Eigen::VectorXd::Zero(cfg.output_dim()), dummy);
  Eigen::VectorXd params(d.network_float_count());
  read_doubles(in, params.data(), params.size());
  d.params_from_vector(params);
  read_doubles(in, d.linear_weights.data(), d.linear_weights.size());
  return d;
}

}  // namespace rigfit
