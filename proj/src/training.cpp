#include "rigfit/training.hpp"

#include <cmath>

#include "rigfit/adam.hpp"

namespace rigfit {

namespace {

Eigen::MatrixXd sample_batch(const Eigen::MatrixXd& corpus, int m, Rng& rng) {
  Eigen::MatrixXd batch(m, corpus.cols());
  for (int i = 0; i < m; ++i)
    batch.row(i) = corpus.row(static_cast<int>(rng.below(corpus.rows())));
  return batch;
}

Eigen::VectorXd collect_grads(ad::Tape& tape, const std::vector<ad::Var>& vars,
                              long total) {
  Eigen::VectorXd g(total);
  long at = 0;
  for (ad::Var v : vars) {
    const ad::Mat& adj = tape.adjoint(v);
    std::copy(adj.data(), adj.data() + adj.size(), g.data() + at);
    at += adj.size();
  }
  if (at != total) throw Error("collect_grads: size mismatch");
  return g;
}

std::vector<ad::Var> stack_var_list(const StackVars& v) {
  std::vector<ad::Var> out;
  for (std::size_t i = 0; i < v.weights.size(); ++i) {
    out.push_back(v.weights[i]);
    out.push_back(v.biases[i]);
  }
  return out;
}

std::vector<ad::Var> decoder_var_list(const DecoderVars& v) {
  std::vector<ad::Var> out = v.dense_w;
  out.insert(out.end(), v.group_w.begin(), v.group_w.end());
  return out;
}

double critic_step(Critic& critic, Adam& opt, const Eigen::MatrixXd& real,
                   const Eigen::MatrixXd& fake, double clip) {
  ad::Tape tape;
  const StackVars cv = make_critic_vars(tape, critic, true);
  const ad::Var s_real =
      critic_forward_tape(tape, critic, cv, tape.constant(real));
  const ad::Var s_fake =
      critic_forward_tape(tape, critic, cv, tape.constant(fake));
  const ad::Var loss = tape.scale(tape.sub(tape.sum(s_real), tape.sum(s_fake)),
                                  1.0 / static_cast<double>(real.rows()));
  const double value = tape.value(loss)(0, 0);
  tape.backward(loss);
  Eigen::VectorXd params = critic.params_to_vector();
  opt.step(params, collect_grads(tape, stack_var_list(cv), params.size()));
  critic.params_from_vector(params);
  critic.clip_weights(clip);
  return value;
}

struct GenStepResult {
  double gen_loss = 0.0;
  double recon_l1_mean = 0.0;
};

// One generator update. When `encoder` is non-null (phase 1) the latent
// batch is E(J) and the encoder trains jointly; otherwise z_batch is used.
GenStepResult generator_step(SkinDecoder& decoder, SkinEncoder* encoder,
                             const Critic& critic, Adam& dec_opt,
                             Adam* enc_opt, const Eigen::MatrixXd& j_batch,
                             const Eigen::MatrixXd& z_batch,
                             const TrainSchedule& schedule) {
  ad::Tape tape;
  const DecoderVars dv = make_decoder_vars(tape, decoder, true);
  std::optional<StackVars> ev;
  ad::Var z{};
  if (encoder != nullptr) {
    ev = make_encoder_vars(tape, *encoder, true);
    z = encoder_forward_tape(tape, *encoder, *ev, tape.constant(j_batch));
  } else {
    z = tape.constant(z_batch);
  }
  const int m = static_cast<int>(j_batch.rows());
  const ad::Var residual = decoder_residual_tape(tape, decoder, dv, z);
  const ad::Var ones = tape.constant(Eigen::MatrixXd::Ones(m, 1));
  const ad::Var linear = tape.matmul(
      ones, tape.constant(decoder.linear_weights.transpose().eval()));
  const ad::Var out = tape.add(residual, linear);

  const StackVars cv = make_critic_vars(tape, critic, false);
  const ad::Var recon =
      tape.sum(tape.abs(tape.sub(tape.constant(j_batch), out)));
  const ad::Var sparsity = tape.sum(tape.abs(out));
  const ad::Var adv = tape.sum(critic_forward_tape(tape, critic, cv, out));
  const ad::Var loss =
      tape.sub(tape.add(recon, tape.scale(sparsity, schedule.lambda0)),
               tape.scale(adv, schedule.lambda1));

  GenStepResult r;
  r.gen_loss = tape.value(loss)(0, 0);
  r.recon_l1_mean = tape.value(recon)(0, 0) / m;
  if (!std::isfinite(r.gen_loss))
    throw NumericalError("training diverged: non-finite generator loss");
  tape.backward(loss);

  Eigen::VectorXd dec_params = decoder.params_to_vector();
  dec_opt.step(dec_params,
               collect_grads(tape, decoder_var_list(dv), dec_params.size()));
  decoder.params_from_vector(dec_params);
  if (encoder != nullptr) {
    Eigen::VectorXd enc_params = encoder->params_to_vector();
    enc_opt->step(enc_params,
                  collect_grads(tape, stack_var_list(*ev), enc_params.size()));
    encoder->params_from_vector(enc_params);
  }
  return r;
}

double mean_recon_l1(const SkinDecoder& decoder, const SkinEncoder& encoder,
                     const Eigen::MatrixXd& rows) {
  if (rows.rows() == 0) return 0.0;
  const Eigen::MatrixXd z = encoder.forward(rows);
  const Eigen::MatrixXd out =
      decoder.residual(z).rowwise() + decoder.linear_weights.transpose();
  return (rows - out).cwiseAbs().sum() / rows.rows();
}

}  // namespace

double train_autoencoder_phase(SkinDecoder& decoder, SkinEncoder& encoder,
                               Critic& critic, const Eigen::MatrixXd& corpus,
                               const Eigen::MatrixXd& validation,
                               const TrainSchedule& schedule,
                               const TrainLogger& logger) {
  if (corpus.rows() == 0) throw Error("train_autoencoder_phase: empty corpus");
  if (corpus.cols() != decoder.output_dim())
    throw Error("train_autoencoder_phase: corpus dim != decoder output dim");
  Rng rng(schedule.seed);
  const int m = std::min<int>(schedule.batch_size, corpus.rows());
  Adam dec_opt("decoder", decoder.network_float_count(), {schedule.lr});
  Adam enc_opt("encoder", encoder.params_to_vector().size(), {schedule.lr});
  Adam critic_opt("critic", critic.params_to_vector().size(), {schedule.lr});

  for (int step = 1; step <= schedule.iterations; ++step) {
    const Eigen::MatrixXd j_batch = sample_batch(corpus, m, rng);
    const Eigen::MatrixXd fake =
        decoder.residual(encoder.forward(j_batch)).rowwise() +
        decoder.linear_weights.transpose();
    const double c_loss =
        critic_step(critic, critic_opt, j_batch, fake, schedule.clip);
    const GenStepResult g = generator_step(decoder, &encoder, critic, dec_opt,
                                           &enc_opt, j_batch, {}, schedule);
    if (logger && (step % schedule.log_every == 0 || step == 1 ||
                   step == schedule.iterations))
      logger({step, c_loss, g.gen_loss, g.recon_l1_mean});
  }

  const double val =
      mean_recon_l1(decoder, encoder, validation.rows() ? validation : corpus);
  if (schedule.validation_bound >= 0.0 && val > schedule.validation_bound)
    throw NumericalError(
        "train_autoencoder_phase: validation recon L1 " + std::to_string(val) +
        " exceeds bound " + std::to_string(schedule.validation_bound));
  return val;
}

void finetune_decoder_gan_phase(SkinDecoder& decoder, Critic& critic,
                                const Eigen::MatrixXd& corpus,
                                const TrainSchedule& schedule,
                                const TrainLogger& logger) {
  if (corpus.rows() == 0) throw Error("finetune_decoder_gan_phase: empty corpus");
  Rng rng(schedule.seed);
  const int m = std::min<int>(schedule.batch_size, corpus.rows());
  Adam dec_opt("decoder", decoder.network_float_count(), {schedule.lr});
  Adam critic_opt("critic", critic.params_to_vector().size(), {schedule.lr});

  auto random_z = [&](int rows) {
    Eigen::MatrixXd z(rows, decoder.config.latent_dim);
    for (int i = 0; i < rows; ++i)
      for (int c = 0; c < z.cols(); ++c) z(i, c) = rng.normal();
    return z;
  };

  for (int step = 1; step <= schedule.iterations; ++step) {
    double c_loss = 0.0;
    for (int c = 0; c < schedule.critic_ratio; ++c) {
      const Eigen::MatrixXd real = sample_batch(corpus, m, rng);
      const Eigen::MatrixXd fake =
          decoder.residual(random_z(m)).rowwise() +
          decoder.linear_weights.transpose();
      c_loss = critic_step(critic, critic_opt, real, fake, schedule.clip);
    }
    const Eigen::MatrixXd j_batch = sample_batch(corpus, m, rng);
    const GenStepResult g = generator_step(decoder, nullptr, critic, dec_opt,
                                           nullptr, j_batch, random_z(m),
                                           schedule);
    if (logger && (step % schedule.log_every == 0 || step == 1 ||
                   step == schedule.iterations))
      logger({step, c_loss, g.gen_loss, g.recon_l1_mean});
  }
}

}  // namespace rigfit
