#include "rigfit/adam.hpp"

#include <cmath>

namespace rigfit {

Adam::Adam(std::string block_name, Eigen::Index dim, AdamConfig config)
    : name_(std::move(block_name)),
      config_(config),
      m_(Eigen::VectorXd::Zero(dim)),
      v_(Eigen::VectorXd::Zero(dim)) {}

void Adam::step(Eigen::Ref<Eigen::VectorXd> params,
                const Eigen::VectorXd& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw Error("Adam[" + name_ + "]: size mismatch");
  if (!grad.allFinite())
    throw NumericalError("Adam[" + name_ + "]: non-finite gradient");
  ++step_count_;
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(config_.beta1, step_count_);
  const double bc2 = 1.0 - std::pow(config_.beta2, step_count_);
  const Eigen::VectorXd m_hat = m_ / bc1;
  const Eigen::VectorXd v_hat = v_ / bc2;
  params -= config_.lr *
            (m_hat.array() / (v_hat.array().sqrt() + config_.eps)).matrix();
}

}  // namespace rigfit
