#pragma once

#include <Eigen/Dense>
#include <string>

#include "rigfit/common.hpp"

namespace rigfit {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction, one state per parameter block.
class Adam {
 public:
  Adam(std::string block_name, Eigen::Index dim, AdamConfig config = {});

  // In-place update. Throws NumericalError naming the block on NaN/Inf grads.
  void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad);

  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  int step_count() const { return step_count_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  AdamConfig config_;
  Eigen::VectorXd m_, v_;
  int step_count_ = 0;
};

}  // namespace rigfit
