#pragma once

#include <vector>

#include "cvq/tensor.hpp"

namespace cvq {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  /// AdamW-style decay applied to the weights instead of the gradient.
  bool decoupled = false;
};

/// Adam over a fixed parameter list. Parameters are updated in place.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);

  void step();
  void zero_grad();

  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace cvq
