#pragma once

#include <vector>

#include "bers/tensor.hpp"

namespace bers {

/// SGD with classical momentum: v <- m*v + g; w <- w - lr*v.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, double lr, double momentum);

  void step();
  void zero_grad();

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
};

}  // namespace bers
