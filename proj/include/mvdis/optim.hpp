#pragma once

#include <cstdint>
#include <vector>

#include "mvdis/tensor.hpp"

namespace mvdis {

struct AdamWOptions {
  double learning_rate = 1e-4;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamWState {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  Array first_moment;
  Array second_moment;
  std::int64_t step = 0;
};

/// One decoupled-weight-decay Adam update of `param` in place:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   param <- param - lr * (m_hat / (sqrt(v_hat) + eps) + wd * param)
template <typename Scalar>
void adamw_step(Eigen::Ref<Eigen::Array<Scalar, Eigen::Dynamic, 1>> param,
                const Eigen::Ref<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>& grad, AdamWState<Scalar>& state,
                const AdamWOptions& options);

/// AdamW over a fixed parameter list. Parameters whose gradient is absent
/// after backward are left untouched, weight decay included.
template <typename Scalar>
class AdamW {
 public:
  AdamW(std::vector<Tensor<Scalar>> params, AdamWOptions options);

  void step();
  void zero_grad();
  std::int64_t steps_taken() const { return steps_; }
  const std::vector<AdamWState<Scalar>>& state() const { return state_; }

 private:
  std::vector<Tensor<Scalar>> params_;
  std::vector<AdamWState<Scalar>> state_;
  AdamWOptions options_;
  std::int64_t steps_ = 0;
};

}  // namespace mvdis
