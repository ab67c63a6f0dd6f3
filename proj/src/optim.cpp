#include "mvdis/optim.hpp"

#include <cmath>

namespace mvdis {

template <typename Scalar>
void adamw_step(Eigen::Ref<Eigen::Array<Scalar, Eigen::Dynamic, 1>> param,
                const Eigen::Ref<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>& grad, AdamWState<Scalar>& state,
                const AdamWOptions& options) {
  if (param.size() != grad.size()) {
    throw DimensionError("adamw_step: parameter has " + std::to_string(param.size()) + " values, gradient has " +
                         std::to_string(grad.size()));
  }
  if (state.first_moment.size() == 0) {
    state.first_moment = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(param.size());
    state.second_moment = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(param.size());
  } else if (state.first_moment.size() != param.size()) {
    throw DimensionError("adamw_step: optimizer state does not match parameter size");
  }
  const auto b1 = static_cast<Scalar>(options.beta1);
  const auto b2 = static_cast<Scalar>(options.beta2);
  const auto lr = static_cast<Scalar>(options.learning_rate);
  const auto wd = static_cast<Scalar>(options.weight_decay);
  const auto eps = static_cast<Scalar>(options.eps);

  ++state.step;
  state.first_moment = b1 * state.first_moment + (Scalar(1) - b1) * grad;
  state.second_moment = b2 * state.second_moment + (Scalar(1) - b2) * grad.square();
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(options.beta1, static_cast<double>(state.step)));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(options.beta2, static_cast<double>(state.step)));
  param -= lr * ((state.first_moment / c1) / ((state.second_moment / c2).sqrt() + eps) + wd * param);
}

template <typename Scalar>
AdamW<Scalar>::AdamW(std::vector<Tensor<Scalar>> params, AdamWOptions options)
    : params_(std::move(params)), state_(params_.size()), options_(options) {
  if (!(options_.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(options_.weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
}

template <typename Scalar>
void AdamW<Scalar>::step() {
  ++steps_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    adamw_step<Scalar>(p.mutable_data(), p.grad(), state_[i], options_);
  }
}

template <typename Scalar>
void AdamW<Scalar>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template void adamw_step<float>(Eigen::Ref<Eigen::ArrayXf>, const Eigen::Ref<const Eigen::ArrayXf>&,
                                AdamWState<float>&, const AdamWOptions&);
template void adamw_step<double>(Eigen::Ref<Eigen::ArrayXd>, const Eigen::Ref<const Eigen::ArrayXd>&,
                                 AdamWState<double>&, const AdamWOptions&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace mvdis
