#include "mvdis/losses.hpp"

#include <cmath>

namespace mvdis {

std::string to_string(Principle p) {
  switch (p) {
    case Principle::infonce: return "infonce";
    case Principle::cosine: return "cosine";
    case Principle::vicreg: return "vicreg";
  }
  return "?";
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::sim: return "sim";
    case Objective::sep: return "sep";
    case Objective::sim_sep: return "sim_sep";
  }
  return "?";
}

Principle parse_principle(const std::string& text) {
  if (text == "infonce") return Principle::infonce;
  if (text == "cosine") return Principle::cosine;
  if (text == "vicreg") return Principle::vicreg;
  throw ConfigError("unknown principle '" + text + "' (expected infonce, cosine or vicreg)");
}

Objective parse_objective(const std::string& text) {
  if (text == "sim") return Objective::sim;
  if (text == "sep") return Objective::sep;
  if (text == "sim_sep" || text == "sim+sep") return Objective::sim_sep;
  throw ConfigError("unknown objective '" + text + "' (expected sim, sep or sim_sep)");
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(eps > 0.0 && eps <= 1e-2)) throw ConfigError("eps must lie in (0, 1e-2]");
  if (!(w_sim >= 0.0 && w_sep >= 0.0)) throw ConfigError("SIM+SEP weights must be non-negative");
  if (!(vicreg.std_eps > 0.0)) throw ConfigError("vicreg std eps must be positive");
}

namespace {

template <typename Scalar>
void check_pair(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
  if (a.rank() != 3 || a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + " expects two (B, n, k) tensors of equal shape, got " +
                         shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
}

// Rowwise dot product of two (B, k) tensors.
template <typename Scalar>
Tensor<Scalar> row_dot(const Tensor<Scalar>& u, const Tensor<Scalar>& v) {
  return sum(mul(u, v), 1);
}

template <typename Scalar>
Tensor<Scalar> off_diagonal_mask(Index k) {
  typename Tensor<Scalar>::Array m = Tensor<Scalar>::Array::Ones(k * k);
  for (Index i = 0; i < k; ++i) m[i * k + i] = Scalar(0);
  return Tensor<Scalar>(Shape{k, k}, std::move(m));
}

// Sum of squared off-diagonal batch-covariance entries divided by k.
template <typename Scalar>
Tensor<Scalar> covariance_penalty(const Tensor<Scalar>& a) {
  const Index b = a.dim(0), k = a.dim(1);
  auto centered = sub(a, mean(a, 0, true));
  auto cov = scale(matmul(transpose(centered), centered), Scalar(1) / static_cast<Scalar>(b));
  return scale(sum(square(mul(cov, off_diagonal_mask<Scalar>(k)))), Scalar(1) / static_cast<Scalar>(k));
}

template <typename Scalar>
Tensor<Scalar> variance_hinge(const Tensor<Scalar>& a, Scalar std_eps) {
  auto sd = std_dev(a, 0, std_eps);
  return mean(relu(add_scalar(neg(sd), Scalar(1))));
}

template <typename Scalar>
Tensor<Scalar> disentangle_term(Principle principle, bool sim, const LossConfig& config,
                                const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                                std::map<std::string, double>& components, const std::string& prefix) {
  const auto eps = static_cast<Scalar>(config.eps);
  switch (principle) {
    case Principle::infonce:
      return sim ? loss_infonce_sim(a, b, static_cast<Scalar>(config.temperature), eps, config.symmetric_infonce)
                 : loss_infonce_sep(a, b, eps);
    case Principle::cosine:
      return sim ? loss_cosine_sim(a, b, eps) : loss_cosine_sep(a, b, eps);
    case Principle::vicreg: {
      auto term = loss_vicreg(a, b, sim ? VicRegMode::sim : VicRegMode::sep, config.vicreg, eps);
      for (const auto& [name, value] : term.components) components[prefix + "." + name] = value;
      return term.value;
    }
  }
  throw ConfigError("unknown principle");
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> pool_and_normalize(const Tensor<Scalar>& z, Scalar eps) {
  if (z.rank() != 3) throw DimensionError("pool_and_normalize expects (B, n, k), got " + shape_to_string(z.shape()));
  return l2_normalize(mean(z, 1), eps);
}

template <typename Scalar>
Tensor<Scalar> loss_rec(const Tensor<Scalar>& x1, const Tensor<Scalar>& x2, const Tensor<Scalar>& xhat1,
                        const Tensor<Scalar>& xhat2) {
  if (x1.shape() != xhat1.shape() || x2.shape() != xhat2.shape()) {
    throw DimensionError("reconstruction shapes differ from inputs: " + shape_to_string(xhat1.shape()) + " vs " +
                         shape_to_string(x1.shape()) + ", " + shape_to_string(xhat2.shape()) + " vs " +
                         shape_to_string(x2.shape()));
  }
  auto view1 = mean(square(sub(xhat1, x1)));
  auto view2 = mean(square(sub(xhat2, x2)));
  return scale(add(view1, view2), Scalar(0.5));
}

template <typename Scalar>
Tensor<Scalar> loss_infonce_sim(const Tensor<Scalar>& zs1, const Tensor<Scalar>& zs2, Scalar temperature,
                                Scalar eps, bool symmetric) {
  check_pair(zs1, zs2, "loss_infonce_sim");
  if (zs1.dim(0) < 2) throw ContractError("InfoNCE needs a batch of at least 2 (no negatives otherwise)");
  const Scalar inv_t = Scalar(1) / temperature;
  auto u = pool_and_normalize(zs1, eps);
  auto v = pool_and_normalize(zs2, eps);
  auto logits = scale(matmul(u, transpose(v)), inv_t);
  auto positives = scale(row_dot(u, v), inv_t);
  auto forward = neg(mean(sub(positives, logsumexp(logits, 1))));
  if (!symmetric) return forward;
  auto backward = neg(mean(sub(positives, logsumexp(logits, 0))));
  return scale(add(forward, backward), Scalar(0.5));
}

template <typename Scalar>
Tensor<Scalar> loss_infonce_sep(const Tensor<Scalar>& zp1, const Tensor<Scalar>& zp2, Scalar eps) {
  check_pair(zp1, zp2, "loss_infonce_sep");
  auto p = pool_and_normalize(zp1, eps);
  auto q = pool_and_normalize(zp2, eps);
  auto sims = matmul(p, transpose(q));
  return neg(mean(log(clamp(add_scalar(neg(sims), Scalar(1)), eps, Scalar(2)))));
}

template <typename Scalar>
Tensor<Scalar> loss_cosine_sim(const Tensor<Scalar>& zs1, const Tensor<Scalar>& zs2, Scalar eps) {
  check_pair(zs1, zs2, "loss_cosine_sim");
  auto c = row_dot(pool_and_normalize(zs1, eps), pool_and_normalize(zs2, eps));
  return neg(mean(log(clamp(c, eps, Scalar(1)))));
}

template <typename Scalar>
Tensor<Scalar> loss_cosine_sep(const Tensor<Scalar>& zp1, const Tensor<Scalar>& zp2, Scalar eps) {
  check_pair(zp1, zp2, "loss_cosine_sep");
  auto c = row_dot(pool_and_normalize(zp1, eps), pool_and_normalize(zp2, eps));
  return neg(mean(log(clamp(add_scalar(neg(c), Scalar(1)), eps, Scalar(2)))));
}

template <typename Scalar>
LossTerm<Scalar> loss_vicreg(const Tensor<Scalar>& z1, const Tensor<Scalar>& z2, VicRegMode mode,
                             const VicRegCoeffs& coeffs, Scalar eps) {
  check_pair(z1, z2, "loss_vicreg");
  if (z1.dim(0) < 2) throw ContractError("VICReg needs a batch of at least 2 for batch statistics");
  Tensor<Scalar> a = mean(z1, 1);
  Tensor<Scalar> b = mean(z2, 1);
  if (mode == VicRegMode::sep) {
    a = l2_normalize(a, eps);
    b = l2_normalize(b, eps);
  }
  const auto std_eps = static_cast<Scalar>(coeffs.std_eps);
  // mean_j ||a_j - b_j||^2 / k equals the mean over all B * k entries.
  auto invariance = mean(square(sub(a, b)));
  auto var_term = scale(add(variance_hinge(a, std_eps), variance_hinge(b, std_eps)), Scalar(0.5));
  auto cov_term = scale(add(covariance_penalty(a), covariance_penalty(b)), Scalar(0.5));

  const auto inv_coeff = static_cast<Scalar>(mode == VicRegMode::sim ? coeffs.invariance : -coeffs.invariance);
  auto total = add(add(scale(invariance, inv_coeff), scale(var_term, static_cast<Scalar>(coeffs.variance))),
                   scale(cov_term, static_cast<Scalar>(coeffs.covariance)));
  LossTerm<Scalar> out{total, {}};
  out.components["invariance"] = static_cast<double>(invariance.item());
  out.components["variance"] = static_cast<double>(var_term.item());
  out.components["covariance"] = static_cast<double>(cov_term.item());
  return out;
}

template <typename Scalar>
LossTerm<Scalar> loss_dis(const LossConfig& config, const ForwardOutput<Scalar>& fo) {
  LossTerm<Scalar> out;
  switch (config.objective) {
    case Objective::sim: {
      out.value = disentangle_term(config.principle, true, config, fo.z_s1, fo.z_s2, out.components, "sim");
      out.components["sim"] = static_cast<double>(out.value.item());
      break;
    }
    case Objective::sep: {
      out.value = disentangle_term(config.principle, false, config, fo.z_p1, fo.z_p2, out.components, "sep");
      out.components["sep"] = static_cast<double>(out.value.item());
      break;
    }
    case Objective::sim_sep: {
      auto sim = disentangle_term(config.principle, true, config, fo.z_s1, fo.z_s2, out.components, "sim");
      auto sep = disentangle_term(config.principle, false, config, fo.z_p1, fo.z_p2, out.components, "sep");
      out.components["sim"] = static_cast<double>(sim.item());
      out.components["sep"] = static_cast<double>(sep.item());
      out.value = add(scale(sim, static_cast<Scalar>(config.w_sim)), scale(sep, static_cast<Scalar>(config.w_sep)));
      break;
    }
  }
  return out;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, LossBreakdown> loss_total(const LossConfig& config, const ForwardOutput<Scalar>& fo,
                                                    const ViewPairBatch<Scalar>& batch) {
  const double lambda = config.lambda;
  const double rec_weight = config.gamma * lambda;
  const double dis_weight = 1.0 - lambda;

  Tensor<Scalar> rec, total;
  LossTerm<Scalar> dis;
  if (lambda == 0.0) {
    NoGradGuard guard;
    rec = loss_rec(batch.view1, batch.view2, fo.xhat1, fo.xhat2);
  } else {
    rec = loss_rec(batch.view1, batch.view2, fo.xhat1, fo.xhat2);
  }
  if (lambda == 1.0) {
    NoGradGuard guard;
    dis = loss_dis(config, fo);
  } else {
    dis = loss_dis(config, fo);
  }

  if (lambda == 1.0) {
    total = scale(rec, static_cast<Scalar>(rec_weight));
  } else if (lambda == 0.0) {
    total = dis.value;
  } else {
    total = add(scale(rec, static_cast<Scalar>(rec_weight)), scale(dis.value, static_cast<Scalar>(dis_weight)));
  }

  LossBreakdown breakdown;
  breakdown.rec = static_cast<double>(rec.item());
  breakdown.dis = static_cast<double>(dis.value.item());
  breakdown.total = rec_weight * breakdown.rec + dis_weight * breakdown.dis;
  breakdown.components = std::move(dis.components);
  return {total, breakdown};
}

template <typename Scalar>
double calibrate_gamma(const ModelParams<Scalar>& params, std::span<const ViewPairBatch<Scalar>> batches,
                       const LossConfig& config) {
  if (config.lambda == 0.0 || config.lambda == 1.0) return 1.0;
  if (batches.empty()) throw ContractError("gamma calibration needs at least one batch");
  NoGradGuard guard;
  double rec_sum = 0.0, dis_sum = 0.0;
  for (const auto& batch : batches) {
    auto fo = forward_pair(params, batch);
    rec_sum += std::abs(static_cast<double>(loss_rec(batch.view1, batch.view2, fo.xhat1, fo.xhat2).item()));
    dis_sum += std::abs(static_cast<double>(loss_dis(config, fo).value.item()));
  }
  const double k = static_cast<double>(batches.size());
  const double gamma = (dis_sum / k) / std::max(rec_sum / k, config.eps);
  return std::max(gamma, config.eps);
}

#define MVDIS_INSTANTIATE_LOSSES(S)                                                                          \
  template Tensor<S> pool_and_normalize(const Tensor<S>&, S);                                                \
  template Tensor<S> loss_rec(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);       \
  template Tensor<S> loss_infonce_sim(const Tensor<S>&, const Tensor<S>&, S, S, bool);                       \
  template Tensor<S> loss_infonce_sep(const Tensor<S>&, const Tensor<S>&, S);                                \
  template Tensor<S> loss_cosine_sim(const Tensor<S>&, const Tensor<S>&, S);                                 \
  template Tensor<S> loss_cosine_sep(const Tensor<S>&, const Tensor<S>&, S);                                 \
  template LossTerm<S> loss_vicreg(const Tensor<S>&, const Tensor<S>&, VicRegMode, const VicRegCoeffs&, S);  \
  template LossTerm<S> loss_dis(const LossConfig&, const ForwardOutput<S>&);                                 \
  template std::pair<Tensor<S>, LossBreakdown> loss_total(const LossConfig&, const ForwardOutput<S>&,        \
                                                          const ViewPairBatch<S>&);                          \
  template double calibrate_gamma(const ModelParams<S>&, std::span<const ViewPairBatch<S>>, const LossConfig&);

MVDIS_INSTANTIATE_LOSSES(float)
MVDIS_INSTANTIATE_LOSSES(double)

#undef MVDIS_INSTANTIATE_LOSSES

}  // namespace mvdis
