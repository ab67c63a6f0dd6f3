#pragma once

#include <map>
#include <span>
#include <string>

#include "mvdis/model.hpp"
#include "mvdis/tensor.hpp"

namespace mvdis {

enum class Principle { infonce, cosine, vicreg };
enum class Objective { sim, sep, sim_sep };

std::string to_string(Principle p);
std::string to_string(Objective o);
Principle parse_principle(const std::string& text);
Objective parse_objective(const std::string& text);

struct VicRegCoeffs {
  double invariance = 25.0;
  double variance = 25.0;
  double covariance = 1.0;
  double std_eps = 1e-4;  // std = sqrt(var + std_eps)
};

struct LossConfig {
  Principle principle = Principle::cosine;
  Objective objective = Objective::sep;
  double lambda = 0.6;
  double gamma = 1.0;
  double temperature = 0.1;
  double eps = 1e-6;
  VicRegCoeffs vicreg;
  double w_sim = 0.5;
  double w_sep = 0.5;
  /// Average the view-1 and view-2 anchored InfoNCE terms.
  bool symmetric_infonce = false;

  /// Throws ConfigError when a field is outside its documented range.
  void validate() const;
};

/// A differentiable scalar plus named diagnostic values.
template <typename Scalar>
struct LossTerm {
  Tensor<Scalar> value;
  std::map<std::string, double> components;
};

struct LossBreakdown {
  double total = 0.0;
  double rec = 0.0;
  double dis = 0.0;
  std::map<std::string, double> components;
};

/// Mean over the temporal axis, then per-sample l2 normalization: (B, n, k) -> (B, k).
template <typename Scalar>
Tensor<Scalar> pool_and_normalize(const Tensor<Scalar>& z, Scalar eps);

template <typename Scalar>
Tensor<Scalar> loss_rec(const Tensor<Scalar>& x1, const Tensor<Scalar>& x2, const Tensor<Scalar>& xhat1,
                        const Tensor<Scalar>& xhat2);

/// -mean_j [ s(u_j, v_j) - logsumexp_k s(u_j, v_k) ] with s = cosine / temperature.
template <typename Scalar>
Tensor<Scalar> loss_infonce_sim(const Tensor<Scalar>& zs1, const Tensor<Scalar>& zs2, Scalar temperature,
                                Scalar eps, bool symmetric = false);
/// -mean over all B^2 ordered (j, k) of log(clamp(1 - cos(p_j, q_k), eps, 2)).
template <typename Scalar>
Tensor<Scalar> loss_infonce_sep(const Tensor<Scalar>& zp1, const Tensor<Scalar>& zp2, Scalar eps);
/// -mean_j log(clamp(cos(u_j, v_j), eps, 1)).
template <typename Scalar>
Tensor<Scalar> loss_cosine_sim(const Tensor<Scalar>& zs1, const Tensor<Scalar>& zs2, Scalar eps);
/// -mean_j log(clamp(1 - cos(p_j, q_j), eps, 2)). Rewards anti-alignment below zero.
template <typename Scalar>
Tensor<Scalar> loss_cosine_sep(const Tensor<Scalar>& zp1, const Tensor<Scalar>& zp2, Scalar eps);

enum class VicRegMode { sim, sep };

/// Invariance, variance and covariance on temporally pooled latents. SEP
/// negates the invariance term and computes it on l2-normalized latents.
template <typename Scalar>
LossTerm<Scalar> loss_vicreg(const Tensor<Scalar>& z1, const Tensor<Scalar>& z2, VicRegMode mode,
                             const VicRegCoeffs& coeffs, Scalar eps);

template <typename Scalar>
LossTerm<Scalar> loss_dis(const LossConfig& config, const ForwardOutput<Scalar>& fo);

/// gamma * lambda * rec + (1 - lambda) * dis. A term with zero weight is
/// evaluated for reporting but never enters the graph.
template <typename Scalar>
std::pair<Tensor<Scalar>, LossBreakdown> loss_total(const LossConfig& config, const ForwardOutput<Scalar>& fo,
                                                    const ViewPairBatch<Scalar>& batch);

/// Ratio of mean |L_dis| to mean |L_rec| over `batches` at the current
/// parameters. Returns 1 when lambda is 0 or 1.
template <typename Scalar>
double calibrate_gamma(const ModelParams<Scalar>& params, std::span<const ViewPairBatch<Scalar>> batches,
                       const LossConfig& config);

}  // namespace mvdis
