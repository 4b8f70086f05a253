// diffusion.hpp
//
// Ornstein-Uhlenbeck diffusion with unit weight function:
//   dX = -X dtau + sqrt(2) dW,   X(tau) | X(0) ~ N(mu_tau X(0), sigma_tau^2 I),
//   mu_tau = exp(-tau),  sigma_tau^2 = 1 - exp(-2 tau).
// Score networks are trained by denoising score matching on
// tau ~ Uniform[tau_min, tau_max] and sampled with Euler-Maruyama on the
// time-reversed SDE, stopping early at tau_min with an optional frozen-score
// tail down to tau_star.

#pragma once

#include <functional>
#include <optional>

#include <Eigen/Dense>

#include "genxfer/nn.hpp"
#include "genxfer/training.hpp"
#include "genxfer/types.hpp"

namespace genxfer {

struct NoiseSchedule {
  double tau_min = 1e-3;
  double tau_max = 5.0;
  double tau_star = 1e-3;
  int n_steps = 200;

  /// Throws std::invalid_argument unless 0 < tau_min < tau_max,
  /// 0 <= tau_star <= tau_min and n_steps > 0.
  void validate() const;
};

struct Marginal {
  double mu;
  double sigma;
};

Marginal marginal_params(const NoiseSchedule& schedule, double tau);

enum class TauEmbedding : std::uint32_t { raw = 0, log = 1, raw_log = 2, sinusoidal = 3 };

struct ScoreArch {
  std::vector<int> hidden{128, 128, 128};
  Activation activation = Activation::relu;
  TauEmbedding tau_embed = TauEmbedding::raw_log;
  int sin_k = 4;  // frequencies for the sinusoidal embedding
};

/// theta(x, cond, tau) -> R^{d_x}, an MLP on the concatenation
/// [x; cond; embed(tau)].
struct ScoreModel {
  Mlp net;
  int d_x = 0;
  int d_c = 0;
  TauEmbedding tau_embed = TauEmbedding::raw_log;
  int sin_k = 4;

  int embed_dim() const;
  /// Network input columns for a batch; x is B x d_x, cond is B x d_c.
  Eigen::MatrixXd net_input(const SampleSet& x, const SampleSet& cond,
                            const Eigen::VectorXd& tau) const;
  /// Score values, B x d_x.
  SampleSet eval(const SampleSet& x, const SampleSet& cond, const Eigen::VectorXd& tau) const;
};

ScoreModel make_score_model(int d_x, int d_c, const ScoreArch& arch, std::uint64_t seed);

/// Any score function with the ScoreModel::eval calling convention.
using ScoreFn = std::function<SampleSet(const SampleSet& x, const SampleSet& cond,
                                        const Eigen::VectorXd& tau)>;
ScoreFn as_score_fn(const ScoreModel& model);

struct Perturbed {
  Eigen::VectorXd x_tau;
  Eigen::VectorXd score_target;
};

/// x_tau = mu x0 + sigma xi, target = -(x_tau - mu x0) / sigma^2.
Perturbed perturb(const NoiseSchedule& schedule, const Eigen::VectorXd& x0, double tau, Rng& rng);
Perturbed perturb_with_noise(const NoiseSchedule& schedule, const Eigen::VectorXd& x0, double tau,
                             const Eigen::VectorXd& xi);

/// Monte-Carlo draws for one loss evaluation. Entry r = j * B + i is the
/// j-th draw for batch row i; each entry draws tau first, then xi.
struct DsmDraws {
  Eigen::VectorXd tau;
  Eigen::MatrixXd xi;  // (B * mc_taus) x d_x
  int mc_taus = 1;
};

DsmDraws draw_dsm(const NoiseSchedule& schedule, Eigen::Index batch_rows, int d_x, int mc_taus,
                  Rng& rng);

struct DsmResult {
  double loss = 0.0;
  Eigen::VectorXd param_grads;
  Eigen::MatrixXd cond_grads;  // B x d_c, gradient w.r.t. the conditioning rows
};

/// Score-matching objective
///   (tau_max - tau_min) / (B * m) * sum_{i,j} || target_ij - theta(x_ij, c_i, tau_ij) ||^2
/// with its exact gradients. Throws on a non-finite loss.
DsmResult dsm_loss(const ScoreModel& model, const NoiseSchedule& schedule, const SampleSet& batch,
                   const SampleSet& cond, const DsmDraws& draws);
DsmResult dsm_loss(const ScoreModel& model, const NoiseSchedule& schedule, const SampleSet& batch,
                   const SampleSet& cond, int mc_taus, Rng& rng);

/// Objective value only, for arbitrary score functions.
double dsm_objective(const ScoreFn& score, const NoiseSchedule& schedule, const SampleSet& batch,
                     const SampleSet& cond, const DsmDraws& draws);

/// Minibatch Adam on dsm_loss. cond is either empty or row-aligned with data.
TrainTrace train_score(ScoreModel& model, const NoiseSchedule& schedule, const SampleSet& data,
                       const SampleSet& cond, const TrainOptions& opts, int mc_taus = 1);

/// Euler-Maruyama on dV = (V + 2 theta(V, c, tau_max - t)) dt + sqrt(2) dW.
/// cond is n x d_c (one row per sample), 1 x d_c (shared), or empty when d_c = 0.
SampleSet sample_reverse(const ScoreFn& score, int d_x, const NoiseSchedule& schedule,
                         const SampleSet& cond, Eigen::Index n, Rng& rng);
SampleSet sample_reverse(const ScoreModel& model, const NoiseSchedule& schedule,
                         const SampleSet& cond, Eigen::Index n, Rng& rng);

}  // namespace genxfer
