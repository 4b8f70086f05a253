// metrics.hpp
//
// Distances between two sample sets: binned total variation for scalar
// samples and entropic optimal-transport cost via stabilized Sinkhorn.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace genxfer {

struct TvConfig {
  int n_bins = 50;
  // Joint min/max of both samples when unset.
  std::optional<std::pair<double, double>> range;
};

/// 1/2 sum_bins |p_a - p_b| over normalized bin frequencies. Values outside
/// the range fall into the edge bins.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar tv_binned(const Eigen::MatrixBase<DerivedA>& a,
                                    const Eigen::MatrixBase<DerivedB>& b, const TvConfig& cfg = {}) {
  using Scalar = typename DerivedA::Scalar;
  if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("tv_binned: empty sample");
  if (a.cols() != 1 || b.cols() != 1) throw std::invalid_argument("tv_binned: samples must be 1-dimensional");
  if (cfg.n_bins <= 0) throw std::invalid_argument("tv_binned: n_bins must be positive");

  Scalar lo, hi;
  if (cfg.range) {
    lo = Scalar(cfg.range->first);
    hi = Scalar(cfg.range->second);
    if (!(lo < hi)) throw std::invalid_argument("tv_binned: range needs lo < hi");
  } else {
    lo = std::min(a.minCoeff(), Scalar(b.minCoeff()));
    hi = std::max(a.maxCoeff(), Scalar(b.maxCoeff()));
    if (!(lo < hi)) return Scalar(0);  // every point in one bin
  }

  const int n_bins = cfg.n_bins;
  auto histogram = [&](const auto& s) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> h = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(n_bins);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const Scalar pos = (Scalar(s(i, 0)) - lo) / (hi - lo) * Scalar(n_bins);
      int bin = std::isfinite(double(pos)) ? int(std::floor(double(pos))) : (pos > 0 ? n_bins - 1 : 0);
      bin = std::clamp(bin, 0, n_bins - 1);
      h[bin] += Scalar(1);
    }
    return Eigen::Matrix<Scalar, Eigen::Dynamic, 1>(h / Scalar(s.rows()));
  };
  // Rounding in the normalized counts can overshoot 1 by an ulp.
  return std::min(Scalar(1), Scalar(0.5) * (histogram(a) - histogram(b)).cwiseAbs().sum());
}

enum class OtCost { euclidean, sq_euclidean };

struct SinkhornConfig {
  double epsilon = 0.05;
  int max_iters = 2000;
  double tol = 1e-6;  // L1 violation of the row marginal
  OtCost cost = OtCost::euclidean;
  // Geometric epsilon annealing factor from the cost diameter down to
  // epsilon; 1 disables annealing.
  double scaling = 0.5;
  // Warm-up sweeps per annealing level, stopping early below level_tol.
  int level_iters = 200;
  double level_tol = 1e-4;
};

template <typename Scalar>
struct SinkhornResult {
  Scalar value = 0;  // <pi, C>
  int iterations = 0;
  bool converged = false;
  Scalar marginal_error = 0;
};

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> pairwise_cost(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& a,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& b, OtCost cost) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> na = a.rowwise().squaredNorm();
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> nb = b.rowwise().squaredNorm();
  Matrix c = Scalar(-2) * a * b.transpose();
  c.colwise() += na;
  c.rowwise() += nb.transpose();
  c = c.cwiseMax(Scalar(0));
  if (cost == OtCost::euclidean) c = c.cwiseSqrt();
  return c;
}

/// Entropic OT cost between uniform empirical measures on the rows of a and
/// b. Sinkhorn scaling iterations on a stabilized kernel: the duals (f, g)
/// absorb the scalings whenever they grow, and each epsilon level starts
/// from the previous level's duals (epsilon annealing from the cost
/// diameter). Falls back to a log-domain update if the kernel underflows.
/// Returns the transport cost of the regularized plan (not a debiased
/// divergence). When the row marginal error is still above tol after
/// max_iters the result carries converged = false.
template <typename Scalar>
SinkhornResult<Scalar> sinkhorn_wasserstein(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& a,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& b, const SinkhornConfig& cfg = {}) {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("sinkhorn: empty sample");
  if (a.cols() != b.cols()) throw std::invalid_argument("sinkhorn: dimension mismatch");
  if (!(cfg.epsilon > 0) || cfg.max_iters <= 0 || !(cfg.tol > 0)) {
    throw std::invalid_argument("sinkhorn: epsilon, max_iters and tol must be positive");
  }

  const Matrix c = pairwise_cost<Scalar>(a, b, cfg.cost);
  const Eigen::Index n = c.rows();
  const Eigen::Index m = c.cols();
  const Scalar wa = Scalar(1) / Scalar(n);
  const Scalar wb = Scalar(1) / Scalar(m);
  const Scalar absorb_at = std::log(std::numeric_limits<Scalar>::max()) / Scalar(4);

  Array f = Array::Zero(n), g = Array::Zero(m);
  Array u = Array::Ones(n), v = Array::Ones(m);
  Matrix k(n, m);
  Scalar eps = Scalar(cfg.epsilon);

  // Move the scalings into the duals and refresh k_ij = exp((f_i + g_j - C_ij) / eps).
  auto rebuild = [&] {
    f += eps * u.log();
    g += eps * v.log();
    u.setOnes();
    v.setOnes();
    for (Eigen::Index j = 0; j < m; ++j) k.col(j) = ((f + g[j] - c.col(j).array()) / eps).exp().matrix();
  };
  // Exact log-domain dual updates, used when the kernel underflows.
  auto log_step = [&] {
    f += eps * u.log();
    g += eps * v.log();
    u.setOnes();
    v.setOnes();
    Array mx = Array::Constant(n, -std::numeric_limits<Scalar>::infinity());
    for (Eigen::Index j = 0; j < m; ++j) mx = mx.max(g[j] - c.col(j).array());
    Array sum = Array::Zero(n);
    for (Eigen::Index j = 0; j < m; ++j) sum += ((g[j] - c.col(j).array() - mx) / eps).exp();
    f = -(mx + eps * (sum.log() + std::log(wb)));
    for (Eigen::Index j = 0; j < m; ++j) {
      const Array t = (f - c.col(j).array()) / eps;
      const Scalar tm = t.maxCoeff();
      g[j] = -eps * (tm + std::log((t - tm).exp().sum()) + std::log(wa));
    }
    rebuild();
  };
  // One u/v sweep; returns the L1 row-marginal error of the plan it starts from.
  auto sweep = [&]() -> Scalar {
    const Array kv = (k * v.matrix()).array();
    if (!(kv > Scalar(0)).all() || !kv.allFinite()) {
      log_step();
      return std::numeric_limits<Scalar>::infinity();
    }
    const Scalar err = (u * kv - wa).abs().sum();
    u = wa / kv;
    const Array ktu = (k.transpose() * u.matrix()).array();
    if (!(ktu > Scalar(0)).all() || !ktu.allFinite()) {
      log_step();
      return std::numeric_limits<Scalar>::infinity();
    }
    v = wb / ktu;
    if (u.log().abs().maxCoeff() > absorb_at || v.log().abs().maxCoeff() > absorb_at) rebuild();
    return err;
  };

  SinkhornResult<Scalar> r;
  const Scalar target = Scalar(cfg.epsilon);
  if (cfg.scaling < 1.0 && cfg.scaling > 0.0) eps = std::max(target, Scalar(c.maxCoeff()));
  while (eps > target) {
    rebuild();
    for (int it = 0; it < cfg.level_iters; ++it) {
      ++r.iterations;
      if (sweep() < Scalar(cfg.level_tol)) break;
    }
    eps = std::max(target, eps * Scalar(cfg.scaling));
  }
  eps = target;
  rebuild();
  r.marginal_error = std::numeric_limits<Scalar>::infinity();
  for (int it = 0; it < cfg.max_iters; ++it) {
    ++r.iterations;
    r.marginal_error = sweep();
    if (r.marginal_error < Scalar(cfg.tol)) {
      r.converged = true;
      break;
    }
  }

  // Cost of the plan after rounding it onto the feasible set (scale rows and
  // columns down to their marginals, then spread the leftover mass as a
  // rank-one term), so an unconverged run still reports a valid coupling.
  const Array rows = u * (k * v.matrix()).array();
  const Array x = (wa / rows).min(Scalar(1)) * u;
  const Array cols = v * (k.transpose() * x.matrix()).array();
  const Array y = (wb / cols).min(Scalar(1)) * v;
  Scalar total = 0;
  Array kept = Array::Zero(n);
  Array err_b(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const Array p = x * k.col(j).array() * y[j];
    kept += p;
    err_b[j] = std::max(Scalar(0), wb - p.sum());
    total += (p * c.col(j).array()).sum();
  }
  const Array err_a = (wa - kept).max(Scalar(0));
  const Scalar leftover = err_a.sum();
  if (leftover > Scalar(0)) {
    for (Eigen::Index j = 0; j < m; ++j) total += err_b[j] * (err_a * c.col(j).array()).sum() / leftover;
  }
  r.value = total;
  return r;
}

}  // namespace genxfer
