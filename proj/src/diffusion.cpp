#include "genxfer/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace genxfer {

void NoiseSchedule::validate() const {
  if (!(tau_min > 0.0) || !(tau_min < tau_max)) {
    throw std::invalid_argument("noise schedule: need 0 < tau_min < tau_max");
  }
  if (!(tau_star >= 0.0) || tau_star > tau_min) {
    throw std::invalid_argument("noise schedule: need 0 <= tau_star <= tau_min");
  }
  if (n_steps <= 0) throw std::invalid_argument("noise schedule: n_steps must be positive");
}

Marginal marginal_params(const NoiseSchedule&, double tau) {
  if (!(tau >= 0.0)) throw std::invalid_argument("marginal_params: negative tau");
  // -expm1(-2 tau) keeps sigma accurate for small tau.
  return {std::exp(-tau), std::sqrt(-std::expm1(-2.0 * tau))};
}

int ScoreModel::embed_dim() const {
  switch (tau_embed) {
    case TauEmbedding::raw:
    case TauEmbedding::log: return 1;
    case TauEmbedding::raw_log: return 2;
    case TauEmbedding::sinusoidal: return 2 * sin_k;
  }
  return 0;
}

Eigen::MatrixXd ScoreModel::net_input(const SampleSet& x, const SampleSet& cond,
                                      const Eigen::VectorXd& tau) const {
  const Eigen::Index b = x.rows();
  if (x.cols() != d_x) throw std::invalid_argument("score model: x has wrong dimension");
  if (tau.size() != b) throw std::invalid_argument("score model: tau length mismatch");
  if (d_c > 0 && (cond.rows() != b || cond.cols() != d_c)) {
    throw std::invalid_argument("score model: conditioning shape mismatch");
  }
  Eigen::MatrixXd in(d_x + d_c + embed_dim(), b);
  in.topRows(d_x) = x.transpose();
  if (d_c > 0) in.middleRows(d_x, d_c) = cond.transpose();
  auto emb = in.bottomRows(embed_dim());
  switch (tau_embed) {
    case TauEmbedding::raw: emb.row(0) = tau.transpose(); break;
    case TauEmbedding::log: emb.row(0) = tau.array().log().matrix().transpose(); break;
    case TauEmbedding::raw_log:
      emb.row(0) = tau.transpose();
      emb.row(1) = tau.array().log().matrix().transpose();
      break;
    case TauEmbedding::sinusoidal:
      for (int j = 0; j < sin_k; ++j) {
        const double w = std::ldexp(1.0, j);
        emb.row(2 * j) = (w * tau.array()).sin().matrix().transpose();
        emb.row(2 * j + 1) = (w * tau.array()).cos().matrix().transpose();
      }
      break;
  }
  return in;
}

SampleSet ScoreModel::eval(const SampleSet& x, const SampleSet& cond,
                           const Eigen::VectorXd& tau) const {
  return net.forward(net_input(x, cond, tau)).transpose();
}

ScoreModel make_score_model(int d_x, int d_c, const ScoreArch& arch, std::uint64_t seed) {
  if (d_x <= 0 || d_c < 0) throw std::invalid_argument("score model: bad dimensions");
  ScoreModel m;
  m.d_x = d_x;
  m.d_c = d_c;
  m.tau_embed = arch.tau_embed;
  m.sin_k = arch.sin_k;
  m.net = Mlp(mlp_dims(d_x + d_c + m.embed_dim(), arch.hidden, d_x), arch.activation);
  m.net.init(seed);
  return m;
}

ScoreFn as_score_fn(const ScoreModel& model) {
  return [&model](const SampleSet& x, const SampleSet& cond, const Eigen::VectorXd& tau) {
    return model.eval(x, cond, tau);
  };
}

Perturbed perturb_with_noise(const NoiseSchedule& schedule, const Eigen::VectorXd& x0, double tau,
                             const Eigen::VectorXd& xi) {
  const auto [mu, sigma] = marginal_params(schedule, tau);
  Perturbed p;
  p.x_tau = mu * x0 + sigma * xi;
  p.score_target = -xi / sigma;  // equals -(x_tau - mu x0) / sigma^2
  return p;
}

Perturbed perturb(const NoiseSchedule& schedule, const Eigen::VectorXd& x0, double tau, Rng& rng) {
  Eigen::VectorXd xi(x0.size());
  for (Eigen::Index k = 0; k < xi.size(); ++k) xi[k] = rng.normal();
  return perturb_with_noise(schedule, x0, tau, xi);
}

DsmDraws draw_dsm(const NoiseSchedule& schedule, Eigen::Index batch_rows, int d_x, int mc_taus,
                  Rng& rng) {
  if (mc_taus <= 0) throw std::invalid_argument("dsm: mc_taus must be positive");
  const Eigen::Index total = batch_rows * mc_taus;
  DsmDraws d;
  d.mc_taus = mc_taus;
  d.tau.resize(total);
  d.xi.resize(total, d_x);
  for (Eigen::Index r = 0; r < total; ++r) {
    d.tau[r] = rng.uniform(schedule.tau_min, schedule.tau_max);
    for (int k = 0; k < d_x; ++k) d.xi(r, k) = rng.normal();
  }
  return d;
}

namespace {

struct Expanded {
  SampleSet x_tau;
  SampleSet target;
  SampleSet cond;
};

// Replicate the batch over the MC draws and perturb it.
Expanded expand(const NoiseSchedule& schedule, const SampleSet& batch, const SampleSet& cond,
                const DsmDraws& draws) {
  const Eigen::Index b = batch.rows();
  const Eigen::Index total = b * draws.mc_taus;
  if (draws.tau.size() != total || draws.xi.rows() != total || draws.xi.cols() != batch.cols()) {
    throw std::invalid_argument("dsm: draws do not match batch");
  }
  Expanded e;
  e.x_tau.resize(total, batch.cols());
  e.target.resize(total, batch.cols());
  const bool has_cond = cond.size() > 0;
  if (has_cond) {
    if (cond.rows() != b) throw std::invalid_argument("dsm: conditioning row count mismatch");
    e.cond.resize(total, cond.cols());
  }
  for (Eigen::Index r = 0; r < total; ++r) {
    const Eigen::Index i = r % b;
    const auto [mu, sigma] = marginal_params(schedule, draws.tau[r]);
    e.x_tau.row(r) = mu * batch.row(i) + sigma * draws.xi.row(r);
    e.target.row(r) = -draws.xi.row(r) / sigma;
    if (has_cond) e.cond.row(r) = cond.row(i);
  }
  return e;
}

double loss_scale(const NoiseSchedule& schedule, Eigen::Index total) {
  return (schedule.tau_max - schedule.tau_min) / double(total);
}

}  // namespace

DsmResult dsm_loss(const ScoreModel& model, const NoiseSchedule& schedule, const SampleSet& batch,
                   const SampleSet& cond, const DsmDraws& draws) {
  if (batch.rows() < 1) throw std::invalid_argument("dsm: empty batch");
  const Expanded e = expand(schedule, batch, cond, draws);
  const Eigen::Index total = e.x_tau.rows();
  const double scale = loss_scale(schedule, total);

  MlpTape<double> tape;
  const Eigen::MatrixXd out = model.net.forward(model.net_input(e.x_tau, e.cond, draws.tau), tape);
  const Eigen::MatrixXd resid = out - e.target.transpose();  // d_x x total

  DsmResult r;
  r.loss = scale * resid.squaredNorm();
  if (!std::isfinite(r.loss)) throw std::runtime_error("dsm: non-finite loss");
  r.param_grads = Eigen::VectorXd::Zero(model.net.num_params());
  const Eigen::MatrixXd in_grad = model.net.backward(tape, 2.0 * scale * resid, r.param_grads);

  const Eigen::Index b = batch.rows();
  r.cond_grads = Eigen::MatrixXd::Zero(b, model.d_c);
  if (model.d_c > 0) {
    for (Eigen::Index row = 0; row < total; ++row) {
      r.cond_grads.row(row % b) += in_grad.col(row).segment(model.d_x, model.d_c).transpose();
    }
  }
  return r;
}

DsmResult dsm_loss(const ScoreModel& model, const NoiseSchedule& schedule, const SampleSet& batch,
                   const SampleSet& cond, int mc_taus, Rng& rng) {
  const DsmDraws draws = draw_dsm(schedule, batch.rows(), model.d_x, mc_taus, rng);
  return dsm_loss(model, schedule, batch, cond, draws);
}

double dsm_objective(const ScoreFn& score, const NoiseSchedule& schedule, const SampleSet& batch,
                     const SampleSet& cond, const DsmDraws& draws) {
  const Expanded e = expand(schedule, batch, cond, draws);
  const SampleSet pred = score(e.x_tau, e.cond, draws.tau);
  return loss_scale(schedule, e.x_tau.rows()) * (pred - e.target).squaredNorm();
}

TrainTrace train_score(ScoreModel& model, const NoiseSchedule& schedule, const SampleSet& data,
                       const SampleSet& cond, const TrainOptions& opts, int mc_taus) {
  schedule.validate();
  if (data.rows() == 0) throw std::invalid_argument("train_score: empty data");
  if (model.d_c > 0 && cond.rows() != data.rows()) {
    throw std::invalid_argument("train_score: conditioning rows do not match data");
  }
  Rng rng(opts.seed);
  AdamState adam(model.net.num_params(), opts.lr);
  ParamEma ema(opts.ema_decay);
  TrainTrace trace = run_epochs(data.rows(), opts, rng, [&](const std::vector<Eigen::Index>& rows) {
    const SampleSet xb = take_rows(data, rows);
    const SampleSet cb = model.d_c > 0 ? take_rows(cond, rows) : SampleSet();
    const DsmResult r = dsm_loss(model, schedule, xb, cb, mc_taus, rng);
    adam_step<double>(model.net.params(), r.param_grads, adam);
    ema.update(model.net.params());
    return r.loss;
  });
  model.net.params() = Eigen::VectorXd(ema.value_or(model.net.params()));
  return trace;
}

SampleSet sample_reverse(const ScoreFn& score, int d_x, const NoiseSchedule& schedule,
                         const SampleSet& cond, Eigen::Index n, Rng& rng) {
  schedule.validate();
  if (n < 0) throw std::invalid_argument("sample_reverse: negative sample count");
  if (n == 0) return SampleSet(0, d_x);

  SampleSet c;
  if (cond.size() > 0) {
    if (cond.rows() == n) {
      c = cond;
    } else if (cond.rows() == 1) {
      c = cond.replicate(n, 1);
    } else {
      throw std::invalid_argument("sample_reverse: conditioning must have 1 or n rows");
    }
  }

  const double horizon = schedule.tau_max - schedule.tau_min;
  const double dt = horizon / schedule.n_steps;
  SampleSet v = rng.normal_matrix(n, d_x);
  Eigen::VectorXd tau(n);

  auto check = [&](int step) {
    if (!v.allFinite()) {
      throw std::runtime_error("sample_reverse: non-finite state at step " + std::to_string(step));
    }
  };

  for (int k = 0; k < schedule.n_steps; ++k) {
    tau.setConstant(schedule.tau_max - k * dt);
    const SampleSet s = score(v, c, tau);
    const SampleSet noise = rng.normal_matrix(n, d_x);
    v += (v + 2.0 * s) * dt + std::sqrt(2.0 * dt) * noise;
    check(k);
  }

  const double tail = schedule.tau_min - schedule.tau_star;
  if (tail > 0.0) {
    // Score frozen at its tau_min value for the remaining stretch.
    tau.setConstant(schedule.tau_min);
    const SampleSet frozen = score(v, c, tau);
    const int steps = std::max(1, int(std::ceil(tail / dt)));
    const double h = tail / steps;
    for (int k = 0; k < steps; ++k) {
      const SampleSet noise = rng.normal_matrix(n, d_x);
      v += (v + 2.0 * frozen) * h + std::sqrt(2.0 * h) * noise;
      check(schedule.n_steps + k);
    }
  }
  return v;
}

SampleSet sample_reverse(const ScoreModel& model, const NoiseSchedule& schedule,
                         const SampleSet& cond, Eigen::Index n, Rng& rng) {
  return sample_reverse(as_score_fn(model), model.d_x, schedule, cond, n, rng);
}

}  // namespace genxfer
