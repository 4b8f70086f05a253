#include "genxfer/flows.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace genxfer {

namespace {

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<int>& idx) {
  Eigen::MatrixXd out(Eigen::Index(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(Eigen::Index(i)) = m.row(idx[i]);
  return out;
}

void scatter_rows(Eigen::MatrixXd& m, const std::vector<int>& idx, const Eigen::MatrixXd& src) {
  for (std::size_t i = 0; i < idx.size(); ++i) m.row(idx[i]) = src.row(Eigen::Index(i));
}

int omega_out_dim(const CouplingLayer& layer) {
  const int p2 = int(layer.part2.size());
  return layer.kind == CouplingKind::affine ? 2 * p2 : p2;
}

// Conditioning as d_c x n columns; a single shared row is broadcast.
Eigen::MatrixXd cond_columns(const CouplingFlow& flow, const SampleSet& cond, Eigen::Index n) {
  if (flow.d_c == 0) return Eigen::MatrixXd(0, n);
  if (cond.cols() != flow.d_c) throw std::invalid_argument("flow: conditioning dimension mismatch");
  if (cond.rows() == n) return cond.transpose();
  if (cond.rows() == 1) return cond.transpose().replicate(1, n);
  throw std::invalid_argument("flow: conditioning must have 1 or n rows");
}

struct CouplingEval {
  Eigen::MatrixXd shift;    // |p2| x n
  Eigen::MatrixXd raw;      // |p2| x n (affine only)
  Eigen::MatrixXd log_scale;
};

Eigen::MatrixXd omega_input(const CouplingLayer& layer, const Eigen::MatrixXd& x,
                            const Eigen::MatrixXd& c) {
  Eigen::MatrixXd in(Eigen::Index(layer.part1.size()) + c.rows(), x.cols());
  in.topRows(Eigen::Index(layer.part1.size())) = gather_rows(x, layer.part1);
  in.bottomRows(c.rows()) = c;
  return in;
}

CouplingEval split_omega(const CouplingLayer& layer, const Eigen::MatrixXd& out) {
  const Eigen::Index p2 = Eigen::Index(layer.part2.size());
  CouplingEval e;
  e.shift = out.topRows(p2);
  if (layer.kind == CouplingKind::affine) {
    const double b = layer.log_scale_bound;
    e.raw = out.bottomRows(p2);
    e.log_scale = (b * (e.raw.array() / b).tanh()).matrix();
  } else {
    e.log_scale = Eigen::MatrixXd::Zero(p2, out.cols());
  }
  return e;
}

struct LayerCache {
  Eigen::MatrixXd x;  // layer input, d x n
  MlpTape<double> tape;
  CouplingEval eval;
};

}  // namespace

Eigen::Index CouplingFlow::num_params() const {
  Eigen::Index n = 0;
  for (const auto& l : layers)
    if (const auto* c = std::get_if<CouplingLayer>(&l)) n += c->omega.num_params();
  return n;
}

Eigen::VectorXd CouplingFlow::params() const {
  Eigen::VectorXd p(num_params());
  Eigen::Index off = 0;
  for (const auto& l : layers)
    if (const auto* c = std::get_if<CouplingLayer>(&l)) {
      p.segment(off, c->omega.num_params()) = c->omega.params();
      off += c->omega.num_params();
    }
  return p;
}

void CouplingFlow::set_params(const Eigen::VectorXd& p) {
  if (p.size() != num_params()) throw std::invalid_argument("flow: parameter vector size mismatch");
  Eigen::Index off = 0;
  for (auto& l : layers)
    if (auto* c = std::get_if<CouplingLayer>(&l)) {
      c->omega.params() = p.segment(off, c->omega.num_params());
      off += c->omega.num_params();
    }
}

Permutation reversal_permutation(int d) {
  Permutation p;
  for (int i = d - 1; i >= 0; --i) p.perm.push_back(i);
  return p;
}

CouplingFlow make_coupling_flow(int d_x, int d_c, const FlowArch& arch, std::uint64_t seed) {
  if (d_x <= 0 || d_c < 0) throw std::invalid_argument("flow: bad dimensions");
  if (arch.coupling_layers <= 0) throw std::invalid_argument("flow: need at least one coupling layer");
  if (!(arch.log_scale_bound > 0)) throw std::invalid_argument("flow: log_scale_bound must be positive");
  CouplingFlow flow;
  flow.d_x = d_x;
  flow.d_c = d_c;
  flow.base = arch.base;
  const int half = d_x / 2;
  for (int k = 0; k < arch.coupling_layers; ++k) {
    if (k > 0 && d_x > 1) flow.layers.emplace_back(reversal_permutation(d_x));
    CouplingLayer layer;
    layer.kind = arch.kind;
    layer.log_scale_bound = arch.log_scale_bound;
    for (int i = 0; i < half; ++i) layer.part1.push_back(i);
    for (int i = half; i < d_x; ++i) layer.part2.push_back(i);
    layer.omega = Mlp(mlp_dims(half + d_c, arch.hidden, omega_out_dim(layer)), arch.activation);
    layer.omega.init(mix_seed(seed, std::uint64_t(k)));
    const int last = layer.omega.num_layers() - 1;
    layer.omega.weight_mut(last).setZero();
    flow.layers.emplace_back(std::move(layer));
  }
  return flow;
}

FlowOutput flow_forward(const CouplingFlow& flow, const SampleSet& x, const SampleSet& cond) {
  if (x.cols() != flow.d_x) throw std::invalid_argument("flow_forward: x has wrong dimension");
  const Eigen::Index n = x.rows();
  const Eigen::MatrixXd c = cond_columns(flow, cond, n);
  Eigen::MatrixXd h = x.transpose();
  Eigen::VectorXd log_det = Eigen::VectorXd::Zero(n);
  for (const auto& l : flow.layers) {
    if (const auto* p = std::get_if<Permutation>(&l)) {
      h = gather_rows(h, p->perm);
      continue;
    }
    const auto& layer = std::get<CouplingLayer>(l);
    const CouplingEval e = split_omega(layer, layer.omega.forward(omega_input(layer, h, c)));
    const Eigen::MatrixXd x2 = gather_rows(h, layer.part2);
    scatter_rows(h, layer.part2, (x2.array() * e.log_scale.array().exp()).matrix() + e.shift);
    log_det += e.log_scale.colwise().sum().transpose();
  }
  return {h.transpose(), log_det};
}

SampleSet flow_inverse(const CouplingFlow& flow, const SampleSet& v, const SampleSet& cond) {
  if (v.cols() != flow.d_x) throw std::invalid_argument("flow_inverse: v has wrong dimension");
  const Eigen::Index n = v.rows();
  const Eigen::MatrixXd c = cond_columns(flow, cond, n);
  Eigen::MatrixXd h = v.transpose();
  for (auto it = flow.layers.rbegin(); it != flow.layers.rend(); ++it) {
    if (const auto* p = std::get_if<Permutation>(&*it)) {
      Eigen::MatrixXd prev(h.rows(), h.cols());
      scatter_rows(prev, p->perm, h);
      h.swap(prev);
      continue;
    }
    const auto& layer = std::get<CouplingLayer>(*it);
    const CouplingEval e = split_omega(layer, layer.omega.forward(omega_input(layer, h, c)));
    const Eigen::MatrixXd v2 = gather_rows(h, layer.part2);
    scatter_rows(h, layer.part2, ((v2 - e.shift).array() * (-e.log_scale.array()).exp()).matrix());
  }
  return h.transpose();
}

Eigen::MatrixXd flow_jacobian(const CouplingFlow& flow, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& cond) {
  if (x.size() != flow.d_x) throw std::invalid_argument("flow_jacobian: x has wrong dimension");
  if (cond.size() != flow.d_c) throw std::invalid_argument("flow_jacobian: cond has wrong dimension");
  const int d = flow.d_x;
  Eigen::VectorXd h = x;
  Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(d, d);
  for (const auto& l : flow.layers) {
    Eigen::MatrixXd step = Eigen::MatrixXd::Zero(d, d);
    if (const auto* p = std::get_if<Permutation>(&l)) {
      Eigen::VectorXd next(d);
      for (int i = 0; i < d; ++i) {
        step(i, p->perm[i]) = 1.0;
        next[i] = h[p->perm[i]];
      }
      h = next;
      jac = step * jac;
      continue;
    }
    const auto& layer = std::get<CouplingLayer>(l);
    const Eigen::MatrixXd in = omega_input(layer, h, cond);
    const CouplingEval e = split_omega(layer, layer.omega.forward(in));
    const Eigen::MatrixXd dout = layer.omega.input_jacobian(in.col(0));
    const int p1 = int(layer.part1.size());
    const int p2 = int(layer.part2.size());
    for (int i : layer.part1) step(i, i) = 1.0;
    for (int a = 0; a < p2; ++a) {
      const int row = layer.part2[a];
      const double x2 = h[row];
      const double es = std::exp(e.log_scale(a, 0));
      step(row, row) = es;
      for (int b = 0; b < p1; ++b) {
        double dv = dout(a, b);
        if (layer.kind == CouplingKind::affine) {
          const double th = std::tanh(e.raw(a, 0) / layer.log_scale_bound);
          dv += x2 * es * (1.0 - th * th) * dout(p2 + a, b);
        }
        step(row, layer.part1[b]) = dv;
      }
    }
    for (int a = 0; a < p2; ++a) {
      const int row = layer.part2[a];
      h[row] = h[row] * std::exp(e.log_scale(a, 0)) + e.shift(a, 0);
    }
    jac = step * jac;
  }
  return jac;
}

Eigen::VectorXd base_log_density(BaseDensity base, const SampleSet& v) {
  const double d = double(v.cols());
  if (base == BaseDensity::std_gaussian) {
    return (-0.5 * v.rowwise().squaredNorm()).array() - 0.5 * d * std::log(2.0 * std::numbers::pi);
  }
  // Logistic density: log sigmoid(v) + log sigmoid(-v), summed over coordinates.
  auto softplus = [](double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); };
  Eigen::VectorXd out(v.rows());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < v.cols(); ++k) s -= softplus(v(i, k)) + softplus(-v(i, k));
    out[i] = s;
  }
  return out;
}

SampleSet base_sample(BaseDensity base, Eigen::Index n, int d, Rng& rng) {
  if (base == BaseDensity::std_gaussian) return rng.normal_matrix(n, d);
  SampleSet v(n, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < n; ++i) {
      double u = rng.uniform(0.0, 1.0);
      while (u <= 0.0) u = rng.uniform(0.0, 1.0);
      v(i, j) = std::log(u) - std::log1p(-u);
    }
  return v;
}

NllResult nll_loss(const CouplingFlow& flow, const SampleSet& batch, const SampleSet& cond) {
  const Eigen::Index n = batch.rows();
  if (n < 1) throw std::invalid_argument("nll_loss: empty batch");
  if (batch.cols() != flow.d_x) throw std::invalid_argument("nll_loss: batch has wrong dimension");
  const Eigen::MatrixXd c = cond_columns(flow, cond, n);

  // Forward with caches.
  std::vector<LayerCache> caches(flow.layers.size());
  Eigen::MatrixXd h = batch.transpose();
  Eigen::VectorXd log_det = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < flow.layers.size(); ++k) {
    const auto& l = flow.layers[k];
    if (const auto* p = std::get_if<Permutation>(&l)) {
      h = gather_rows(h, p->perm);
      continue;
    }
    const auto& layer = std::get<CouplingLayer>(l);
    LayerCache& cache = caches[k];
    cache.x = h;
    cache.eval = split_omega(layer, layer.omega.forward(omega_input(layer, h, c), cache.tape));
    const Eigen::MatrixXd x2 = gather_rows(h, layer.part2);
    scatter_rows(h, layer.part2,
                 (x2.array() * cache.eval.log_scale.array().exp()).matrix() + cache.eval.shift);
    log_det += cache.eval.log_scale.colwise().sum().transpose();
  }
  const Eigen::MatrixXd v = h.transpose();
  const Eigen::VectorXd logp = base_log_density(flow.base, v);

  NllResult r;
  r.loss = -(logp + log_det).mean();
  if (!std::isfinite(r.loss)) throw std::runtime_error("nll_loss: non-finite loss");

  // Backward. g holds dL/d(current layer output), d_x x n.
  const double inv_n = 1.0 / double(n);
  Eigen::MatrixXd g;
  if (flow.base == BaseDensity::std_gaussian) {
    g = h * inv_n;
  } else {
    g = ((h.array() * 0.5).tanh() * inv_n).matrix();
  }
  r.param_grads = Eigen::VectorXd::Zero(flow.num_params());
  Eigen::MatrixXd cgrad = Eigen::MatrixXd::Zero(flow.d_c, n);

  // Offsets of each coupling layer inside the flat parameter vector.
  std::vector<Eigen::Index> offsets(flow.layers.size(), 0);
  {
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < flow.layers.size(); ++k)
      if (const auto* cl = std::get_if<CouplingLayer>(&flow.layers[k])) {
        offsets[k] = off;
        off += cl->omega.num_params();
      }
  }

  for (std::size_t kk = flow.layers.size(); kk-- > 0;) {
    const auto& l = flow.layers[kk];
    if (const auto* p = std::get_if<Permutation>(&l)) {
      Eigen::MatrixXd prev(g.rows(), g.cols());
      scatter_rows(prev, p->perm, g);
      g.swap(prev);
      continue;
    }
    const auto& layer = std::get<CouplingLayer>(l);
    const LayerCache& cache = caches[kk];
    const Eigen::Index p1 = Eigen::Index(layer.part1.size());
    const Eigen::Index p2 = Eigen::Index(layer.part2.size());
    const Eigen::MatrixXd g2 = gather_rows(g, layer.part2);
    const Eigen::MatrixXd x2 = gather_rows(cache.x, layer.part2);
    const Eigen::ArrayXXd es = cache.eval.log_scale.array().exp();

    Eigen::MatrixXd out_grad(omega_out_dim(layer), n);
    out_grad.topRows(p2) = g2;
    if (layer.kind == CouplingKind::affine) {
      const Eigen::ArrayXXd ds = g2.array() * x2.array() * es - inv_n;
      const Eigen::ArrayXXd th = (cache.eval.raw.array() / layer.log_scale_bound).tanh();
      out_grad.bottomRows(p2) = (ds * (1.0 - th.square())).matrix();
    }
    auto pg = r.param_grads.segment(offsets[kk], layer.omega.num_params());
    const Eigen::MatrixXd in_grad = layer.omega.backward(cache.tape, out_grad, pg);

    scatter_rows(g, layer.part2, (g2.array() * es).matrix());
    if (p1 > 0) {
      const Eigen::MatrixXd g1 = gather_rows(g, layer.part1) + in_grad.topRows(p1);
      scatter_rows(g, layer.part1, g1);
    }
    if (flow.d_c > 0) cgrad += in_grad.bottomRows(flow.d_c);
  }
  r.cond_grads = cgrad.transpose();
  return r;
}

TrainTrace train_flow(CouplingFlow& flow, const SampleSet& data, const SampleSet& cond,
                      const TrainOptions& opts) {
  if (data.rows() == 0) throw std::invalid_argument("train_flow: empty data");
  if (flow.d_c > 0 && cond.rows() != data.rows()) {
    throw std::invalid_argument("train_flow: conditioning rows do not match data");
  }
  Rng rng(opts.seed);
  AdamState adam(flow.num_params(), opts.lr);
  ParamEma ema(opts.ema_decay);
  Eigen::VectorXd params = flow.params();
  TrainTrace trace = run_epochs(data.rows(), opts, rng, [&](const std::vector<Eigen::Index>& rows) {
    const SampleSet xb = take_rows(data, rows);
    const SampleSet cb = flow.d_c > 0 ? take_rows(cond, rows) : SampleSet();
    NllResult r = nll_loss(flow, xb, cb);
    r.param_grads *= clip_factor(r.param_grads.norm(), opts.grad_clip);
    adam_step<double>(params, r.param_grads, adam);
    flow.set_params(params);
    ema.update(params);
    return r.loss;
  });
  flow.set_params(ema.value_or(params));
  return trace;
}

SampleSet flow_sample(const CouplingFlow& flow, const SampleSet& cond, Eigen::Index n, Rng& rng) {
  if (n < 0) throw std::invalid_argument("flow_sample: negative sample count");
  if (n == 0) return SampleSet(0, flow.d_x);
  return flow_inverse(flow, base_sample(flow.base, n, flow.d_x, rng), cond);
}

InvertibleMap as_invertible_map(const CouplingFlow& flow) {
  InvertibleMap m;
  auto row = [](const Eigen::VectorXd& v) { return SampleSet(v.transpose()); };
  m.forward = [&flow, row](const Eigen::VectorXd& x, const Eigen::VectorXd& c) -> Eigen::VectorXd {
    return flow_forward(flow, row(x), c.size() ? row(c) : SampleSet()).v.row(0).transpose();
  };
  m.inverse = [&flow, row](const Eigen::VectorXd& v, const Eigen::VectorXd& c) -> Eigen::VectorXd {
    return flow_inverse(flow, row(v), c.size() ? row(c) : SampleSet()).row(0).transpose();
  };
  m.jacobian = [&flow](const Eigen::VectorXd& x, const Eigen::VectorXd& c) {
    return flow_jacobian(flow, x, c);
  };
  return m;
}

LiftResult zero_pad_lift(const InvertibleMap& map, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& cond, double tol) {
  const Eigen::Index d = x.size();
  using Mat = Eigen::MatrixXd;
  const Mat eye = Mat::Identity(d, d);
  const Mat zero = Mat::Zero(d, d);

  Eigen::VectorXd y(2 * d);
  y << x, Eigen::VectorXd::Zero(d);

  // phi1: second block += T(first block)
  const Mat jt = map.jacobian(y.head(d), cond);
  y.tail(d) += map.forward(y.head(d), cond);
  Mat j1(2 * d, 2 * d);
  j1 << eye, zero, jt, eye;

  // phi2: swap blocks
  Eigen::VectorXd swapped(2 * d);
  swapped << y.tail(d), y.head(d);
  y = swapped;
  Mat j2(2 * d, 2 * d);
  j2 << zero, eye, eye, zero;

  // phi3: second block -= T^{-1}(first block)
  const Eigen::VectorXd pre = map.inverse(y.head(d), cond);
  const Mat jinv = map.jacobian(pre, cond).partialPivLu().inverse();
  y.tail(d) -= pre;
  Mat j3(2 * d, 2 * d);
  j3 << eye, zero, -jinv, eye;

  Mat lift(2 * d, d);
  lift << eye, zero;
  LiftResult r;
  r.padded = y;
  r.y = y.head(d);
  r.jac = lift.transpose() * j3 * j2 * j1 * lift;

  if (!(y.tail(d).cwiseAbs().maxCoeff() <= tol)) {
    throw std::logic_error("zero_pad_lift: padding block did not return to zero; "
                           "forward and inverse maps are inconsistent");
  }
  return r;
}

Mlp requ_product_net() {
  Mlp net({2, 4, 1}, Activation::requ);
  auto w0 = net.weight_mut(0);
  w0 << 1, 1, -1, -1, 1, -1, -1, 1;
  auto w1 = net.weight_mut(1);
  w1 << 0.25, 0.25, -0.25, -0.25;
  return net;
}

}  // namespace genxfer
