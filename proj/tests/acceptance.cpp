// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [out_dir]
//
// The full source-size sweep (criteria 6-8) dominates the runtime; its
// results.csv and plot.svg land in out_dir (default: acceptance_out).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include "genxfer/diffusion.hpp"
#include "genxfer/flows.hpp"
#include "genxfer/harness.hpp"
#include "genxfer/logging.hpp"
#include "genxfer/metrics.hpp"
#include "genxfer/nn.hpp"
#include "test_util.hpp"

using namespace genxfer;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt_g(double v) {
  std::ostringstream ss;
  ss.precision(4);
  ss << v;
  return ss.str();
}

Eigen::MatrixXd numerical_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd y0 = f(x);
  Eigen::MatrixXd j(y0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    j.col(k) = (f(xp) - f(xm)) / (2 * h);
  }
  return j;
}

Eigen::VectorXd flow_point(const CouplingFlow& f, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& c = {}) {
  const SampleSet cr = c.size() ? SampleSet(c.transpose()) : SampleSet();
  return flow_forward(f, SampleSet(x.transpose()), cr).v.row(0).transpose();
}

CouplingFlow perturbed_flow(int d_x, int d_c, CouplingKind kind, std::uint64_t seed) {
  FlowArch arch;
  arch.coupling_layers = 4;
  arch.hidden = {16, 16};
  arch.activation = Activation::tanh;
  arch.kind = kind;
  CouplingFlow f = make_coupling_flow(d_x, d_c, arch, seed);
  Rng rng(seed + 1);
  f.set_params(f.params() + 0.3 * rng.normal_matrix(f.num_params(), 1));
  return f;
}

// 100 random nets, backprop against central differences.
void gradient_check() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(1);
  std::uniform_int_distribution<int> dim(1, 8);
  std::uniform_int_distribution<int> depth(0, 3);  // hidden layers: <= 4 weight layers
  int bad_nets = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = testutil::random_net(gen, dim, depth);
    const auto g = mlp_backward(c.net, c.x, c.out_grad);
    const auto fd_p = finite_diff_grad<double>(
        [&](const Eigen::VectorXd& p) {
          Mlp m = c.net;
          m.params() = p;
          return m.forward(c.x).dot(c.out_grad);
        },
        c.net.params(), 1e-5);
    const auto fd_x = finite_diff_grad<double>(
        [&](const Eigen::VectorXd& x) { return c.net.forward(x).dot(c.out_grad); }, c.x, 1e-5);
    if (testutil::count_grad_mismatches(g.params, fd_p, 1e-4, 1e-7) +
            testutil::count_grad_mismatches(g.input, fd_x, 1e-4, 1e-7) >
        0) {
      ++bad_nets;
    }
  }
  const double secs = seconds_since(t0);
  report(1, bad_nets == 0 && secs < 10.0,
         "backprop vs finite differences: " + std::to_string(100 - bad_nets) + "/100 nets agree, " +
             fmt_g(secs) + "s");
}

// Score net on N(0,1) data should learn theta(x, tau) = -x for every tau.
void stationary_recovery() {
  const auto t0 = Clock::now();
  NoiseSchedule schedule;
  Rng rng(2);
  const SampleSet data = rng.normal_matrix(5000, 1);
  ScoreArch arch;
  arch.hidden = {64, 64};
  arch.activation = Activation::tanh;
  arch.tau_embed = TauEmbedding::raw;
  ScoreModel model = make_score_model(1, 0, arch, 3);
  TrainOptions opts;
  opts.epochs = 100;
  opts.seed = 4;
  train_score(model, schedule, data, SampleSet(), opts, 4);

  SampleSet x(81, 1);
  for (int k = 0; k <= 80; ++k) x(k, 0) = -2.0 + 4.0 * k / 80.0;
  double worst = 0.0;
  const double lo = std::log(schedule.tau_min), hi = std::log(schedule.tau_max);
  for (int i = 0; i <= 200; ++i) {
    const double tau = std::exp(lo + (hi - lo) * i / 200.0);
    const SampleSet th = model.eval(x, SampleSet(), Eigen::VectorXd::Constant(81, tau));
    worst = std::max(worst, (th + x).cwiseAbs().maxCoeff());
  }
  Rng draw(5);
  const SampleSet s = sample_reverse(model, schedule, SampleSet(), 10000, draw);
  const double mean = s.mean();
  const double var = (s.array() - mean).square().mean();
  const double secs = seconds_since(t0);
  report(2, worst < 0.15 && std::abs(mean) < 0.05 && var >= 0.9 && var <= 1.1 && secs < 120.0,
         "max|theta+x| " + fmt_g(worst) + " (<0.15), sample mean " + fmt_g(mean) + " (|.|<0.05), variance " +
             fmt_g(var) + " (in [0.9,1.1]), " + fmt_g(secs) + "s");
}

void flow_exactness() {
  // Round trip on 1000 conditional points.
  const CouplingFlow f = perturbed_flow(3, 2, CouplingKind::affine, 6);
  Rng rng(6);
  const SampleSet x = rng.normal_matrix(1000, 3), c = rng.normal_matrix(1000, 2);
  const double trip = (flow_inverse(f, flow_forward(f, x, c).v, c) - x).cwiseAbs().maxCoeff();

  double logdet_err = 0.0;
  for (int d = 2; d <= 4; ++d) {
    for (CouplingKind kind : {CouplingKind::affine, CouplingKind::additive}) {
      const CouplingFlow g = perturbed_flow(d, 0, kind, 10 + std::uint64_t(d));
      for (int i = 0; i < 20; ++i) {
        const Eigen::VectorXd p = rng.normal_matrix(d, 1);
        const double ld = flow_forward(g, SampleSet(p.transpose())).log_det[0];
        const Eigen::MatrixXd jn = numerical_jacobian([&](const Eigen::VectorXd& q) { return flow_point(g, q); }, p);
        logdet_err = std::max(logdet_err, std::abs(ld - std::log(std::abs(jn.determinant()))));
      }
    }
  }

  // A fresh flow is the identity; its NLL on N(0,1) is the Gaussian entropy.
  FlowArch arch;
  const CouplingFlow id = make_coupling_flow(1, 0, arch, 7);
  const double nll = nll_loss(id, rng.normal_matrix(10000, 1)).loss;
  const double entropy = 0.5 * std::log(2.0 * M_PI * M_E);
  report(3, trip < 1e-8 && logdet_err < 1e-4 && std::abs(nll - entropy) < 0.02,
         "round trip " + fmt_g(trip) + " (<1e-8), log-det error " + fmt_g(logdet_err) +
             " (<1e-4), identity NLL " + fmt_g(nll) + " vs " + fmt_g(entropy) + " (+-0.02)");
}

void zero_padding() {
  double y_err = 0.0, j_err = 0.0;
  Rng rng(8);
  auto check = [&](const InvertibleMap& map, const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& t,
                   const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& jac, int d,
                   const Eigen::VectorXd& c) {
    for (int i = 0; i < 20; ++i) {
      const Eigen::VectorXd x = rng.normal_matrix(d, 1);
      const LiftResult r = zero_pad_lift(map, x, c);
      y_err = std::max(y_err, (r.y - t(x)).cwiseAbs().maxCoeff());
      j_err = std::max(j_err, (r.jac - jac(x)).cwiseAbs().maxCoeff());
    }
  };

  const InvertibleMap identity{
      [](const Eigen::VectorXd& x, const Eigen::VectorXd&) { return x; },
      [](const Eigen::VectorXd& y, const Eigen::VectorXd&) { return y; },
      [](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
        return Eigen::MatrixXd(Eigen::MatrixXd::Identity(x.size(), x.size()));
      }};
  check(identity, [](const Eigen::VectorXd& x) { return x; },
        [](const Eigen::VectorXd& x) { return Eigen::MatrixXd(Eigen::MatrixXd::Identity(x.size(), x.size())); }, 3,
        {});

  Eigen::Matrix3d a;
  a << 2.0, 0.5, 0.0, -1.0, 1.5, 0.3, 0.2, 0.0, 0.8;
  const Eigen::Matrix3d a_inv = a.inverse();
  const InvertibleMap linear{
      [a](const Eigen::VectorXd& x, const Eigen::VectorXd&) { return Eigen::VectorXd(a * x); },
      [a_inv](const Eigen::VectorXd& y, const Eigen::VectorXd&) { return Eigen::VectorXd(a_inv * y); },
      [a](const Eigen::VectorXd&, const Eigen::VectorXd&) { return Eigen::MatrixXd(a); }};
  check(linear, [a](const Eigen::VectorXd& x) { return Eigen::VectorXd(a * x); },
        [a](const Eigen::VectorXd&) { return Eigen::MatrixXd(a); }, 3, {});

  FlowArch arch;
  arch.coupling_layers = 4;
  arch.hidden = {16, 16};
  CouplingFlow flow = make_coupling_flow(2, 1, arch, 12);
  PairedSamples data{rng.normal_matrix(2000, 2), rng.normal_matrix(2000, 1)};
  data.x.col(1) = data.x.col(0).array().square() + 0.5 * data.x.col(1).array() + data.cond.col(0).array();
  TrainOptions opts;
  opts.epochs = 5;
  opts.lr = 3e-3;
  train_flow(flow, data.x, data.cond, opts);
  const Eigen::VectorXd c = rng.normal_matrix(1, 1);
  check(as_invertible_map(flow), [&](const Eigen::VectorXd& x) { return flow_point(flow, x, c); },
        [&](const Eigen::VectorXd& x) {
          return numerical_jacobian([&](const Eigen::VectorXd& q) { return flow_point(flow, q, c); }, x);
        },
        2, c);

  report(4, y_err < 1e-8 && j_err < 1e-4,
         "lifted output error " + fmt_g(y_err) + " (<1e-8), Jacobian error " + fmt_g(j_err) +
             " (<1e-4) for identity, linear and trained flow");
}

void metric_oracles() {
  auto col = [](std::initializer_list<double> v) {
    Eigen::MatrixXd m(Eigen::Index(v.size()), 1);
    Eigen::Index i = 0;
    for (double x : v) m(i++, 0) = x;
    return m;
  };
  TvConfig tv;
  tv.n_bins = 2;
  tv.range = std::make_pair(-0.5, 1.5);
  const double hand = tv_binned(col({0, 0, 1, 1}), col({0, 1, 1, 1}), tv);

  SinkhornConfig sk;
  sk.epsilon = 0.01;
  const double two_point = sinkhorn_wasserstein<double>(col({0}), col({3}), sk).value;

  sk.epsilon = 1e-3;
  Rng rng(9);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixXd a = rng.normal_matrix(60, 1);
    Eigen::MatrixXd b = (rng.uniform(0.5, 2.0) * rng.normal_matrix(60, 1).array() + rng.uniform(-1, 1)).matrix();
    const double w = sinkhorn_wasserstein<double>(a, b, sk).value;
    std::sort(a.data(), a.data() + a.size());
    std::sort(b.data(), b.data() + b.size());
    worst = std::max(worst, std::abs(w - (a - b).cwiseAbs().mean()));
  }
  report(5, hand == 0.25 && std::abs(two_point - 3.0) <= 0.02 && worst < 1e-2,
         "tv hand case " + fmt_g(hand) + " (=0.25), two-point Sinkhorn " + fmt_g(two_point) +
             " (3+-0.02), worst 1-dim W1 gap " + fmt_g(worst) + " (<1e-2)");
}

void sweep_criteria(const fs::path& out_dir) {
  SweepConfig sweep;  // defaults: n_t 5000, 5 replications, full grid, both families and modes
  sweep.workers = std::max(1, int(std::thread::hardware_concurrency()));
  const DgpSpec dgp{DgpKind::cond_sim, 0};
  SweepDiagnostics diag;
  const auto t0 = Clock::now();
  const ExperimentResult res = run_sweep(sweep, dgp, out_dir, &diag);
  const double secs = seconds_since(t0);
  emit_plot(res, out_dir / "plot.svg");

  // Criterion 6: replication means per (family, mode, n_s); n_s = 0 is the baseline.
  const std::vector<Eigen::Index> sizes = source_sizes(sweep);
  const Eigen::Index small = sizes.front(), large = sizes.back();
  std::map<std::tuple<int, int, Eigen::Index>, std::pair<double, int>> acc;
  int failed_runs = 0;
  for (const auto& r : res.rows) {
    if (r.status != "ok") {
      ++failed_runs;
      continue;
    }
    auto& a = acc[{int(r.family), int(r.mode), r.regime == Regime::transfer ? r.n_s : 0}];
    a.first += r.value;
    a.second += 1;
  }
  auto mean_of = [&](Family f, Mode m, Eigen::Index n_s) {
    const auto it = acc.find({int(f), int(m), n_s});
    return it == acc.end() ? std::nan("") : it->second.first / it->second.second;
  };
  std::string detail, broken;
  for (Family f : sweep.families) {
    for (Mode m : sweep.modes) {
      const double base = mean_of(f, m, 0), lo = mean_of(f, m, small), hi = mean_of(f, m, large);
      const std::string tag = to_string(f) + "/" + to_string(m);
      detail += tag + " base " + fmt_g(base) + " n_s=" + std::to_string(small) + " " + fmt_g(lo) + " n_s=" +
                std::to_string(large) + " " + fmt_g(hi) + "; ";
      if (!(hi < lo)) broken += " " + tag + "(a: large n_s not below small n_s)";
      if (!(hi < base)) broken += " " + tag + "(b: large n_s not below baseline)";
    }
  }
  if (failed_runs) broken += " " + std::to_string(failed_runs) + " runs failed";
  report(6, broken.empty(),
         detail + "sweep " + fmt_g(secs / 60.0) + " min" + (broken.empty() ? "" : "; broken:" + broken));

  // Criterion 7: shared component untouched by target training.
  const std::size_t expected = sweep.families.size() * sweep.modes.size() * std::size_t(sweep.replications) * sizes.size();
  std::size_t moved = 0;
  for (const auto& fr : diag.freeze) moved += fr.hash_before != fr.hash_after;
  report(7, diag.freeze.size() == expected && moved == 0,
         std::to_string(diag.freeze.size()) + "/" + std::to_string(expected) + " transfer runs recorded, " +
             std::to_string(moved) + " with a changed hash");

  // Criterion 8: rerun the first grid point of replication 0 for every task.
  SweepConfig again = sweep;
  again.i_grid = {sweep.i_grid.front()};
  std::size_t compared = 0, differ = 0;
  for (Family f : sweep.families) {
    for (Mode m : sweep.modes) {
      const auto rerun = run_sweep_task(again, dgp.seed, f, m, 0);
      for (const auto& r : rerun.rows) {
        for (const auto& o : res.rows) {
          if (o.family == r.family && o.mode == r.mode && o.regime == r.regime && o.n_s == r.n_s &&
              o.replication == r.replication) {
            ++compared;
            if (std::memcmp(&o.value, &r.value, sizeof(double)) != 0 || o.status != r.status) ++differ;
          }
        }
      }
    }
  }
  report(8, compared == 2 * sweep.families.size() * sweep.modes.size() && differ == 0,
         std::to_string(compared) + " repeated cells, " + std::to_string(differ) + " differ bitwise");
}

}  // namespace

int main(int argc, char** argv) {
  init_logging_from_env();
  const fs::path out_dir = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::create_directories(out_dir);
  gradient_check();
  stationary_recovery();
  flow_exactness();
  zero_padding();
  metric_oracles();
  sweep_criteria(out_dir);
  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
