#include "genxfer/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

#include <spdlog/spdlog.h>

namespace genxfer {

double cond_sim_signal(double z1, double z2, double z3) {
  return std::sin(z1) + std::cos(z2) + z3 * z3;
}

PairedSamples draw_dgp(const DgpSpec& spec, Role role, Eigen::Index n, Rng& rng) {
  if (n < 0) throw std::invalid_argument("draw_dgp: negative sample count");
  PairedSamples out;
  if (spec.kind == DgpKind::cond_sim) {
    out.x.resize(n, 1);
    out.cond.resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int k = 0; k < 3; ++k) out.cond(i, k) = rng.uniform(-2.0, 2.0);
      const double noise =
          role == Role::source ? rng.normal() : std::exp(rng.uniform(-1.0, 1.0));
      out.x(i, 0) = cond_sim_signal(out.cond(i, 0), out.cond(i, 1), out.cond(i, 2)) + noise;
    }
    return out;
  }
  out.x.resize(n, role == Role::source ? 5 : 3);
  out.cond.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e1 = rng.normal();
    const double e2 = rng.normal();
    const double u1 = std::sin(e1);
    const double u2 = std::cos(e2);
    out.cond(i, 0) = u1;
    out.cond(i, 1) = u2;
    if (role == Role::source) {
      out.x(i, 0) = std::sin(u1) + std::cos(u2);
      out.x(i, 1) = u1 * u1 + u2 * u2;
      out.x(i, 2) = std::tanh(u1 * u2);
      out.x(i, 3) = std::exp(u1 - u2);
      out.x(i, 4) = std::log(std::abs(u1) + 1.0) + std::log(std::abs(u2) + 1.0);
    } else {
      out.x(i, 0) = std::sin(u1) + std::tanh(u2);
      out.x(i, 1) = u1 * u1 + u2;
      out.x(i, 2) = std::exp(u1 - u2);
    }
  }
  return out;
}

void SweepConfig::validate() const {
  if (i_grid.empty()) throw std::invalid_argument("sweep: empty i_grid");
  for (std::size_t k = 1; k < i_grid.size(); ++k) {
    if (!(i_grid[k] > i_grid[k - 1])) throw std::invalid_argument("sweep: i_grid must be strictly increasing");
  }
  if (n_t <= 0 || n_eval <= 0 || replications <= 0 || workers <= 0) {
    throw std::invalid_argument("sweep: n_t, n_eval, replications and workers must be positive");
  }
  if (families.empty() || modes.empty()) throw std::invalid_argument("sweep: no families or modes selected");
}

std::vector<Eigen::Index> source_sizes(const SweepConfig& sweep) {
  std::vector<Eigen::Index> out;
  for (double i : sweep.i_grid) out.push_back(Eigen::Index(std::floor(std::exp(i))));
  return out;
}

TransferPlan plan_for(const SweepConfig& sweep, Family family, Mode mode, Regime regime) {
  TransferPlan p = sweep.base_plan;
  p.family = family;
  p.mode = mode;
  p.regime = regime;
  if (mode == Mode::conditional) {
    p.dims.d_x_s = 1;
    p.dims.d_x_t = 1;
    p.dims.d_z = 3;
  } else {
    p.dims.d_x_s = 5;
    p.dims.d_x_t = 3;
    p.dims.d_u = 2;
  }
  return p;
}

namespace {

enum StreamTag : std::uint64_t { kTargetData = 100, kEvalData = 200, kSourceData = 300, kModel = 400, kGen = 500 };

DgpSpec design(Mode mode, std::uint64_t seed) {
  return {mode == Mode::conditional ? DgpKind::cond_sim : DgpKind::uncond_sim, seed};
}

std::uint64_t task_tag(Family f, Mode m) { return 10 * std::uint64_t(f) + std::uint64_t(m); }

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

ExperimentResult run_sweep_task(const SweepConfig& sweep, std::uint64_t data_seed, Family family,
                                Mode mode, int replication,
                                const std::function<void(const ResultRow&)>& on_row,
                                SweepDiagnostics* diagnostics) {
  const std::uint64_t rep_seed = sweep.seed + std::uint64_t(replication);
  const std::uint64_t rep_data_seed = data_seed + std::uint64_t(replication);
  const std::uint64_t mode_tag = std::uint64_t(mode);
  const DgpSpec dgp = design(mode, rep_data_seed);
  const bool conditional = mode == Mode::conditional;
  const std::string metric = conditional ? "tv" : "wasserstein";

  // Target and evaluation data are shared by both families and all n_s.
  Rng target_rng(mix_seed(rep_data_seed, kTargetData + mode_tag));
  const PairedSamples target = draw_dgp(dgp, Role::target, sweep.n_t, target_rng);
  Rng eval_rng(mix_seed(rep_data_seed, kEvalData + mode_tag));
  const PairedSamples eval = draw_dgp(dgp, Role::target, sweep.n_eval, eval_rng);

  ExperimentResult result;
  auto emit = [&](ResultRow row) {
    if (on_row) on_row(row);
    result.rows.push_back(std::move(row));
  };

  auto evaluate = [&](const FittedPipeline& fit) {
    Rng gen_rng(mix_seed(fit.plan.seed, kGen));
    const SampleSet gen = generate(fit, eval.cond, sweep.n_eval, gen_rng);
    if (conditional) return tv_binned(gen, eval.x, sweep.tv);
    return sinkhorn_wasserstein<double>(gen, eval.x, sweep.sinkhorn).value;
  };

  auto cell_plan = [&](Regime regime, Eigen::Index n_s) {
    TransferPlan p = plan_for(sweep, family, mode, regime);
    p.seed = mix_seed(mix_seed(rep_seed, kModel + task_tag(family, mode)), std::uint64_t(n_s));
    return p;
  };

  // The decoder is fitted once on target pairs and reused by every run of
  // this task, baseline included.
  std::optional<DecoderMap> decoder;
  double decoder_time = 0.0;
  if (!conditional) {
    const auto t0 = Clock::now();
    TransferPlan p = cell_plan(Regime::non_transfer, 0);
    try {
      decoder = fit_decoder(p, target).decoder;
    } catch (const std::exception& e) {
      spdlog::error("decoder fit failed ({} {} rep {}): {}", to_string(family), to_string(mode),
                    replication, e.what());
    }
    decoder_time = seconds_since(t0);
  }

  auto run_cell = [&](Regime regime, Eigen::Index n_s) {
    ResultRow row{family, mode, regime, n_s, replication, rep_seed, metric, 0.0, 0.0, "ok"};
    const auto t0 = Clock::now();
    try {
      const TransferPlan plan = cell_plan(regime, n_s);
      FittedPipeline fit{plan, {}, std::nullopt, std::nullopt, std::nullopt};
      std::uint64_t before = 0;
      if (conditional) {
        if (regime == Regime::transfer) {
          Rng src_rng(mix_seed(mix_seed(rep_data_seed, kSourceData + mode_tag), std::uint64_t(n_s)));
          const PairedSamples source = draw_dgp(dgp, Role::source, n_s, src_rng);
          SourceFit src = fit_source_conditional(plan, source);
          before = param_hash(src.embedding.net.params());
          TargetFit tgt = fit_target_conditional(plan, target, src.embedding);
          fit.model = std::move(tgt.model);
          fit.embedding = std::move(src.embedding);
        } else {
          fit = run_pipeline(plan, SourceData(), target);
        }
      } else {
        if (!decoder) throw std::runtime_error("decoder unavailable");
        SampleSet latents;
        if (regime == Regime::transfer) {
          Rng src_rng(mix_seed(mix_seed(rep_data_seed, kSourceData + mode_tag), std::uint64_t(n_s)));
          latents = draw_dgp(dgp, Role::source, n_s, src_rng).cond;
        } else {
          latents = target.cond;
        }
        fit.model = fit_latent_prior(plan, latents).model;
        fit.decoder = decoder;
        if (const auto* s = std::get_if<ScoreModel>(&fit.model)) {
          before = param_hash(s->net.params());
        } else {
          before = param_hash(std::get<CouplingFlow>(fit.model).params());
        }
      }
      row.value = evaluate(fit);
      if (!std::isfinite(row.value) || row.value < 0) {
        throw std::runtime_error("metric value is not a finite non-negative number");
      }
      if (diagnostics && regime == Regime::transfer) {
        std::uint64_t after = 0;
        if (fit.embedding) {
          after = param_hash(fit.embedding->net.params());
        } else if (const auto* s = std::get_if<ScoreModel>(&fit.model)) {
          after = param_hash(s->net.params());
        } else {
          after = param_hash(std::get<CouplingFlow>(fit.model).params());
        }
        diagnostics->freeze.push_back({family, mode, n_s, replication, before, after});
      }
    } catch (const std::exception& e) {
      row.value = std::nan("");
      row.status = std::string("failed: ") + e.what();
      std::replace(row.status.begin(), row.status.end(), ',', ';');
      std::replace(row.status.begin(), row.status.end(), '\n', ' ');
      spdlog::error("{} {} {} n_s={} rep={} failed: {}", to_string(family), to_string(mode),
                    to_string(regime), n_s, replication, e.what());
    }
    row.wall_time_s = seconds_since(t0) + decoder_time;
    spdlog::info("{} {} {} n_s={} rep={} {}={:.5g} ({:.1f}s)", to_string(family), to_string(mode),
                 to_string(regime), n_s, replication, metric, row.value, row.wall_time_s);
    emit(std::move(row));
  };

  run_cell(Regime::non_transfer, 0);
  for (Eigen::Index n_s : source_sizes(sweep)) run_cell(Regime::transfer, n_s);
  return result;
}

void sort_rows(std::vector<ResultRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    auto key = [](const ResultRow& r) {
      return std::make_tuple(int(r.family), int(r.mode), r.replication,
                             r.regime == Regime::transfer ? 1 : 0, r.n_s);
    };
    return key(a) < key(b);
  });
}

ExperimentResult run_sweep(const SweepConfig& sweep, const DgpSpec& dgp,
                           const std::filesystem::path& out_dir, SweepDiagnostics* diagnostics) {
  sweep.validate();
  std::filesystem::create_directories(out_dir);
  const auto csv_path = out_dir / "results.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  csv << kResultsHeader << "\n";
  csv.flush();

  struct Task {
    Family family;
    Mode mode;
    int replication;
  };
  std::vector<Task> tasks;
  for (Family f : sweep.families)
    for (Mode m : sweep.modes)
      for (int r = 0; r < sweep.replications; ++r) tasks.push_back({f, m, r});

  std::mutex mu;
  ExperimentResult result;
  auto on_row = [&](const ResultRow& row) {
    std::lock_guard lock(mu);
    csv << format_row(row) << "\n";
    csv.flush();
    result.rows.push_back(row);
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < tasks.size(); k = next++) {
      const Task& t = tasks[k];
      SweepDiagnostics local;
      run_sweep_task(sweep, dgp.seed, t.family, t.mode, t.replication, on_row,
                     diagnostics ? &local : nullptr);
      if (diagnostics) {
        std::lock_guard lock(mu);
        diagnostics->freeze.insert(diagnostics->freeze.end(), local.freeze.begin(), local.freeze.end());
      }
    }
  };
  const int n_workers = std::min<int>(sweep.workers, int(tasks.size()));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  csv.close();

  sort_rows(result.rows);
  write_results_csv(csv_path, result);
  return result;
}

namespace {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("cannot format number");
  return std::string(buf, ptr);
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::nan("");
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error("csv: bad number '" + s + "'");
  }
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string format_row(const ResultRow& r) {
  std::ostringstream ss;
  ss << to_string(r.family) << ',' << to_string(r.mode) << ',' << to_string(r.regime) << ','
     << r.n_s << ',' << r.replication << ',' << r.seed << ',' << r.metric << ','
     << fmt_double(r.value) << ',' << fmt_double(r.wall_time_s) << ',' << r.status;
  return ss.str();
}

ResultRow parse_row(const std::string& line) {
  const auto f = split_csv(line);
  if (f.size() != 10) throw std::runtime_error("csv: expected 10 fields in '" + line + "'");
  ResultRow r;
  r.family = family_from_string(f[0]);
  r.mode = mode_from_string(f[1]);
  r.regime = regime_from_string(f[2]);
  r.n_s = std::stoll(f[3]);
  r.replication = std::stoi(f[4]);
  r.seed = std::stoull(f[5]);
  r.metric = f[6];
  r.value = parse_double(f[7]);
  r.wall_time_s = parse_double(f[8]);
  r.status = f[9];
  return r;
}

void write_results_csv(const std::filesystem::path& path, const ExperimentResult& result) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kResultsHeader << "\n";
  for (const auto& r : result.rows) out << format_row(r) << "\n";
}

ExperimentResult read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) {
    throw std::runtime_error("csv: unexpected header in " + path.string());
  }
  ExperimentResult result;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    result.rows.push_back(parse_row(line));
  }
  return result;
}

void write_samples_csv(const std::filesystem::path& path, const SampleSet& s,
                       const std::vector<std::string>& names) {
  if (!names.empty() && Eigen::Index(names.size()) != s.cols()) {
    throw std::invalid_argument("write_samples_csv: column name count mismatch");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    out << (j ? "," : "") << (names.empty() ? "x" + std::to_string(j + 1) : names[std::size_t(j)]);
  }
  out << "\n";
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    for (Eigen::Index j = 0; j < s.cols(); ++j) out << (j ? "," : "") << fmt_double(s(i, j));
    out << "\n";
  }
}

SampleSet read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("samples csv: missing header");
  const std::size_t d = split_csv(line).size();
  std::vector<double> values;
  Eigen::Index n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != d) throw std::runtime_error("samples csv: ragged row " + std::to_string(n + 1));
    for (const auto& v : f) values.push_back(parse_double(v));
    ++n;
  }
  SampleSet s(n, Eigen::Index(d));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < Eigen::Index(d); ++j) s(i, j) = values[std::size_t(i) * d + std::size_t(j)];
  return s;
}

}  // namespace genxfer
