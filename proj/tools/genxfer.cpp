// genxfer: train, sample and evaluate transfer generative models, and run
// the source-size sweep.
//
//   genxfer train    [--config f.toml] [--seed s] [--family ..] [--mode ..] [--regime ..] --out dir
//   genxfer generate --checkpoint dir --n 1000 [--cond z.csv] --out samples.csv
//   genxfer eval     --a a.csv --b b.csv [--metric tv|wasserstein] [--config f.toml]
//   genxfer sweep    [--config f.toml] [--seed s] [--workers n] [--family ..] [--mode ..] --out dir
//   genxfer plot     --in results.csv --out plot.svg

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "genxfer/checkpoint.hpp"
#include "genxfer/config.hpp"
#include "genxfer/harness.hpp"
#include "genxfer/logging.hpp"
#include "genxfer/metrics.hpp"

using namespace genxfer;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string family, mode, regime;
};

RunConfig load(const Common& c) {
  RunConfig cfg = c.config.empty() ? parse_config("") : load_config(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.plan.seed = *c.seed;
    cfg.sweep.seed = *c.seed;
  }
  if (!c.family.empty()) cfg.plan.family = family_from_string(c.family);
  if (!c.mode.empty()) cfg.plan.mode = mode_from_string(c.mode);
  if (!c.regime.empty()) cfg.plan.regime = regime_from_string(c.regime);
  return cfg;
}

DgpSpec design_for(Mode mode, std::uint64_t seed) {
  return {mode == Mode::conditional ? DgpKind::cond_sim : DgpKind::uncond_sim, seed};
}

int train(const Common& c, const fs::path& out) {
  RunConfig cfg = load(c);
  TransferPlan plan = cfg.plan;
  if (plan.mode == Mode::unconditional) plan.dims = plan_for(cfg.sweep, plan.family, plan.mode, plan.regime).dims;
  const DgpSpec dgp = design_for(plan.mode, cfg.seed);
  Rng rng(cfg.seed);
  const PairedSamples target = draw_dgp(dgp, Role::target, cfg.n_t, rng);
  SourceData source = plan.regime == Regime::transfer ? SourceData(draw_dgp(dgp, Role::source, cfg.n_s, rng))
                                                      : SourceData();
  const FittedPipeline fit = run_pipeline(plan, source, target);
  save_pipeline(out, fit);
  std::printf("saved %s %s %s pipeline to %s\n", to_string(plan.family).c_str(), to_string(plan.mode).c_str(),
              to_string(plan.regime).c_str(), out.string().c_str());
  return 0;
}

int generate_cmd(const fs::path& ckpt, Eigen::Index n, const std::string& cond_path, std::uint64_t seed,
                 const fs::path& out) {
  const FittedPipeline fit = load_pipeline(ckpt);
  Rng rng(seed);
  SampleSet cond;
  if (fit.plan.mode == Mode::conditional) {
    cond = cond_path.empty() ? draw_dgp(design_for(Mode::conditional, seed), Role::target, n, rng).cond
                             : read_samples_csv(cond_path);
  }
  write_samples_csv(out, generate(fit, cond, n, rng));
  std::printf("wrote %ld samples to %s\n", long(n), out.string().c_str());
  return 0;
}

int eval_cmd(const Common& c, const fs::path& a, const fs::path& b, const std::string& metric) {
  const RunConfig cfg = load(c);
  const SampleSet sa = read_samples_csv(a), sb = read_samples_csv(b);
  if (metric == "tv") {
    std::printf("tv %.17g\n", tv_binned(sa, sb, cfg.sweep.tv));
  } else if (metric == "wasserstein") {
    const auto r = sinkhorn_wasserstein<double>(sa, sb, cfg.sweep.sinkhorn);
    std::printf("wasserstein %.17g%s\n", r.value, r.converged ? "" : " (not converged)");
  } else {
    throw std::invalid_argument("metric must be tv or wasserstein");
  }
  return 0;
}

int sweep_cmd(const Common& c, std::optional<int> workers, const fs::path& out) {
  RunConfig cfg = load(c);
  SweepConfig sw = cfg.sweep;
  if (workers) sw.workers = *workers;
  if (!c.family.empty()) sw.families = {family_from_string(c.family)};
  if (!c.mode.empty()) sw.modes = {mode_from_string(c.mode)};
  const ExperimentResult res = run_sweep(sw, DgpSpec{DgpKind::cond_sim, cfg.seed}, out);
  emit_plot(res, out / "plot.svg");
  std::printf("%zu rows written to %s\n", res.rows.size(), (out / "results.csv").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transfer learning for diffusion models and coupling flows"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "TOML run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "Base seed");
  };
  auto add_tags = [&](CLI::App* sub) {
    sub->add_option("--family", common.family, "diffusion or flow");
    sub->add_option("--mode", common.mode, "conditional or unconditional");
  };

  std::string out;
  auto* train_app = app.add_subcommand("train", "Fit one pipeline on simulated data and save it");
  add_common(train_app);
  add_tags(train_app);
  train_app->add_option("--regime", common.regime, "transfer or non_transfer");
  train_app->add_option("--out", out, "Checkpoint directory")->required();

  std::string ckpt, cond_path;
  Eigen::Index n = 1000;
  std::uint64_t gen_seed = 0;
  auto* gen_app = app.add_subcommand("generate", "Sample from a saved pipeline");
  gen_app->add_option("--checkpoint", ckpt, "Checkpoint directory")->required();
  gen_app->add_option("--n", n, "Number of samples")->check(CLI::NonNegativeNumber);
  gen_app->add_option("--cond", cond_path, "Conditioning CSV (one row, or one row per sample)");
  gen_app->add_option("--seed", gen_seed, "Sampling seed");
  gen_app->add_option("--out", out, "Output samples CSV")->required();

  std::string a, b, metric = "tv";
  auto* eval_app = app.add_subcommand("eval", "Distance between two sample files");
  add_common(eval_app);
  eval_app->add_option("--a", a, "First samples CSV")->required()->check(CLI::ExistingFile);
  eval_app->add_option("--b", b, "Second samples CSV")->required()->check(CLI::ExistingFile);
  eval_app->add_option("--metric", metric, "tv or wasserstein");

  std::optional<int> workers;
  auto* sweep_app = app.add_subcommand("sweep", "Error versus source size, transfer and baseline");
  add_common(sweep_app);
  add_tags(sweep_app);
  sweep_app->add_option("--workers", workers, "Concurrent tasks")->check(CLI::PositiveNumber);
  sweep_app->add_option("--out", out, "Output directory")->required();

  std::string in;
  auto* plot_app = app.add_subcommand("plot", "Render a results CSV as SVG");
  plot_app->add_option("--in", in, "Results CSV")->required()->check(CLI::ExistingFile);
  plot_app->add_option("--out", out, "Output SVG")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    init_logging_from_env();
    if (*train_app) return train(common, out);
    if (*gen_app) return generate_cmd(ckpt, n, cond_path, gen_seed, out);
    if (*eval_app) return eval_cmd(common, a, b, metric);
    if (*sweep_app) return sweep_cmd(common, workers, out);
    if (*plot_app) {
      emit_plot(read_results_csv(in), out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "genxfer: %s\n", e.what());
    return 1;
  }
  return 0;
}
