// harness.hpp
//
// Simulation designs, the source-size sweep and its result table.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "genxfer/metrics.hpp"
#include "genxfer/transfer.hpp"
#include "genxfer/types.hpp"

namespace genxfer {

enum class DgpKind { cond_sim, uncond_sim };
enum class Role { source, target };

struct DgpSpec {
  DgpKind kind = DgpKind::cond_sim;
  std::uint64_t seed = 0;
};

/// sin z1 + cos z2 + z3^2.
double cond_sim_signal(double z1, double z2, double z3);

/// cond_sim: Z ~ U(-2,2)^3, source X = signal(Z) + N(0,1), target X = signal(Z) + exp(U(-1,1));
///           returns (x = X, cond = Z).
/// uncond_sim: eps ~ N(0,I_2), U = (sin eps1, cos eps2); source X is 5-dim, target X is 3-dim;
///           returns (x = X, cond = U).
PairedSamples draw_dgp(const DgpSpec& spec, Role role, Eigen::Index n, Rng& rng);

struct SweepConfig {
  std::vector<double> i_grid{8.0, 8.5, 9.0, 9.5, 10.0, 10.5, 11.0};
  Eigen::Index n_t = 5000;
  Eigen::Index n_eval = 5000;
  int replications = 5;
  std::uint64_t seed = 0;
  std::vector<Family> families{Family::diffusion, Family::flow};
  std::vector<Mode> modes{Mode::conditional, Mode::unconditional};
  int workers = 1;
  // Architecture, schedule and optimizer settings shared by every cell.
  TransferPlan base_plan;
  TvConfig tv;
  SinkhornConfig sinkhorn;

  /// Throws std::invalid_argument on an empty or non-increasing grid or
  /// non-positive sizes.
  void validate() const;
};

/// floor(exp(i)) for each grid point.
std::vector<Eigen::Index> source_sizes(const SweepConfig& sweep);

/// Per-task plan with dims filled in for the simulation designs.
TransferPlan plan_for(const SweepConfig& sweep, Family family, Mode mode, Regime regime);

struct ResultRow {
  Family family = Family::diffusion;
  Mode mode = Mode::conditional;
  Regime regime = Regime::transfer;
  Eigen::Index n_s = 0;  // 0 for non-transfer rows
  int replication = 0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
  double wall_time_s = 0.0;
  std::string status = "ok";

  bool operator==(const ResultRow&) const = default;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
};

/// Parameter hashes of the component shared with the target phase: the
/// embedding (conditional) or the latent prior (unconditional), taken right
/// after the source phase and again after the target phase.
struct FreezeRecord {
  Family family;
  Mode mode;
  Eigen::Index n_s;
  int replication;
  std::uint64_t hash_before;
  std::uint64_t hash_after;
};

struct SweepDiagnostics {
  std::vector<FreezeRecord> freeze;
};

inline constexpr const char* kResultsHeader =
    "family,mode,regime,n_s,replication,seed,metric,value,wall_time_s,status";

/// The mode picks the design (cond_sim for conditional, uncond_sim for
/// unconditional); dgp.seed seeds the data streams.
/// Runs every (family, mode, replication) task: one non-transfer baseline
/// plus one transfer run per source size. Rows are appended to
/// out_dir/results.csv as they complete; the file is rewritten in canonical
/// order at the end. A failing run is recorded with its status and the
/// sweep continues.
ExperimentResult run_sweep(const SweepConfig& sweep, const DgpSpec& dgp,
                           const std::filesystem::path& out_dir,
                           SweepDiagnostics* diagnostics = nullptr);

/// The same runs restricted to a single (family, mode, replication) task.
/// data_seed + replication seeds the simulated data; sweep.seed + replication
/// seeds models and training.
ExperimentResult run_sweep_task(const SweepConfig& sweep, std::uint64_t data_seed, Family family,
                                Mode mode, int replication,
                                const std::function<void(const ResultRow&)>& on_row = {},
                                SweepDiagnostics* diagnostics = nullptr);

/// Canonical order: family, mode, replication, regime (non-transfer first), n_s.
void sort_rows(std::vector<ResultRow>& rows);

std::string format_row(const ResultRow& row);
ResultRow parse_row(const std::string& line);
void write_results_csv(const std::filesystem::path& path, const ExperimentResult& result);
ExperimentResult read_results_csv(const std::filesystem::path& path);

/// Samples as headered CSV: columns x1..xd (or the given names).
void write_samples_csv(const std::filesystem::path& path, const SampleSet& s,
                       const std::vector<std::string>& names = {});
SampleSet read_samples_csv(const std::filesystem::path& path);

/// Log-scale error versus n_s, one panel per (family, mode).
void emit_plot(const ExperimentResult& result, const std::filesystem::path& out);
std::string render_plot_svg(const ExperimentResult& result);

}  // namespace genxfer
