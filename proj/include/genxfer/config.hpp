// config.hpp
//
// TOML run configuration. Every key is optional; missing keys keep the
// defaults of the corresponding structs.
//
//   seed = 0
//   family = "diffusion"        # or "flow"
//   mode = "conditional"        # or "unconditional"
//   regime = "transfer"         # or "non_transfer"
//   n_s = 2980
//   n_t = 5000
//
//   [model]      width, depth, d_h, activation, tau_embed, flow_layers,
//                flow_width, flow_depth, flow_kind, log_scale_bound
//   [diffusion]  tau_min, tau_max, tau_star, n_steps, mc_taus
//   [train.source] / [train.target] / [train.decoder]   epochs, batch_size, lr,
//                ema_decay, grad_clip
//   [sweep]      i_grid, n_t, n_eval, replications, families, modes, workers
//   [metrics]    n_bins, epsilon, max_iters, tol, cost

#pragma once

#include <filesystem>
#include <string_view>

#include "genxfer/harness.hpp"

namespace genxfer {

struct RunConfig {
  std::uint64_t seed = 0;
  TransferPlan plan;
  Eigen::Index n_s = 2980;
  Eigen::Index n_t = 5000;
  SweepConfig sweep;
};

/// Throws std::invalid_argument on syntax errors or bad values.
RunConfig parse_config(std::string_view toml_text);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace genxfer
