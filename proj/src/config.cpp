#include "genxfer/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <toml.hpp>

namespace genxfer {

namespace {

template <typename T>
void read(const toml::node_view<const toml::node>& node, T& out) {
  if (!node) return;
  if constexpr (std::is_same_v<T, double>) {
    auto v = node.value<double>();
    if (!v) throw std::invalid_argument("config: expected a number");
    out = *v;
  } else if constexpr (std::is_same_v<T, std::string>) {
    auto v = node.value<std::string>();
    if (!v) throw std::invalid_argument("config: expected a string");
    out = *v;
  } else if constexpr (std::is_same_v<T, bool>) {
    auto v = node.value<bool>();
    if (!v) throw std::invalid_argument("config: expected a boolean");
    out = *v;
  } else {
    auto v = node.value<std::int64_t>();
    if (!v) throw std::invalid_argument("config: expected an integer");
    if (*v < 0) throw std::invalid_argument("config: expected a non-negative integer");
    out = T(*v);
  }
}

void read_opts(const toml::node_view<const toml::node>& t, TrainOptions& o) {
  read(t["epochs"], o.epochs);
  read(t["batch_size"], o.batch_size);
  read(t["lr"], o.lr);
  read(t["ema_decay"], o.ema_decay);
  read(t["grad_clip"], o.grad_clip);
  if (o.ema_decay < 0.0 || o.ema_decay >= 1.0) throw std::invalid_argument("config: ema_decay must lie in [0, 1)");
  if (o.grad_clip < 0.0) throw std::invalid_argument("config: grad_clip must be non-negative");
}

std::vector<std::string> string_list(const toml::node_view<const toml::node>& node) {
  std::vector<std::string> out;
  const auto* arr = node.as_array();
  if (!arr) throw std::invalid_argument("config: expected an array of strings");
  for (const auto& el : *arr) {
    auto v = el.value<std::string>();
    if (!v) throw std::invalid_argument("config: expected an array of strings");
    out.push_back(*v);
  }
  return out;
}

TauEmbedding tau_embed_from_string(const std::string& s) {
  if (s == "raw") return TauEmbedding::raw;
  if (s == "log") return TauEmbedding::log;
  if (s == "raw_log") return TauEmbedding::raw_log;
  if (s == "sinusoidal") return TauEmbedding::sinusoidal;
  throw std::invalid_argument("config: unknown tau_embed '" + s + "'");
}

}  // namespace

RunConfig parse_config(std::string_view text) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream ss;
    ss << "config: " << e.description() << " at line " << e.source().begin.line;
    throw std::invalid_argument(ss.str());
  }
  const toml::node_view<const toml::node> tbl{static_cast<const toml::node&>(root)};

  RunConfig cfg;
  TransferPlan& plan = cfg.plan;
  read(tbl["seed"], cfg.seed);
  plan.seed = cfg.seed;
  std::string s;
  if (tbl["family"]) read(tbl["family"], s), plan.family = family_from_string(s);
  if (tbl["mode"]) read(tbl["mode"], s), plan.mode = mode_from_string(s);
  if (tbl["regime"]) read(tbl["regime"], s), plan.regime = regime_from_string(s);
  read(tbl["n_s"], cfg.n_s);
  read(tbl["n_t"], cfg.n_t);

  const auto model = tbl["model"];
  int width = -1, depth = -1;
  read(model["width"], width);
  read(model["depth"], depth);
  if (width == 0 || depth == 0) throw std::invalid_argument("config: model width/depth must be positive");
  if (width > 0 || depth > 0) {
    const std::vector<int> hidden(std::size_t(depth > 0 ? depth : 3), width > 0 ? width : 128);
    plan.arch.score.hidden = hidden;
    plan.arch.embed_hidden = hidden;
    plan.arch.decoder_hidden = hidden;
  }
  read(model["d_h"], plan.dims.d_h);
  if (model["activation"]) {
    read(model["activation"], s);
    plan.arch.activation = activation_from_string(s);
    plan.arch.score.activation = plan.arch.activation;
    plan.arch.flow.activation = plan.arch.activation;
  }
  if (model["tau_embed"]) read(model["tau_embed"], s), plan.arch.score.tau_embed = tau_embed_from_string(s);
  read(model["flow_layers"], plan.arch.flow.coupling_layers);
  int fw = -1, fd = -1;
  read(model["flow_width"], fw);
  read(model["flow_depth"], fd);
  if (fw == 0 || fd == 0) throw std::invalid_argument("config: flow width/depth must be positive");
  if (fw > 0 || fd > 0) {
    plan.arch.flow.hidden.assign(std::size_t(fd > 0 ? fd : int(plan.arch.flow.hidden.size())),
                                 fw > 0 ? fw : plan.arch.flow.hidden.front());
  }
  if (model["flow_kind"]) {
    read(model["flow_kind"], s);
    if (s == "additive") plan.arch.flow.kind = CouplingKind::additive;
    else if (s == "affine") plan.arch.flow.kind = CouplingKind::affine;
    else throw std::invalid_argument("config: unknown flow_kind '" + s + "'");
  }
  read(model["log_scale_bound"], plan.arch.flow.log_scale_bound);

  const auto diff = tbl["diffusion"];
  read(diff["tau_min"], plan.schedule.tau_min);
  read(diff["tau_max"], plan.schedule.tau_max);
  plan.schedule.tau_star = plan.schedule.tau_min;
  read(diff["tau_star"], plan.schedule.tau_star);
  read(diff["n_steps"], plan.schedule.n_steps);
  read(diff["mc_taus"], plan.mc_taus);
  plan.schedule.validate();

  read_opts(tbl["train"]["source"], plan.source_opts);
  read_opts(tbl["train"]["target"], plan.target_opts);
  read_opts(tbl["train"]["decoder"], plan.decoder_opts);

  SweepConfig& sw = cfg.sweep;
  sw.seed = cfg.seed;
  sw.n_t = cfg.n_t;
  const auto sweep = tbl["sweep"];
  if (const auto* grid = sweep["i_grid"].as_array()) {
    sw.i_grid.clear();
    for (const auto& el : *grid) {
      auto v = el.value<double>();
      if (!v) throw std::invalid_argument("config: i_grid must hold numbers");
      sw.i_grid.push_back(*v);
    }
  }
  read(sweep["n_t"], sw.n_t);
  read(sweep["n_eval"], sw.n_eval);
  read(sweep["replications"], sw.replications);
  read(sweep["workers"], sw.workers);
  if (sweep["families"]) {
    sw.families.clear();
    for (const auto& f : string_list(sweep["families"])) sw.families.push_back(family_from_string(f));
  }
  if (sweep["modes"]) {
    sw.modes.clear();
    for (const auto& m : string_list(sweep["modes"])) sw.modes.push_back(mode_from_string(m));
  }

  const auto metrics = tbl["metrics"];
  read(metrics["n_bins"], sw.tv.n_bins);
  read(metrics["epsilon"], sw.sinkhorn.epsilon);
  read(metrics["max_iters"], sw.sinkhorn.max_iters);
  read(metrics["tol"], sw.sinkhorn.tol);
  if (metrics["cost"]) {
    read(metrics["cost"], s);
    if (s == "euclidean") sw.sinkhorn.cost = OtCost::euclidean;
    else if (s == "sq_euclidean") sw.sinkhorn.cost = OtCost::sq_euclidean;
    else throw std::invalid_argument("config: unknown cost '" + s + "'");
  }

  sw.base_plan = plan;
  sw.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace genxfer
