#include "genxfer/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace genxfer {

namespace {


class Writer {
 public:
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void raw(const char* s, std::size_t n) { out_.append(s, n); }
  std::string take() { return std::move(out_); }

 private:
  template <typename U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(char((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw std::runtime_error("checkpoint: truncated data");
  }
  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= U(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

void header(Writer& w, CheckpointKind kind) {
  w.raw("GXF1", 4);
  w.u32(kCheckpointVersion);
  w.u32(std::uint32_t(kind));
}

CheckpointKind read_header(Reader& r) {
  if (r.raw(4) != "GXF1") throw std::runtime_error("checkpoint: bad magic (expected GXF1)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t kind = r.u32();
  if (kind < 1 || kind > 5) throw std::runtime_error("checkpoint: unknown kind " + std::to_string(kind));
  return CheckpointKind(kind);
}

void expect_kind(Reader& r, CheckpointKind want) {
  if (read_header(r) != want) throw std::runtime_error("checkpoint: unexpected kind");
}

void finish(const Reader& r) {
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
}

void put_indices(Writer& w, const std::vector<int>& v) {
  w.u32(std::uint32_t(v.size()));
  for (int i : v) w.u32(std::uint32_t(i));
}

std::vector<int> get_indices(Reader& r) {
  const std::uint32_t n = r.u32();
  if (n > (1u << 20)) throw std::runtime_error("checkpoint: implausible index count");
  std::vector<int> v(n);
  for (auto& i : v) i = int(r.u32());
  return v;
}

void put_mlp(Writer& w, const Mlp& net) {
  w.u32(std::uint32_t(net.layer_dims().size()));
  for (int d : net.layer_dims()) w.u32(std::uint32_t(d));
  w.u32(std::uint32_t(net.hidden_activation()));
  w.u32(std::uint32_t(net.output_activation()));
  w.f64(net.output_bound());
  w.u64(std::uint64_t(net.num_params()));
  for (Eigen::Index i = 0; i < net.num_params(); ++i) w.f64(net.params()[i]);
}

Mlp get_mlp(Reader& r) {
  const std::vector<int> dims = get_indices(r);
  const std::uint32_t hidden = r.u32();
  const std::uint32_t output = r.u32();
  if (hidden > 2 || output > 1) throw std::runtime_error("checkpoint: unknown activation tag");
  const double bound = r.f64();
  Mlp net(dims, Activation(hidden), OutputActivation(output), bound);
  const std::uint64_t n = r.u64();
  if (n != std::uint64_t(net.num_params())) {
    throw std::runtime_error("checkpoint: parameter count does not match dims");
  }
  for (Eigen::Index i = 0; i < net.num_params(); ++i) net.params()[i] = r.f64();
  return net;
}

void put_score(Writer& w, const ScoreModel& m) {
  w.u32(std::uint32_t(m.d_x));
  w.u32(std::uint32_t(m.d_c));
  w.u32(std::uint32_t(m.tau_embed));
  w.u32(std::uint32_t(m.sin_k));
  put_mlp(w, m.net);
}

ScoreModel get_score(Reader& r) {
  ScoreModel m;
  m.d_x = int(r.u32());
  m.d_c = int(r.u32());
  const std::uint32_t emb = r.u32();
  if (emb > 3) throw std::runtime_error("checkpoint: unknown tau embedding");
  m.tau_embed = TauEmbedding(emb);
  m.sin_k = int(r.u32());
  m.net = get_mlp(r);
  if (m.net.input_dim() != m.d_x + m.d_c + m.embed_dim() || m.net.output_dim() != m.d_x) {
    throw std::runtime_error("checkpoint: score network dims inconsistent with header");
  }
  return m;
}

void put_flow(Writer& w, const CouplingFlow& f) {
  w.u32(std::uint32_t(f.d_x));
  w.u32(std::uint32_t(f.d_c));
  w.u32(std::uint32_t(f.base));
  w.u32(std::uint32_t(f.layers.size()));
  for (const auto& l : f.layers) {
    if (const auto* c = std::get_if<CouplingLayer>(&l)) {
      w.u32(0);
      w.u32(std::uint32_t(c->kind));
      w.f64(c->log_scale_bound);
      put_indices(w, c->part1);
      put_indices(w, c->part2);
      put_mlp(w, c->omega);
    } else {
      w.u32(1);
      put_indices(w, std::get<Permutation>(l).perm);
    }
  }
}

CouplingFlow get_flow(Reader& r) {
  CouplingFlow f;
  f.d_x = int(r.u32());
  f.d_c = int(r.u32());
  const std::uint32_t base = r.u32();
  if (base > 1) throw std::runtime_error("checkpoint: unknown base density");
  f.base = BaseDensity(base);
  const std::uint32_t n = r.u32();
  for (std::uint32_t k = 0; k < n; ++k) {
    const std::uint32_t tag = r.u32();
    if (tag == 0) {
      CouplingLayer c;
      const std::uint32_t kind = r.u32();
      if (kind > 1) throw std::runtime_error("checkpoint: unknown coupling kind");
      c.kind = CouplingKind(kind);
      c.log_scale_bound = r.f64();
      c.part1 = get_indices(r);
      c.part2 = get_indices(r);
      c.omega = get_mlp(r);
      f.layers.emplace_back(std::move(c));
    } else if (tag == 1) {
      f.layers.emplace_back(Permutation{get_indices(r)});
    } else {
      throw std::runtime_error("checkpoint: unknown flow layer tag");
    }
  }
  return f;
}

}  // namespace

std::string encode_mlp(const Mlp& net) {
  Writer w;
  header(w, CheckpointKind::mlp);
  put_mlp(w, net);
  return w.take();
}

std::string encode_model(const GenerativeModel& model) {
  Writer w;
  if (const auto* s = std::get_if<ScoreModel>(&model)) {
    header(w, CheckpointKind::score_model);
    put_score(w, *s);
  } else {
    header(w, CheckpointKind::coupling_flow);
    put_flow(w, std::get<CouplingFlow>(model));
  }
  return w.take();
}

std::string encode_embedding(const EmbeddingMap& e) {
  Writer w;
  header(w, CheckpointKind::embedding);
  w.u32(e.frozen ? 1 : 0);
  put_indices(w, e.passthrough_idx);
  put_mlp(w, e.net);
  return w.take();
}

std::string encode_decoder(const DecoderMap& d) {
  Writer w;
  header(w, CheckpointKind::decoder);
  put_mlp(w, d.net);
  return w.take();
}

CheckpointKind peek_kind(const std::string& bytes) {
  Reader r(bytes);
  return read_header(r);
}

Mlp decode_mlp(const std::string& bytes) {
  Reader r(bytes);
  expect_kind(r, CheckpointKind::mlp);
  Mlp net = get_mlp(r);
  finish(r);
  return net;
}

GenerativeModel decode_model(const std::string& bytes) {
  Reader r(bytes);
  const CheckpointKind kind = read_header(r);
  GenerativeModel m;
  if (kind == CheckpointKind::score_model) {
    m = get_score(r);
  } else if (kind == CheckpointKind::coupling_flow) {
    m = get_flow(r);
  } else {
    throw std::runtime_error("checkpoint: not a generative model");
  }
  finish(r);
  return m;
}

EmbeddingMap decode_embedding(const std::string& bytes) {
  Reader r(bytes);
  expect_kind(r, CheckpointKind::embedding);
  EmbeddingMap e;
  e.frozen = r.u32() != 0;
  e.passthrough_idx = get_indices(r);
  e.net = get_mlp(r);
  finish(r);
  return e;
}

DecoderMap decode_decoder(const std::string& bytes) {
  Reader r(bytes);
  expect_kind(r, CheckpointKind::decoder);
  DecoderMap d{get_mlp(r)};
  finish(r);
  return d;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  Manifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("manifest: malformed line '" + line + "'");
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::string out;
  for (const auto& [k, v] : m) out += k + "=" + v + "\n";
  write_file(path, out);
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

const std::string& need(const Manifest& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw std::runtime_error("manifest: missing key '" + key + "'");
  return it->second;
}

void put_opts(Manifest& m, const std::string& prefix, const TrainOptions& o) {
  m[prefix + ".epochs"] = std::to_string(o.epochs);
  m[prefix + ".batch_size"] = std::to_string(o.batch_size);
  m[prefix + ".lr"] = fmt_double(o.lr);
}

void get_opts(const Manifest& m, const std::string& prefix, TrainOptions& o) {
  if (m.count(prefix + ".epochs")) o.epochs = std::stoi(m.at(prefix + ".epochs"));
  if (m.count(prefix + ".batch_size")) o.batch_size = std::stoi(m.at(prefix + ".batch_size"));
  if (m.count(prefix + ".lr")) o.lr = std::stod(m.at(prefix + ".lr"));
}

}  // namespace

void save_pipeline(const std::filesystem::path& dir, const FittedPipeline& fit) {
  std::filesystem::create_directories(dir);
  const TransferPlan& p = fit.plan;
  Manifest m;
  m["format"] = "genxfer-pipeline";
  m["version"] = std::to_string(kCheckpointVersion);
  m["family"] = to_string(p.family);
  m["mode"] = to_string(p.mode);
  m["regime"] = to_string(p.regime);
  m["seed"] = std::to_string(p.seed);
  m["d_x_s"] = std::to_string(p.dims.d_x_s);
  m["d_x_t"] = std::to_string(p.dims.d_x_t);
  m["d_z"] = std::to_string(p.dims.d_z);
  m["d_h"] = std::to_string(p.dims.d_h);
  m["d_u"] = std::to_string(p.dims.d_u);
  m["tau_min"] = fmt_double(p.schedule.tau_min);
  m["tau_max"] = fmt_double(p.schedule.tau_max);
  m["tau_star"] = fmt_double(p.schedule.tau_star);
  m["n_steps"] = std::to_string(p.schedule.n_steps);
  m["mc_taus"] = std::to_string(p.mc_taus);
  put_opts(m, "source", p.source_opts);
  put_opts(m, "target", p.target_opts);
  put_opts(m, "decoder", p.decoder_opts);

  m["model_file"] = "model.gxf";
  write_file(dir / "model.gxf", encode_model(fit.model));
  if (fit.embedding) {
    m["embedding_file"] = "embedding.gxf";
    write_file(dir / "embedding.gxf", encode_embedding(*fit.embedding));
  }
  if (fit.decoder) {
    m["decoder_file"] = "decoder.gxf";
    write_file(dir / "decoder.gxf", encode_decoder(*fit.decoder));
  }
  if (fit.source_model) {
    m["source_model_file"] = "source_model.gxf";
    write_file(dir / "source_model.gxf", encode_model(*fit.source_model));
  }
  write_manifest(dir / "manifest.txt", m);
}

FittedPipeline load_pipeline(const std::filesystem::path& dir) {
  const Manifest m = read_manifest(dir / "manifest.txt");
  if (need(m, "format") != "genxfer-pipeline") throw std::runtime_error("manifest: not a pipeline");
  if (need(m, "version") != std::to_string(kCheckpointVersion)) {
    throw std::runtime_error("manifest: unsupported version");
  }
  TransferPlan p;
  p.family = family_from_string(need(m, "family"));
  p.mode = mode_from_string(need(m, "mode"));
  p.regime = regime_from_string(need(m, "regime"));
  p.seed = std::stoull(need(m, "seed"));
  p.dims.d_x_s = std::stoi(need(m, "d_x_s"));
  p.dims.d_x_t = std::stoi(need(m, "d_x_t"));
  p.dims.d_z = std::stoi(need(m, "d_z"));
  p.dims.d_h = std::stoi(need(m, "d_h"));
  p.dims.d_u = std::stoi(need(m, "d_u"));
  p.schedule.tau_min = std::stod(need(m, "tau_min"));
  p.schedule.tau_max = std::stod(need(m, "tau_max"));
  p.schedule.tau_star = std::stod(need(m, "tau_star"));
  p.schedule.n_steps = std::stoi(need(m, "n_steps"));
  p.mc_taus = std::stoi(need(m, "mc_taus"));
  get_opts(m, "source", p.source_opts);
  get_opts(m, "target", p.target_opts);
  get_opts(m, "decoder", p.decoder_opts);

  FittedPipeline fit{p, decode_model(read_file(dir / need(m, "model_file"))), std::nullopt,
                     std::nullopt, std::nullopt};
  if (m.count("embedding_file")) fit.embedding = decode_embedding(read_file(dir / m.at("embedding_file")));
  if (m.count("decoder_file")) fit.decoder = decode_decoder(read_file(dir / m.at("decoder_file")));
  if (m.count("source_model_file")) {
    fit.source_model = decode_model(read_file(dir / m.at("source_model_file")));
  }
  return fit;
}

}  // namespace genxfer
