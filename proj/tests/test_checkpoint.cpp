#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cstring>
#include <filesystem>

#include "genxfer/checkpoint.hpp"
#include "genxfer/harness.hpp"

using namespace genxfer;
namespace fs = std::filesystem;

namespace {

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& s, double v) { put_u64(s, std::bit_cast<std::uint64_t>(v)); }

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("genxfer_ckpt_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("hand-assembled bytes decode to the expected network") {
  // 1 -> 1 linear net, weight 2.5, bias -1, identity head.
  std::string b = "GXF1";
  put_u32(b, 1);  // version
  put_u32(b, 1);  // kind mlp
  put_u32(b, 2);
  put_u32(b, 1);
  put_u32(b, 1);
  put_u32(b, 0);  // relu
  put_u32(b, 0);  // identity head
  put_f64(b, 1.0);
  put_u64(b, 2);
  put_f64(b, 2.5);
  put_f64(b, -1.0);
  const Mlp net = decode_mlp(b);
  CHECK(net.forward(Eigen::VectorXd(Eigen::VectorXd::Constant(1, 2.0)))[0] == 4.0);
  CHECK(encode_mlp(net) == b);
}

TEST_CASE("bad magic, version, kind and truncation are rejected") {
  Mlp net({2, 3, 1}, Activation::tanh);
  net.init(1);
  const std::string good = encode_mlp(net);
  std::string magic = good;
  magic[3] = '2';
  CHECK_THROWS_AS(decode_mlp(magic), std::runtime_error);
  std::string version = good;
  version[4] = 2;
  CHECK_THROWS_AS(decode_mlp(version), std::runtime_error);
  CHECK_THROWS_AS(decode_decoder(good), std::runtime_error);
  CHECK_THROWS_AS(decode_mlp(good.substr(0, good.size() - 3)), std::runtime_error);
  CHECK_THROWS_AS(decode_mlp(good + "x"), std::runtime_error);
  CHECK_THROWS_AS(decode_mlp(""), std::runtime_error);
}

TEST_CASE("round trip for random networks") {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> dims{int(1 + gen() % 6)};
    const int depth = int(gen() % 4);
    for (int k = 0; k <= depth; ++k) dims.push_back(int(1 + gen() % 6));
    const auto act = Activation(gen() % 3);
    const auto head = gen() % 2 ? OutputActivation::scaled_tanh : OutputActivation::identity;
    Mlp net(dims, act, head, 1.5);
    net.init(gen());
    const Mlp back = decode_mlp(encode_mlp(net));
    CHECK(back.layer_dims() == net.layer_dims());
    CHECK(back.hidden_activation() == act);
    CHECK(back.output_activation() == head);
    CHECK(param_hash(back.params()) == param_hash(net.params()));
    CHECK(peek_kind(encode_mlp(net)) == CheckpointKind::mlp);
  }
}

TEST_CASE("round trip for models, embeddings and decoders") {
  ScoreArch sa{{8, 8}, Activation::requ, TauEmbedding::sinusoidal, 3};
  const ScoreModel score = make_score_model(2, 3, sa, 4);
  const auto s2 = std::get<ScoreModel>(decode_model(encode_model(score)));
  CHECK(s2.d_x == 2);
  CHECK(s2.d_c == 3);
  CHECK(s2.tau_embed == TauEmbedding::sinusoidal);
  CHECK(s2.sin_k == 3);
  CHECK(param_hash(s2.net.params()) == param_hash(score.net.params()));

  FlowArch fa;
  fa.coupling_layers = 3;
  fa.hidden = {8};
  fa.kind = CouplingKind::additive;
  fa.base = BaseDensity::uniform_logit;
  CouplingFlow flow = make_coupling_flow(3, 2, fa, 6);
  Rng rng(1);
  flow.set_params(flow.params() + 0.1 * rng.normal_matrix(flow.num_params(), 1));
  const auto f2 = std::get<CouplingFlow>(decode_model(encode_model(flow)));
  CHECK(f2.base == BaseDensity::uniform_logit);
  CHECK(f2.layers.size() == flow.layers.size());
  const SampleSet x = rng.normal_matrix(10, 3), c = rng.normal_matrix(10, 2);
  CHECK((flow_forward(f2, x, c).v.array() == flow_forward(flow, x, c).v.array()).all());

  EmbeddingMap e = make_embedding(4, 2, {8}, Activation::relu, 3, {1, 2});
  e.frozen = true;
  const EmbeddingMap e2 = decode_embedding(encode_embedding(e));
  CHECK(e2.frozen);
  CHECK(e2.passthrough_idx == std::vector<int>{1, 2});
  CHECK(param_hash(e2.net.params()) == param_hash(e.net.params()));

  DecoderMap d{Mlp({2, 4, 3}, Activation::relu)};
  d.net.init(9);
  CHECK(param_hash(decode_decoder(encode_decoder(d)).net.params()) == param_hash(d.net.params()));
}

TEST_CASE("manifest round trip") {
  const fs::path dir = scratch_dir("manifest");
  const Manifest m{{"family", "flow"}, {"seed", "18446744073709551615"}, {"note", "a=b"}};
  write_manifest(dir / "manifest.txt", m);
  CHECK(read_manifest(dir / "manifest.txt") == m);
}

TEST_CASE("saved pipelines reload and generate identically") {
  Rng rng(3);
  for (Mode mode : {Mode::conditional, Mode::unconditional}) {
    const DgpSpec spec{mode == Mode::conditional ? DgpKind::cond_sim : DgpKind::uncond_sim, 1};
    SourceData source(draw_dgp(spec, Role::source, 200, rng));
    const PairedSamples target = draw_dgp(spec, Role::target, 200, rng);
    for (Family family : {Family::diffusion, Family::flow}) {
      TransferPlan plan;
      plan.family = family;
      plan.mode = mode;
      if (mode == Mode::unconditional) plan.dims = TransferDims{5, 3, 3, 8, 2};
      plan.arch.score.hidden = plan.arch.flow.hidden = plan.arch.embed_hidden = plan.arch.decoder_hidden = {8};
      plan.source_opts.epochs = plan.target_opts.epochs = plan.decoder_opts.epochs = 1;
      plan.seed = 99;
      const FittedPipeline fit = run_pipeline(plan, source, target);
      const fs::path dir = scratch_dir(to_string(family) + to_string(mode));
      save_pipeline(dir, fit);
      const FittedPipeline back = load_pipeline(dir);
      CHECK(back.plan.family == family);
      CHECK(back.plan.mode == mode);
      CHECK(back.plan.seed == 99);
      const SampleSet z = mode == Mode::conditional ? SampleSet::Zero(1, 3) : SampleSet();
      Rng a(4), b(4);
      CHECK((generate(fit, z, 30, a).array() == generate(back, z, 30, b).array()).all());
    }
  }
}

TEST_CASE("loading a missing pipeline fails cleanly") {
  CHECK_THROWS(load_pipeline(scratch_dir("empty")));
}
