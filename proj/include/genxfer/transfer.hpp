// transfer.hpp
//
// Source -> target pipelines built on a shared embedding.
//
// Conditional: the source model theta_s and the embedding h are fitted
// jointly on (x_s, z_s); h is then frozen and only theta_t is fitted on
// (x_t, z_t), conditioning on h(z_t). The non-transfer baseline fits
// (theta_t, h) jointly on target data.
//
// Unconditional: a latent prior is fitted on source latents u_s and a
// decoder g_t: u -> x_t on target pairs; samples are g_t(u) with u drawn
// from the prior. The non-transfer baseline fits the prior on u_t.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "genxfer/diffusion.hpp"
#include "genxfer/flows.hpp"
#include "genxfer/nn.hpp"
#include "genxfer/training.hpp"
#include "genxfer/types.hpp"

namespace genxfer {

enum class Family { diffusion, flow };
enum class Mode { conditional, unconditional };
enum class Regime { transfer, non_transfer };

std::string to_string(Family f);
std::string to_string(Mode m);
std::string to_string(Regime r);
Family family_from_string(const std::string& s);
Mode mode_from_string(const std::string& s);
Regime regime_from_string(const std::string& s);

/// z -> (h(z), z[passthrough_idx]).
struct EmbeddingMap {
  Mlp net;
  bool frozen = false;
  std::vector<int> passthrough_idx;

  int input_dim() const { return net.input_dim(); }
  int output_dim() const { return net.output_dim() + int(passthrough_idx.size()); }
  SampleSet apply(const SampleSet& z) const;
};

EmbeddingMap make_embedding(int d_z, int d_h, const std::vector<int>& hidden, Activation act,
                            std::uint64_t seed, std::vector<int> passthrough_idx = {});

/// u -> x.
struct DecoderMap {
  Mlp net;
  SampleSet apply(const SampleSet& u) const;
};

struct TransferDims {
  int d_x_s = 1;
  int d_x_t = 1;
  int d_z = 3;
  int d_h = 8;
  int d_u = 2;
};

struct ModelArch {
  ScoreArch score;
  FlowArch flow;
  std::vector<int> embed_hidden{128, 128, 128};
  std::vector<int> decoder_hidden{128, 128, 128};
  Activation activation = Activation::relu;
};

struct TransferPlan {
  Family family = Family::diffusion;
  Mode mode = Mode::conditional;
  Regime regime = Regime::transfer;
  TrainOptions source_opts;
  TrainOptions target_opts;
  TrainOptions decoder_opts;
  TransferDims dims;
  ModelArch arch;
  NoiseSchedule schedule;
  std::uint64_t seed = 0;
  int mc_taus = 1;
};

using GenerativeModel = std::variant<ScoreModel, CouplingFlow>;

/// Source data that counts how often it is read, so tests can assert that
/// a baseline never touched it.
class SourceData {
 public:
  SourceData() = default;
  explicit SourceData(PairedSamples data) : data_(std::move(data)) {}
  const PairedSamples& read() const {
    ++reads_;
    return data_;
  }
  int reads() const { return reads_; }

 private:
  PairedSamples data_;
  mutable int reads_ = 0;
};

struct SourceFit {
  GenerativeModel model;
  EmbeddingMap embedding;  // returned frozen
  TrainTrace trace;
};

struct TargetFit {
  GenerativeModel model;
  TrainTrace trace;
};

struct PriorFit {
  GenerativeModel model;
  TrainTrace trace;
};

struct DecoderFit {
  DecoderMap decoder;
  TrainTrace trace;
};

/// Joint fit of (theta_s, h) on source pairs (x = x_s, cond = z_s).
SourceFit fit_source_conditional(const TransferPlan& plan, const PairedSamples& source);

/// Fit theta_t on target pairs (x = x_t, cond = z_t). Transfer regime
/// requires a frozen embedding and leaves it bit-identical; non_transfer
/// requires a trainable embedding and trains it jointly.
TargetFit fit_target_conditional(const TransferPlan& plan, const PairedSamples& target,
                                 EmbeddingMap& embedding);

/// Prior on latent rows (n x d_u).
PriorFit fit_latent_prior(const TransferPlan& plan, const SampleSet& latents);

/// Least-squares decoder on target pairs (x = x_t, cond = u_t).
DecoderFit fit_decoder(const TransferPlan& plan, const PairedSamples& target);

struct UnconditionalFit {
  PriorFit prior;
  DecoderFit decoder;
};

/// Prior on source_latents (transfer) or on target.cond (non_transfer),
/// plus the decoder on target pairs.
UnconditionalFit fit_unconditional(const TransferPlan& plan, const SampleSet& source_latents,
                                   const PairedSamples& target);

/// Everything needed to generate target samples.
struct FittedPipeline {
  TransferPlan plan;
  GenerativeModel model;  // theta_t (conditional) or latent prior (unconditional)
  std::optional<EmbeddingMap> embedding;
  std::optional<DecoderMap> decoder;
  std::optional<GenerativeModel> source_model;
};

/// Full pipeline per plan.regime. Non-transfer runs never read source.
FittedPipeline run_pipeline(const TransferPlan& plan, const SourceData& source,
                            const PairedSamples& target);

/// Draw n rows from a bare generative model. cond is n x d_c, 1 x d_c or empty.
SampleSet sample_model(const GenerativeModel& model, const NoiseSchedule& schedule,
                       const SampleSet& cond, Eigen::Index n, Rng& rng);

/// n target samples. Conditional pipelines take raw z rows (n x d_z or
/// 1 x d_z) and map them through the embedding first.
SampleSet generate(const FittedPipeline& fit, const SampleSet& cond_z, Eigen::Index n, Rng& rng);

}  // namespace genxfer
