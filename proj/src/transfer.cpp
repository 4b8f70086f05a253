#include "genxfer/transfer.hpp"

#include <stdexcept>

namespace genxfer {

std::string to_string(Family f) { return f == Family::diffusion ? "diffusion" : "flow"; }
std::string to_string(Mode m) { return m == Mode::conditional ? "conditional" : "unconditional"; }
std::string to_string(Regime r) { return r == Regime::transfer ? "transfer" : "non_transfer"; }

Family family_from_string(const std::string& s) {
  if (s == "diffusion") return Family::diffusion;
  if (s == "flow") return Family::flow;
  throw std::invalid_argument("unknown family '" + s + "'");
}
Mode mode_from_string(const std::string& s) {
  if (s == "conditional") return Mode::conditional;
  if (s == "unconditional") return Mode::unconditional;
  throw std::invalid_argument("unknown mode '" + s + "'");
}
Regime regime_from_string(const std::string& s) {
  if (s == "transfer") return Regime::transfer;
  if (s == "non_transfer" || s == "non-transfer") return Regime::non_transfer;
  throw std::invalid_argument("unknown regime '" + s + "'");
}

SampleSet EmbeddingMap::apply(const SampleSet& z) const {
  if (z.cols() != input_dim()) throw std::invalid_argument("embedding: z has wrong dimension");
  SampleSet out(z.rows(), output_dim());
  out.leftCols(net.output_dim()) = net.forward(Eigen::MatrixXd(z.transpose())).transpose();
  for (std::size_t k = 0; k < passthrough_idx.size(); ++k) {
    out.col(net.output_dim() + Eigen::Index(k)) = z.col(passthrough_idx[k]);
  }
  return out;
}

EmbeddingMap make_embedding(int d_z, int d_h, const std::vector<int>& hidden, Activation act,
                            std::uint64_t seed, std::vector<int> passthrough_idx) {
  for (int i : passthrough_idx) {
    if (i < 0 || i >= d_z) throw std::invalid_argument("embedding: passthrough index out of range");
  }
  EmbeddingMap e;
  e.net = Mlp(mlp_dims(d_z, hidden, d_h), act);
  e.net.init(seed);
  e.passthrough_idx = std::move(passthrough_idx);
  return e;
}

SampleSet DecoderMap::apply(const SampleSet& u) const {
  return net.forward(Eigen::MatrixXd(u.transpose())).transpose();
}

namespace {

enum SeedTag : std::uint64_t {
  kSourceModel = 1,
  kEmbedding,
  kTargetModel,
  kPrior,
  kDecoder,
  kSourceTrain,
  kTargetTrain,
  kPriorTrain,
  kDecoderTrain,
};

std::uint64_t tagged(const TransferPlan& plan, SeedTag tag) { return mix_seed(plan.seed, tag); }

GenerativeModel make_model(const TransferPlan& plan, int d_x, int d_c, std::uint64_t seed) {
  if (plan.family == Family::diffusion) return make_score_model(d_x, d_c, plan.arch.score, seed);
  return make_coupling_flow(d_x, d_c, plan.arch.flow, seed);
}

Eigen::VectorXd model_params(const GenerativeModel& m) {
  if (const auto* s = std::get_if<ScoreModel>(&m)) return s->net.params();
  return std::get<CouplingFlow>(m).params();
}

void set_model_params(GenerativeModel& m, const Eigen::VectorXd& p) {
  if (auto* s = std::get_if<ScoreModel>(&m)) {
    s->net.params() = p;
  } else {
    std::get<CouplingFlow>(m).set_params(p);
  }
}

struct LossAndGrads {
  double loss;
  Eigen::VectorXd param_grads;
  Eigen::MatrixXd cond_grads;
};

LossAndGrads model_loss(const GenerativeModel& m, const NoiseSchedule& schedule,
                        const SampleSet& x, const SampleSet& cond, int mc_taus, Rng& rng) {
  if (const auto* s = std::get_if<ScoreModel>(&m)) {
    DsmResult r = dsm_loss(*s, schedule, x, cond, mc_taus, rng);
    return {r.loss, std::move(r.param_grads), std::move(r.cond_grads)};
  }
  NllResult r = nll_loss(std::get<CouplingFlow>(m), x, cond);
  return {r.loss, std::move(r.param_grads), std::move(r.cond_grads)};
}

// Minibatch Adam on the family loss of `model` conditioned on embedding(z).
// Gradients reach the embedding network only when train_embedding is set.
TrainTrace train_with_embedding(GenerativeModel& model, EmbeddingMap& embedding,
                                bool train_embedding, const PairedSamples& data,
                                const TransferPlan& plan, const TrainOptions& opts) {
  if (data.rows() == 0) throw std::invalid_argument("training: empty data");
  if (data.cond.rows() != data.rows()) throw std::invalid_argument("training: conditioning rows mismatch");
  Rng rng(opts.seed);
  Eigen::VectorXd params = model_params(model);
  AdamState adam(params.size(), opts.lr);
  AdamState adam_embed(embedding.net.num_params(), opts.lr);
  ParamEma ema(opts.ema_decay), ema_embed(opts.ema_decay);
  const int d_h = embedding.net.output_dim();

  TrainTrace trace = run_epochs(data.rows(), opts, rng, [&](const std::vector<Eigen::Index>& rows) {
    const SampleSet xb = take_rows(data.x, rows);
    const SampleSet zb = take_rows(data.cond, rows);
    MlpTape<double> tape;
    SampleSet cb(zb.rows(), embedding.output_dim());
    cb.leftCols(d_h) = embedding.net.forward(Eigen::MatrixXd(zb.transpose()), tape).transpose();
    for (std::size_t k = 0; k < embedding.passthrough_idx.size(); ++k) {
      cb.col(d_h + Eigen::Index(k)) = zb.col(embedding.passthrough_idx[k]);
    }
    LossAndGrads r = model_loss(model, plan.schedule, xb, cb, plan.mc_taus, rng);
    Eigen::VectorXd g;
    if (train_embedding) {
      g = Eigen::VectorXd::Zero(embedding.net.num_params());
      embedding.net.backward(tape, r.cond_grads.leftCols(d_h).transpose(), g);
    }
    if (std::holds_alternative<CouplingFlow>(model)) {
      // One factor for the joint gradient keeps its direction.
      const double f = clip_factor(std::sqrt(r.param_grads.squaredNorm() + g.squaredNorm()), opts.grad_clip);
      r.param_grads *= f;
      g *= f;
    }
    adam_step<double>(params, r.param_grads, adam);
    set_model_params(model, params);
    ema.update(params);
    if (train_embedding) {
      adam_step<double>(embedding.net.params(), g, adam_embed);
      ema_embed.update(embedding.net.params());
    }
    return r.loss;
  });
  set_model_params(model, ema.value_or(params));
  if (train_embedding) embedding.net.params() = Eigen::VectorXd(ema_embed.value_or(embedding.net.params()));
  return trace;
}

TrainTrace train_plain(GenerativeModel& model, const SampleSet& data, const TransferPlan& plan,
                       const TrainOptions& opts) {
  if (auto* s = std::get_if<ScoreModel>(&model)) {
    return train_score(*s, plan.schedule, data, SampleSet(), opts, plan.mc_taus);
  }
  return train_flow(std::get<CouplingFlow>(model), data, SampleSet(), opts);
}

TrainOptions with_seed(TrainOptions opts, std::uint64_t seed) {
  opts.seed = seed;
  return opts;
}

}  // namespace

SourceFit fit_source_conditional(const TransferPlan& plan, const PairedSamples& source) {
  if (plan.mode != Mode::conditional) throw std::invalid_argument("fit_source_conditional: plan is not conditional");
  if (source.rows() == 0) throw std::invalid_argument("empty source");
  if (source.x.cols() != plan.dims.d_x_s || source.cond.cols() != plan.dims.d_z) {
    throw std::invalid_argument("fit_source_conditional: source dimensions do not match plan");
  }
  SourceFit fit{
      make_model(plan, plan.dims.d_x_s, plan.dims.d_h, tagged(plan, kSourceModel)),
      make_embedding(plan.dims.d_z, plan.dims.d_h, plan.arch.embed_hidden, plan.arch.activation,
                     tagged(plan, kEmbedding)),
      {}};
  fit.trace = train_with_embedding(fit.model, fit.embedding, true, source, plan,
                                   with_seed(plan.source_opts, tagged(plan, kSourceTrain)));
  fit.embedding.frozen = true;
  return fit;
}

TargetFit fit_target_conditional(const TransferPlan& plan, const PairedSamples& target,
                                 EmbeddingMap& embedding) {
  if (plan.mode != Mode::conditional) throw std::invalid_argument("fit_target_conditional: plan is not conditional");
  if (target.rows() == 0) throw std::invalid_argument("empty target");
  if (target.x.cols() != plan.dims.d_x_t || target.cond.cols() != embedding.input_dim()) {
    throw std::invalid_argument("fit_target_conditional: target dimensions do not match");
  }
  const bool transfer = plan.regime == Regime::transfer;
  if (transfer && !embedding.frozen) {
    throw std::invalid_argument("fit_target_conditional: transfer regime needs a frozen embedding");
  }
  if (!transfer && embedding.frozen) {
    throw std::invalid_argument("fit_target_conditional: non_transfer regime needs a trainable embedding");
  }
  TargetFit fit{make_model(plan, plan.dims.d_x_t, embedding.output_dim(), tagged(plan, kTargetModel)), {}};
  const std::uint64_t before = param_hash(embedding.net.params());
  fit.trace = train_with_embedding(fit.model, embedding, !transfer, target, plan,
                                   with_seed(plan.target_opts, tagged(plan, kTargetTrain)));
  if (transfer && param_hash(embedding.net.params()) != before) {
    throw std::logic_error("fit_target_conditional: frozen embedding changed during training");
  }
  return fit;
}

PriorFit fit_latent_prior(const TransferPlan& plan, const SampleSet& latents) {
  if (latents.rows() == 0) throw std::invalid_argument("fit_latent_prior: empty latent sample");
  if (latents.cols() != plan.dims.d_u) throw std::invalid_argument("fit_latent_prior: latent dimension mismatch");
  PriorFit fit{make_model(plan, plan.dims.d_u, 0, tagged(plan, kPrior)), {}};
  const TrainOptions& opts = plan.regime == Regime::transfer ? plan.source_opts : plan.target_opts;
  fit.trace = train_plain(fit.model, latents, plan, with_seed(opts, tagged(plan, kPriorTrain)));
  return fit;
}

DecoderFit fit_decoder(const TransferPlan& plan, const PairedSamples& target) {
  if (target.rows() == 0) throw std::invalid_argument("fit_decoder: empty target pairs");
  if (target.cond.cols() != plan.dims.d_u || target.x.cols() != plan.dims.d_x_t ||
      target.cond.rows() != target.rows()) {
    throw std::invalid_argument("fit_decoder: target pair dimensions do not match plan");
  }
  DecoderFit fit;
  fit.decoder.net = Mlp(mlp_dims(plan.dims.d_u, plan.arch.decoder_hidden, plan.dims.d_x_t),
                        plan.arch.activation);
  fit.decoder.net.init(tagged(plan, kDecoder));
  const TrainOptions opts = with_seed(plan.decoder_opts, tagged(plan, kDecoderTrain));
  Rng rng(opts.seed);
  AdamState adam(fit.decoder.net.num_params(), opts.lr);
  ParamEma ema(opts.ema_decay);
  Mlp& net = fit.decoder.net;
  fit.trace = run_epochs(target.rows(), opts, rng, [&](const std::vector<Eigen::Index>& rows) {
    const Eigen::MatrixXd u = take_rows(target.cond, rows).transpose();
    const Eigen::MatrixXd x = take_rows(target.x, rows).transpose();
    MlpTape<double> tape;
    const Eigen::MatrixXd resid = net.forward(u, tape) - x;
    const double scale = 1.0 / double(rows.size());
    Eigen::VectorXd g = Eigen::VectorXd::Zero(net.num_params());
    net.backward(tape, 2.0 * scale * resid, g);
    adam_step<double>(net.params(), g, adam);
    ema.update(net.params());
    return scale * resid.squaredNorm();
  });
  net.params() = Eigen::VectorXd(ema.value_or(net.params()));
  return fit;
}

UnconditionalFit fit_unconditional(const TransferPlan& plan, const SampleSet& source_latents,
                                   const PairedSamples& target) {
  if (plan.mode != Mode::unconditional) throw std::invalid_argument("fit_unconditional: plan is not unconditional");
  if (target.rows() == 0) throw std::invalid_argument("fit_unconditional: empty target pairs");
  const SampleSet& latents = plan.regime == Regime::transfer ? source_latents : target.cond;
  return {fit_latent_prior(plan, latents), fit_decoder(plan, target)};
}

FittedPipeline run_pipeline(const TransferPlan& plan, const SourceData& source,
                            const PairedSamples& target) {
  const bool transfer = plan.regime == Regime::transfer;
  if (plan.mode == Mode::conditional) {
    if (transfer) {
      SourceFit src = fit_source_conditional(plan, source.read());
      TargetFit tgt = fit_target_conditional(plan, target, src.embedding);
      return {plan, std::move(tgt.model), std::move(src.embedding), std::nullopt, std::move(src.model)};
    }
    EmbeddingMap h = make_embedding(plan.dims.d_z, plan.dims.d_h, plan.arch.embed_hidden,
                                    plan.arch.activation, mix_seed(plan.seed, kEmbedding));
    TargetFit tgt = fit_target_conditional(plan, target, h);
    return {plan, std::move(tgt.model), std::move(h), std::nullopt, std::nullopt};
  }
  UnconditionalFit fit =
      fit_unconditional(plan, transfer ? source.read().cond : SampleSet(), target);
  return {plan, std::move(fit.prior.model), std::nullopt, std::move(fit.decoder.decoder), std::nullopt};
}

SampleSet sample_model(const GenerativeModel& model, const NoiseSchedule& schedule,
                       const SampleSet& cond, Eigen::Index n, Rng& rng) {
  if (const auto* s = std::get_if<ScoreModel>(&model)) return sample_reverse(*s, schedule, cond, n, rng);
  return flow_sample(std::get<CouplingFlow>(model), cond, n, rng);
}

SampleSet generate(const FittedPipeline& fit, const SampleSet& cond_z, Eigen::Index n, Rng& rng) {
  if (n < 0) throw std::invalid_argument("generate: negative sample count");
  if (fit.plan.mode == Mode::conditional) {
    if (!fit.embedding) throw std::invalid_argument("generate: conditional pipeline without embedding");
    if (n == 0) return SampleSet(0, fit.plan.dims.d_x_t);
    if (cond_z.cols() != fit.embedding->input_dim()) {
      throw std::invalid_argument("generate: conditioning has wrong dimension");
    }
    return sample_model(fit.model, fit.plan.schedule, fit.embedding->apply(cond_z), n, rng);
  }
  if (!fit.decoder) throw std::invalid_argument("generate: unconditional pipeline without decoder");
  if (n == 0) return SampleSet(0, fit.plan.dims.d_x_t);
  return fit.decoder->apply(sample_model(fit.model, fit.plan.schedule, SampleSet(), n, rng));
}

}  // namespace genxfer
