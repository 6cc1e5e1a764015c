#include "arw/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace arw {

using nlohmann::json;

Variant variant_from_string(const std::string& name) {
  if (name == "baseline") return Variant::Baseline;
  if (name == "aps-inner") return Variant::ApsInner;
  if (name == "aps-cosexp") return Variant::ApsCosExp;
  if (name == "pl") return Variant::Pl;
  if (name == "pw-sim") return Variant::PwScaledSimilarity;
  if (name == "pw-lik") return Variant::PwScaledLikelihood;
  throw DataError("unknown variant '" + name +
                  "'; valid: baseline aps-inner aps-cosexp pl pw-sim pw-lik");
}

std::string variant_to_string(Variant v) {
  switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::ApsInner: return "aps-inner";
    case Variant::ApsCosExp: return "aps-cosexp";
    case Variant::Pl: return "pl";
    case Variant::PwScaledSimilarity: return "pw-sim";
    case Variant::PwScaledLikelihood: return "pw-lik";
  }
  return "?";
}

bool variant_uses_kmeans(Variant v) {
  return v == Variant::Pl || variant_uses_pairs(v);
}

bool variant_uses_pairs(Variant v) {
  return v == Variant::PwScaledSimilarity || v == Variant::PwScaledLikelihood;
}

void TrainConfig::validate() const {
  if (batch_speakers < 2) throw DataError("train config: N must be >= 2");
  if (utts_per_speaker < 2) throw DataError("train config: M must be >= 2");
  if (epochs < 0) throw DataError("train config: negative epochs");
  if (warmup_epochs < 0 || warmup_epochs > epochs)
    throw DataError("train config: warmup_epochs must be in [0, epochs]");
  if (adversary_steps < 1) throw DataError("train config: adversary_steps >= 1");
  if (embedding_dim == 0) throw DataError("train config: embedding_dim > 0");
  if (variant_uses_kmeans(variant) && kmeans_k == 0)
    throw DataError("train config: K must be positive for PL/PW variants");
  if ((variant == Variant::ApsInner || variant == Variant::ApsCosExp) && aps_dim == 0)
    throw DataError("train config: H must be positive for APS variants");
  if (grad_clip_norm <= 0.0) throw DataError("train config: grad_clip_norm > 0");
}

namespace {

constexpr std::uint64_t kStreamInitLearner = 1;
constexpr std::uint64_t kStreamInitAdversary = 2;
constexpr std::uint64_t kStreamInitHead = 3;
constexpr std::uint64_t kStreamBatching = 4;
constexpr std::uint64_t kStreamKmeansBase = 0x500;

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Warmup: return "warmup";
    case Phase::Adversary: return "adversary";
    case Phase::Learner: return "learner";
  }
  return "?";
}

EmbeddingBatch to_embedding_batch(const FeatureBatch& batch, Matrix embeddings) {
  EmbeddingBatch eb;
  eb.n_speakers = batch.n_speakers;
  eb.m_utts = batch.m_utts;
  eb.embeddings = std::move(embeddings);
  eb.speaker_ids = batch.speaker_labels;
  return eb;
}

std::vector<int> row_labels(const FeatureBatch& batch) {
  std::vector<int> out;
  out.reserve(batch.n_speakers * batch.m_utts);
  for (std::size_t i = 0; i < batch.n_speakers; ++i)
    for (std::size_t u = 0; u < batch.m_utts; ++u)
      out.push_back(batch.speaker_labels[i]);
  return out;
}

void lambda_stats(const Vector& values, HistoryRecord& rec) {
  rec.lambda_min = *std::min_element(values.begin(), values.end());
  rec.lambda_max = *std::max_element(values.begin(), values.end());
  double mean = 0.0;
  for (double v : values) mean += v;
  rec.lambda_mean = mean / static_cast<double>(values.size());
}

// Adversary weights for one batch plus the machinery to push dJ/dlambda
// back onto the adversary outputs.
struct BatchWeights {
  SpeakerWeights speaker;
  PairWeights pairs;  // PW variants only
  std::optional<ApsWeights> aps;
  std::optional<PlWeights> pl;

  Matrix backward_to_outputs(const Vector& d_lambda) const {
    if (aps) return aps->backward(d_lambda);
    return pl->backward(d_lambda);
  }
};

BatchWeights compute_batch_weights(const TrainState& state, const Matrix& outputs,
                                   const Matrix& anchors) {
  BatchWeights bw;
  switch (state.config.variant) {
    case Variant::ApsInner:
      bw.aps = aps_weights_inner_product(outputs);
      bw.speaker = bw.aps->weights;
      break;
    case Variant::ApsCosExp:
      bw.aps = aps_weights_cosine_exp(outputs);
      bw.speaker = bw.aps->weights;
      break;
    case Variant::Pl:
    case Variant::PwScaledSimilarity:
    case Variant::PwScaledLikelihood: {
      if (!state.centroids)
        throw NumericError("trainer: PL/PW step before the first K-means fit");
      const PseudoLabels labels = assign_pseudo_labels(anchors, *state.centroids);
      bw.pl = pl_weights(outputs, labels);
      bw.speaker = bw.pl->weights();
      if (variant_uses_pairs(state.config.variant))
        bw.pairs = pw_weights(bw.speaker);
      break;
    }
    case Variant::Baseline:
      throw NumericError("trainer: baseline has no adversarial weights");
  }
  return bw;
}

// The AP-variant objective at fixed lambda, plus dJ/dlambda.
LossBundle variant_loss(Variant variant, const SimilarityMatrix& sim,
                        const BatchWeights& bw) {
  switch (variant) {
    case Variant::ApsInner:
    case Variant::ApsCosExp:
    case Variant::Pl:
      return weighted_ap_loss(sim, bw.speaker);
    case Variant::PwScaledSimilarity:
      return pw_loss_scaled_similarity(sim, bw.pairs);
    case Variant::PwScaledLikelihood:
      return pw_loss_scaled_likelihood(sim, bw.pairs);
    case Variant::Baseline: break;
  }
  throw NumericError("variant_loss: baseline has no weighted objective");
}

Vector loss_d_lambda(Variant variant, const LossBundle& bundle) {
  if (variant_uses_pairs(variant)) return pw_weights_backward(bundle.d_pair_weights);
  return bundle.d_weights;
}

}  // namespace

TrainState init_train_state(const TrainConfig& config, const Corpus& corpus) {
  config.validate();
  const auto train = corpus.split_indices(Split::Train);
  if (train.size() < config.batch_speakers)
    throw DataError("trainer: corpus train split has " +
                    std::to_string(train.size()) + " speakers, batch needs " +
                    std::to_string(config.batch_speakers));
  if (corpus.utts_per_speaker < config.utts_per_speaker)
    throw DataError("trainer: corpus has too few utterances per speaker");

  TrainState state;
  state.config = config;
  const RngStream root(config.seed);
  const OptimizerConfig opt_cfg{config.optimizer};

  std::vector<std::size_t> sizes{corpus.feature_dim};
  sizes.insert(sizes.end(), config.learner_hidden.begin(),
               config.learner_hidden.end());
  sizes.push_back(config.embedding_dim);
  std::vector<Activation> acts(sizes.size() - 1, Activation::Relu);
  acts.back() = Activation::Identity;
  RngStream init_learner = root.substream(kStreamInitLearner);
  state.learner = init_mlp(sizes, acts, init_learner);
  state.learner_opt = make_optimizer_state(state.learner, opt_cfg);

  RngStream init_head = root.substream(kStreamInitHead);
  state.head = init_mlp({config.embedding_dim, train.size()},
                        {Activation::Identity}, init_head);
  state.head_opt = make_optimizer_state(state.head, opt_cfg);

  state.scale = {config.init_scale_w, config.init_bias_b};
  state.scale_opt = make_flat_optimizer_state(2, opt_cfg);

  if (config.variant != Variant::Baseline) {
    std::vector<std::size_t> adv_sizes{config.embedding_dim};
    const bool aps = config.variant == Variant::ApsInner ||
                     config.variant == Variant::ApsCosExp;
    const auto& hidden = aps ? config.aps_adversary_hidden : config.adversary_hidden;
    adv_sizes.insert(adv_sizes.end(), hidden.begin(), hidden.end());
    adv_sizes.push_back(aps ? config.aps_dim : config.kmeans_k);
    std::vector<Activation> adv_acts(adv_sizes.size() - 1, Activation::Sigmoid);
    RngStream init_adv = root.substream(kStreamInitAdversary);
    state.adversary = init_mlp(adv_sizes, adv_acts, init_adv);
    state.adversary_opt = make_optimizer_state(*state.adversary, opt_cfg);
  }

  state.batch_rng = root.substream(kStreamBatching);
  return state;
}

HistoryRecord adversary_ascent_step(TrainState& state, const FeatureBatch& batch) {
  if (!state.adversary)
    throw NumericError("adversary_ascent_step: no adversary for this variant");
  // embeddings are constants here: no learner trace, no learner update
  const Matrix embeddings = mlp_forward(state.learner, batch.features);
  const EmbeddingBatch eb = to_embedding_batch(batch, embeddings);
  const AnchorQuery aq = anchors_and_queries(eb);
  const SimilarityMatrix sim = similarity_matrix(aq, state.scale[0], state.scale[1]);

  ForwardTrace adv_trace;
  const Matrix adv_out = mlp_forward(*state.adversary, aq.anchors, &adv_trace);
  const BatchWeights bw = compute_batch_weights(state, adv_out, aq.anchors);
  const LossBundle bundle = variant_loss(state.config.variant, sim, bw);

  const Vector d_lambda = loss_d_lambda(state.config.variant, bundle);
  const Matrix d_outputs = bw.backward_to_outputs(d_lambda);
  MlpGrads grads = mlp_backward(*state.adversary, adv_trace, d_outputs);
  clip_grads(grads, state.config.grad_clip_norm);
  const double lr = learning_rate_at(state.config.adversary_lr, state.epoch);
  optimizer_step(state.adversary_opt, *state.adversary, grads, Direction::Maximize,
                 lr);

  HistoryRecord rec;
  rec.epoch = state.epoch;
  rec.step = state.step++;
  rec.phase = Phase::Adversary;
  rec.j = bundle.loss;
  rec.ap_loss = ap_loss(sim).loss;
  lambda_stats(bw.speaker.values, rec);
  return rec;
}

HistoryRecord learner_descent_step(TrainState& state, const FeatureBatch& batch,
                                   bool weighted) {
  ForwardTrace learner_trace;
  const Matrix embeddings =
      mlp_forward(state.learner, batch.features, &learner_trace);
  const EmbeddingBatch eb = to_embedding_batch(batch, embeddings);
  const AnchorQuery aq = anchors_and_queries(eb);
  const SimilarityMatrix sim = similarity_matrix(aq, state.scale[0], state.scale[1]);

  HistoryRecord rec;
  rec.epoch = state.epoch;
  rec.step = state.step++;
  rec.phase = state.epoch < state.config.warmup_epochs ? Phase::Warmup
                                                       : Phase::Learner;

  LossBundle bundle;
  std::optional<BatchWeights> bw;
  std::optional<ForwardTrace> adv_trace;
  if (weighted) {
    if (!state.adversary)
      throw NumericError("learner_descent_step: weighted step without adversary");
    adv_trace.emplace();
    const Matrix adv_out = mlp_forward(*state.adversary, aq.anchors, &*adv_trace);
    bw = compute_batch_weights(state, adv_out, aq.anchors);
    bundle = variant_loss(state.config.variant, sim, *bw);
    rec.ap_loss = ap_loss(sim).loss;
    lambda_stats(bw->speaker.values, rec);
  } else {
    bundle = ap_loss(sim);
    rec.ap_loss = bundle.loss;
    rec.lambda_min = rec.lambda_mean = rec.lambda_max = 1.0;
  }
  rec.j = bundle.loss;

  SimilarityGrads sg = similarity_backward(sim, bundle.d_s);

  if (weighted && !state.config.stop_gradient) {
    // ablation path: let the lambda gradient flow back into the anchors
    const Vector d_lambda = loss_d_lambda(state.config.variant, bundle);
    const Matrix d_outputs = bw->backward_to_outputs(d_lambda);
    Matrix d_anchor_extra;
    mlp_backward(*state.adversary, *adv_trace, d_outputs, &d_anchor_extra);
    for (std::size_t r = 0; r < sg.d_anchors.rows(); ++r)
      for (std::size_t c = 0; c < sg.d_anchors.cols(); ++c)
        sg.d_anchors(r, c) += d_anchor_extra(r, c);
  }

  Matrix d_embeddings = anchor_query_backward(eb, sg.d_anchors, sg.d_queries);

  const std::vector<int> labels = row_labels(batch);
  const double mix = state.config.label_loss_mix;
  LabelLossResult ll;
  if (mix != 0.0) {
    ll = label_loss(embeddings, state.head, labels);
    rec.label_loss = ll.loss;
    for (std::size_t r = 0; r < d_embeddings.rows(); ++r)
      for (std::size_t c = 0; c < d_embeddings.cols(); ++c)
        d_embeddings(r, c) += mix * ll.d_embeddings(r, c);
  }

  MlpGrads learner_grads =
      mlp_backward(state.learner, learner_trace, d_embeddings);
  clip_grads(learner_grads, state.config.grad_clip_norm);
  const double lr = learning_rate_at(state.config.learner_lr, state.epoch);
  optimizer_step(state.learner_opt, state.learner, learner_grads,
                 Direction::Minimize, lr);

  if (mix != 0.0) {
    for (auto& l : ll.d_head.layers) {
      for (double& g : l.weight.data()) g *= mix;
      for (double& g : l.bias) g *= mix;
    }
    clip_grads(ll.d_head, state.config.grad_clip_norm);
    optimizer_step(state.head_opt, state.head, ll.d_head, Direction::Minimize, lr);
  }

  flat_optimizer_step(state.scale_opt, state.scale, {sg.d_w, sg.d_b},
                      Direction::Minimize, lr);
  state.scale[0] = std::max(state.scale[0], 1e-4);  // keep the cosine scale positive
  return rec;
}

namespace {

// Mean embedding per train speaker over all its utterances, the fit set
// for the per-epoch K-means refresh.
Matrix train_speaker_anchors(const TrainState& state, const Corpus& corpus) {
  const auto train = corpus.split_indices(Split::Train);
  Matrix inputs(train.size() * corpus.utts_per_speaker, corpus.feature_dim);
  for (std::size_t i = 0; i < train.size(); ++i)
    for (std::size_t u = 0; u < corpus.utts_per_speaker; ++u) {
      const Vector row = corpus.feature_row(train[i], u);
      for (std::size_t c = 0; c < corpus.feature_dim; ++c)
        inputs(i * corpus.utts_per_speaker + u, c) = row[c];
    }
  const Matrix emb = mlp_forward(state.learner, inputs);
  Matrix anchors(train.size(), state.config.embedding_dim);
  const double inv = 1.0 / static_cast<double>(corpus.utts_per_speaker);
  for (std::size_t i = 0; i < train.size(); ++i)
    for (std::size_t u = 0; u < corpus.utts_per_speaker; ++u)
      for (std::size_t c = 0; c < anchors.cols(); ++c)
        anchors(i, c) += emb(i * corpus.utts_per_speaker + u, c) * inv;
  return anchors;
}

}  // namespace

std::pair<TrainedModel, History> train(const TrainConfig& config,
                                       const Corpus& corpus) {
  TrainState state = init_train_state(config, corpus);
  const auto train_speakers = corpus.split_indices(Split::Train).size();
  const int batches =
      config.batches_per_epoch > 0
          ? config.batches_per_epoch
          : std::max<int>(1, static_cast<int>(train_speakers /
                                              config.batch_speakers));
  History history;
  const RngStream root(config.seed);
  for (state.epoch = 0; state.epoch < config.epochs; ++state.epoch) {
    const bool warmup = state.epoch < config.warmup_epochs;
    const bool adversarial = !warmup && config.variant != Variant::Baseline;
    if (adversarial && variant_uses_kmeans(config.variant)) {
      RngStream km = root.substream(kStreamKmeansBase +
                                    static_cast<std::uint64_t>(state.epoch));
      state.centroids = kmeans_fit(train_speaker_anchors(state, corpus),
                                   std::min(config.kmeans_k, train_speakers), km);
    }
    for (int b = 0; b < batches; ++b) {
      const FeatureBatch batch = sample_batch(corpus, config.batch_speakers,
                                              config.utts_per_speaker,
                                              state.batch_rng);
      if (adversarial) {
        for (int a = 0; a < config.adversary_steps; ++a)
          history.records.push_back(adversary_ascent_step(state, batch));
        history.records.push_back(learner_descent_step(state, batch, true));
      } else {
        history.records.push_back(learner_descent_step(state, batch, false));
      }
    }
  }
  TrainedModel model{state.learner, state.scale[0], state.scale[1]};
  return {std::move(model), std::move(history)};
}

std::pair<TrainedModel, History> train_baseline(const TrainConfig& config,
                                                const Corpus& corpus) {
  if (config.variant != Variant::Baseline)
    throw DataError("train_baseline: config variant is not baseline");
  return train(config, corpus);
}

std::pair<TrainedModel, History> train_arw(const TrainConfig& config,
                                           const Corpus& corpus) {
  if (config.variant == Variant::Baseline)
    throw DataError("train_arw: config variant is baseline");
  return train(config, corpus);
}

std::string History::to_jsonl() const {
  std::ostringstream os;
  for (const HistoryRecord& r : records) {
    json j;
    j["epoch"] = r.epoch;
    j["step"] = r.step;
    j["phase"] = phase_name(r.phase);
    j["j"] = r.j;
    j["ap_loss"] = r.ap_loss;
    j["label_loss"] = r.label_loss;
    j["lambda_min"] = r.lambda_min;
    j["lambda_mean"] = r.lambda_mean;
    j["lambda_max"] = r.lambda_max;
    os << j.dump() << '\n';
  }
  return os.str();
}

std::string train_config_to_json(const TrainConfig& config) {
  json j;
  j["variant"] = variant_to_string(config.variant);
  j["batch_speakers"] = config.batch_speakers;
  j["utts_per_speaker"] = config.utts_per_speaker;
  j["epochs"] = config.epochs;
  j["warmup_epochs"] = config.warmup_epochs;
  j["batches_per_epoch"] = config.batches_per_epoch;
  j["adversary_steps"] = config.adversary_steps;
  j["learner_lr"] = {{"base_lr", config.learner_lr.base_lr},
                     {"decay_factor", config.learner_lr.decay_factor},
                     {"decay_interval_epochs", config.learner_lr.decay_interval_epochs}};
  j["adversary_lr"] = {{"base_lr", config.adversary_lr.base_lr},
                       {"decay_factor", config.adversary_lr.decay_factor},
                       {"decay_interval_epochs",
                        config.adversary_lr.decay_interval_epochs}};
  j["kmeans_k"] = config.kmeans_k;
  j["aps_dim"] = config.aps_dim;
  j["learner_hidden"] = config.learner_hidden;
  j["embedding_dim"] = config.embedding_dim;
  j["adversary_hidden"] = config.adversary_hidden;
  j["aps_adversary_hidden"] = config.aps_adversary_hidden;
  j["label_loss_mix"] = config.label_loss_mix;
  j["init_scale_w"] = config.init_scale_w;
  j["init_bias_b"] = config.init_bias_b;
  j["grad_clip_norm"] = config.grad_clip_norm;
  j["stop_gradient"] = config.stop_gradient;
  j["optimizer"] = config.optimizer == OptimizerKind::Adam ? "adam" : "sgd";
  j["seed"] = config.seed;
  return j.dump(2);
}

TrainConfig train_config_from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("train config: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataError("train config: bad JSON: " + std::string(e.what()));
  }
  TrainConfig cfg;
  try {
    cfg.variant = variant_from_string(j.value("variant", std::string("baseline")));
    cfg.batch_speakers = j.value("batch_speakers", cfg.batch_speakers);
    cfg.utts_per_speaker = j.value("utts_per_speaker", cfg.utts_per_speaker);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.warmup_epochs = j.value("warmup_epochs", cfg.warmup_epochs);
    cfg.batches_per_epoch = j.value("batches_per_epoch", cfg.batches_per_epoch);
    cfg.adversary_steps = j.value("adversary_steps", cfg.adversary_steps);
    if (j.contains("learner_lr")) {
      const auto& l = j["learner_lr"];
      cfg.learner_lr = {l.value("base_lr", 0.001), l.value("decay_factor", 0.95),
                        l.value("decay_interval_epochs", 3)};
    }
    if (j.contains("adversary_lr")) {
      const auto& l = j["adversary_lr"];
      cfg.adversary_lr = {l.value("base_lr", 0.001), l.value("decay_factor", 0.95),
                          l.value("decay_interval_epochs", 3)};
    }
    cfg.kmeans_k = j.value("kmeans_k", cfg.kmeans_k);
    cfg.aps_dim = j.value("aps_dim", cfg.aps_dim);
    cfg.learner_hidden = j.value("learner_hidden", cfg.learner_hidden);
    cfg.embedding_dim = j.value("embedding_dim", cfg.embedding_dim);
    cfg.adversary_hidden = j.value("adversary_hidden", cfg.adversary_hidden);
    cfg.aps_adversary_hidden =
        j.value("aps_adversary_hidden", cfg.aps_adversary_hidden);
    cfg.label_loss_mix = j.value("label_loss_mix", cfg.label_loss_mix);
    cfg.init_scale_w = j.value("init_scale_w", cfg.init_scale_w);
    cfg.init_bias_b = j.value("init_bias_b", cfg.init_bias_b);
    cfg.grad_clip_norm = j.value("grad_clip_norm", cfg.grad_clip_norm);
    cfg.stop_gradient = j.value("stop_gradient", cfg.stop_gradient);
    const std::string opt = j.value("optimizer", std::string("adam"));
    if (opt == "adam")
      cfg.optimizer = OptimizerKind::Adam;
    else if (opt == "sgd")
      cfg.optimizer = OptimizerKind::Sgd;
    else
      throw DataError("train config: unknown optimizer '" + opt + "'");
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const json::exception& e) {
    throw DataError("train config: field error: " + std::string(e.what()));
  }
  cfg.validate();
  return cfg;
}

}  // namespace arw
