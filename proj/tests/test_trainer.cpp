#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "arw/trainer.hpp"

using namespace arw;

namespace {

Corpus small_corpus(std::uint64_t seed = 100, std::size_t speakers = 30) {
  GenConfig cfg;
  cfg.axes = {{"group", {"majority", "minority"}, {0.8, 0.2}, {1.0, 2.0}}};
  cfg.speakers = speakers;
  cfg.utts_per_speaker = 4;
  cfg.feature_dim = 16;
  cfg.eval_fraction = 0.2;
  RngStream rng(seed);
  return generate_corpus(cfg, rng);
}

TrainConfig small_config(Variant v) {
  TrainConfig cfg;
  cfg.variant = v;
  cfg.batch_speakers = 8;
  cfg.utts_per_speaker = 2;
  cfg.epochs = 6;
  cfg.warmup_epochs = 2;
  cfg.learner_hidden = {16};
  cfg.embedding_dim = 8;
  cfg.adversary_hidden = {32};
  cfg.aps_adversary_hidden = {16};
  cfg.kmeans_k = 4;
  cfg.aps_dim = 8;
  cfg.learner_lr = {0.01, 0.95, 3};
  cfg.adversary_lr = {0.01, 0.95, 3};
  cfg.seed = 5;
  return cfg;
}

Vector flatten(const MlpParams& p) {
  Vector out;
  for (const Layer& l : p.layers) {
    out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

}  // namespace

TEST_CASE("variant names round-trip and unknown names are rejected") {
  for (Variant v : {Variant::Baseline, Variant::ApsInner, Variant::ApsCosExp,
                    Variant::Pl, Variant::PwScaledSimilarity,
                    Variant::PwScaledLikelihood})
    CHECK(variant_from_string(variant_to_string(v)) == v);
  CHECK_THROWS_AS(variant_from_string("resnet"), DataError);
  CHECK(variant_uses_pairs(Variant::PwScaledLikelihood));
  CHECK(variant_uses_kmeans(Variant::Pl));
  CHECK(!variant_uses_kmeans(Variant::ApsInner));
}

TEST_CASE("training configs validate their invariants") {
  TrainConfig cfg = small_config(Variant::Baseline);
  CHECK_NOTHROW(cfg.validate());
  cfg.warmup_epochs = cfg.epochs + 1;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = small_config(Variant::Pl);
  cfg.kmeans_k = 0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = small_config(Variant::Baseline);
  cfg.batch_speakers = 1;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = small_config(Variant::Baseline);
  cfg.adversary_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
}

TEST_CASE("training configs round-trip through JSON") {
  TrainConfig cfg = small_config(Variant::PwScaledLikelihood);
  cfg.label_loss_mix = 0.5;
  cfg.optimizer = OptimizerKind::Sgd;
  cfg.stop_gradient = false;
  const std::string path =
      (std::filesystem::temp_directory_path() / "arw_test_traincfg.json").string();
  {
    std::ofstream os(path);
    os << train_config_to_json(cfg);
  }
  TrainConfig loaded = train_config_from_json_file(path);
  CHECK(loaded.variant == cfg.variant);
  CHECK(loaded.batch_speakers == cfg.batch_speakers);
  CHECK(loaded.epochs == cfg.epochs);
  CHECK(loaded.warmup_epochs == cfg.warmup_epochs);
  CHECK(loaded.learner_lr.base_lr == cfg.learner_lr.base_lr);
  CHECK(loaded.kmeans_k == cfg.kmeans_k);
  CHECK(loaded.label_loss_mix == cfg.label_loss_mix);
  CHECK(loaded.optimizer == cfg.optimizer);
  CHECK(loaded.stop_gradient == cfg.stop_gradient);
  std::remove(path.c_str());
}

TEST_CASE("zero training epochs return the freshly initialized model") {
  Corpus corpus = small_corpus();
  TrainConfig cfg = small_config(Variant::Baseline);
  cfg.epochs = 0;
  cfg.warmup_epochs = 0;
  auto [model, history] = train(cfg, corpus);
  CHECK(history.records.empty());
  TrainState state = init_train_state(cfg, corpus);
  CHECK(flatten(model.learner) == flatten(state.learner));
  CHECK(model.w == cfg.init_scale_w);
  CHECK(model.b == cfg.init_bias_b);
}

TEST_CASE("training twice with one seed reproduces the history bit for bit") {
  Corpus corpus = small_corpus();
  TrainConfig cfg = small_config(Variant::Pl);
  auto [m1, h1] = train(cfg, corpus);
  auto [m2, h2] = train(cfg, corpus);
  CHECK(h1.to_jsonl() == h2.to_jsonl());
  CHECK(flatten(m1.learner) == flatten(m2.learner));
  CHECK(m1.w == m2.w);
}

TEST_CASE("an all-warmup adversarial run matches the plain run bit for bit") {
  Corpus corpus = small_corpus();
  TrainConfig base = small_config(Variant::Baseline);
  base.warmup_epochs = base.epochs;
  TrainConfig arw = small_config(Variant::ApsCosExp);
  arw.warmup_epochs = arw.epochs;
  auto [mb, hb] = train(base, corpus);
  auto [ma, ha] = train(arw, corpus);
  CHECK(hb.to_jsonl() == ha.to_jsonl());
  CHECK(flatten(mb.learner) == flatten(ma.learner));
  for (const HistoryRecord& r : ha.records) CHECK(r.phase == Phase::Warmup);
}

TEST_CASE("training losses fall on an easily separable corpus") {
  Corpus corpus = small_corpus();
  TrainConfig cfg = small_config(Variant::Baseline);
  cfg.epochs = 5;
  cfg.warmup_epochs = 0;
  auto [model, history] = train(cfg, corpus);
  double first = 0.0, last = 0.0;
  int nf = 0, nl = 0;
  for (const HistoryRecord& r : history.records) {
    if (r.epoch == 0) {
      first += r.ap_loss;
      ++nf;
    }
    if (r.epoch == cfg.epochs - 1) {
      last += r.ap_loss;
      ++nl;
    }
  }
  CHECK(last / nl < first / nf);
}

TEST_CASE("training rejects a corpus smaller than one batch") {
  Corpus corpus = small_corpus(100, 8);  // few speakers, minus the eval split
  TrainConfig cfg = small_config(Variant::Baseline);
  cfg.batch_speakers = 20;
  CHECK_THROWS_AS(train(cfg, corpus), DataError);
}

TEST_CASE("cluster counts larger than the speaker pool are capped, not fatal") {
  Corpus corpus = small_corpus();
  TrainConfig cfg = small_config(Variant::Pl);
  cfg.kmeans_k = 500;
  cfg.epochs = 3;
  cfg.warmup_epochs = 1;
  auto [model, history] = train(cfg, corpus);
  CHECK(!history.records.empty());
}

TEST_CASE("adversary updates never touch the learner and vice versa") {
  Corpus corpus = small_corpus();
  TrainConfig cfg = small_config(Variant::ApsInner);
  TrainState state = init_train_state(cfg, corpus);
  FeatureBatch batch =
      sample_batch(corpus, cfg.batch_speakers, cfg.utts_per_speaker, state.batch_rng);

  const Vector learner_before = flatten(state.learner);
  const Vector head_before = flatten(state.head);
  const Vector scale_before = state.scale;
  HistoryRecord rec = adversary_ascent_step(state, batch);
  CHECK(rec.phase == Phase::Adversary);
  CHECK(flatten(state.learner) == learner_before);
  CHECK(flatten(state.head) == head_before);
  CHECK(state.scale == scale_before);

  const Vector adversary_before = flatten(*state.adversary);
  state.epoch = cfg.warmup_epochs;  // past warmup: a weighted learner phase
  HistoryRecord rec2 = learner_descent_step(state, batch, true);
  CHECK(rec2.phase == Phase::Learner);
  CHECK(flatten(*state.adversary) == adversary_before);
  CHECK(flatten(state.learner) != learner_before);
}

TEST_CASE("a zero-rate adversary update is the identity") {
  Corpus corpus = small_corpus();
  TrainConfig cfg = small_config(Variant::ApsInner);
  cfg.adversary_lr = {0.0, 0.95, 3};
  TrainState state = init_train_state(cfg, corpus);
  FeatureBatch batch =
      sample_batch(corpus, cfg.batch_speakers, cfg.utts_per_speaker, state.batch_rng);
  const Vector before = flatten(*state.adversary);
  adversary_ascent_step(state, batch);
  CHECK(flatten(*state.adversary) == before);
}

TEST_CASE("small adversary updates raise the weighted objective almost always") {
  Corpus corpus = small_corpus();
  TrainConfig cfg = small_config(Variant::ApsInner);
  cfg.optimizer = OptimizerKind::Sgd;
  cfg.adversary_lr = {1e-4, 1.0, 3};
  int improved = 0;
  for (int t = 0; t < 100; ++t) {
    cfg.seed = static_cast<std::uint64_t>(t);
    TrainState state = init_train_state(cfg, corpus);
    FeatureBatch batch = sample_batch(corpus, cfg.batch_speakers,
                                      cfg.utts_per_speaker, state.batch_rng);
    const HistoryRecord before = adversary_ascent_step(state, batch);
    const HistoryRecord after = adversary_ascent_step(state, batch);
    if (after.j >= before.j) ++improved;
  }
  CHECK(improved >= 95);
}

TEST_CASE("small learner updates lower the weighted objective almost always") {
  Corpus corpus = small_corpus();
  TrainConfig cfg = small_config(Variant::ApsInner);
  cfg.optimizer = OptimizerKind::Sgd;
  cfg.learner_lr = {1e-4, 1.0, 3};
  cfg.label_loss_mix = 0.0;  // isolate the metric objective being driven
  int improved = 0;
  for (int t = 0; t < 100; ++t) {
    cfg.seed = static_cast<std::uint64_t>(t);
    TrainState state = init_train_state(cfg, corpus);
    state.epoch = cfg.warmup_epochs;
    FeatureBatch batch = sample_batch(corpus, cfg.batch_speakers,
                                      cfg.utts_per_speaker, state.batch_rng);
    const HistoryRecord before = learner_descent_step(state, batch, true);
    const HistoryRecord after = learner_descent_step(state, batch, true);
    if (after.j <= before.j) ++improved;
  }
  CHECK(improved >= 95);
}

TEST_CASE("uniform weights at one over N reproduce the plain loss bundle exactly") {
  Corpus corpus = small_corpus();
  TrainConfig cfg = small_config(Variant::Baseline);
  TrainState state = init_train_state(cfg, corpus);
  FeatureBatch batch =
      sample_batch(corpus, cfg.batch_speakers, cfg.utts_per_speaker, state.batch_rng);
  Matrix emb = mlp_forward(state.learner, batch.features);
  EmbeddingBatch eb;
  eb.n_speakers = batch.n_speakers;
  eb.m_utts = batch.m_utts;
  eb.embeddings = emb;
  eb.speaker_ids = batch.speaker_labels;
  SimilarityMatrix sim =
      similarity_matrix(anchors_and_queries(eb), state.scale[0], state.scale[1]);
  const LossBundle plain = ap_loss(sim);
  SpeakerWeights unif{Vector(batch.n_speakers,
                             1.0 / static_cast<double>(batch.n_speakers))};
  const LossBundle weighted = weighted_ap_loss(sim, unif);
  CHECK(weighted.loss == plain.loss);
  CHECK(weighted.d_s.data() == plain.d_s.data());
}

TEST_CASE("unweighted steps are identical across variants sharing a seed") {
  Corpus corpus = small_corpus();
  TrainConfig base = small_config(Variant::Baseline);
  TrainConfig arw = small_config(Variant::Pl);
  TrainState sb = init_train_state(base, corpus);
  TrainState sa = init_train_state(arw, corpus);
  CHECK(flatten(sb.learner) == flatten(sa.learner));
  FeatureBatch bb =
      sample_batch(corpus, base.batch_speakers, base.utts_per_speaker, sb.batch_rng);
  FeatureBatch ba =
      sample_batch(corpus, arw.batch_speakers, arw.utts_per_speaker, sa.batch_rng);
  CHECK(bb.features.data() == ba.features.data());
  learner_descent_step(sb, bb, false);
  learner_descent_step(sa, ba, false);
  CHECK(flatten(sb.learner) == flatten(sa.learner));
  CHECK(sb.scale == sa.scale);
}

TEST_CASE("history keeps the normalized weight mean at two after warmup") {
  Corpus corpus = small_corpus();
  for (Variant v : {Variant::Pl, Variant::ApsInner, Variant::ApsCosExp,
                    Variant::PwScaledLikelihood}) {
    TrainConfig cfg = small_config(v);
    auto [model, history] = train(cfg, corpus);
    bool saw_adversarial = false;
    for (const HistoryRecord& r : history.records) {
      if (r.phase == Phase::Warmup) {
        CHECK(r.lambda_mean == 1.0);
      } else {
        saw_adversarial = true;
        CHECK(std::abs(r.lambda_mean - 2.0) <= 1e-9);
        CHECK(r.lambda_min <= r.lambda_mean);
        CHECK(r.lambda_max >= r.lambda_mean);
      }
    }
    CHECK(saw_adversarial);
  }
}

TEST_CASE("the ablation flag that re-opens the weight gradient changes the run") {
  Corpus corpus = small_corpus();
  TrainConfig cfg = small_config(Variant::ApsInner);
  auto [m1, h1] = train(cfg, corpus);
  cfg.stop_gradient = false;
  auto [m2, h2] = train(cfg, corpus);
  CHECK(flatten(m1.learner) != flatten(m2.learner));
}

TEST_CASE("every adversarial variant trains end to end deterministically") {
  Corpus corpus = small_corpus();
  for (Variant v : {Variant::ApsInner, Variant::ApsCosExp, Variant::Pl,
                    Variant::PwScaledSimilarity, Variant::PwScaledLikelihood}) {
    TrainConfig cfg = small_config(v);
    cfg.epochs = 4;
    cfg.warmup_epochs = 1;
    auto [m1, h1] = train(cfg, corpus);
    auto [m2, h2] = train(cfg, corpus);
    CHECK(h1.to_jsonl() == h2.to_jsonl());
    bool saw_adversary_phase = false;
    for (const HistoryRecord& r : h1.records)
      if (r.phase == Phase::Adversary) saw_adversary_phase = true;
    CHECK(saw_adversary_phase);
  }
}

TEST_CASE("guarded entry points enforce their variant class") {
  Corpus corpus = small_corpus();
  TrainConfig cfg = small_config(Variant::Baseline);
  CHECK_THROWS_AS(train_arw(cfg, corpus), DataError);
  cfg.variant = Variant::Pl;
  CHECK_THROWS_AS(train_baseline(cfg, corpus), DataError);
}
