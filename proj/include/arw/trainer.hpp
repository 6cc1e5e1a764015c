#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "arw/data.hpp"
#include "arw/eval.hpp"
#include "arw/losses.hpp"
#include "arw/model.hpp"
#include "arw/reweighting.hpp"

namespace arw {

enum class Variant {
  Baseline,
  ApsInner,
  ApsCosExp,
  Pl,
  PwScaledSimilarity,
  PwScaledLikelihood,
};

Variant variant_from_string(const std::string& name);
std::string variant_to_string(Variant v);
bool variant_uses_kmeans(Variant v);
bool variant_uses_pairs(Variant v);

struct TrainConfig {
  Variant variant = Variant::Baseline;
  std::size_t batch_speakers = 20;  // N
  std::size_t utts_per_speaker = 2; // M
  int epochs = 30;
  int warmup_epochs = 5;
  int batches_per_epoch = 0;  // 0: floor(train speakers / N), at least 1
  int adversary_steps = 1;    // ascent steps per learner step
  LrSchedule learner_lr{0.001, 0.95, 3};
  LrSchedule adversary_lr{0.001, 0.95, 3};
  std::size_t kmeans_k = 8;       // PL/PW
  std::size_t aps_dim = 64;       // APS adversary output dim H
  std::vector<std::size_t> learner_hidden = {64};
  std::size_t embedding_dim = 32;
  std::vector<std::size_t> adversary_hidden = {256, 256, 256};
  std::vector<std::size_t> aps_adversary_hidden = {64};
  double label_loss_mix = 1.0;
  double init_scale_w = 10.0;
  double init_bias_b = -5.0;
  double grad_clip_norm = 5.0;
  bool stop_gradient = true;  // lambda constant during the theta step
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json_file(const std::string& path);

enum class Phase { Warmup, Adversary, Learner };

struct HistoryRecord {
  int epoch = 0;
  long step = 0;
  Phase phase = Phase::Warmup;
  double j = 0.0;           // objective driven in this phase
  double ap_loss = 0.0;     // unweighted L_p of the batch
  double label_loss = 0.0;  // learner phases only
  double lambda_min = 0.0;
  double lambda_mean = 0.0;
  double lambda_max = 0.0;
};

struct History {
  std::vector<HistoryRecord> records;
  std::string to_jsonl() const;
};

struct TrainState {
  TrainConfig config;
  MlpParams learner;
  MlpParams head;  // label head, out dim = train speaker count
  Vector scale;    // {w, b}
  std::optional<MlpParams> adversary;
  OptimizerState learner_opt, head_opt;
  FlatOptimizerState scale_opt;
  OptimizerState adversary_opt;
  std::optional<Centroids> centroids;  // PL/PW, refit each epoch
  int epoch = 0;
  long step = 0;
  RngStream batch_rng;

  TrainState() : batch_rng(0) {}
};

TrainState init_train_state(const TrainConfig& config, const Corpus& corpus);

// One ascent step on J w.r.t. the adversary; the learner is frozen and
// embeddings are treated as constants.
HistoryRecord adversary_ascent_step(TrainState& state, const FeatureBatch& batch);

// One descent step on J + mix * label loss w.r.t. the learner, head, and
// (w, b); lambda is a constant unless stop_gradient is off, the adversary
// is frozen either way. `weighted` off gives the plain warmup step.
HistoryRecord learner_descent_step(TrainState& state, const FeatureBatch& batch,
                                   bool weighted);

std::pair<TrainedModel, History> train(const TrainConfig& config,
                                       const Corpus& corpus);
std::pair<TrainedModel, History> train_baseline(const TrainConfig& config,
                                                const Corpus& corpus);
std::pair<TrainedModel, History> train_arw(const TrainConfig& config,
                                           const Corpus& corpus);

}  // namespace arw
