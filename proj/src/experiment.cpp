#include "arw/experiment.hpp"

#include <algorithm>
#include <future>
#include <sstream>

#include "json.hpp"

namespace arw {

using nlohmann::json;

namespace {

constexpr std::uint64_t kDataStream = 0x10;
constexpr std::uint64_t kTrialStream = 0x20;

struct SeedOutcome {
  std::vector<FairnessReport> reports;  // one per variant
  std::vector<std::string> failures;
};

SeedOutcome run_seed(const ExperimentConfig& config, std::uint64_t seed) {
  SeedOutcome outcome;
  RngStream data_rng(seed, kDataStream);
  const Corpus corpus = generate_corpus(config.gen, data_rng);
  RngStream trial_rng(seed, kTrialStream);
  const TrialSet trials =
      build_trials(corpus, config.trials_per_speaker, trial_rng);
  for (Variant variant : config.variants) {
    try {
      TrainConfig tc = config.train;
      tc.variant = variant;
      tc.seed = seed;
      auto [model, history] = train(tc, corpus);
      const Vector scores = score_trials(model, corpus, trials);
      outcome.reports.push_back(fairness_report(scores, trials, corpus));
    } catch (const std::exception& e) {
      outcome.reports.push_back({});
      outcome.failures.push_back("seed " + std::to_string(seed) + " variant " +
                                 variant_to_string(variant) + ": " + e.what());
    }
  }
  return outcome;
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) throw DimensionError("median: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2]
                    : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  ExperimentResult result;
  result.config = config;

  std::vector<SeedOutcome> outcomes(config.seeds.size());
  if (config.workers > 1) {
    std::vector<std::future<SeedOutcome>> futures;
    for (std::uint64_t seed : config.seeds)
      futures.push_back(std::async(std::launch::async, run_seed, std::cref(config),
                                   seed));
    for (std::size_t i = 0; i < futures.size(); ++i) outcomes[i] = futures[i].get();
  } else {
    for (std::size_t i = 0; i < config.seeds.size(); ++i)
      outcomes[i] = run_seed(config, config.seeds[i]);
  }

  const std::size_t n_axes = config.gen.axes.size();
  for (std::size_t v = 0; v < config.variants.size(); ++v) {
    VariantSummary summary;
    summary.variant = config.variants[v];
    std::vector<double> overall;
    std::vector<std::vector<double>> gaps(n_axes), stds(n_axes);
    for (const SeedOutcome& outcome : outcomes) {
      const FairnessReport& report = outcome.reports[v];
      summary.per_seed.push_back(report);
      if (report.axes.empty()) continue;  // failed run
      overall.push_back(report.overall_eer);
      for (std::size_t a = 0; a < n_axes; ++a) {
        gaps[a].push_back(report.axes[a].gap);
        stds[a].push_back(report.axes[a].stddev);
      }
    }
    if (!overall.empty()) {
      summary.median_overall_eer = median(overall);
      for (std::size_t a = 0; a < n_axes; ++a) {
        summary.median_gap.push_back(median(gaps[a]));
        summary.median_std.push_back(median(stds[a]));
      }
    }
    result.variants.push_back(std::move(summary));
  }
  for (const SeedOutcome& outcome : outcomes)
    result.failures.insert(result.failures.end(), outcome.failures.begin(),
                           outcome.failures.end());
  return result;
}

std::string experiment_to_json(const ExperimentResult& result) {
  json j;
  j["seeds"] = result.config.seeds;
  j["failures"] = result.failures;
  j["variants"] = json::array();
  for (const VariantSummary& summary : result.variants) {
    json jv;
    jv["variant"] = variant_to_string(summary.variant);
    jv["median_overall_eer"] = summary.median_overall_eer;
    jv["axes"] = json::array();
    for (std::size_t a = 0; a < summary.median_gap.size(); ++a)
      jv["axes"].push_back({{"name", result.config.gen.axes[a].name},
                            {"median_gap_pp", summary.median_gap[a]},
                            {"median_std", summary.median_std[a]}});
    jv["per_seed"] = json::array();
    for (std::size_t i = 0; i < summary.per_seed.size(); ++i) {
      const FairnessReport& report = summary.per_seed[i];
      json js;
      js["seed"] = result.config.seeds[i];
      if (report.axes.empty()) {
        js["failed"] = true;
      } else {
        js["overall_eer"] = report.overall_eer;
        js["axes"] = json::array();
        for (const AxisReport& axis : report.axes) {
          json ja{{"name", axis.name}, {"gap_pp", axis.gap}, {"std", axis.stddev}};
          ja["groups"] = json::array();
          for (const GroupCell& cell : axis.cells)
            if (cell.defined)
              ja["groups"].push_back({{"group", cell.group}, {"eer_pct", cell.eer}});
          js["axes"].push_back(std::move(ja));
        }
      }
      jv["per_seed"].push_back(std::move(js));
    }
    j["variants"].push_back(std::move(jv));
  }
  return j.dump(2);
}

std::string experiment_to_csv(const ExperimentResult& result) {
  std::ostringstream os;
  os << "variant,median_overall_eer";
  for (const AxisGenConfig& axis : result.config.gen.axes)
    os << ',' << axis.name << "_gap," << axis.name << "_std";
  os << '\n';
  char buf[64];
  for (const VariantSummary& summary : result.variants) {
    os << variant_to_string(summary.variant);
    std::snprintf(buf, sizeof(buf), ",%.6f", summary.median_overall_eer);
    os << buf;
    for (std::size_t a = 0; a < summary.median_gap.size(); ++a) {
      std::snprintf(buf, sizeof(buf), ",%.6f,%.6f", summary.median_gap[a],
                    summary.median_std[a]);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

ExperimentConfig fairness_smoke_preset() {
  ExperimentConfig config;
  config.gen.axes = {{"group",
                      {"majority", "minority"},
                      {0.85, 0.15},
                      {1.0, 2.5}}};
  config.gen.speakers = 100;
  config.gen.utts_per_speaker = 10;
  config.gen.feature_dim = 64;
  config.gen.group_separation = 3.0;
  config.gen.speaker_spread = 1.0;
  config.gen.base_noise = 0.35;
  config.gen.eval_fraction = 0.3;

  config.train.batch_speakers = 20;
  config.train.utts_per_speaker = 2;
  config.train.epochs = 40;
  config.train.warmup_epochs = 10;
  config.train.adversary_steps = 3;
  config.train.learner_hidden = {64};
  config.train.embedding_dim = 32;
  config.train.kmeans_k = 8;
  config.train.aps_dim = 64;
  config.train.learner_lr = {0.01, 0.95, 3};
  config.train.adversary_lr = {0.1, 0.95, 3};

  config.variants = {Variant::Baseline, Variant::ApsInner, Variant::ApsCosExp,
                     Variant::Pl, Variant::PwScaledLikelihood};
  config.seeds = {1, 2, 3, 4, 5};
  config.trials_per_speaker = 15;
  return config;
}

GenConfig gen_preset(const std::string& name) {
  GenConfig cfg;
  if (name == "table1-gender") {
    cfg.axes = {{"gender-like", {"female", "male"}, {0.45, 0.55}, {1.3, 1.0}}};
    return cfg;
  }
  if (name == "table2-nationality") {
    cfg.axes = {{"nationality-like",
                 {"US", "UK", "Others"},
                 {0.64, 0.17, 0.19},
                 {1.0, 1.3, 1.6}}};
    return cfg;
  }
  if (name == "fairness-smoke") return fairness_smoke_preset().gen;
  if (name == "default") {
    cfg.axes = {{"gender-like", {"female", "male"}, {0.45, 0.55}, {1.3, 1.0}},
                {"nationality-like",
                 {"US", "UK", "Others"},
                 {0.64, 0.17, 0.19},
                 {1.0, 1.2, 1.4}}};
    return cfg;
  }
  throw DataError("unknown preset '" + name +
                  "'; valid: default table1-gender table2-nationality "
                  "fairness-smoke");
}

}  // namespace arw
