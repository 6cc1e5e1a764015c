#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arw/data.hpp"
#include "arw/eval.hpp"
#include "arw/trainer.hpp"

namespace arw {

// Baseline-vs-ARW comparison on a synthetic biased fixture: for every
// seed, generate the corpus, train each variant, and evaluate on a
// shared trial set.
struct ExperimentConfig {
  GenConfig gen;
  TrainConfig train;  // variant field is overridden per run
  std::vector<Variant> variants{Variant::Baseline, Variant::PwScaledLikelihood};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int trials_per_speaker = 15;
  int workers = 1;
};

struct VariantSummary {
  Variant variant;
  std::vector<FairnessReport> per_seed;  // ordered by seed position
  double median_overall_eer = 0.0;
  // per axis (same order as the corpus axes)
  std::vector<double> median_gap;
  std::vector<double> median_std;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<VariantSummary> variants;
  std::vector<std::string> failures;  // per-run failure markers
};

double median(std::vector<double> values);

ExperimentResult run_experiment(const ExperimentConfig& config);

std::string experiment_to_json(const ExperimentResult& result);
std::string experiment_to_csv(const ExperimentResult& result);

// The default biased fixture: two groups 85/15 with elevated minority
// within-speaker noise, ~100 speakers of 10 utterances, F=64, E=32,
// N=20, M=2.
ExperimentConfig fairness_smoke_preset();

// Corpus generation presets for the CLI.
GenConfig gen_preset(const std::string& name);

}  // namespace arw
