// Command-line front end: corpus generation, training, evaluation,
// gradient auditing, and the baseline-vs-ARW experiment harness.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "arw/data.hpp"
#include "arw/eval.hpp"
#include "arw/experiment.hpp"
#include "arw/gradcheck.hpp"
#include "arw/trainer.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

using nlohmann::json;

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw arw::DataError("cannot open " + path + " for writing");
  os << content;
  if (!os) throw arw::DataError("write failed for " + path);
}

json manifest_base(double seconds) {
  json m;
  m["tool_version"] = kVersion;
  m["wall_clock_seconds"] = seconds;
  return m;
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  }
};

int cmd_gen_data(const std::string& preset, const std::string& config_path,
                 std::uint64_t seed, const std::string& out) {
  Timer timer;
  arw::GenConfig cfg = config_path.empty() ? arw::gen_preset(preset)
                                           : arw::gen_config_from_json_file(config_path);
  arw::RngStream rng(seed, 0x10);
  const arw::Corpus corpus = arw::generate_corpus(cfg, rng);
  arw::save_corpus(corpus, out);

  json manifest = manifest_base(timer.seconds());
  manifest["command"] = "gen-data";
  manifest["seed"] = seed;
  manifest["config"] = json::parse(arw::gen_config_to_json(cfg));
  manifest["artifacts"] = {{"corpus", out}};
  write_file(out + ".manifest.json", manifest.dump(2));
  std::cout << "wrote " << out << " (" << corpus.speaker_count() << " speakers)\n";
  return 0;
}

int cmd_train(const std::string& corpus_path, const std::string& config_path,
              arw::TrainConfig cfg, const std::string& out,
              const std::string& history_path) {
  Timer timer;
  if (!config_path.empty()) {
    const std::uint64_t seed = cfg.seed;
    const arw::Variant variant = cfg.variant;
    cfg = arw::train_config_from_json_file(config_path);
    cfg.seed = seed;
    cfg.variant = variant;
  }
  const arw::Corpus corpus = arw::load_corpus(corpus_path);
  auto [model, history] = arw::train(cfg, corpus);
  arw::save_checkpoint(out, model.learner);
  if (!history_path.empty()) write_file(history_path, history.to_jsonl());

  json manifest = manifest_base(timer.seconds());
  manifest["command"] = "train";
  manifest["config"] = json::parse(arw::train_config_to_json(cfg));
  manifest["similarity_scale"] = {{"w", model.w}, {"b", model.b}};
  manifest["artifacts"] = {{"corpus", corpus_path}, {"checkpoint", out}};
  if (!history_path.empty()) manifest["artifacts"]["history"] = history_path;
  write_file(out + ".manifest.json", manifest.dump(2));
  std::cout << "trained " << arw::variant_to_string(cfg.variant) << " for "
            << cfg.epochs << " epochs (" << history.records.size() << " steps)\n";
  return 0;
}

int cmd_eval(const std::string& corpus_path, const std::string& checkpoint_path,
             std::uint64_t seed, int per_speaker, const std::string& out_json,
             const std::string& out_csv, const std::string& scores_csv) {
  Timer timer;
  const arw::Corpus corpus = arw::load_corpus(corpus_path);
  arw::TrainedModel model;
  model.learner = arw::load_checkpoint(checkpoint_path);
  arw::RngStream rng(seed, 0x20);
  const arw::TrialSet trials = arw::build_trials(corpus, per_speaker, rng);
  const arw::Vector scores = arw::score_trials(model, corpus, trials);
  const arw::FairnessReport report = arw::fairness_report(scores, trials, corpus);

  if (!out_json.empty()) write_file(out_json, arw::fairness_report_to_json(report));
  if (!out_csv.empty()) write_file(out_csv, arw::fairness_report_to_csv(report));
  if (!scores_csv.empty())
    write_file(scores_csv, arw::score_dump_csv(scores, trials, corpus));
  std::printf("overall EER %.3f%% over %zu trials (%.1fs)\n", report.overall_eer,
              report.n_trials, timer.seconds());
  for (const arw::AxisReport& axis : report.axes)
    std::printf("  axis %s: gap %.3f pp, std %.3f\n", axis.name.c_str(), axis.gap,
                axis.stddev);
  return 0;
}

int cmd_gradcheck(const std::vector<std::string>& components, std::uint64_t seed) {
  const auto results = arw::run_gradcheck(components, seed);
  bool all_pass = true;
  for (const auto& r : results) {
    std::printf("%-12s worst rel err %.3e %s %s\n", r.component.c_str(),
                r.worst_rel_error, r.pass ? "PASS" : "FAIL",
                r.pass ? "" : r.worst_coordinate.c_str());
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 3;
}

int cmd_experiment(const std::string& preset, int n_seeds, std::uint64_t seed_base,
                   int workers, int epochs, const std::string& out_json,
                   const std::string& out_csv) {
  Timer timer;
  arw::ExperimentConfig cfg = [&] {
    if (preset == "fairness-smoke") return arw::fairness_smoke_preset();
    throw arw::DataError("unknown experiment preset '" + preset +
                         "'; valid: fairness-smoke");
  }();
  if (n_seeds > 0) {
    cfg.seeds.clear();
    for (int i = 0; i < n_seeds; ++i)
      cfg.seeds.push_back(seed_base + static_cast<std::uint64_t>(i));
  }
  cfg.workers = workers;
  if (epochs > 0) cfg.train.epochs = epochs;

  const arw::ExperimentResult result = arw::run_experiment(cfg);
  if (!out_json.empty()) write_file(out_json, arw::experiment_to_json(result));
  if (!out_csv.empty()) write_file(out_csv, arw::experiment_to_csv(result));

  std::fputs(arw::experiment_to_csv(result).c_str(), stdout);
  for (const std::string& f : result.failures)
    std::fprintf(stderr, "failed run: %s\n", f.c_str());
  json manifest = manifest_base(timer.seconds());
  manifest["command"] = "experiment";
  manifest["preset"] = preset;
  manifest["seeds"] = cfg.seeds;
  if (!out_json.empty()) {
    manifest["artifacts"] = {{"report_json", out_json}, {"report_csv", out_csv}};
    write_file(out_json + ".manifest.json", manifest.dump(2));
  }
  return result.failures.empty() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fairness-aware speaker-verification training laboratory"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic biased corpus");
  std::string gen_preset_name = "default", gen_config, gen_out;
  std::uint64_t gen_seed = 0;
  gen->add_option("--preset", gen_preset_name,
                  "default | table1-gender | table2-nationality | fairness-smoke");
  gen->add_option("--config", gen_config, "GenConfig JSON file (overrides preset)");
  gen->add_option("--seed", gen_seed, "Master seed");
  gen->add_option("--out", gen_out, "Output corpus path (.arwc)")->required();

  // train
  auto* train = app.add_subcommand("train", "Train a variant on a corpus");
  std::string train_corpus, train_config, train_out = "model.ckpt", train_history;
  std::string train_variant = "baseline";
  arw::TrainConfig tc;
  train->add_option("--corpus", train_corpus, "Corpus file")->required();
  train->add_option("--variant", train_variant,
                    "baseline | aps-inner | aps-cosexp | pl | pw-sim | pw-lik");
  train->add_option("--config", train_config, "TrainConfig JSON file");
  train->add_option("--out", train_out, "Checkpoint output path");
  train->add_option("--history", train_history, "History JSON-lines output path");
  train->add_option("--seed", tc.seed, "Master seed");
  train->add_option("--epochs", tc.epochs, "Training epochs");
  train->add_option("--warmup-epochs", tc.warmup_epochs, "Learner-only epochs");
  train->add_option("--N", tc.batch_speakers, "Speakers per batch");
  train->add_option("--M", tc.utts_per_speaker, "Utterances per speaker");
  train->add_option("--K", tc.kmeans_k, "K-means cluster count (pl/pw)");
  train->add_option("--H", tc.aps_dim, "Adversary output dim (aps)");
  train->add_option("--lr", tc.learner_lr.base_lr, "Learner base learning rate");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus");
  std::string eval_corpus, eval_ckpt, eval_json, eval_csv, eval_scores;
  std::uint64_t eval_seed = 0;
  int eval_per_speaker = 15;
  eval->add_option("--corpus", eval_corpus, "Corpus file")->required();
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  eval->add_option("--seed", eval_seed, "Trial-construction seed");
  eval->add_option("--per-speaker", eval_per_speaker,
                   "Genuine/impostor trials per eval speaker");
  eval->add_option("--out-json", eval_json, "Fairness report JSON path");
  eval->add_option("--out-csv", eval_csv, "Fairness report CSV path");
  eval->add_option("--scores", eval_scores, "Score dump CSV path");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
  std::vector<std::string> grad_components;
  std::uint64_t grad_seed = 0;
  grad->add_option("--component", grad_components,
                   "Restrict to named components (repeatable)");
  grad->add_option("--seed", grad_seed, "Base seed for random instances");

  // experiment
  auto* exp = app.add_subcommand("experiment",
                                 "Baseline-vs-ARW comparison on a biased fixture");
  std::string exp_preset = "fairness-smoke", exp_json, exp_csv;
  int exp_seeds = 0, exp_workers = 1, exp_epochs = 0;
  std::uint64_t exp_seed_base = 1;
  exp->add_option("--preset", exp_preset, "fairness-smoke");
  exp->add_option("--seeds", exp_seeds, "Number of seed replicas");
  exp->add_option("--seed-base", exp_seed_base, "First seed value");
  exp->add_option("--workers", exp_workers, "Parallel seed replicas");
  exp->add_option("--epochs", exp_epochs, "Override training epochs");
  exp->add_option("--out-json", exp_json, "Comparison table JSON path");
  exp->add_option("--out-csv", exp_csv, "Comparison table CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(gen_preset_name, gen_config, gen_seed, gen_out);
    if (*train) {
      tc.variant = arw::variant_from_string(train_variant);
      return cmd_train(train_corpus, train_config, tc, train_out, train_history);
    }
    if (*eval)
      return cmd_eval(eval_corpus, eval_ckpt, eval_seed, eval_per_speaker,
                      eval_json, eval_csv, eval_scores);
    if (*grad) return cmd_gradcheck(grad_components, grad_seed);
    if (*exp)
      return cmd_experiment(exp_preset, exp_seeds, exp_seed_base, exp_workers,
                            exp_epochs, exp_json, exp_csv);
  } catch (const arw::NumericError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  } catch (const arw::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const arw::DimensionError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
