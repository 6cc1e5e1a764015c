#include "arw/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "json.hpp"

namespace arw {

using nlohmann::json;

TrialSet build_trials(const Corpus& corpus, int per_speaker, RngStream& rng) {
  if (per_speaker < 1) throw DimensionError("build_trials: per_speaker must be >= 1");
  const auto eval_speakers = corpus.split_indices(Split::Eval);
  if (eval_speakers.empty()) throw DataError("build_trials: eval split is empty");

  TrialSet out;
  const std::size_t n_utts = corpus.utts_per_speaker;
  const std::size_t n_axes = corpus.axes.size();

  for (std::size_t s : eval_speakers) {
    if (n_utts < 2) {
      ++out.skipped_speakers;
      continue;
    }
    // genuine: distinct utterance pairs
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t a = 0; a < n_utts; ++a)
      for (std::size_t b = a + 1; b < n_utts; ++b) pairs.emplace_back(a, b);
    rng.shuffle(pairs);
    const std::size_t n_gen =
        std::min(static_cast<std::size_t>(per_speaker), pairs.size());
    for (std::size_t i = 0; i < n_gen; ++i) {
      Trial t;
      t.enroll_speaker = s;
      t.enroll_utt = pairs[i].first;
      t.test_speaker = s;
      t.test_utt = pairs[i].second;
      t.genuine = true;
      t.groups.assign(corpus.speakers[s].groups.begin(),
                      corpus.speakers[s].groups.end());
      out.trials.push_back(std::move(t));
    }

    // impostors: same category on every axis when such a speaker exists
    std::vector<std::size_t> same_group, any_other;
    for (std::size_t o : eval_speakers) {
      if (o == s) continue;
      any_other.push_back(o);
      if (corpus.speakers[o].groups == corpus.speakers[s].groups)
        same_group.push_back(o);
    }
    const std::vector<std::size_t>& pool =
        same_group.empty() ? any_other : same_group;
    if (pool.empty()) continue;  // single-speaker eval split
    for (std::size_t i = 0; i < n_gen; ++i) {
      const std::size_t o = pool[rng.below(pool.size())];
      Trial t;
      t.enroll_speaker = s;
      t.enroll_utt = rng.below(n_utts);
      t.test_speaker = o;
      t.test_utt = rng.below(n_utts);
      t.genuine = false;
      for (std::size_t a = 0; a < n_axes; ++a)
        t.groups.push_back(corpus.speakers[s].groups[a] ==
                                   corpus.speakers[o].groups[a]
                               ? corpus.speakers[s].groups[a]
                               : -1);
      out.trials.push_back(std::move(t));
    }
  }
  return out;
}

Vector score_trials(const TrainedModel& model, const Corpus& corpus,
                    const TrialSet& trials) {
  if (model.learner.input_dim() != corpus.feature_dim)
    throw DataError("score_trials: model input dim " +
                    std::to_string(model.learner.input_dim()) +
                    " does not match corpus feature dim " +
                    std::to_string(corpus.feature_dim));
  // embed every referenced utterance once
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> index;
  for (const Trial& t : trials.trials) {
    index.emplace(std::make_pair(t.enroll_speaker, t.enroll_utt), 0);
    index.emplace(std::make_pair(t.test_speaker, t.test_utt), 0);
  }
  Matrix inputs(index.size(), corpus.feature_dim);
  std::size_t row = 0;
  for (auto& [key, slot] : index) {
    const Vector feat = corpus.feature_row(key.first, key.second);
    for (std::size_t c = 0; c < corpus.feature_dim; ++c) inputs(row, c) = feat[c];
    slot = row++;
  }
  const Matrix embeddings = mlp_forward(model.learner, inputs);

  Vector scores(trials.trials.size());
  for (std::size_t i = 0; i < trials.trials.size(); ++i) {
    const Trial& t = trials.trials[i];
    const std::size_t er = index.at({t.enroll_speaker, t.enroll_utt});
    const std::size_t tr = index.at({t.test_speaker, t.test_utt});
    scores[i] = cosine_similarity(embeddings.row(er), embeddings.row(tr));
  }
  return scores;
}

EerResult compute_eer(const Vector& genuine, const Vector& impostor) {
  if (genuine.empty() || impostor.empty())
    throw DimensionError("compute_eer: need both genuine and impostor scores");
  Vector gen = genuine, imp = impostor;
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());

  Vector thresholds;
  thresholds.reserve(gen.size() + imp.size());
  thresholds.insert(thresholds.end(), gen.begin(), gen.end());
  thresholds.insert(thresholds.end(), imp.begin(), imp.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  const double n_gen = static_cast<double>(gen.size());
  const double n_imp = static_cast<double>(imp.size());
  auto frr = [&](double t) {
    return static_cast<double>(std::lower_bound(gen.begin(), gen.end(), t) -
                               gen.begin()) /
           n_gen;
  };
  auto far = [&](double t) {
    return static_cast<double>(imp.end() -
                               std::lower_bound(imp.begin(), imp.end(), t)) /
           n_imp;
  };

  // virtual operating point below all scores: accept everything
  double prev_far = 1.0, prev_frr = 0.0, prev_t = thresholds.front();
  for (double t : thresholds) {
    const double cur_far = far(t), cur_frr = frr(t);
    const double d = cur_frr - cur_far;
    if (d >= 0.0) {
      if (d == 0.0) return {cur_far, t};
      const double prev_d = prev_frr - prev_far;
      const double alpha = -prev_d / (d - prev_d);
      return {prev_far + alpha * (cur_far - prev_far),
              prev_t + alpha * (t - prev_t)};
    }
    prev_far = cur_far;
    prev_frr = cur_frr;
    prev_t = t;
  }
  // above all scores: reject everything
  const double prev_d = prev_frr - prev_far;
  const double alpha = -prev_d / (1.0 - prev_d);
  return {prev_far + alpha * (0.0 - prev_far), prev_t};
}

double eer_gap(const Vector& group_eers) {
  if (group_eers.empty()) throw DimensionError("eer_gap: empty input");
  const auto [mn, mx] = std::minmax_element(group_eers.begin(), group_eers.end());
  return *mx - *mn;
}

double eer_population_std(const Vector& group_eers) {
  if (group_eers.empty()) throw DimensionError("eer_population_std: empty input");
  double mean = 0.0;
  for (double e : group_eers) mean += e;
  mean /= static_cast<double>(group_eers.size());
  double var = 0.0;
  for (double e : group_eers) var += (e - mean) * (e - mean);
  return std::sqrt(var / static_cast<double>(group_eers.size()));
}

FairnessReport fairness_report(const Vector& scores, const TrialSet& trials,
                               const Corpus& corpus) {
  if (scores.size() != trials.trials.size())
    throw DimensionError("fairness_report: score/trial count mismatch");
  FairnessReport report;
  report.n_trials = trials.trials.size();
  report.skipped_speakers = trials.skipped_speakers;

  Vector all_gen, all_imp;
  for (std::size_t i = 0; i < scores.size(); ++i)
    (trials.trials[i].genuine ? all_gen : all_imp).push_back(scores[i]);
  const EerResult overall = compute_eer(all_gen, all_imp);
  report.overall_eer = overall.eer * 100.0;
  report.overall_threshold = overall.threshold;

  for (std::size_t a = 0; a < corpus.axes.size(); ++a) {
    AxisReport axis;
    axis.name = corpus.axes[a].name;
    Vector defined_eers;
    for (std::size_t c = 0; c < corpus.axes[a].categories.size(); ++c) {
      GroupCell cell;
      cell.axis = axis.name;
      cell.group = corpus.axes[a].categories[c];
      Vector gen, imp;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        if (trials.trials[i].groups[a] != static_cast<int>(c)) continue;
        (trials.trials[i].genuine ? gen : imp).push_back(scores[i]);
      }
      cell.n_genuine = gen.size();
      cell.n_impostor = imp.size();
      if (gen.empty() || imp.empty()) {
        ++report.undefined_cells;
      } else {
        const EerResult r = compute_eer(gen, imp);
        cell.defined = true;
        cell.eer = r.eer * 100.0;
        cell.threshold = r.threshold;
        defined_eers.push_back(cell.eer);
      }
      axis.cells.push_back(std::move(cell));
    }
    if (!defined_eers.empty()) {
      axis.gap = eer_gap(defined_eers);
      axis.stddev = eer_population_std(defined_eers);
    }
    report.axes.push_back(std::move(axis));
  }
  return report;
}

std::string fairness_report_to_json(const FairnessReport& report) {
  json j;
  j["overall"] = {{"eer_pct", report.overall_eer},
                  {"threshold", report.overall_threshold},
                  {"n_trials", report.n_trials}};
  j["undefined_cells"] = report.undefined_cells;
  j["skipped_speakers"] = report.skipped_speakers;
  j["axes"] = json::array();
  for (const AxisReport& axis : report.axes) {
    json ja;
    ja["name"] = axis.name;
    ja["gap_pp"] = axis.gap;
    ja["std"] = axis.stddev;
    ja["groups"] = json::array();
    for (const GroupCell& cell : axis.cells) {
      json jc;
      jc["group"] = cell.group;
      jc["defined"] = cell.defined;
      jc["n_genuine"] = cell.n_genuine;
      jc["n_impostor"] = cell.n_impostor;
      if (cell.defined) {
        jc["eer_pct"] = cell.eer;
        jc["threshold"] = cell.threshold;
      }
      ja["groups"].push_back(std::move(jc));
    }
    j["axes"].push_back(std::move(ja));
  }
  return j.dump(2);
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string fairness_report_to_csv(const FairnessReport& report) {
  std::ostringstream os;
  os << "axis,group,eer_pct,threshold,n_genuine,n_impostor,gap_pp,std\n";
  os << "overall,all," << fmt(report.overall_eer) << ','
     << fmt(report.overall_threshold) << ',' << report.n_trials << ",,,\n";
  for (const AxisReport& axis : report.axes)
    for (const GroupCell& cell : axis.cells) {
      os << axis.name << ',' << cell.group << ',';
      if (cell.defined)
        os << fmt(cell.eer) << ',' << fmt(cell.threshold);
      else
        os << "undefined,";
      os << ',' << cell.n_genuine << ',' << cell.n_impostor << ','
         << fmt(axis.gap) << ',' << fmt(axis.stddev) << '\n';
    }
  return os.str();
}

std::string score_dump_csv(const Vector& scores, const TrialSet& trials,
                           const Corpus& corpus) {
  std::ostringstream os;
  os << "trial,score,target";
  for (const GroupAxis& axis : corpus.axes) os << ',' << axis.name;
  os << '\n';
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const Trial& t = trials.trials[i];
    os << i << ',' << fmt(scores[i]) << ','
       << (t.genuine ? "genuine" : "impostor");
    for (std::size_t a = 0; a < corpus.axes.size(); ++a) {
      os << ',';
      if (t.groups[a] >= 0)
        os << corpus.axes[a].categories[static_cast<std::size_t>(t.groups[a])];
      else
        os << "cross";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace arw
