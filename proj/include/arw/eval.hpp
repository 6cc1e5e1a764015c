#pragma once

#include <string>
#include <vector>

#include "arw/data.hpp"
#include "arw/model.hpp"
#include "arw/numerics.hpp"

namespace arw {

struct Trial {
  std::size_t enroll_speaker = 0;  // index into corpus.speakers
  std::size_t enroll_utt = 0;
  std::size_t test_speaker = 0;
  std::size_t test_utt = 0;
  bool genuine = false;
  // category per axis when both sides share it, -1 otherwise
  std::vector<int> groups;
};

struct TrialSet {
  std::vector<Trial> trials;
  int skipped_speakers = 0;  // eval speakers with too few utterances
};

// Per eval speaker: `per_speaker` genuine pairs (distinct utterances) and
// `per_speaker` impostor pairs, with impostors drawn from the same
// category on every axis when such a speaker exists.
TrialSet build_trials(const Corpus& corpus, int per_speaker, RngStream& rng);

struct TrainedModel {
  MlpParams learner;
  double w = 10.0;
  double b = -5.0;
};

// score_i = cos(embed(enroll_i), embed(test_i))
Vector score_trials(const TrainedModel& model, const Corpus& corpus,
                    const TrialSet& trials);

struct EerResult {
  double eer = 0.0;  // in [0, 1]
  double threshold = 0.0;
};

// EER at the crossing of false-accept (impostor >= t) and false-reject
// (genuine < t) rates, linearly interpolated between adjacent operating
// points when the crossing falls between thresholds.
EerResult compute_eer(const Vector& genuine, const Vector& impostor);

struct GroupCell {
  std::string axis;
  std::string group;
  bool defined = false;
  double eer = 0.0;
  double threshold = 0.0;
  std::size_t n_genuine = 0;
  std::size_t n_impostor = 0;
};

struct AxisReport {
  std::string name;
  std::vector<GroupCell> cells;
  double gap = 0.0;     // max - min over defined cells, percentage points
  double stddev = 0.0;  // population std over defined cells
};

struct FairnessReport {
  double overall_eer = 0.0;  // percent
  double overall_threshold = 0.0;
  std::size_t n_trials = 0;
  std::vector<AxisReport> axes;
  int undefined_cells = 0;
  int skipped_speakers = 0;
};

// max - min over the defined group EERs of one axis, percentage points.
double eer_gap(const Vector& group_eers);
// population (divide-by-n) standard deviation of the group EERs.
double eer_population_std(const Vector& group_eers);

FairnessReport fairness_report(const Vector& scores, const TrialSet& trials,
                               const Corpus& corpus);

std::string fairness_report_to_json(const FairnessReport& report);
std::string fairness_report_to_csv(const FairnessReport& report);
// trial id, score, target, group tags: for external auditing
std::string score_dump_csv(const Vector& scores, const TrialSet& trials,
                           const Corpus& corpus);

}  // namespace arw
