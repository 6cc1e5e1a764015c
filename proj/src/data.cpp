#include "arw/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace arw {

using nlohmann::json;

std::vector<std::size_t> Corpus::split_indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < speakers.size(); ++i)
    if (speakers[i].split == split) out.push_back(i);
  return out;
}

Vector Corpus::feature_row(std::size_t speaker_idx, std::size_t utt) const {
  if (speaker_idx >= speakers.size())
    throw DimensionError("Corpus: speaker index out of range");
  if (utt >= utts_per_speaker)
    throw DimensionError("Corpus: utterance index out of range");
  const std::size_t base = (speaker_idx * utts_per_speaker + utt) * feature_dim;
  Vector row(feature_dim);
  for (std::size_t c = 0; c < feature_dim; ++c)
    row[c] = static_cast<double>(features[base + c]);
  return row;
}

void Corpus::validate() const {
  if (feature_dim == 0) throw DataError("corpus: zero feature dimension");
  if (utts_per_speaker == 0) throw DataError("corpus: zero utterances per speaker");
  if (features.size() != speakers.size() * utts_per_speaker * feature_dim)
    throw DataError("corpus: feature payload size mismatch");
  std::vector<int> ids;
  for (const Speaker& s : speakers) {
    ids.push_back(s.id);
    if (s.groups.size() != axes.size())
      throw DataError("corpus: speaker " + std::to_string(s.id) +
                      " has wrong group-tag count");
    for (std::size_t a = 0; a < axes.size(); ++a)
      if (s.groups[a] < 0 ||
          static_cast<std::size_t>(s.groups[a]) >= axes[a].categories.size())
        throw DataError("corpus: speaker " + std::to_string(s.id) +
                        " category out of range on axis " + axes[a].name);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw DataError("corpus: duplicate speaker id");
  for (float v : features)
    if (!std::isfinite(v)) throw DataError("corpus: non-finite feature value");
}

void GenConfig::validate() const {
  if (speakers < 2) throw DataError("gen config: need at least 2 speakers");
  if (utts_per_speaker < 2) throw DataError("gen config: need at least 2 utterances");
  if (feature_dim == 0) throw DataError("gen config: feature_dim must be positive");
  if (eval_fraction < 0.0 || eval_fraction >= 1.0)
    throw DataError("gen config: eval_fraction must be in [0, 1)");
  if (base_noise <= 0.0 || speaker_spread <= 0.0)
    throw DataError("gen config: noise scales must be positive");
  if (axes.empty()) throw DataError("gen config: need at least one group axis");
  for (const AxisGenConfig& axis : axes) {
    if (axis.categories.empty())
      throw DataError("gen config: axis " + axis.name + " has no categories");
    if (axis.proportions.size() != axis.categories.size() ||
        axis.noise_scales.size() != axis.categories.size())
      throw DataError("gen config: axis " + axis.name +
                      " proportion/noise counts mismatch");
    double sum = 0.0;
    for (double p : axis.proportions) {
      if (p < 0.0) throw DataError("gen config: negative proportion");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw DataError("gen config: axis " + axis.name +
                      " proportions sum to " + std::to_string(sum) + ", not 1");
    for (double s : axis.noise_scales)
      if (s <= 0.0) throw DataError("gen config: nonpositive noise scale");
  }
}

namespace {

// Largest-remainder apportionment of `total` into counts per proportion.
std::vector<std::size_t> apportion(const std::vector<double>& proportions,
                                   std::size_t total) {
  const std::size_t n = proportions.size();
  std::vector<std::size_t> counts(n);
  std::vector<std::pair<double, std::size_t>> remainders(n);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double exact = proportions[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    remainders[i] = {exact - static_cast<double>(counts[i]), i};
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned)
    ++counts[remainders[i % n].second];
  return counts;
}

Vector random_unit_direction(std::size_t dim, RngStream& rng) {
  Vector v(dim);
  double nr = 0.0;
  while (nr == 0.0) {
    for (double& x : v) x = rng.normal();
    nr = norm(v);
  }
  for (double& x : v) x /= nr;
  return v;
}

}  // namespace

Corpus generate_corpus(const GenConfig& config, RngStream& rng) {
  config.validate();
  const std::size_t s_count = config.speakers, f = config.feature_dim;

  // per-axis category assignment, exact counts then a shuffle
  std::vector<std::vector<int>> axis_labels(config.axes.size());
  for (std::size_t a = 0; a < config.axes.size(); ++a) {
    const auto counts = apportion(config.axes[a].proportions, s_count);
    std::vector<int>& labels = axis_labels[a];
    for (std::size_t c = 0; c < counts.size(); ++c)
      labels.insert(labels.end(), counts[c], static_cast<int>(c));
    rng.shuffle(labels);
  }

  // one direction per category per axis
  std::vector<std::vector<Vector>> directions(config.axes.size());
  for (std::size_t a = 0; a < config.axes.size(); ++a)
    for (std::size_t c = 0; c < config.axes[a].categories.size(); ++c) {
      Vector d = random_unit_direction(f, rng);
      for (double& x : d) x *= config.group_separation;
      directions[a].push_back(std::move(d));
    }

  Corpus corpus;
  for (const AxisGenConfig& axis : config.axes)
    corpus.axes.push_back({axis.name, axis.categories});
  corpus.feature_dim = f;
  corpus.utts_per_speaker = config.utts_per_speaker;
  corpus.speakers.resize(s_count);
  corpus.features.resize(s_count * config.utts_per_speaker * f);

  for (std::size_t s = 0; s < s_count; ++s) {
    Speaker& spk = corpus.speakers[s];
    spk.id = static_cast<int>(s);
    double noise = config.base_noise;
    Vector mean(f, 0.0);
    for (std::size_t a = 0; a < config.axes.size(); ++a) {
      const int cat = axis_labels[a][s];
      spk.groups.push_back(cat);
      noise *= config.axes[a].noise_scales[static_cast<std::size_t>(cat)];
      for (std::size_t c = 0; c < f; ++c)
        mean[c] += directions[a][static_cast<std::size_t>(cat)][c];
    }
    for (std::size_t c = 0; c < f; ++c)
      mean[c] += config.speaker_spread * rng.normal();
    for (std::size_t u = 0; u < config.utts_per_speaker; ++u) {
      const std::size_t base = (s * config.utts_per_speaker + u) * f;
      for (std::size_t c = 0; c < f; ++c)
        corpus.features[base + c] =
            static_cast<float>(mean[c] + noise * rng.normal());
    }
  }

  // stratified eval split over group combinations
  if (config.eval_fraction > 0.0) {
    std::map<std::vector<int>, std::vector<std::size_t>> cells;
    for (std::size_t s = 0; s < s_count; ++s)
      cells[corpus.speakers[s].groups].push_back(s);
    for (auto& [groups, members] : cells) {
      rng.shuffle(members);
      const auto n_eval = static_cast<std::size_t>(std::lround(
          config.eval_fraction * static_cast<double>(members.size())));
      for (std::size_t i = 0; i < n_eval; ++i)
        corpus.speakers[members[i]].split = Split::Eval;
    }
  }
  corpus.validate();
  return corpus;
}

FeatureBatch sample_batch(const Corpus& corpus, std::size_t n, std::size_t m,
                          RngStream& rng) {
  const auto train = corpus.split_indices(Split::Train);
  if (train.size() < n)
    throw DataError("sample_batch: need " + std::to_string(n) +
                    " train speakers, corpus has " + std::to_string(train.size()));
  if (corpus.utts_per_speaker < m)
    throw DataError("sample_batch: need " + std::to_string(m) +
                    " utterances per speaker, corpus has " +
                    std::to_string(corpus.utts_per_speaker));
  FeatureBatch batch;
  batch.n_speakers = n;
  batch.m_utts = m;
  batch.features = Matrix(n * m, corpus.feature_dim);
  const auto picks = rng.sample_without_replacement(train.size(), n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t spk = train[picks[i]];
    batch.speaker_indices.push_back(spk);
    batch.speaker_labels.push_back(static_cast<int>(picks[i]));
    const auto utts = rng.sample_without_replacement(corpus.utts_per_speaker, m);
    for (std::size_t u = 0; u < m; ++u) {
      const Vector row = corpus.feature_row(spk, utts[u]);
      for (std::size_t c = 0; c < corpus.feature_dim; ++c)
        batch.features(i * m + u, c) = row[c];
    }
  }
  return batch;
}

namespace {

constexpr char kMagic[4] = {'A', 'R', 'W', 'C'};
constexpr std::uint16_t kVersion = 1;

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& path) {
  corpus.validate();
  json meta;
  meta["feature_dim"] = corpus.feature_dim;
  meta["utts_per_speaker"] = corpus.utts_per_speaker;
  meta["axes"] = json::array();
  for (const GroupAxis& axis : corpus.axes)
    meta["axes"].push_back({{"name", axis.name}, {"categories", axis.categories}});
  meta["speakers"] = json::array();
  for (const Speaker& s : corpus.speakers)
    meta["speakers"].push_back(
        {{"id", s.id},
         {"split", s.split == Split::Train ? "train" : "eval"},
         {"groups", s.groups}});
  const std::string meta_str = meta.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("save_corpus: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  os.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  const auto meta_len = static_cast<std::uint32_t>(meta_str.size());
  os.write(reinterpret_cast<const char*>(&meta_len), sizeof(meta_len));
  os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  os.write(reinterpret_cast<const char*>(corpus.features.data()),
           static_cast<std::streamsize>(corpus.features.size() * sizeof(float)));
  if (!os) throw DataError("save_corpus: write failed for " + path);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("load_corpus: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("load_corpus: bad magic in " + path);
  std::uint16_t version = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!is || version != kVersion)
    throw DataError("load_corpus: unsupported version " + std::to_string(version));
  std::uint32_t meta_len = 0;
  is.read(reinterpret_cast<char*>(&meta_len), sizeof(meta_len));
  if (!is) throw DataError("load_corpus: truncated header in " + path);
  std::string meta_str(meta_len, '\0');
  is.read(meta_str.data(), meta_len);
  if (!is) throw DataError("load_corpus: truncated metadata in " + path);

  json meta;
  try {
    meta = json::parse(meta_str);
  } catch (const json::exception& e) {
    throw DataError("load_corpus: bad metadata JSON: " + std::string(e.what()));
  }

  Corpus corpus;
  try {
    corpus.feature_dim = meta.at("feature_dim").get<std::size_t>();
    corpus.utts_per_speaker = meta.at("utts_per_speaker").get<std::size_t>();
    for (const auto& axis : meta.at("axes"))
      corpus.axes.push_back({axis.at("name").get<std::string>(),
                             axis.at("categories").get<std::vector<std::string>>()});
    for (const auto& spk : meta.at("speakers")) {
      Speaker s;
      s.id = spk.at("id").get<int>();
      const std::string split = spk.at("split").get<std::string>();
      if (split == "train")
        s.split = Split::Train;
      else if (split == "eval")
        s.split = Split::Eval;
      else
        throw DataError("load_corpus: unknown split tag '" + split + "'");
      s.groups = spk.at("groups").get<std::vector<int>>();
      corpus.speakers.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw DataError("load_corpus: metadata field error: " + std::string(e.what()));
  }

  const std::size_t payload =
      corpus.speakers.size() * corpus.utts_per_speaker * corpus.feature_dim;
  corpus.features.resize(payload);
  is.read(reinterpret_cast<char*>(corpus.features.data()),
          static_cast<std::streamsize>(payload * sizeof(float)));
  if (static_cast<std::size_t>(is.gcount()) != payload * sizeof(float))
    throw DataError("load_corpus: truncated feature payload in " + path);
  corpus.validate();
  return corpus;
}

GenConfig gen_config_from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("gen config: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataError("gen config: bad JSON: " + std::string(e.what()));
  }
  GenConfig cfg;
  try {
    cfg.speakers = j.value("speakers", cfg.speakers);
    cfg.utts_per_speaker = j.value("utts_per_speaker", cfg.utts_per_speaker);
    cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);
    cfg.group_separation = j.value("group_separation", cfg.group_separation);
    cfg.speaker_spread = j.value("speaker_spread", cfg.speaker_spread);
    cfg.base_noise = j.value("base_noise", cfg.base_noise);
    cfg.eval_fraction = j.value("eval_fraction", cfg.eval_fraction);
    cfg.axes.clear();
    for (const auto& a : j.at("axes")) {
      AxisGenConfig axis;
      axis.name = a.at("name").get<std::string>();
      axis.categories = a.at("categories").get<std::vector<std::string>>();
      axis.proportions = a.at("proportions").get<std::vector<double>>();
      axis.noise_scales = a.value(
          "noise_scales", std::vector<double>(axis.categories.size(), 1.0));
      cfg.axes.push_back(std::move(axis));
    }
  } catch (const json::exception& e) {
    throw DataError("gen config: field error: " + std::string(e.what()));
  }
  cfg.validate();
  return cfg;
}

std::string gen_config_to_json(const GenConfig& config) {
  json j;
  j["speakers"] = config.speakers;
  j["utts_per_speaker"] = config.utts_per_speaker;
  j["feature_dim"] = config.feature_dim;
  j["group_separation"] = config.group_separation;
  j["speaker_spread"] = config.speaker_spread;
  j["base_noise"] = config.base_noise;
  j["eval_fraction"] = config.eval_fraction;
  j["axes"] = json::array();
  for (const AxisGenConfig& a : config.axes)
    j["axes"].push_back({{"name", a.name},
                         {"categories", a.categories},
                         {"proportions", a.proportions},
                         {"noise_scales", a.noise_scales}});
  return j.dump(2);
}

}  // namespace arw
