#include "arw/reweighting.hpp"

#include <cmath>
#include <limits>

namespace arw {

InstanceWeights normalized_instance_weights(const Vector& raw) {
  if (raw.empty()) throw DimensionError("normalized_instance_weights: empty input");
  double sum = 0.0;
  for (double r : raw) sum += r;
  const double mean = sum / static_cast<double>(raw.size());
  if (mean == 0.0)
    throw NumericError("normalized_instance_weights: zero mean raw weight");
  InstanceWeights out;
  out.raw = raw;
  out.weights.values = Vector(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    out.weights.values[i] = 1.0 + raw[i] / mean;
  return out;
}

Vector InstanceWeights::backward(const Vector& d_lambda) const {
  const std::size_t n = raw.size();
  if (d_lambda.size() != n)
    throw DimensionError("InstanceWeights::backward: gradient size mismatch");
  double sum = 0.0, weighted = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += raw[i];
    weighted += d_lambda[i] * raw[i];
  }
  const double nd = static_cast<double>(n);
  Vector d_raw(n);
  for (std::size_t j = 0; j < n; ++j)
    d_raw[j] = nd * d_lambda[j] / sum - nd * weighted / (sum * sum);
  return d_raw;
}

namespace {

// lambda_j = 1 + N s_j / sum(s); returns d(loss)/d(s) from d(loss)/d(lambda).
Vector normalize_aggregates_backward(const Vector& s, const Vector& d_lambda) {
  const double nd = static_cast<double>(s.size());
  double total = 0.0, weighted = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    total += s[i];
    weighted += d_lambda[i] * s[i];
  }
  Vector d_s(s.size());
  for (std::size_t j = 0; j < s.size(); ++j)
    d_s[j] = nd * d_lambda[j] / total - nd * weighted / (total * total);
  return d_s;
}

SpeakerWeights normalize_aggregates(const Vector& s) {
  double total = 0.0;
  for (double v : s) total += v;
  if (total == 0.0)
    throw NumericError("aps_weights: degenerate adversary output (zero aggregate)");
  SpeakerWeights w;
  w.values = Vector(s.size());
  const double nd = static_cast<double>(s.size());
  for (std::size_t j = 0; j < s.size(); ++j)
    w.values[j] = 1.0 + nd * s[j] / total;
  return w;
}

}  // namespace

ApsWeights aps_weights_inner_product(const Matrix& proj) {
  const std::size_t n = proj.rows();
  if (n < 2) throw DimensionError("aps_weights_inner_product: need N >= 2");
  Vector tvec(proj.cols(), 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < proj.cols(); ++c) tvec[c] += proj(j, c);
  ApsWeights out;
  out.proj = proj;
  out.cosine_exp = false;
  out.aggregates = Vector(n);
  for (std::size_t j = 0; j < n; ++j) out.aggregates[j] = dot(proj.row(j), tvec);
  out.weights = normalize_aggregates(out.aggregates);
  return out;
}

ApsWeights aps_weights_cosine_exp(const Matrix& proj) {
  const std::size_t n = proj.rows();
  if (n < 2) throw DimensionError("aps_weights_cosine_exp: need N >= 2");
  for (std::size_t j = 0; j < n; ++j)
    if (norm(proj.row(j)) == 0.0)
      throw NumericError("aps_weights_cosine_exp: zero-norm projection row " +
                         std::to_string(j));
  ApsWeights out;
  out.proj = proj;
  out.cosine_exp = true;
  out.aggregates = Vector(n, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < n; ++k)
      out.aggregates[j] += std::exp(cosine_similarity(proj.row(j), proj.row(k)));
  out.weights = normalize_aggregates(out.aggregates);
  return out;
}

Matrix ApsWeights::backward(const Vector& d_lambda) const {
  const std::size_t n = proj.rows(), h = proj.cols();
  if (d_lambda.size() != n)
    throw DimensionError("ApsWeights::backward: gradient size mismatch");
  const Vector d_s = normalize_aggregates_backward(aggregates, d_lambda);
  Matrix d_proj(n, h);
  if (!cosine_exp) {
    // s_j = p_j . T with T = sum_k p_k
    Vector tvec(h, 0.0), acc(h, 0.0);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < h; ++c) {
        tvec[c] += proj(j, c);
        acc[c] += d_s[j] * proj(j, c);
      }
    for (std::size_t m = 0; m < n; ++m)
      for (std::size_t c = 0; c < h; ++c)
        d_proj(m, c) = d_s[m] * tvec[c] + acc[c];
    return d_proj;
  }
  // s_j = sum_k exp(cos(p_j, p_k))
  Vector norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = norm(proj.row(j));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < n; ++k) {
      const double c = dot(proj.row(j), proj.row(k)) / (norms[j] * norms[k]);
      const double d_cos = d_s[j] * std::exp(c);
      for (std::size_t i = 0; i < h; ++i) {
        d_proj(j, i) += d_cos * (proj(k, i) / (norms[j] * norms[k]) -
                                 c * proj(j, i) / (norms[j] * norms[j]));
        d_proj(k, i) += d_cos * (proj(j, i) / (norms[j] * norms[k]) -
                                 c * proj(k, i) / (norms[k] * norms[k]));
      }
    }
  return d_proj;
}

namespace {

Matrix unit_rows(const Matrix& vectors) {
  Matrix out = vectors;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const double nr = norm(out.row(r));
    if (nr == 0.0)
      throw NumericError("kmeans_fit: zero-norm vector at row " + std::to_string(r));
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) /= nr;
  }
  return out;
}

std::vector<int> assign_to_centers(const Matrix& points, const Matrix& centers) {
  std::vector<int> labels(points.rows());
  for (std::size_t r = 0; r < points.rows(); ++r) {
    double best = -std::numeric_limits<double>::infinity();
    int best_k = 0;
    for (std::size_t k = 0; k < centers.rows(); ++k) {
      const double c = dot(points.row(r), centers.row(k));
      if (c > best) {
        best = c;
        best_k = static_cast<int>(k);
      }
    }
    labels[r] = best_k;
  }
  return labels;
}

double total_distortion(const Matrix& points, const Matrix& centers,
                        const std::vector<int>& labels) {
  double d = 0.0;
  for (std::size_t r = 0; r < points.rows(); ++r)
    d += 1.0 - dot(points.row(r), centers.row(static_cast<std::size_t>(labels[r])));
  return d;
}

}  // namespace

namespace {

Centroids kmeans_single_run(const Matrix& points, std::size_t k, RngStream& rng,
                            int max_iters, std::vector<double>* distortion_trace) {
  const std::size_t n = points.rows();
  const std::size_t e = points.cols();

  // Greedy k-means++-style seeding on cosine distance: several candidates
  // per center, keep the one minimizing the resulting potential.
  Matrix centers(k, e);
  std::vector<bool> chosen(n, false);
  std::size_t first = static_cast<std::size_t>(rng.below(n));
  for (std::size_t c = 0; c < e; ++c) centers(0, c) = points(first, c);
  chosen[first] = true;
  const int n_candidates = 2 + static_cast<int>(std::log2(static_cast<double>(k) + 1.0));
  Vector best_cos(n, -1.0);
  for (std::size_t ki = 1; ki < k; ++ki) {
    Vector dist2(n);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double c = dot(points.row(r), centers.row(ki - 1));
      if (c > best_cos[r]) best_cos[r] = c;
      const double d = chosen[r] ? 0.0 : 1.0 - best_cos[r];
      dist2[r] = d * d;
      total += dist2[r];
    }
    std::size_t pick = n;
    double pick_potential = std::numeric_limits<double>::infinity();
    for (int cand = 0; cand < n_candidates; ++cand) {
      std::size_t candidate = n;
      if (total > 0.0) {
        double u = rng.uniform() * total;
        for (std::size_t r = 0; r < n; ++r) {
          u -= dist2[r];
          if (u <= 0.0 && !chosen[r]) {
            candidate = r;
            break;
          }
        }
      }
      if (candidate == n) continue;
      double potential = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const double d =
            std::min(1.0 - best_cos[r], 1.0 - dot(points.row(r), points.row(candidate)));
        potential += chosen[r] ? 0.0 : d * d;
      }
      if (potential < pick_potential) {
        pick_potential = potential;
        pick = candidate;
      }
    }
    if (pick == n) {
      // degenerate mass (duplicates everywhere): first unchosen point
      for (std::size_t r = 0; r < n; ++r)
        if (!chosen[r]) {
          pick = r;
          break;
        }
    }
    chosen[pick] = true;
    for (std::size_t c = 0; c < e; ++c) centers(ki, c) = points(pick, c);
  }

  Centroids out;
  std::vector<int> labels = assign_to_centers(points, centers);
  if (distortion_trace)
    distortion_trace->push_back(total_distortion(points, centers, labels));
  for (int iter = 0; iter < max_iters; ++iter) {
    // centroid update: normalized mean of members
    Matrix sums(k, e);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t r = 0; r < n; ++r) {
      const auto lab = static_cast<std::size_t>(labels[r]);
      ++counts[lab];
      for (std::size_t c = 0; c < e; ++c) sums(lab, c) += points(r, c);
    }
    std::vector<bool> taken(n, false);
    for (std::size_t ki = 0; ki < k; ++ki) {
      if (counts[ki] == 0) {
        // reseed to the point with worst similarity to its centroid
        double worst = std::numeric_limits<double>::infinity();
        std::size_t worst_r = 0;
        for (std::size_t r = 0; r < n; ++r) {
          if (taken[r]) continue;
          const double c =
              dot(points.row(r), centers.row(static_cast<std::size_t>(labels[r])));
          if (c < worst) {
            worst = c;
            worst_r = r;
          }
        }
        taken[worst_r] = true;
        for (std::size_t c = 0; c < e; ++c) centers(ki, c) = points(worst_r, c);
        continue;
      }
      const double nr = norm(sums.row(ki));
      if (nr == 0.0) continue;  // antipodal cancellation: keep previous centroid
      for (std::size_t c = 0; c < e; ++c) centers(ki, c) = sums(ki, c) / nr;
    }
    std::vector<int> next = assign_to_centers(points, centers);
    out.iterations = iter + 1;
    if (distortion_trace)
      distortion_trace->push_back(total_distortion(points, centers, next));
    const bool fixpoint = next == labels;
    labels = std::move(next);
    if (fixpoint) break;
  }
  out.centers = std::move(centers);
  out.distortion = total_distortion(points, out.centers, labels);
  return out;
}

}  // namespace

Centroids kmeans_fit(const Matrix& vectors, std::size_t k, RngStream& rng,
                     int max_iters, std::vector<double>* distortion_trace) {
  const std::size_t n = vectors.rows();
  if (k == 0) throw DimensionError("kmeans_fit: K must be at least 1");
  if (k > n)
    throw DimensionError("kmeans_fit: K=" + std::to_string(k) + " exceeds " +
                         std::to_string(n) + " vectors");
  const Matrix points = unit_rows(vectors);

  // Lloyd iterations only find a local optimum; a handful of deterministic
  // restarts (best distortion wins, earliest run on ties) makes the fit
  // reliably near-global at this scale.
  constexpr int kRestarts = 4;
  Centroids best;
  std::vector<double> best_trace;
  for (int restart = 0; restart < kRestarts; ++restart) {
    std::vector<double> trace;
    Centroids run = kmeans_single_run(points, k, rng, max_iters,
                                      distortion_trace ? &trace : nullptr);
    if (restart == 0 || run.distortion < best.distortion) {
      best = std::move(run);
      best_trace = std::move(trace);
    }
  }
  if (distortion_trace) *distortion_trace = std::move(best_trace);
  return best;
}

PseudoLabels assign_pseudo_labels(const Matrix& anchors, const Centroids& centroids) {
  if (anchors.cols() != centroids.centers.cols())
    throw DimensionError("assign_pseudo_labels: dimension mismatch");
  PseudoLabels out;
  out.k = centroids.centers.rows();
  out.labels.resize(anchors.rows());
  for (std::size_t r = 0; r < anchors.rows(); ++r) {
    const double na = norm(anchors.row(r));
    if (na == 0.0)
      throw NumericError("assign_pseudo_labels: zero-norm anchor " +
                         std::to_string(r));
    double best = -std::numeric_limits<double>::infinity();
    int best_k = 0;
    for (std::size_t k = 0; k < out.k; ++k) {
      const double c = dot(anchors.row(r), centroids.centers.row(k)) / na;
      if (c > best) {  // strict: ties keep the lowest index
        best = c;
        best_k = static_cast<int>(k);
      }
    }
    out.labels[r] = best_k;
  }
  return out;
}

PlWeights pl_weights(const Matrix& adversary_outputs, const PseudoLabels& labels) {
  const std::size_t n = adversary_outputs.rows();
  if (labels.labels.size() != n)
    throw DimensionError("pl_weights: label count mismatch");
  Vector raw(n);
  for (std::size_t j = 0; j < n; ++j) {
    const int lab = labels.labels[j];
    if (lab < 0 || static_cast<std::size_t>(lab) >= adversary_outputs.cols())
      throw DimensionError("pl_weights: label " + std::to_string(lab) +
                           " out of range for " +
                           std::to_string(adversary_outputs.cols()) + " classes");
    raw[j] = adversary_outputs(j, static_cast<std::size_t>(lab));
  }
  PlWeights out;
  out.inner = normalized_instance_weights(raw);
  out.labels = labels.labels;
  out.n_classes = adversary_outputs.cols();
  return out;
}

Matrix PlWeights::backward(const Vector& d_lambda) const {
  const Vector d_raw = inner.backward(d_lambda);
  Matrix d_out(labels.size(), n_classes);
  for (std::size_t j = 0; j < labels.size(); ++j)
    d_out(j, static_cast<std::size_t>(labels[j])) = d_raw[j];
  return d_out;
}

PairWeights pw_weights(const SpeakerWeights& speaker_weights) {
  const std::size_t n = speaker_weights.values.size();
  PairWeights out;
  out.values = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < n; ++k)
      out.values(j, k) = speaker_weights.values[j] + speaker_weights.values[k];
  return out;
}

Vector pw_weights_backward(const Matrix& d_pair) {
  if (d_pair.rows() != d_pair.cols())
    throw DimensionError("pw_weights_backward: matrix must be square");
  const std::size_t n = d_pair.rows();
  Vector d(n, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < n; ++k) {
      d[j] += d_pair(j, k);
      d[k] += d_pair(j, k);
    }
  return d;
}

}  // namespace arw
