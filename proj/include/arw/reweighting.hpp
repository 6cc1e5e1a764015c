#pragma once

#include <vector>

#include "arw/losses.hpp"
#include "arw/numerics.hpp"
#include "arw/weights.hpp"

namespace arw {

// lambda_i = 1 + raw_i / mean(raw). Batch mean of the result is 2.
struct InstanceWeights {
  SpeakerWeights weights;
  Vector raw;

  // d(loss)/d(raw) from d(loss)/d(lambda).
  Vector backward(const Vector& d_lambda) const;
};

InstanceWeights normalized_instance_weights(const Vector& raw);

// Accumulated pairwise similarity over adversary projections of the
// batch anchors (rows of `proj`), inner-product or exp-cosine flavored.
struct ApsWeights {
  SpeakerWeights weights;
  Matrix proj;
  Vector aggregates;  // s_j before normalization
  bool cosine_exp = false;

  // d(loss)/d(proj) from d(loss)/d(lambda).
  Matrix backward(const Vector& d_lambda) const;
};

ApsWeights aps_weights_inner_product(const Matrix& proj);
ApsWeights aps_weights_cosine_exp(const Matrix& proj);

struct Centroids {
  Matrix centers;  // K x E, unit-norm rows
  int iterations = 0;
  double distortion = 0.0;  // sum of (1 - cos) to assigned centroid
};

struct PseudoLabels {
  std::vector<int> labels;
  std::size_t k = 0;
};

// Spherical K-means: cosine assignment, normalized-mean centroid update,
// k-means++-style seeding on cosine distance. Deterministic per stream.
Centroids kmeans_fit(const Matrix& vectors, std::size_t k, RngStream& rng,
                     int max_iters = 100,
                     std::vector<double>* distortion_trace = nullptr);

// argmax_k cos(c_k, anchor_j); ties resolve to the lowest index.
PseudoLabels assign_pseudo_labels(const Matrix& anchors, const Centroids& centroids);

// raw_j = adversary_outputs[j, label_j], then instance normalization.
struct PlWeights {
  InstanceWeights inner;
  std::vector<int> labels;
  std::size_t n_classes = 0;

  const SpeakerWeights& weights() const { return inner.weights; }
  // d(loss)/d(adversary_outputs); zero except the selected columns.
  Matrix backward(const Vector& d_lambda) const;
};

PlWeights pl_weights(const Matrix& adversary_outputs, const PseudoLabels& labels);

PairWeights pw_weights(const SpeakerWeights& speaker_weights);

// d(loss)/d(lambda_j) from d(loss)/d(lambda(j,k)).
Vector pw_weights_backward(const Matrix& d_pair);

}  // namespace arw
