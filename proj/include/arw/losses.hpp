#pragma once

#include <vector>

#include "arw/model.hpp"
#include "arw/numerics.hpp"
#include "arw/weights.hpp"

namespace arw {

// One metric-learning batch: M utterance embeddings for each of N
// speakers, stored speaker-major as an (N*M) x E matrix.
struct EmbeddingBatch {
  std::size_t n_speakers = 0;
  std::size_t m_utts = 0;
  Matrix embeddings;
  std::vector<int> speaker_ids;  // length N

  std::size_t dim() const { return embeddings.cols(); }
  void validate() const;
};

struct AnchorQuery {
  Matrix anchors;  // N x E, mean of the first M-1 utterances
  Matrix queries;  // N x E, utterance M-1
};

AnchorQuery anchors_and_queries(const EmbeddingBatch& batch);

// Distributes anchor/query gradients back onto the (N*M) x E embedding
// matrix of the batch they were derived from.
Matrix anchor_query_backward(const EmbeddingBatch& batch, const Matrix& d_anchors,
                             const Matrix& d_queries);

// S(j,k) = w * cos(anchor_j, query_k) + b, with everything retained that
// the backward pass needs.
struct SimilarityMatrix {
  Matrix s;
  Matrix cosines;
  double w = 0.0;
  double b = 0.0;
  Matrix anchors;
  Matrix queries;
  Vector anchor_norms;
  Vector query_norms;

  std::size_t n() const { return s.rows(); }
};

SimilarityMatrix similarity_matrix(const AnchorQuery& aq, double w, double b);

struct SimilarityGrads {
  Matrix d_anchors;
  Matrix d_queries;
  double d_w = 0.0;
  double d_b = 0.0;
};

SimilarityGrads similarity_backward(const SimilarityMatrix& sim, const Matrix& d_s);

struct LossBundle {
  double loss = 0.0;
  Vector per_speaker;      // L_{p,j}
  Matrix d_s;              // dloss/dS
  Vector d_weights;        // dloss/dlambda_j, weighted variants only
  Matrix d_pair_weights;   // dloss/dlambda(j,k), pairwise variants only
};

// L_p = -(1/N) sum_j log softmax_j(S)_jj, evaluated in log space.
LossBundle ap_loss(const SimilarityMatrix& sim);

// J = sum_j lambda_j * L_{p,j}
LossBundle weighted_ap_loss(const SimilarityMatrix& sim,
                            const SpeakerWeights& weights);

// J = -(1/N) sum_j log( e^{l(j,j) S_jj} / sum_k e^{l(j,k) S_jk} )
LossBundle pw_loss_scaled_similarity(const SimilarityMatrix& sim,
                                     const PairWeights& pair_weights);

// J = -(1/N) sum_j log( l(j,j) e^{S_jj} / sum_k l(j,k) e^{S_jk} );
// all pair weights must be strictly positive.
LossBundle pw_loss_scaled_likelihood(const SimilarityMatrix& sim,
                                     const PairWeights& pair_weights);

struct LabelLossResult {
  double loss = 0.0;
  Matrix d_embeddings;
  MlpGrads d_head;
};

// Mean softmax cross-entropy of the single-layer head's logits against
// the true speaker indices.
LabelLossResult label_loss(const Matrix& embeddings, const MlpParams& head,
                           const std::vector<int>& speaker_ids);

}  // namespace arw
