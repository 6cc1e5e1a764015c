#include "arw/losses.hpp"

#include <cmath>

namespace arw {

void EmbeddingBatch::validate() const {
  if (n_speakers < 2) throw DimensionError("EmbeddingBatch: need N >= 2 speakers");
  if (m_utts < 2) throw DimensionError("EmbeddingBatch: need M >= 2 utterances");
  if (embeddings.rows() != n_speakers * m_utts)
    throw DimensionError("EmbeddingBatch: embedding row count mismatch");
  if (speaker_ids.size() != n_speakers)
    throw DimensionError("EmbeddingBatch: speaker id count mismatch");
  for (double v : embeddings.data())
    if (!std::isfinite(v)) throw NumericError("EmbeddingBatch: non-finite embedding");
}

AnchorQuery anchors_and_queries(const EmbeddingBatch& batch) {
  if (batch.m_utts < 2)
    throw DimensionError("anchors_and_queries: need M >= 2 utterances per speaker");
  const std::size_t n = batch.n_speakers, m = batch.m_utts, e = batch.dim();
  AnchorQuery aq{Matrix(n, e), Matrix(n, e)};
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t u = 0; u + 1 < m; ++u) {
      auto row = batch.embeddings.row(j * m + u);
      for (std::size_t c = 0; c < e; ++c) aq.anchors(j, c) += row[c];
    }
    for (std::size_t c = 0; c < e; ++c)
      aq.anchors(j, c) /= static_cast<double>(m - 1);
    auto q = batch.embeddings.row(j * m + m - 1);
    for (std::size_t c = 0; c < e; ++c) aq.queries(j, c) = q[c];
  }
  return aq;
}

Matrix anchor_query_backward(const EmbeddingBatch& batch, const Matrix& d_anchors,
                             const Matrix& d_queries) {
  const std::size_t n = batch.n_speakers, m = batch.m_utts, e = batch.dim();
  if (d_anchors.rows() != n || d_anchors.cols() != e || !d_anchors.same_shape(d_queries))
    throw DimensionError("anchor_query_backward: gradient shape mismatch");
  Matrix d_emb(n * m, e);
  const double inv = 1.0 / static_cast<double>(m - 1);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t u = 0; u + 1 < m; ++u)
      for (std::size_t c = 0; c < e; ++c)
        d_emb(j * m + u, c) = d_anchors(j, c) * inv;
    for (std::size_t c = 0; c < e; ++c) d_emb(j * m + m - 1, c) = d_queries(j, c);
  }
  return d_emb;
}

SimilarityMatrix similarity_matrix(const AnchorQuery& aq, double w, double b) {
  const std::size_t n = aq.anchors.rows();
  if (aq.queries.rows() != n || aq.queries.cols() != aq.anchors.cols())
    throw DimensionError("similarity_matrix: anchor/query shape mismatch");
  SimilarityMatrix sim;
  sim.w = w;
  sim.b = b;
  sim.anchors = aq.anchors;
  sim.queries = aq.queries;
  sim.anchor_norms = Vector(n);
  sim.query_norms = Vector(n);
  for (std::size_t j = 0; j < n; ++j) {
    sim.anchor_norms[j] = norm(aq.anchors.row(j));
    if (sim.anchor_norms[j] == 0.0)
      throw NumericError("similarity_matrix: zero-norm anchor for speaker " +
                         std::to_string(j));
    sim.query_norms[j] = norm(aq.queries.row(j));
    if (sim.query_norms[j] == 0.0)
      throw NumericError("similarity_matrix: zero-norm query for speaker " +
                         std::to_string(j));
  }
  sim.cosines = Matrix(n, n);
  sim.s = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < n; ++k) {
      const double c = dot(aq.anchors.row(j), aq.queries.row(k)) /
                       (sim.anchor_norms[j] * sim.query_norms[k]);
      sim.cosines(j, k) = c;
      sim.s(j, k) = w * c + b;
    }
  return sim;
}

SimilarityGrads similarity_backward(const SimilarityMatrix& sim, const Matrix& d_s) {
  const std::size_t n = sim.n(), e = sim.anchors.cols();
  if (!d_s.same_shape(sim.s))
    throw DimensionError("similarity_backward: d_s shape mismatch");
  SimilarityGrads g;
  g.d_anchors = Matrix(n, e);
  g.d_queries = Matrix(n, e);
  for (std::size_t j = 0; j < n; ++j) {
    const double na = sim.anchor_norms[j];
    for (std::size_t k = 0; k < n; ++k) {
      const double ds = d_s(j, k);
      if (ds == 0.0) continue;
      g.d_w += ds * sim.cosines(j, k);
      g.d_b += ds;
      const double dcos = ds * sim.w;
      const double nq = sim.query_norms[k];
      const double c = sim.cosines(j, k);
      for (std::size_t i = 0; i < e; ++i) {
        g.d_anchors(j, i) += dcos * (sim.queries(k, i) / (na * nq) -
                                     c * sim.anchors(j, i) / (na * na));
        g.d_queries(k, i) += dcos * (sim.anchors(j, i) / (na * nq) -
                                     c * sim.queries(k, i) / (nq * nq));
      }
    }
  }
  return g;
}

LossBundle ap_loss(const SimilarityMatrix& sim) {
  const std::size_t n = sim.n();
  if (n < 2) throw DimensionError("ap_loss: need N >= 2");
  LossBundle out;
  out.per_speaker = Vector(n);
  out.d_s = Matrix(n, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double lse = log_sum_exp(sim.s.row(j));
    out.per_speaker[j] = lse - sim.s(j, j);
    out.loss += out.per_speaker[j] * inv_n;
    for (std::size_t k = 0; k < n; ++k) {
      const double p = std::exp(sim.s(j, k) - lse);
      out.d_s(j, k) = inv_n * (p - (j == k ? 1.0 : 0.0));
    }
  }
  return out;
}

LossBundle weighted_ap_loss(const SimilarityMatrix& sim,
                            const SpeakerWeights& weights) {
  const std::size_t n = sim.n();
  if (weights.values.size() != n)
    throw DimensionError("weighted_ap_loss: weight count mismatch");
  LossBundle out;
  out.per_speaker = Vector(n);
  out.d_s = Matrix(n, n);
  out.d_weights = Vector(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double lse = log_sum_exp(sim.s.row(j));
    const double lpj = lse - sim.s(j, j);
    out.per_speaker[j] = lpj;
    out.d_weights[j] = lpj;
    out.loss += weights.values[j] * lpj;
    for (std::size_t k = 0; k < n; ++k) {
      const double p = std::exp(sim.s(j, k) - lse);
      out.d_s(j, k) = weights.values[j] * (p - (j == k ? 1.0 : 0.0));
    }
  }
  return out;
}

LossBundle pw_loss_scaled_similarity(const SimilarityMatrix& sim,
                                     const PairWeights& pair_weights) {
  const std::size_t n = sim.n();
  if (!pair_weights.values.same_shape(sim.s))
    throw DimensionError("pw_loss_scaled_similarity: pair weight shape mismatch");
  LossBundle out;
  out.per_speaker = Vector(n);
  out.d_s = Matrix(n, n);
  out.d_pair_weights = Matrix(n, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  Vector scaled(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k)
      scaled[k] = pair_weights.values(j, k) * sim.s(j, k);
    const double lse = log_sum_exp(scaled);
    out.per_speaker[j] = lse - scaled[j];
    out.loss += out.per_speaker[j] * inv_n;
    for (std::size_t k = 0; k < n; ++k) {
      const double p = std::exp(scaled[k] - lse);
      const double resid = p - (j == k ? 1.0 : 0.0);
      out.d_s(j, k) = inv_n * pair_weights.values(j, k) * resid;
      out.d_pair_weights(j, k) = inv_n * sim.s(j, k) * resid;
    }
  }
  return out;
}

LossBundle pw_loss_scaled_likelihood(const SimilarityMatrix& sim,
                                     const PairWeights& pair_weights) {
  const std::size_t n = sim.n();
  if (!pair_weights.values.same_shape(sim.s))
    throw DimensionError("pw_loss_scaled_likelihood: pair weight shape mismatch");
  for (double v : pair_weights.values.data())
    if (v <= 0.0)
      throw NumericError("pw_loss_scaled_likelihood: nonpositive pair weight");
  LossBundle out;
  out.per_speaker = Vector(n);
  out.d_s = Matrix(n, n);
  out.d_pair_weights = Matrix(n, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  Vector shifted(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k)
      shifted[k] = sim.s(j, k) + std::log(pair_weights.values(j, k));
    const double lse = log_sum_exp(shifted);
    out.per_speaker[j] = lse - shifted[j];
    out.loss += out.per_speaker[j] * inv_n;
    for (std::size_t k = 0; k < n; ++k) {
      const double q = std::exp(shifted[k] - lse);
      const double resid = q - (j == k ? 1.0 : 0.0);
      out.d_s(j, k) = inv_n * resid;
      out.d_pair_weights(j, k) = inv_n * resid / pair_weights.values(j, k);
    }
  }
  return out;
}

LabelLossResult label_loss(const Matrix& embeddings, const MlpParams& head,
                           const std::vector<int>& speaker_ids) {
  if (speaker_ids.size() != embeddings.rows())
    throw DimensionError("label_loss: id count does not match embedding rows");
  const std::size_t n = embeddings.rows();
  const std::size_t n_classes = head.output_dim();
  for (int id : speaker_ids)
    if (id < 0 || static_cast<std::size_t>(id) >= n_classes)
      throw DimensionError("label_loss: speaker id " + std::to_string(id) +
                           " out of range for " + std::to_string(n_classes) +
                           " classes");
  ForwardTrace trace;
  Matrix logits = mlp_forward(head, embeddings, &trace);
  LabelLossResult out;
  Matrix d_logits(n, n_classes);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double lse = log_sum_exp(logits.row(r));
    const std::size_t y = static_cast<std::size_t>(speaker_ids[r]);
    out.loss += (lse - logits(r, y)) * inv_n;
    for (std::size_t c = 0; c < n_classes; ++c) {
      const double p = std::exp(logits(r, c) - lse);
      d_logits(r, c) = inv_n * (p - (c == y ? 1.0 : 0.0));
    }
  }
  out.d_head = mlp_backward(head, trace, d_logits, &out.d_embeddings);
  return out;
}

}  // namespace arw
