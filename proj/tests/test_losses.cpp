#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "arw/losses.hpp"

using namespace arw;

namespace {

// Similarity container with a prescribed score matrix, for loss-value tests
// that do not touch the embedding-side backward machinery.
SimilarityMatrix sim_from_scores(const Matrix& s) {
  SimilarityMatrix sim;
  sim.s = s;
  sim.w = 1.0;
  sim.b = 0.0;
  return sim;
}

Matrix constant_matrix(std::size_t n, double v) {
  Matrix m(n, n);
  for (double& x : m.data()) x = v;
  return m;
}

EmbeddingBatch random_batch(std::size_t n, std::size_t m, std::size_t e,
                            RngStream& rng) {
  EmbeddingBatch b;
  b.n_speakers = n;
  b.m_utts = m;
  b.embeddings = Matrix(n * m, e);
  for (double& v : b.embeddings.data()) v = rng.uniform(-1, 1);
  for (std::size_t j = 0; j < n; ++j) b.speaker_ids.push_back(static_cast<int>(j));
  return b;
}

void check_close(double got, double want, double tol = 1e-12) {
  CHECK(std::abs(got - want) <= tol);
}

void check_grad(const Vector& analytic, const Vector& fd, double tol = 1e-4) {
  REQUIRE(analytic.size() == fd.size());
  for (std::size_t i = 0; i < fd.size(); ++i) {
    if (std::abs(analytic[i]) <= 1e-8 && std::abs(fd[i]) <= 1e-8) continue;
    const double rel = std::abs(analytic[i] - fd[i]) /
                       std::max(std::abs(analytic[i]), std::abs(fd[i]));
    CHECK(rel <= tol);
  }
}

}  // namespace

TEST_CASE("anchor is the leading utterance and query the last when M=2") {
  RngStream rng(1);
  EmbeddingBatch b = random_batch(3, 2, 4, rng);
  AnchorQuery aq = anchors_and_queries(b);
  CHECK(aq.anchors.rows() == 3);
  CHECK(aq.queries.rows() == 3);
  CHECK(aq.anchors.cols() == 4);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(aq.anchors(j, c) == b.embeddings(j * 2 + 0, c));
      CHECK(aq.queries(j, c) == b.embeddings(j * 2 + 1, c));
    }
}

TEST_CASE("anchor averages the leading utterances when M=3") {
  RngStream rng(2);
  EmbeddingBatch b = random_batch(2, 3, 5, rng);
  AnchorQuery aq = anchors_and_queries(b);
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t c = 0; c < 5; ++c) {
      const double want =
          0.5 * (b.embeddings(j * 3 + 0, c) + b.embeddings(j * 3 + 1, c));
      check_close(aq.anchors(j, c), want);
      CHECK(aq.queries(j, c) == b.embeddings(j * 3 + 2, c));
    }
}

TEST_CASE("anchor construction requires at least two utterances") {
  RngStream rng(3);
  EmbeddingBatch b = random_batch(2, 1, 4, rng);
  CHECK_THROWS_AS(anchors_and_queries(b), DimensionError);
}

TEST_CASE("anchor and query gradients distribute onto the right rows") {
  RngStream rng(4);
  EmbeddingBatch b = random_batch(2, 3, 4, rng);
  Matrix da(2, 4), dq(2, 4);
  for (double& v : da.data()) v = rng.uniform(-1, 1);
  for (double& v : dq.data()) v = rng.uniform(-1, 1);
  Matrix d = anchor_query_backward(b, da, dq);
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t c = 0; c < 4; ++c) {
      check_close(d(j * 3 + 0, c), da(j, c) / 2.0);
      check_close(d(j * 3 + 1, c), da(j, c) / 2.0);
      CHECK(d(j * 3 + 2, c) == dq(j, c));
    }
}

TEST_CASE("similarity scores are scaled shifted cosines") {
  AnchorQuery aq{Matrix(2, 2), Matrix(2, 2)};
  aq.anchors(0, 0) = 1.0;  // e1
  aq.anchors(1, 1) = 1.0;  // e2
  aq.queries(0, 0) = 2.0;  // parallel to anchor 0
  aq.queries(1, 1) = 3.0;  // parallel to anchor 1
  SimilarityMatrix sim = similarity_matrix(aq, 10.0, -5.0);
  check_close(sim.s(0, 0), 5.0);   // cos 1
  check_close(sim.s(1, 1), 5.0);
  check_close(sim.s(0, 1), -5.0);  // cos 0
  check_close(sim.s(1, 0), -5.0);
}

TEST_CASE("orthogonal anchors and queries give a zero score matrix at w=1 b=0") {
  AnchorQuery aq{Matrix(2, 4), Matrix(2, 4)};
  aq.anchors(0, 0) = 1.0;
  aq.anchors(1, 1) = 1.0;
  aq.queries(0, 2) = 1.0;
  aq.queries(1, 3) = 1.0;
  SimilarityMatrix sim = similarity_matrix(aq, 1.0, 0.0);
  for (double v : sim.s.data()) CHECK(v == 0.0);
}

TEST_CASE("zero-norm anchors are rejected with the speaker index named") {
  AnchorQuery aq{Matrix(2, 3), Matrix(2, 3)};
  aq.anchors(0, 0) = 1.0;  // anchor 1 left at zero
  aq.queries(0, 0) = 1.0;
  aq.queries(1, 1) = 1.0;
  try {
    similarity_matrix(aq, 1.0, 0.0);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
}

TEST_CASE("similarity gradients match finite differences through the embeddings") {
  RngStream rng(5);
  EmbeddingBatch b = random_batch(3, 2, 4, rng);
  const double w = 10.0, bias = -5.0;
  Matrix d_s(3, 3);
  for (double& v : d_s.data()) v = rng.uniform(-1, 1);

  AnchorQuery aq = anchors_and_queries(b);
  SimilarityMatrix sim = similarity_matrix(aq, w, bias);
  SimilarityGrads sg = similarity_backward(sim, d_s);
  Matrix d_emb = anchor_query_backward(b, sg.d_anchors, sg.d_queries);

  EmbeddingBatch probe = b;
  auto f = [&](const Vector& flat) {
    probe.embeddings.data() = flat;
    AnchorQuery paq = anchors_and_queries(probe);
    SimilarityMatrix ps = similarity_matrix(paq, w, bias);
    double s = 0.0;
    for (std::size_t i = 0; i < ps.s.size(); ++i)
      s += ps.s.data()[i] * d_s.data()[i];
    return s;
  };
  const Vector fd = finite_diff_gradient(f, b.embeddings.data(), 1e-6);
  check_grad(d_emb.data(), fd);

  // scale and bias channels
  auto fw = [&](const Vector& x) {
    SimilarityMatrix ps = similarity_matrix(aq, x[0], x[1]);
    double s = 0.0;
    for (std::size_t i = 0; i < ps.s.size(); ++i)
      s += ps.s.data()[i] * d_s.data()[i];
    return s;
  };
  const Vector fdwb = finite_diff_gradient(fw, {w, bias}, 1e-6);
  check_grad({sg.d_w, sg.d_b}, fdwb);
}

TEST_CASE("uniform scores give the log of the speaker count") {
  for (std::size_t n : {2u, 3u, 10u}) {
    SimilarityMatrix sim = sim_from_scores(constant_matrix(n, 0.7));
    check_close(ap_loss(sim).loss, std::log(static_cast<double>(n)));
  }
}

TEST_CASE("two-speaker diagonal-dominant score matrix evaluates in closed form") {
  Matrix s(2, 2);
  s(0, 0) = 2.0;
  s(1, 1) = 2.0;
  SimilarityMatrix sim = sim_from_scores(s);
  check_close(ap_loss(sim).loss, std::log(1.0 + std::exp(-2.0)));
}

TEST_CASE("metric loss score gradient rows sum to zero") {
  RngStream rng(6);
  Matrix s(5, 5);
  for (double& v : s.data()) v = rng.uniform(-3, 3);
  LossBundle out = ap_loss(sim_from_scores(s));
  for (std::size_t j = 0; j < 5; ++j) {
    double row = 0.0;
    for (std::size_t k = 0; k < 5; ++k) row += out.d_s(j, k);
    check_close(row, 0.0, 1e-14);
  }
  CHECK(out.loss >= 0.0);
}

TEST_CASE("adding a constant to a score row leaves its term unchanged") {
  RngStream rng(7);
  Matrix s(4, 4);
  for (double& v : s.data()) v = rng.uniform(-3, 3);
  LossBundle before = ap_loss(sim_from_scores(s));
  for (std::size_t k = 0; k < 4; ++k) s(2, k) += 13.7;
  LossBundle after = ap_loss(sim_from_scores(s));
  check_close(after.per_speaker[2], before.per_speaker[2], 1e-12);
}

TEST_CASE("unit weights turn the weighted objective into N times the mean loss") {
  RngStream rng(8);
  Matrix s(4, 4);
  for (double& v : s.data()) v = rng.uniform(-2, 2);
  SimilarityMatrix sim = sim_from_scores(s);
  SpeakerWeights ones{Vector(4, 1.0)};
  check_close(weighted_ap_loss(sim, ones).loss, 4.0 * ap_loss(sim).loss, 1e-12);
}

TEST_CASE("zero weights zero the weighted objective and its score gradient") {
  RngStream rng(9);
  Matrix s(3, 3);
  for (double& v : s.data()) v = rng.uniform(-2, 2);
  LossBundle out = weighted_ap_loss(sim_from_scores(s), SpeakerWeights{Vector(3, 0.0)});
  CHECK(out.loss == 0.0);
  for (double v : out.d_s.data()) CHECK(v == 0.0);
}

TEST_CASE("hand-weighted uniform two-speaker case evaluates in closed form") {
  SimilarityMatrix sim = sim_from_scores(constant_matrix(2, 1.0));
  SpeakerWeights w{{2.0, 1.0}};
  check_close(weighted_ap_loss(sim, w).loss, 3.0 * std::log(2.0), 1e-12);
}

TEST_CASE("weighted objective is linear in the weights at fixed scores") {
  RngStream rng(10);
  Matrix s(4, 4);
  for (double& v : s.data()) v = rng.uniform(-2, 2);
  SimilarityMatrix sim = sim_from_scores(s);
  SpeakerWeights w{{0.5, 2.0, 1.3, 0.9}};
  SpeakerWeights scaled = w;
  for (double& v : scaled.values) v *= 3.0;
  check_close(weighted_ap_loss(sim, scaled).loss,
              3.0 * weighted_ap_loss(sim, w).loss, 1e-12);
  SpeakerWeights wrong{{1.0, 1.0}};
  CHECK_THROWS_AS(weighted_ap_loss(sim, wrong), DimensionError);
}

TEST_CASE("weighted loss gradients match finite differences") {
  RngStream rng(11);
  Matrix s(5, 5);
  for (double& v : s.data()) v = rng.uniform(-2, 2);
  SpeakerWeights w{Vector(5)};
  for (double& v : w.values) v = rng.uniform(0.5, 3.0);
  LossBundle out = weighted_ap_loss(sim_from_scores(s), w);

  auto fs = [&](const Vector& flat) {
    Matrix m(5, 5);
    m.data() = flat;
    return weighted_ap_loss(sim_from_scores(m), w).loss;
  };
  check_grad(out.d_s.data(), finite_diff_gradient(fs, s.data(), 1e-6));

  auto fl = [&](const Vector& vals) {
    return weighted_ap_loss(sim_from_scores(s), SpeakerWeights{vals}).loss;
  };
  check_grad(out.d_weights, finite_diff_gradient(fl, w.values, 1e-6));
}

TEST_CASE("pair-scaled similarities reduce to the plain loss at unit weights") {
  RngStream rng(12);
  Matrix s(4, 4);
  for (double& v : s.data()) v = rng.uniform(-2, 2);
  SimilarityMatrix sim = sim_from_scores(s);
  PairWeights ones{constant_matrix(4, 1.0)};
  check_close(pw_loss_scaled_similarity(sim, ones).loss, ap_loss(sim).loss, 1e-12);
}

TEST_CASE("uniform pair weights scale the scores inside the similarity form") {
  RngStream rng(13);
  Matrix s(3, 3);
  for (double& v : s.data()) v = rng.uniform(-2, 2);
  const double c = 2.5;
  Matrix cs = s;
  for (double& v : cs.data()) v *= c;
  check_close(
      pw_loss_scaled_similarity(sim_from_scores(s), PairWeights{constant_matrix(3, c)})
          .loss,
      ap_loss(sim_from_scores(cs)).loss, 1e-12);
}

TEST_CASE("two-speaker scaled-similarity hand case evaluates in closed form") {
  Matrix s(2, 2);
  s(0, 0) = 1.0;
  s(1, 1) = 1.0;
  Matrix lam(2, 2);
  lam(0, 0) = 2.0; lam(0, 1) = 1.0;
  lam(1, 0) = 1.0; lam(1, 1) = 2.0;
  check_close(pw_loss_scaled_similarity(sim_from_scores(s), PairWeights{lam}).loss,
              std::log(1.0 + std::exp(-2.0)), 1e-12);
}

TEST_CASE("constant pair weights cancel in the likelihood form") {
  RngStream rng(14);
  Matrix s(4, 4);
  for (double& v : s.data()) v = rng.uniform(-2, 2);
  SimilarityMatrix sim = sim_from_scores(s);
  for (double c : {1.0, 0.3, 7.0})
    check_close(pw_loss_scaled_likelihood(sim, PairWeights{constant_matrix(4, c)}).loss,
                ap_loss(sim).loss, 1e-12);
}

TEST_CASE("two-speaker scaled-likelihood hand case evaluates in closed form") {
  Matrix lam(2, 2);
  lam(0, 0) = 2.0; lam(0, 1) = 1.0;
  lam(1, 0) = 1.0; lam(1, 1) = 2.0;
  check_close(
      pw_loss_scaled_likelihood(sim_from_scores(Matrix(2, 2)), PairWeights{lam}).loss,
      -std::log(2.0 / 3.0), 1e-12);
}

TEST_CASE("likelihood form rejects nonpositive pair weights") {
  Matrix lam = constant_matrix(2, 1.0);
  lam(0, 1) = 0.0;
  CHECK_THROWS_AS(
      pw_loss_scaled_likelihood(sim_from_scores(Matrix(2, 2)), PairWeights{lam}),
      NumericError);
  PairWeights wrong{constant_matrix(3, 1.0)};
  CHECK_THROWS_AS(pw_loss_scaled_likelihood(sim_from_scores(Matrix(2, 2)), wrong),
                  DimensionError);
  CHECK_THROWS_AS(pw_loss_scaled_similarity(sim_from_scores(Matrix(2, 2)), wrong),
                  DimensionError);
}

TEST_CASE("pairwise loss gradients match finite differences on random instances") {
  RngStream rng(15);
  Matrix s(5, 5), lam(5, 5);
  for (double& v : s.data()) v = rng.uniform(-2, 2);
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t k = j; k < 5; ++k)
      lam(j, k) = lam(k, j) = rng.uniform(0.5, 4.0);

  for (int which = 0; which < 2; ++which) {
    auto loss = [&](const SimilarityMatrix& sm, const PairWeights& pw) {
      return which == 0 ? pw_loss_scaled_similarity(sm, pw)
                        : pw_loss_scaled_likelihood(sm, pw);
    };
    LossBundle out = loss(sim_from_scores(s), PairWeights{lam});
    auto fs = [&](const Vector& flat) {
      Matrix m(5, 5);
      m.data() = flat;
      return loss(sim_from_scores(m), PairWeights{lam}).loss;
    };
    check_grad(out.d_s.data(), finite_diff_gradient(fs, s.data(), 1e-6));
    auto fl = [&](const Vector& flat) {
      Matrix m(5, 5);
      m.data() = flat;
      return loss(sim_from_scores(s), PairWeights{m}).loss;
    };
    check_grad(out.d_pair_weights.data(), finite_diff_gradient(fl, lam.data(), 1e-6));
  }
}

TEST_CASE("uniform classifier logits cost the log of the class count") {
  MlpParams head;
  head.layers.resize(1);
  head.layers[0].weight = Matrix(3, 7);  // all-zero weights: uniform logits
  head.layers[0].bias = Vector(7, 0.0);
  head.layers[0].act = Activation::Identity;
  Matrix emb(4, 3);
  RngStream rng(16);
  for (double& v : emb.data()) v = rng.uniform(-1, 1);
  LabelLossResult out = label_loss(emb, head, {0, 3, 6, 2});
  check_close(out.loss, std::log(7.0), 1e-12);
}

TEST_CASE("a saturated correct logit drives the classifier loss to zero") {
  MlpParams head;
  head.layers.resize(1);
  head.layers[0].weight = Matrix(1, 4);
  head.layers[0].weight(0, 2) = 20.0;  // class 2 logit = 20 * input
  head.layers[0].bias = Vector(4, 0.0);
  head.layers[0].act = Activation::Identity;
  Matrix emb(1, 1);
  emb(0, 0) = 1.0;
  CHECK(label_loss(emb, head, {2}).loss < 1e-8);
}

TEST_CASE("classifier rejects out-of-range speaker indices") {
  MlpParams head;
  head.layers.resize(1);
  head.layers[0].weight = Matrix(2, 3);
  head.layers[0].bias = Vector(3, 0.0);
  head.layers[0].act = Activation::Identity;
  Matrix emb(1, 2);
  emb(0, 0) = 1.0;
  CHECK_THROWS_AS(label_loss(emb, head, {3}), DimensionError);
  CHECK_THROWS_AS(label_loss(emb, head, {-1}), DimensionError);
}

TEST_CASE("classifier gradients match finite differences") {
  RngStream rng(17);
  MlpParams head = init_mlp({3, 5}, {Activation::Identity}, rng);
  Matrix emb(4, 3);
  for (double& v : emb.data()) v = rng.uniform(-1, 1);
  const std::vector<int> ids{0, 4, 2, 2};
  LabelLossResult out = label_loss(emb, head, ids);

  auto fe = [&](const Vector& flat) {
    Matrix m(4, 3);
    m.data() = flat;
    return label_loss(m, head, ids).loss;
  };
  check_grad(out.d_embeddings.data(), finite_diff_gradient(fe, emb.data(), 1e-6));

  MlpParams probe = head;
  auto fh = [&](const Vector& flat) {
    std::size_t i = 0;
    for (double& w : probe.layers[0].weight.data()) w = flat[i++];
    for (double& b : probe.layers[0].bias) b = flat[i++];
    return label_loss(emb, probe, ids).loss;
  };
  Vector flat(head.layers[0].weight.data());
  flat.insert(flat.end(), head.layers[0].bias.begin(), head.layers[0].bias.end());
  Vector analytic(out.d_head.layers[0].weight.data());
  analytic.insert(analytic.end(), out.d_head.layers[0].bias.begin(),
                  out.d_head.layers[0].bias.end());
  check_grad(analytic, finite_diff_gradient(fh, flat, 1e-6));
}
