#include "arw/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "arw/losses.hpp"
#include "arw/model.hpp"
#include "arw/numerics.hpp"
#include "arw/reweighting.hpp"

namespace arw {

namespace {

constexpr std::size_t kN = 5;
constexpr std::size_t kM = 2;
constexpr std::size_t kE = 8;
constexpr double kH = 1e-5;

struct Accumulator {
  double worst = 0.0;
  std::string coord;

  void merge(const Vector& analytic, const Vector& fd, const std::string& tag) {
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double mag = std::max(std::abs(analytic[i]), std::abs(fd[i]));
      if (mag <= 1e-8) continue;
      const double rel = std::abs(analytic[i] - fd[i]) / mag;
      if (rel > worst) {
        worst = rel;
        coord = tag + "[" + std::to_string(i) + "]";
      }
    }
  }
};

Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng, double lo = -1.0,
                     double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

Vector flatten(const Matrix& m) { return m.data(); }

Matrix unflatten(const Vector& v, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  m.data() = v;
  return m;
}

// SimilarityMatrix carrier for losses that only read .s
SimilarityMatrix sim_from_s(Matrix s) {
  SimilarityMatrix sim;
  sim.s = std::move(s);
  return sim;
}

EmbeddingBatch random_batch(RngStream& rng) {
  EmbeddingBatch eb;
  eb.n_speakers = kN;
  eb.m_utts = kM;
  eb.embeddings = random_matrix(kN * kM, kE, rng, -1.0, 1.0);
  for (std::size_t j = 0; j < kN; ++j) eb.speaker_ids.push_back(static_cast<int>(j));
  return eb;
}

Vector mlp_params_flat(const MlpParams& p) {
  Vector out;
  for (const auto& l : p.layers) {
    out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

void mlp_params_set(MlpParams& p, const Vector& flat) {
  std::size_t off = 0;
  for (auto& l : p.layers) {
    std::copy(flat.begin() + off, flat.begin() + off + l.weight.size(),
              l.weight.data().begin());
    off += l.weight.size();
    std::copy(flat.begin() + off, flat.begin() + off + l.bias.size(),
              l.bias.begin());
    off += l.bias.size();
  }
}

Vector mlp_grads_flat(const MlpGrads& g) {
  Vector out;
  for (const auto& l : g.layers) {
    out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

void check_mlp(Accumulator& acc, RngStream& rng) {
  std::vector<Activation> all{Activation::Identity, Activation::Relu,
                              Activation::Sigmoid};
  MlpParams net = init_mlp({6, 5, 4},
                           {all[rng.below(3)], all[rng.below(3)]}, rng);
  // relu kinks sit at z=0; nudge biases away from them
  for (auto& l : net.layers)
    for (double& b : l.bias) b = rng.uniform(0.1, 0.5);
  const Matrix inputs = random_matrix(3, 6, rng);
  const Matrix g = random_matrix(3, 4, rng);

  ForwardTrace trace;
  mlp_forward(net, inputs, &trace);
  Matrix d_inputs;
  const MlpGrads grads = mlp_backward(net, trace, g, &d_inputs);

  auto objective = [&](const MlpParams& p, const Matrix& x) {
    const Matrix out = mlp_forward(p, x);
    return dot(out.data(), g.data());
  };
  const Vector fd_params = finite_diff_gradient(
      [&](const Vector& flat) {
        MlpParams p = net;
        mlp_params_set(p, flat);
        return objective(p, inputs);
      },
      mlp_params_flat(net), kH);
  acc.merge(mlp_grads_flat(grads), fd_params, "mlp.params");
  const Vector fd_inputs = finite_diff_gradient(
      [&](const Vector& flat) {
        return objective(net, unflatten(flat, 3, 6));
      },
      flatten(inputs), kH);
  acc.merge(flatten(d_inputs), fd_inputs, "mlp.inputs");
}

void check_similarity(Accumulator& acc, RngStream& rng) {
  const EmbeddingBatch eb = random_batch(rng);
  const double w = rng.uniform(1.0, 10.0), b = rng.uniform(-5.0, 0.0);
  const Matrix g = random_matrix(kN, kN, rng);

  const AnchorQuery aq = anchors_and_queries(eb);
  const SimilarityMatrix sim = similarity_matrix(aq, w, b);
  const SimilarityGrads sg = similarity_backward(sim, g);
  const Matrix d_emb = anchor_query_backward(eb, sg.d_anchors, sg.d_queries);

  auto objective = [&](const Vector& flat) {
    EmbeddingBatch e = eb;
    e.embeddings = unflatten(flat, kN * kM, kE);
    const SimilarityMatrix s = similarity_matrix(anchors_and_queries(e), w, b);
    return dot(s.s.data(), g.data());
  };
  acc.merge(flatten(d_emb),
            finite_diff_gradient(objective, flatten(eb.embeddings), kH),
            "similarity.embeddings");

  const Vector fd_wb = finite_diff_gradient(
      [&](const Vector& wb) {
        const SimilarityMatrix s = similarity_matrix(aq, wb[0], wb[1]);
        return dot(s.s.data(), g.data());
      },
      {w, b}, kH);
  acc.merge({sg.d_w, sg.d_b}, fd_wb, "similarity.wb");
}

void check_ap(Accumulator& acc, RngStream& rng) {
  const Matrix s = random_matrix(kN, kN, rng, -2.0, 2.0);
  const LossBundle bundle = ap_loss(sim_from_s(s));
  acc.merge(flatten(bundle.d_s),
            finite_diff_gradient(
                [&](const Vector& flat) {
                  return ap_loss(sim_from_s(unflatten(flat, kN, kN))).loss;
                },
                flatten(s), kH),
            "ap.d_s");

  // composite path through anchors, queries, w, b
  const EmbeddingBatch eb = random_batch(rng);
  const double w = rng.uniform(1.0, 10.0), b = rng.uniform(-5.0, 0.0);
  const SimilarityMatrix sim = similarity_matrix(anchors_and_queries(eb), w, b);
  const LossBundle full = ap_loss(sim);
  const SimilarityGrads sg = similarity_backward(sim, full.d_s);
  const Matrix d_emb = anchor_query_backward(eb, sg.d_anchors, sg.d_queries);
  acc.merge(flatten(d_emb),
            finite_diff_gradient(
                [&](const Vector& flat) {
                  EmbeddingBatch e = eb;
                  e.embeddings = unflatten(flat, kN * kM, kE);
                  return ap_loss(similarity_matrix(anchors_and_queries(e), w, b))
                      .loss;
                },
                flatten(eb.embeddings), kH),
            "ap.embeddings");
}

void check_weighted(Accumulator& acc, RngStream& rng) {
  const Matrix s = random_matrix(kN, kN, rng, -2.0, 2.0);
  SpeakerWeights weights;
  for (std::size_t j = 0; j < kN; ++j)
    weights.values.push_back(rng.uniform(0.5, 2.5));
  const LossBundle bundle = weighted_ap_loss(sim_from_s(s), weights);
  acc.merge(flatten(bundle.d_s),
            finite_diff_gradient(
                [&](const Vector& flat) {
                  return weighted_ap_loss(sim_from_s(unflatten(flat, kN, kN)),
                                          weights)
                      .loss;
                },
                flatten(s), kH),
            "weighted.d_s");
  acc.merge(bundle.d_weights,
            finite_diff_gradient(
                [&](const Vector& lam) {
                  return weighted_ap_loss(sim_from_s(s), {lam}).loss;
                },
                weights.values, kH),
            "weighted.d_lambda");
}

template <typename LossFn>
void check_pairwise(Accumulator& acc, RngStream& rng, LossFn loss_fn,
                    const std::string& tag) {
  const Matrix s = random_matrix(kN, kN, rng, -2.0, 2.0);
  Matrix lam = random_matrix(kN, kN, rng, 0.5, 3.0);
  const LossBundle bundle = loss_fn(sim_from_s(s), PairWeights{lam});
  acc.merge(flatten(bundle.d_s),
            finite_diff_gradient(
                [&](const Vector& flat) {
                  return loss_fn(sim_from_s(unflatten(flat, kN, kN)),
                                 PairWeights{lam})
                      .loss;
                },
                flatten(s), kH),
            tag + ".d_s");
  acc.merge(flatten(bundle.d_pair_weights),
            finite_diff_gradient(
                [&](const Vector& flat) {
                  return loss_fn(sim_from_s(s),
                                 PairWeights{unflatten(flat, kN, kN)})
                      .loss;
                },
                flatten(lam), kH),
            tag + ".d_lambda");
}

void check_label(Accumulator& acc, RngStream& rng) {
  const std::size_t n_rows = kN * kM, n_classes = kN;
  MlpParams head = init_mlp({kE, n_classes}, {Activation::Identity}, rng);
  const Matrix emb = random_matrix(n_rows, kE, rng);
  std::vector<int> ids;
  for (std::size_t r = 0; r < n_rows; ++r)
    ids.push_back(static_cast<int>(rng.below(n_classes)));

  const LabelLossResult res = label_loss(emb, head, ids);
  acc.merge(flatten(res.d_embeddings),
            finite_diff_gradient(
                [&](const Vector& flat) {
                  return label_loss(unflatten(flat, n_rows, kE), head, ids).loss;
                },
                flatten(emb), kH),
            "label.embeddings");
  acc.merge(mlp_grads_flat(res.d_head),
            finite_diff_gradient(
                [&](const Vector& flat) {
                  MlpParams h = head;
                  mlp_params_set(h, flat);
                  return label_loss(emb, h, ids).loss;
                },
                mlp_params_flat(head), kH),
            "label.head");
}

void check_arw_norm(Accumulator& acc, RngStream& rng) {
  Vector raw(kN), g(kN);
  for (std::size_t i = 0; i < kN; ++i) {
    raw[i] = rng.uniform(0.1, 1.0);
    g[i] = rng.uniform(-1.0, 1.0);
  }
  const InstanceWeights iw = normalized_instance_weights(raw);
  acc.merge(iw.backward(g),
            finite_diff_gradient(
                [&](const Vector& r) {
                  const auto w = normalized_instance_weights(r);
                  return dot(w.weights.values, g);
                },
                raw, kH),
            "arw-norm.raw");
}

void check_aps(Accumulator& acc, RngStream& rng, bool cosexp) {
  const Matrix proj = random_matrix(kN, 4, rng, 0.2, 1.2);
  Vector g(kN);
  for (double& v : g) v = rng.uniform(-1.0, 1.0);
  const ApsWeights aw =
      cosexp ? aps_weights_cosine_exp(proj) : aps_weights_inner_product(proj);
  acc.merge(flatten(aw.backward(g)),
            finite_diff_gradient(
                [&](const Vector& flat) {
                  const Matrix p = unflatten(flat, kN, 4);
                  const auto w = cosexp ? aps_weights_cosine_exp(p)
                                        : aps_weights_inner_product(p);
                  return dot(w.weights.values, g);
                },
                flatten(proj), kH),
            cosexp ? "aps-cosexp.proj" : "aps-inner.proj");
}

void check_pl(Accumulator& acc, RngStream& rng) {
  const std::size_t k = 4;
  const Matrix outputs = random_matrix(kN, k, rng, 0.05, 0.95);
  PseudoLabels labels;
  labels.k = k;
  for (std::size_t j = 0; j < kN; ++j)
    labels.labels.push_back(static_cast<int>(rng.below(k)));
  Vector g(kN);
  for (double& v : g) v = rng.uniform(-1.0, 1.0);

  const PlWeights pw = pl_weights(outputs, labels);
  acc.merge(flatten(pw.backward(g)),
            finite_diff_gradient(
                [&](const Vector& flat) {
                  const auto w = pl_weights(unflatten(flat, kN, k), labels);
                  return dot(w.weights().values, g);
                },
                flatten(outputs), kH),
            "pl.outputs");
}

void check_pw_weights(Accumulator& acc, RngStream& rng) {
  SpeakerWeights sw;
  for (std::size_t j = 0; j < kN; ++j) sw.values.push_back(rng.uniform(1.0, 3.0));
  const Matrix g = random_matrix(kN, kN, rng);
  const auto objective = [&](const Vector& lam) {
    return dot(pw_weights({lam}).values.data(), g.data());
  };
  acc.merge(pw_weights_backward(g), finite_diff_gradient(objective, sw.values, kH),
            "pw-weights.lambda");
}

}  // namespace

std::vector<std::string> gradcheck_components() {
  return {"mlp",   "similarity", "ap", "weighted",  "pw-sim",    "pw-lik",
          "label", "arw-norm",   "aps-inner", "aps-cosexp", "pl", "pw-weights"};
}

std::vector<GradCheckResult> run_gradcheck(
    const std::vector<std::string>& components, std::uint64_t seed, int seeds,
    double tolerance) {
  const std::vector<std::string> wanted =
      components.empty() ? gradcheck_components() : components;
  std::vector<GradCheckResult> results;
  for (const std::string& name : wanted) {
    Accumulator acc;
    for (int s = 0; s < seeds; ++s) {
      RngStream rng(seed + static_cast<std::uint64_t>(s), 0x6C);
      if (name == "mlp")
        check_mlp(acc, rng);
      else if (name == "similarity")
        check_similarity(acc, rng);
      else if (name == "ap")
        check_ap(acc, rng);
      else if (name == "weighted")
        check_weighted(acc, rng);
      else if (name == "pw-sim")
        check_pairwise(acc, rng, pw_loss_scaled_similarity, "pw-sim");
      else if (name == "pw-lik")
        check_pairwise(acc, rng, pw_loss_scaled_likelihood, "pw-lik");
      else if (name == "label")
        check_label(acc, rng);
      else if (name == "arw-norm")
        check_arw_norm(acc, rng);
      else if (name == "aps-inner")
        check_aps(acc, rng, false);
      else if (name == "aps-cosexp")
        check_aps(acc, rng, true);
      else if (name == "pl")
        check_pl(acc, rng);
      else if (name == "pw-weights")
        check_pw_weights(acc, rng);
      else
        throw DataError("gradcheck: unknown component '" + name + "'");
    }
    results.push_back(
        {name, acc.worst, acc.coord, acc.worst <= tolerance});
  }
  return results;
}

}  // namespace arw
