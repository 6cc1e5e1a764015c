#include "arw/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace arw {

Activation activation_from_code(std::uint8_t code) {
  switch (code) {
    case 0: return Activation::Identity;
    case 1: return Activation::Relu;
    case 2: return Activation::Sigmoid;
    default:
      throw DataError("unknown activation code " + std::to_string(code));
  }
}

std::size_t MlpParams::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

MlpParams init_mlp(const std::vector<std::size_t>& sizes,
                   const std::vector<Activation>& acts, RngStream& rng) {
  if (sizes.size() < 2)
    throw DimensionError("init_mlp: need at least one layer (two sizes)");
  if (acts.size() != sizes.size() - 1)
    throw DimensionError("init_mlp: activation count must equal layer count");
  for (std::size_t s : sizes)
    if (s == 0) throw DimensionError("init_mlp: layer sizes must be positive");

  MlpParams params;
  params.layers.resize(sizes.size() - 1);
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    Layer& l = params.layers[i];
    const std::size_t fan_in = sizes[i], fan_out = sizes[i + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    l.weight = Matrix(fan_in, fan_out);
    for (double& w : l.weight.data()) w = rng.uniform(-bound, bound);
    l.bias = Vector(fan_out, 0.0);
    l.act = acts[i];
  }
  return params;
}

namespace {

double activate(Activation act, double z) {
  switch (act) {
    case Activation::Identity: return z;
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
  }
  return z;
}

// derivative in terms of the pre-activation z and activation a
double activate_grad(Activation act, double z, double a) {
  switch (act) {
    case Activation::Identity: return 1.0;
    case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Sigmoid: return a * (1.0 - a);
  }
  return 1.0;
}

}  // namespace

Matrix mlp_forward(const MlpParams& params, const Matrix& inputs,
                   ForwardTrace* trace) {
  if (params.layers.empty()) throw DimensionError("mlp_forward: empty network");
  if (inputs.cols() != params.input_dim())
    throw DimensionError("mlp_forward: input dim " + std::to_string(inputs.cols()) +
                         " vs expected " + std::to_string(params.input_dim()));
  if (trace) {
    trace->input = inputs;
    trace->pre_acts.clear();
    trace->acts.clear();
  }
  Matrix x = inputs;
  for (const Layer& l : params.layers) {
    Matrix z = matmul(x, l.weight);
    for (std::size_t r = 0; r < z.rows(); ++r)
      for (std::size_t c = 0; c < z.cols(); ++c) z(r, c) += l.bias[c];
    Matrix a = z;
    for (double& v : a.data()) v = activate(l.act, v);
    if (trace) {
      trace->pre_acts.push_back(z);
      trace->acts.push_back(a);
    }
    x = std::move(a);
  }
  return x;
}

MlpGrads mlp_backward(const MlpParams& params, const ForwardTrace& trace,
                      const Matrix& output_grads, Matrix* input_grads) {
  const std::size_t nl = params.layers.size();
  if (trace.pre_acts.size() != nl || trace.acts.size() != nl)
    throw DimensionError("mlp_backward: trace does not match network");
  if (!output_grads.same_shape(trace.acts.back()))
    throw DimensionError("mlp_backward: output_grads shape mismatch");

  MlpGrads grads;
  grads.layers.resize(nl);
  Matrix delta = output_grads;
  for (std::size_t li = nl; li-- > 0;) {
    const Layer& l = params.layers[li];
    const Matrix& z = trace.pre_acts[li];
    const Matrix& a = trace.acts[li];
    // through the activation
    for (std::size_t r = 0; r < delta.rows(); ++r)
      for (std::size_t c = 0; c < delta.cols(); ++c)
        delta(r, c) *= activate_grad(l.act, z(r, c), a(r, c));

    const Matrix& layer_in = li == 0 ? trace.input : trace.acts[li - 1];
    grads.layers[li].weight = matmul_transa(layer_in, delta);
    grads.layers[li].bias = Vector(l.bias.size(), 0.0);
    for (std::size_t r = 0; r < delta.rows(); ++r)
      for (std::size_t c = 0; c < delta.cols(); ++c)
        grads.layers[li].bias[c] += delta(r, c);

    if (li > 0 || input_grads) delta = matmul_transb(delta, l.weight);
    if (li == 0 && input_grads) *input_grads = std::move(delta);
  }
  return grads;
}

double clip_grads(MlpGrads& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& l : grads.layers) {
    for (double g : l.weight.data()) sq += g * g;
    for (double g : l.bias) sq += g * g;
  }
  const double gnorm = std::sqrt(sq);
  if (gnorm > max_norm && gnorm > 0.0) {
    const double scale = max_norm / gnorm;
    for (auto& l : grads.layers) {
      for (double& g : l.weight.data()) g *= scale;
      for (double& g : l.bias) g *= scale;
    }
  }
  return gnorm;
}

namespace {

void apply_update(const OptimizerConfig& cfg, long t, MomentSlot& slot, double* p,
                  const double* g, std::size_t n, double sign, double lr) {
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = sign * g[i];
    if (std::isnan(gi)) throw NumericError("optimizer_step: NaN gradient");
    if (cfg.kind == OptimizerKind::Sgd) {
      p[i] -= lr * gi;
      continue;
    }
    slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * gi;
    slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * gi * gi;
    const double mhat = slot.m[i] / (1.0 - std::pow(cfg.beta1, t));
    const double vhat = slot.v[i] / (1.0 - std::pow(cfg.beta2, t));
    p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

}  // namespace

OptimizerState make_optimizer_state(const MlpParams& params,
                                    const OptimizerConfig& cfg) {
  OptimizerState state;
  state.cfg = cfg;
  for (const auto& l : params.layers) {
    state.slots.push_back({Vector(l.weight.size(), 0.0), Vector(l.weight.size(), 0.0)});
    state.slots.push_back({Vector(l.bias.size(), 0.0), Vector(l.bias.size(), 0.0)});
  }
  return state;
}

void optimizer_step(OptimizerState& state, MlpParams& params, const MlpGrads& grads,
                    Direction direction, double lr) {
  if (lr < 0.0) throw DimensionError("optimizer_step: lr must be nonnegative");
  if (grads.layers.size() != params.layers.size())
    throw DimensionError("optimizer_step: gradient/parameter layer mismatch");
  const double sign = direction == Direction::Minimize ? 1.0 : -1.0;
  ++state.step_count;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    Layer& l = params.layers[i];
    const LayerGrads& g = grads.layers[i];
    if (!l.weight.same_shape(g.weight) || l.bias.size() != g.bias.size())
      throw DimensionError("optimizer_step: gradient shape mismatch at layer " +
                           std::to_string(i));
    apply_update(state.cfg, state.step_count, state.slots[2 * i],
                 l.weight.data().data(), g.weight.data().data(), l.weight.size(),
                 sign, lr);
    apply_update(state.cfg, state.step_count, state.slots[2 * i + 1], l.bias.data(),
                 g.bias.data(), l.bias.size(), sign, lr);
  }
}

FlatOptimizerState make_flat_optimizer_state(std::size_t n,
                                             const OptimizerConfig& cfg) {
  return {cfg, 0, {Vector(n, 0.0), Vector(n, 0.0)}};
}

void flat_optimizer_step(FlatOptimizerState& state, Vector& params,
                         const Vector& grads, Direction direction, double lr) {
  if (params.size() != grads.size())
    throw DimensionError("flat_optimizer_step: shape mismatch");
  ++state.step_count;
  apply_update(state.cfg, state.step_count, state.slot, params.data(), grads.data(),
               params.size(), direction == Direction::Minimize ? 1.0 : -1.0, lr);
}

double learning_rate_at(const LrSchedule& schedule, int epoch) {
  if (epoch < 0) throw DimensionError("learning_rate_at: negative epoch");
  return schedule.base_lr *
         std::pow(schedule.decay_factor, epoch / schedule.decay_interval_epochs);
}

namespace {

constexpr char kMagic[4] = {'A', 'R', 'W', 'M'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const MlpParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<std::uint32_t>(params.layers.size()));
  for (const Layer& l : params.layers) {
    write_pod(os, static_cast<std::uint32_t>(l.weight.rows()));
    write_pod(os, static_cast<std::uint32_t>(l.weight.cols()));
    write_pod(os, static_cast<std::uint8_t>(l.act));
    os.write(reinterpret_cast<const char*>(l.weight.data().data()),
             static_cast<std::streamsize>(l.weight.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(l.bias.data()),
             static_cast<std::streamsize>(l.bias.size() * sizeof(double)));
  }
  if (!os) throw DataError("checkpoint: write failed for " + path);
}

MlpParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  const auto version = read_pod<std::uint16_t>(is);
  if (version != kVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const auto n_layers = read_pod<std::uint32_t>(is);
  MlpParams params;
  params.layers.resize(n_layers);
  std::size_t prev_out = 0;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    Layer& l = params.layers[i];
    const auto in_dim = read_pod<std::uint32_t>(is);
    const auto out_dim = read_pod<std::uint32_t>(is);
    if (in_dim == 0 || out_dim == 0)
      throw DataError("checkpoint: zero layer dimension");
    if (i > 0 && in_dim != prev_out)
      throw DataError("checkpoint: layer dimensions do not chain");
    prev_out = out_dim;
    l.act = activation_from_code(read_pod<std::uint8_t>(is));
    l.weight = Matrix(in_dim, out_dim);
    is.read(reinterpret_cast<char*>(l.weight.data().data()),
            static_cast<std::streamsize>(l.weight.size() * sizeof(double)));
    l.bias = Vector(out_dim, 0.0);
    is.read(reinterpret_cast<char*>(l.bias.data()),
            static_cast<std::streamsize>(out_dim * sizeof(double)));
    if (!is) throw DataError("checkpoint: truncated file");
  }
  return params;
}

}  // namespace arw
