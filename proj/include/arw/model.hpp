#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arw/numerics.hpp"

namespace arw {

enum class Activation : std::uint8_t { Identity = 0, Relu = 1, Sigmoid = 2 };

Activation activation_from_code(std::uint8_t code);

struct Layer {
  Matrix weight;  // in_dim x out_dim
  Vector bias;    // out_dim
  Activation act = Activation::Identity;
};

struct MlpParams {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.front().weight.rows(); }
  std::size_t output_dim() const { return layers.back().weight.cols(); }
  std::size_t param_count() const;
};

// Weights ~ uniform(+-sqrt(6/(fan_in+fan_out))), biases zero.
// `sizes` has one entry per interface, so n sizes make n-1 layers.
MlpParams init_mlp(const std::vector<std::size_t>& sizes,
                   const std::vector<Activation>& acts, RngStream& rng);

struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> pre_acts;
  std::vector<Matrix> acts;
};

Matrix mlp_forward(const MlpParams& params, const Matrix& inputs,
                   ForwardTrace* trace = nullptr);

struct LayerGrads {
  Matrix weight;
  Vector bias;
};

struct MlpGrads {
  std::vector<LayerGrads> layers;
};

// Reverse-mode gradients of sum(outputs * output_grads) w.r.t. every
// parameter, and optionally w.r.t. the inputs.
MlpGrads mlp_backward(const MlpParams& params, const ForwardTrace& trace,
                      const Matrix& output_grads, Matrix* input_grads = nullptr);

// Rescales all gradients in place so the global l2 norm is at most
// max_norm; returns the pre-clip norm.
double clip_grads(MlpGrads& grads, double max_norm);

enum class Direction { Minimize, Maximize };
enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment accumulators for one flat parameter tensor.
struct MomentSlot {
  Vector m;
  Vector v;
};

struct OptimizerState {
  OptimizerConfig cfg;
  long step_count = 0;
  std::vector<MomentSlot> slots;  // two per layer: weight then bias
};

OptimizerState make_optimizer_state(const MlpParams& params,
                                    const OptimizerConfig& cfg = {});

// direction=Maximize is exactly a Minimize step on negated gradients.
// NaN gradients raise NumericError.
void optimizer_step(OptimizerState& state, MlpParams& params, const MlpGrads& grads,
                    Direction direction, double lr);

// Flat variant used for the (w, b) similarity scale parameters.
struct FlatOptimizerState {
  OptimizerConfig cfg;
  long step_count = 0;
  MomentSlot slot;
};

FlatOptimizerState make_flat_optimizer_state(std::size_t n,
                                             const OptimizerConfig& cfg = {});
void flat_optimizer_step(FlatOptimizerState& state, Vector& params,
                         const Vector& grads, Direction direction, double lr);

struct LrSchedule {
  double base_lr = 0.001;
  double decay_factor = 0.95;
  int decay_interval_epochs = 3;
};

double learning_rate_at(const LrSchedule& schedule, int epoch);

// Versioned binary checkpoint: magic "ARWM", u16 version, u32 layer count,
// then per layer u32 in, u32 out, u8 activation code, row-major f64
// little-endian weights, f64 biases. Round-trip is bit-exact.
void save_checkpoint(const std::string& path, const MlpParams& params);
MlpParams load_checkpoint(const std::string& path);

}  // namespace arw
