#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "seqoed/core.hpp"
#include "seqoed/rng.hpp"

namespace seqoed::nnet {

/// Dense network shape: input, hidden..., output. Hidden layers use ReLU,
/// the output layer is affine.
struct Arch {
  std::vector<int> layer_sizes;

  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }
  int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }
  void validate() const;
  bool operator==(const Arch&) const = default;
};

Arch make_arch(int input, const std::vector<int>& hidden, int output);

class Mlp;

/// Gradient (or any tangent) with the same shapes as a network's parameters.
struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static Gradients zeros_like(const Mlp& net);
  double squared_norm() const;
  double norm() const { return std::sqrt(squared_norm()); }
  bool all_finite() const;
  Eigen::VectorXd flatten() const;
  Gradients& operator+=(const Gradients& other);
  Gradients& operator*=(double s);
};

/// Network parameters plus Adam moment accumulators.
class Mlp {
 public:
  Mlp() = default;
  /// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Mlp(Arch arch, Rng& rng);
  static Mlp zeros(Arch arch);

  const Arch& arch() const { return arch_; }
  int input_size() const { return arch_.input_size(); }
  int output_size() const { return arch_.output_size(); }
  int num_layers() const { return arch_.num_layers(); }
  std::size_t parameter_count() const;

  /// Batched forward pass; one sample per column.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;
  Vector forward(const Vector& input) const;

  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);
  void reset_optimizer();

  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  // Adam state.
  std::vector<Eigen::MatrixXd> m_weights, v_weights;
  std::vector<Eigen::VectorXd> m_biases, v_biases;
  long adam_steps = 0;

 private:
  Arch arch_;
};

/// Activations of every layer for one batch, kept for the backward pass.
struct ForwardPass {
  std::vector<Eigen::MatrixXd> activations;  // [0] = input, back() = output
  const Eigen::MatrixXd& output() const { return activations.back(); }
};

ForwardPass forward_pass(const Mlp& net, const Eigen::MatrixXd& inputs);

struct Backprop {
  Gradients params;
  Eigen::MatrixXd input;  // d(sum upstream . output)/d input, one column per sample
};

/// Reverse-mode gradients of sum_columns upstream^T * output, with respect to
/// the parameters (summed over the batch) and to each input column.
Backprop backward(const Mlp& net, const ForwardPass& pass, const Eigen::MatrixXd& upstream);

Vector mlp_forward(const Mlp& net, const Vector& x);
Backprop mlp_grad(const Mlp& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& upstream);

enum class Sense { minimize, maximize };

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam step. Throws NonFiniteGradient.
void adam_step(Mlp& net, const Gradients& grads, double lr, Sense sense = Sense::minimize,
               const AdamConfig& config = {});

/// Plain gradient step: w -= lr g (minimize) or w += lr g (maximize).
void sgd_step(Mlp& net, const Gradients& grads, double lr, Sense sense = Sense::minimize);

/// Input-layer layout for the stage-indexed networks:
///   [ e_{k+1} | d_0 .. d_{k-1}, 0.. | y_0 .. y_{k-1}, 0.. | d ]
/// The history block has room for N-1 stages; the trailing d block is
/// present only for the Q-network. In batch mode the history block is dropped.
struct EncoderSpec {
  int horizon = 1;
  int design_dim = 1;
  int obs_dim = 1;
  bool include_design = false;
  bool batch_mode = false;

  int history_length() const;
  int length() const;
  bool operator==(const EncoderSpec&) const = default;
};

/// Writes the encoding into `out` (length spec.length()). `design` must be
/// given exactly when spec.include_design is set.
void encode_into(int k, const History& history, const Vector* design, const EncoderSpec& spec,
                 Eigen::Ref<Eigen::VectorXd> out);

Vector encode_policy_input(int k, const History& history, const EncoderSpec& spec);
Vector encode_q_input(int k, const History& history, const Vector& design, const EncoderSpec& spec);

/// Network checkpoint: JSON document
///   { "format": "seqoed-mlp", "version": 1, "role": ..., "activation": "relu",
///     "layer_sizes": [...], "encoder": {...},
///     "weights": [[row-major layer 0], ...], "biases": [[...], ...] }
/// Doubles are written with round-trip precision.
struct Checkpoint {
  std::string role;
  Mlp net;
  EncoderSpec encoder;
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace seqoed::nnet
