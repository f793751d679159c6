#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "edufed/data_model.hpp"
#include "edufed/model_params.hpp"

namespace edufed {

namespace layer_names {
inline constexpr std::string_view kGruInput = "gru.input_weights";          // d x 3k
inline constexpr std::string_view kGruRecurrent = "gru.recurrent_weights";  // 3k x k
inline constexpr std::string_view kGruBias = "gru.biases";                  // 3k
inline constexpr std::string_view kAttnW = "attn.W_alpha";                  // k x k
inline constexpr std::string_view kAttnP = "attn.p";                        // k
inline constexpr std::string_view kHeadW = "head.W_l";                      // k x 2
inline constexpr std::string_view kHeadB = "head.b_l";                      // 2
inline constexpr std::string_view kPretrainW = "pretrain.W_p";              // k x d
inline constexpr std::string_view kPretrainB = "pretrain.b_p";              // d
}  // namespace layer_names

inline constexpr std::size_t kDefaultHiddenDim = 48;

struct ModelShape {
  std::size_t input_dim = 0;  // n + 7
  std::size_t hidden_dim = kDefaultHiddenDim;
};

/// All-zero attention-GRU parameter set with the fixed layer layout.
ModelParams make_attn_gru(const ModelShape& shape);
/// Glorot-uniform weights, zero biases.
void init_glorot(ModelParams& params, std::uint64_t seed);
/// Reads (d, k) back from a parameter set, validating every layer shape.
ModelShape shape_of(const ModelParams& params);

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// GRU cell, gates stacked as [update z | reset r | candidate n]:
//   z = sigmoid(Wz x + bz + Uz h),  r = sigmoid(Wr x + br + Ur h)
//   n = tanh(Wn x + bn + Un (r * h))
//   h' = (1 - z) * h + z * n,       h(0) = 0
std::vector<Vec> gru_forward(const ModelParams& params, std::span<const EncodedActivity> sequence);

struct AttentionResult {
  Vec pooled;
  Vec weights;
  Vec energies;
};

/// e(t) = p . tanh(W_alpha h(t)),  alpha = softmax(e),  pooled = sum alpha(t) h(t)
AttentionResult attention_pool(const ModelParams& params, std::span<const Vec> states);

/// softmax(W_l^T pooled + b_l). Slot 0 is "pass".
std::array<double, 2> predict_outcome(const ModelParams& params, const Vec& pooled);

inline constexpr double kProbClamp = 1e-12;

/// Sum over students of -[y log y' + (1 - y) log(1 - y')] with one-hot y
/// (label 1 = pass = slot 0). Probabilities are clamped to [1e-12, 1 - 1e-12].
double bce_loss(std::span<const std::array<double, 2>> predictions, std::span<const int> labels);
double bce_loss(const std::array<double, 2>& prediction, int label);

struct DropoutSpec {
  double rate = 0.0;
  std::uint64_t seed = 0;
};

/// Everything the backward pass needs.
struct ForwardTrace {
  std::uint64_t params_fingerprint = 0;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::vector<std::array<int, 2>> active;  // set input bits per step (-1 = none)
  Mat hidden;     // k x (L + 1); column 0 is h(0) = 0
  Mat update;     // k x L
  Mat reset;      // k x L
  Mat candidate;  // k x L
  Mat attn_tanh;  // k x L
  Vec energies;
  Vec weights;
  Vec pooled;
  Vec dropout_scale;  // k; mask / (1 - rate), all ones without dropout
  Vec head_input;     // pooled * dropout_scale
  std::array<double, 2> probabilities{0.5, 0.5};

  std::size_t length() const { return active.size(); }
  Vec state(std::size_t t) const { return hidden.col(static_cast<Eigen::Index>(t + 1)); }
};

/// GRU + attention + outcome head. Dropout (inverted) is applied to the pooled
/// representation only when `dropout.rate > 0`.
ForwardTrace forward(const ModelParams& params, std::span<const EncodedActivity> sequence,
                     const DropoutSpec& dropout = {});

/// Pooled representation with dropout disabled (embedding export, inference).
Vec embed(const ModelParams& params, std::span<const EncodedActivity> sequence);
double predict_pass(const ModelParams& params, std::span<const EncodedActivity> sequence);

/// Exact gradient of the per-student loss through head, attention and GRU
/// (backpropagation through time). Accumulates into `grads`; returns the loss.
double backward_into(const ForwardTrace& trace, int label, const ModelParams& params,
                     Gradients& grads);
Gradients backward(const ForwardTrace& trace, int label, const ModelParams& params);

/// Backpropagates a gradient w.r.t. the pooled representation into the GRU
/// and attention layers. Shared by the outcome and pretraining heads.
void trunk_backward(const ForwardTrace& trace, const Vec& d_pooled, const ModelParams& params,
                    Gradients& grads);

}  // namespace edufed
