#include "edufed/attn_gru.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "edufed/errors.hpp"
#include "edufed/rng.hpp"

namespace edufed {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;
using ConstVecMap = Eigen::Map<const Vec>;
using VecMap = Eigen::Map<Vec>;

namespace ln = layer_names;

ConstRowMap row_map(const ModelParams& p, std::string_view name, std::size_t rows,
                    std::size_t cols) {
  return ConstRowMap(p.values(name).data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

RowMap row_map(ModelParams& p, std::string_view name, std::size_t rows, std::size_t cols) {
  return RowMap(p.values(name).data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

ConstVecMap vec_map(const ModelParams& p, std::string_view name) {
  auto v = p.values(name);
  return ConstVecMap(v.data(), static_cast<Eigen::Index>(v.size()));
}

VecMap vec_map(ModelParams& p, std::string_view name) {
  auto v = p.values(name);
  return VecMap(v.data(), static_cast<Eigen::Index>(v.size()));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Cheap staleness check: shapes plus a strided sample of values.
std::uint64_t quick_fingerprint(const ModelParams& p) {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (const auto& l : p.layers()) {
    h = splitmix64(h ^ l.values.size());
    const std::size_t n = l.values.size();
    const std::size_t stride = std::max<std::size_t>(1, n / 16);
    for (std::size_t i = 0; i < n; i += stride) {
      h = splitmix64(h ^ std::bit_cast<std::uint64_t>(l.values[i]));
    }
    if (n > 0) h = splitmix64(h ^ std::bit_cast<std::uint64_t>(l.values[n - 1]));
  }
  return h;
}

void check_sequence(const ModelShape& shape, std::span<const EncodedActivity> sequence) {
  if (sequence.empty()) throw ShapeError("activity sequence is empty");
  for (const auto& a : sequence) {
    if (static_cast<std::size_t>(a.width()) != shape.input_dim) {
      throw ShapeError("activity width " + std::to_string(a.width()) +
                       " does not match model input width " + std::to_string(shape.input_dim));
    }
  }
}

template <typename Derived>
void softmax_inplace(Eigen::MatrixBase<Derived>& v) {
  const double m = v.maxCoeff();
  v = (v.array() - m).exp().matrix();
  v /= v.sum();
}

}  // namespace

ModelParams make_attn_gru(const ModelShape& shape) {
  const std::size_t d = shape.input_dim;
  const std::size_t k = shape.hidden_dim;
  if (d == 0 || k == 0) throw ShapeError("model dimensions must be positive");
  ModelParams p;
  p.add_layer(std::string(ln::kGruInput), {d, 3 * k});
  p.add_layer(std::string(ln::kGruRecurrent), {3 * k, k});
  p.add_layer(std::string(ln::kGruBias), {3 * k});
  p.add_layer(std::string(ln::kAttnW), {k, k});
  p.add_layer(std::string(ln::kAttnP), {k});
  p.add_layer(std::string(ln::kHeadW), {k, 2});
  p.add_layer(std::string(ln::kHeadB), {2});
  p.add_layer(std::string(ln::kPretrainW), {k, d});
  p.add_layer(std::string(ln::kPretrainB), {d});
  return p;
}

void init_glorot(ModelParams& params, std::uint64_t seed) {
  const ModelShape shape = shape_of(params);
  const std::size_t d = shape.input_dim;
  const std::size_t k = shape.hidden_dim;
  struct Fan {
    std::string_view name;
    std::size_t fan_in;
    std::size_t fan_out;
  };
  const Fan fans[] = {
      {ln::kGruInput, d, 3 * k}, {ln::kGruRecurrent, k, 3 * k}, {ln::kAttnW, k, k},
      {ln::kAttnP, k, 1},        {ln::kHeadW, k, 2},            {ln::kPretrainW, k, d},
  };
  std::uint64_t stream = 0;
  for (const Fan& f : fans) {
    Rng rng = make_rng({seed, 0x1a17ULL, stream++});
    const double limit = std::sqrt(6.0 / static_cast<double>(f.fan_in + f.fan_out));
    for (double& v : params.values(f.name)) v = (2.0 * uniform01(rng) - 1.0) * limit;
  }
  for (auto name : {ln::kGruBias, ln::kHeadB, ln::kPretrainB}) {
    for (double& v : params.values(name)) v = 0.0;
  }
}

ModelShape shape_of(const ModelParams& params) {
  if (!params.find(ln::kGruInput) || !params.find(ln::kAttnW)) {
    throw ShapeError("parameter set is not an attention-GRU model");
  }
  const auto& in = params.layer(ln::kGruInput).shape;
  if (in.size() != 2 || in[1] % 3 != 0) throw ShapeError("bad gru.input_weights shape");
  ModelShape s{in[0], in[1] / 3};
  const ModelParams expected = make_attn_gru(s);
  if (!expected.congruent(params)) {
    throw ShapeError("parameter layers do not match the attention-GRU layout for d=" +
                     std::to_string(s.input_dim) + ", k=" + std::to_string(s.hidden_dim));
  }
  return s;
}

namespace {

// Runs the recurrence, filling the trace's GRU part.
void run_gru(const ModelParams& params, const ModelShape& shape,
             std::span<const EncodedActivity> sequence, ForwardTrace& tr) {
  const auto k = static_cast<Eigen::Index>(shape.hidden_dim);
  const auto L = static_cast<Eigen::Index>(sequence.size());
  const ConstRowMap W = row_map(params, ln::kGruInput, shape.input_dim, 3 * shape.hidden_dim);
  const ConstRowMap U = row_map(params, ln::kGruRecurrent, 3 * shape.hidden_dim, shape.hidden_dim);
  const ConstVecMap b = vec_map(params, ln::kGruBias);

  tr.active.resize(sequence.size());
  tr.hidden.setZero(k, L + 1);
  tr.update.resize(k, L);
  tr.reset.resize(k, L);
  tr.candidate.resize(k, L);

  Vec pre(3 * k);
  Vec rh(k);
  for (Eigen::Index t = 0; t < L; ++t) {
    const EncodedActivity& a = sequence[static_cast<std::size_t>(t)];
    auto& act = tr.active[static_cast<std::size_t>(t)];
    act = {-1, -1};
    pre = b;
    for (int i = 0; i < a.num_active(); ++i) {
      act[static_cast<std::size_t>(i)] = a.active(i);
      pre += W.row(a.active(i)).transpose();
    }
    const auto h_prev = tr.hidden.col(t);
    pre.head(2 * k).noalias() += U.topRows(2 * k) * h_prev;
    for (Eigen::Index i = 0; i < k; ++i) {
      tr.update(i, t) = sigmoid(pre(i));
      tr.reset(i, t) = sigmoid(pre(k + i));
    }
    rh = tr.reset.col(t).cwiseProduct(h_prev);
    pre.tail(k).noalias() += U.bottomRows(k) * rh;
    tr.candidate.col(t) = pre.tail(k).array().tanh().matrix();
    tr.hidden.col(t + 1) = h_prev + tr.update.col(t).cwiseProduct(tr.candidate.col(t) - h_prev);
  }
}

void run_attention(const ModelParams& params, const ModelShape& shape, ForwardTrace& tr) {
  const auto k = static_cast<Eigen::Index>(shape.hidden_dim);
  const Eigen::Index L = tr.hidden.cols() - 1;
  const ConstRowMap Wa = row_map(params, ln::kAttnW, shape.hidden_dim, shape.hidden_dim);
  const ConstVecMap p = vec_map(params, ln::kAttnP);
  const auto states = tr.hidden.rightCols(L);
  tr.attn_tanh.noalias() = Wa * states;
  tr.attn_tanh = tr.attn_tanh.array().tanh().matrix();
  tr.energies.noalias() = tr.attn_tanh.transpose() * p;
  tr.weights = tr.energies;
  softmax_inplace(tr.weights);
  tr.pooled.noalias() = states * tr.weights;
  (void)k;
}

std::array<double, 2> head_probabilities(const ModelParams& params, const Vec& x) {
  const auto k = static_cast<std::size_t>(x.size());
  const ConstRowMap Wl = row_map(params, ln::kHeadW, k, 2);
  const ConstVecMap bl = vec_map(params, ln::kHeadB);
  Eigen::Vector2d z = Wl.transpose() * x + bl;
  softmax_inplace(z);
  return {z(0), z(1)};
}

}  // namespace

std::vector<Vec> gru_forward(const ModelParams& params, std::span<const EncodedActivity> sequence) {
  const ModelShape shape = shape_of(params);
  check_sequence(shape, sequence);
  ForwardTrace tr;
  run_gru(params, shape, sequence, tr);
  std::vector<Vec> states;
  states.reserve(sequence.size());
  for (std::size_t t = 0; t < sequence.size(); ++t) states.push_back(tr.state(t));
  return states;
}

AttentionResult attention_pool(const ModelParams& params, std::span<const Vec> states) {
  const ModelShape shape = shape_of(params);
  if (states.empty()) throw ShapeError("attention over an empty state list");
  ForwardTrace tr;
  const auto k = static_cast<Eigen::Index>(shape.hidden_dim);
  tr.hidden.setZero(k, static_cast<Eigen::Index>(states.size()) + 1);
  for (std::size_t t = 0; t < states.size(); ++t) {
    if (states[t].size() != k) throw ShapeError("state width does not match hidden dimension");
    tr.hidden.col(static_cast<Eigen::Index>(t) + 1) = states[t];
  }
  run_attention(params, shape, tr);
  return AttentionResult{tr.pooled, tr.weights, tr.energies};
}

std::array<double, 2> predict_outcome(const ModelParams& params, const Vec& pooled) {
  const ModelShape shape = shape_of(params);
  if (static_cast<std::size_t>(pooled.size()) != shape.hidden_dim) {
    throw ShapeError("pooled width does not match hidden dimension");
  }
  return head_probabilities(params, pooled);
}

double bce_loss(const std::array<double, 2>& prediction, int label) {
  const double y[2] = {label == 1 ? 1.0 : 0.0, label == 1 ? 0.0 : 1.0};
  double loss = 0.0;
  for (int c = 0; c < 2; ++c) {
    const double p = std::clamp(prediction[static_cast<std::size_t>(c)], kProbClamp, 1.0 - kProbClamp);
    loss -= y[c] * std::log(p) + (1.0 - y[c]) * std::log(1.0 - p);
  }
  return loss;
}

double bce_loss(std::span<const std::array<double, 2>> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("prediction and label counts differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) total += bce_loss(predictions[i], labels[i]);
  return total;
}

ForwardTrace forward(const ModelParams& params, std::span<const EncodedActivity> sequence,
                     const DropoutSpec& dropout) {
  const ModelShape shape = shape_of(params);
  check_sequence(shape, sequence);
  ForwardTrace tr;
  tr.params_fingerprint = quick_fingerprint(params);
  tr.input_dim = shape.input_dim;
  tr.hidden_dim = shape.hidden_dim;
  run_gru(params, shape, sequence, tr);
  run_attention(params, shape, tr);

  const auto k = static_cast<Eigen::Index>(shape.hidden_dim);
  tr.dropout_scale = Vec::Ones(k);
  if (dropout.rate > 0.0) {
    if (dropout.rate >= 1.0) throw DomainError("dropout rate must be below 1");
    Rng rng(dropout.seed);
    const double keep_scale = 1.0 / (1.0 - dropout.rate);
    for (Eigen::Index i = 0; i < k; ++i) {
      tr.dropout_scale(i) = uniform01(rng) < dropout.rate ? 0.0 : keep_scale;
    }
  }
  tr.head_input = tr.pooled.cwiseProduct(tr.dropout_scale);
  tr.probabilities = head_probabilities(params, tr.head_input);
  return tr;
}

Vec embed(const ModelParams& params, std::span<const EncodedActivity> sequence) {
  return forward(params, sequence).pooled;
}

double predict_pass(const ModelParams& params, std::span<const EncodedActivity> sequence) {
  return forward(params, sequence).probabilities[0];
}

void trunk_backward(const ForwardTrace& tr, const Vec& d_pooled, const ModelParams& params,
                    Gradients& grads) {
  const std::size_t ks = tr.hidden_dim;
  const std::size_t ds = tr.input_dim;
  const auto k = static_cast<Eigen::Index>(ks);
  const auto L = static_cast<Eigen::Index>(tr.length());

  // Attention.
  const ConstRowMap Wa = row_map(params, ln::kAttnW, ks, ks);
  const ConstVecMap p = vec_map(params, ln::kAttnP);
  const auto states = tr.hidden.rightCols(L);
  Mat dH = d_pooled * tr.weights.transpose();  // k x L
  const Vec d_alpha = states.transpose() * d_pooled;
  const double mean = tr.weights.dot(d_alpha);
  const Vec d_energy = tr.weights.cwiseProduct((d_alpha.array() - mean).matrix());
  vec_map(grads, ln::kAttnP).noalias() += tr.attn_tanh * d_energy;
  Mat d_attn_pre = p * d_energy.transpose();
  d_attn_pre.array() *= (1.0 - tr.attn_tanh.array().square());
  row_map(grads, ln::kAttnW, ks, ks).noalias() += d_attn_pre * states.transpose();
  dH.noalias() += Wa.transpose() * d_attn_pre;

  // Backpropagation through time.
  const ConstRowMap U = row_map(params, ln::kGruRecurrent, 3 * ks, ks);
  Mat d_gates(3 * k, L);
  Mat reset_h(k, L);
  Vec dh = Vec::Zero(k);
  Vec tmp(k);
  for (Eigen::Index t = L - 1; t >= 0; --t) {
    dh += dH.col(t);
    const auto h_prev = tr.hidden.col(t);
    const auto z = tr.update.col(t);
    const auto r = tr.reset.col(t);
    const auto n = tr.candidate.col(t);
    auto dz_pre = d_gates.col(t).segment(0, k);
    auto dr_pre = d_gates.col(t).segment(k, k);
    auto dn_pre = d_gates.col(t).segment(2 * k, k);
    dn_pre = dh.cwiseProduct(z).cwiseProduct((1.0 - n.array().square()).matrix());
    reset_h.col(t) = r.cwiseProduct(h_prev);
    tmp.noalias() = U.bottomRows(k).transpose() * dn_pre;
    dr_pre = tmp.cwiseProduct(h_prev).cwiseProduct((r.array() * (1.0 - r.array())).matrix());
    dz_pre = dh.cwiseProduct(n - h_prev).cwiseProduct((z.array() * (1.0 - z.array())).matrix());
    Vec dh_prev = dh.cwiseProduct((1.0 - z.array()).matrix()) + tmp.cwiseProduct(r);
    dh_prev.noalias() += U.topRows(2 * k).transpose() * d_gates.col(t).head(2 * k);
    dh = std::move(dh_prev);
  }

  auto dU = row_map(grads, ln::kGruRecurrent, 3 * ks, ks);
  const auto h_prevs = tr.hidden.leftCols(L);
  dU.topRows(2 * k).noalias() += d_gates.topRows(2 * k) * h_prevs.transpose();
  dU.bottomRows(k).noalias() += d_gates.bottomRows(k) * reset_h.transpose();
  vec_map(grads, ln::kGruBias) += d_gates.rowwise().sum();
  auto dW = row_map(grads, ln::kGruInput, ds, 3 * ks);
  for (Eigen::Index t = 0; t < L; ++t) {
    for (int idx : tr.active[static_cast<std::size_t>(t)]) {
      if (idx >= 0) dW.row(idx) += d_gates.col(t).transpose();
    }
  }
}

double backward_into(const ForwardTrace& tr, int label, const ModelParams& params,
                     Gradients& grads) {
  if (tr.params_fingerprint != quick_fingerprint(params) || tr.hidden_dim == 0) {
    throw ContractError("forward trace does not belong to these parameters");
  }
  const ModelShape shape = shape_of(params);
  if (shape.hidden_dim != tr.hidden_dim || shape.input_dim != tr.input_dim) {
    throw ContractError("forward trace shape does not match parameters");
  }
  require_congruent(params, grads, "backward");

  // dL/dp for the two-term loss, then through the softmax Jacobian.
  const double y[2] = {label == 1 ? 1.0 : 0.0, label == 1 ? 0.0 : 1.0};
  double dp[2];
  for (int c = 0; c < 2; ++c) {
    const double pc = std::clamp(tr.probabilities[static_cast<std::size_t>(c)], kProbClamp,
                                 1.0 - kProbClamp);
    dp[c] = -y[c] / pc + (1.0 - y[c]) / (1.0 - pc);
  }
  const double p0 = tr.probabilities[0];
  const double p1 = tr.probabilities[1];
  const double s = p0 * dp[0] + p1 * dp[1];
  const Eigen::Vector2d d_logits(p0 * (dp[0] - s), p1 * (dp[1] - s));

  const std::size_t k = shape.hidden_dim;
  row_map(grads, ln::kHeadW, k, 2).noalias() += tr.head_input * d_logits.transpose();
  vec_map(grads, ln::kHeadB) += d_logits;
  const ConstRowMap Wl = row_map(params, ln::kHeadW, k, 2);
  const Vec d_pooled = (Wl * d_logits).cwiseProduct(tr.dropout_scale);
  trunk_backward(tr, d_pooled, params, grads);
  return bce_loss(tr.probabilities, label);
}

Gradients backward(const ForwardTrace& trace, int label, const ModelParams& params) {
  Gradients g = params.zeros_like();
  backward_into(trace, label, params, g);
  return g;
}

}  // namespace edufed
