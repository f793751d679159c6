#include "edufed/pretrain.hpp"

#include <algorithm>
#include <cmath>

#include "edufed/attn_gru.hpp"
#include "edufed/errors.hpp"
#include "edufed/rng.hpp"

namespace edufed {

namespace ln = layer_names;

std::vector<CbowInstance> make_cbow_instances(std::span<const EncodedActivity> sequence) {
  std::vector<CbowInstance> out;
  if (sequence.size() < 2) return out;
  out.reserve(sequence.size());
  const int n = sequence.front().n_videos();
  for (std::size_t t = 0; t < sequence.size(); ++t) {
    CbowInstance inst;
    inst.masked_sequence.assign(sequence.begin(), sequence.end());
    inst.masked_sequence[t] = EncodedActivity::zero(n);
    inst.target = sequence[t];
    inst.target_position = t;
    out.push_back(std::move(inst));
  }
  return out;
}

namespace {

Vec activity_probabilities(const ModelParams& model, const Vec& h_pre) {
  const ModelShape shape = shape_of(model);
  const auto d = static_cast<Eigen::Index>(shape.input_dim);
  const auto k = static_cast<Eigen::Index>(shape.hidden_dim);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Wp(
      model.values(ln::kPretrainW).data(), k, d);
  Eigen::Map<const Vec> bp(model.values(ln::kPretrainB).data(), d);
  Vec z = Wp.transpose() * h_pre + bp;
  z = (z.array() - z.maxCoeff()).exp().matrix();
  z /= z.sum();
  return z;
}

Vec target_vector(const EncodedActivity& target) {
  Vec t = Vec::Zero(target.width());
  for (int i = 0; i < target.num_active(); ++i) t(target.active(i)) = 1.0;
  return t;
}

}  // namespace

std::vector<double> predict_activity(const ModelParams& model,
                                     std::span<const EncodedActivity> masked_sequence) {
  const Vec p = activity_probabilities(model, forward(model, masked_sequence).pooled);
  return std::vector<double>(p.data(), p.data() + p.size());
}

double cbow_loss(std::span<const double> predicted, const EncodedActivity& target) {
  if (predicted.size() != static_cast<std::size_t>(target.width())) {
    throw ShapeError("predicted activity width does not match target");
  }
  const Vec t = target_vector(target);
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double diff = predicted[i] - t(static_cast<Eigen::Index>(i));
    s += diff * diff;
  }
  return s / static_cast<double>(predicted.size());
}

double cbow_loss_and_grad(const ModelParams& model, const CbowInstance& instance,
                          Gradients& grads) {
  const ModelShape shape = shape_of(model);
  if (static_cast<std::size_t>(instance.target.width()) != shape.input_dim) {
    throw ShapeError("pretraining target width does not match model input width");
  }
  const ForwardTrace tr = forward(model, instance.masked_sequence);
  const Vec a = activity_probabilities(model, tr.pooled);
  const Vec t = target_vector(instance.target);
  const double D = static_cast<double>(a.size());
  const Vec diff = a - t;
  const double loss = diff.squaredNorm() / D;

  // d loss / d a, then through the softmax Jacobian.
  const Vec ga = (2.0 / D) * diff;
  const double s = a.dot(ga);
  const Vec dz = a.cwiseProduct((ga.array() - s).matrix());

  const auto d = static_cast<Eigen::Index>(shape.input_dim);
  const auto k = static_cast<Eigen::Index>(shape.hidden_dim);
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<RowMat> dWp(grads.values(ln::kPretrainW).data(), k, d);
  Eigen::Map<Vec> dbp(grads.values(ln::kPretrainB).data(), d);
  dWp.noalias() += tr.pooled * dz.transpose();
  dbp += dz;
  Eigen::Map<const RowMat> Wp(model.values(ln::kPretrainW).data(), k, d);
  const Vec d_pooled = Wp * dz;
  trunk_backward(tr, d_pooled, model, grads);
  return loss;
}

double pretrain_epoch(ModelParams& model, std::span<const CbowInstance> instances, OptState& opt,
                      std::size_t batch_size, std::uint64_t shuffle_seed) {
  if (instances.empty()) return 0.0;
  const ModelShape shape = shape_of(model);
  for (const auto& inst : instances) {
    if (static_cast<std::size_t>(inst.target.width()) != shape.input_dim) {
      throw ShapeError("pretraining instance width does not match model input width");
    }
  }
  const auto batches = make_batches(instances.size(), batch_size, shuffle_seed);
  Gradients grads = model.zeros_like();
  double total = 0.0;
  for (const auto& batch : batches) {
    grads.fill(0.0);
    for (std::size_t i : batch) total += cbow_loss_and_grad(model, instances[i], grads);
    optimizer_step(model, grads, opt);
  }
  return total / static_cast<double>(instances.size());
}

std::vector<double> pretrain(ModelParams& model, const DataView& corpus, const PretrainConfig& cfg,
                             std::uint64_t seed) {
  std::vector<CbowInstance> instances;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto more = make_cbow_instances(corpus[i].sequence);
    std::move(more.begin(), more.end(), std::back_inserter(instances));
  }
  OptState opt(cfg.optimizer);
  std::vector<double> losses;
  for (int e = 0; e < cfg.epochs; ++e) {
    opt.epoch = e;
    losses.push_back(pretrain_epoch(model, instances, opt, cfg.batch_size,
                                    derive_seed({seed, 0x9e7aULL, static_cast<std::uint64_t>(e)})));
  }
  return losses;
}

ModelParams transfer_weights(const ModelParams& pretrained, const ModelParams& fresh) {
  require_congruent(pretrained, fresh, "transfer_weights");
  ModelParams out = fresh;
  for (auto name : {ln::kGruInput, ln::kGruRecurrent, ln::kGruBias, ln::kAttnW, ln::kAttnP}) {
    out.layer(name).values = pretrained.layer(name).values;
  }
  for (auto name : {ln::kPretrainW, ln::kPretrainB}) {
    for (double& v : out.values(name)) v = 0.0;
  }
  return out;
}

}  // namespace edufed
