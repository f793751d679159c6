#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "edufed/data_model.hpp"
#include "edufed/model_params.hpp"
#include "edufed/optimizer.hpp"
#include "edufed/training.hpp"

namespace edufed {

/// One masked-position instance: the sequence with the target step replaced
/// by the zero vector, and the original activity at that step.
struct CbowInstance {
  std::vector<EncodedActivity> masked_sequence;
  EncodedActivity target;
  std::size_t target_position = 0;
};

/// One instance per position; sequences shorter than two yield none.
std::vector<CbowInstance> make_cbow_instances(std::span<const EncodedActivity> sequence);

/// Predicted activity distribution softmax(W_p^T h_pre + b_p) for a masked
/// sequence, and its mean squared error against the target one/two-hot vector.
std::vector<double> predict_activity(const ModelParams& model,
                                     std::span<const EncodedActivity> masked_sequence);
double cbow_loss(std::span<const double> predicted, const EncodedActivity& target);

/// Loss of one instance and its gradient (accumulated into `grads`).
double cbow_loss_and_grad(const ModelParams& model, const CbowInstance& instance,
                          Gradients& grads);

struct PretrainConfig {
  int epochs = 10;
  std::size_t batch_size = 8;
  OptimizerConfig optimizer;
};

/// One pass over the instances in shuffled batches, one optimizer step per
/// batch. Returns the mean per-instance loss.
double pretrain_epoch(ModelParams& model, std::span<const CbowInstance> instances, OptState& opt,
                      std::size_t batch_size, std::uint64_t shuffle_seed);

/// Builds the instance corpus from `corpus` (labels are never read) and runs
/// `cfg.epochs` epochs. Returns the per-epoch mean losses.
std::vector<double> pretrain(ModelParams& model, const DataView& corpus, const PretrainConfig& cfg,
                             std::uint64_t seed);

/// GRU and attention layers from `pretrained`, outcome head from `fresh`. The
/// pretraining head is reset to zero.
ModelParams transfer_weights(const ModelParams& pretrained, const ModelParams& fresh);

}  // namespace edufed
