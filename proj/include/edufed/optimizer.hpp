#pragma once

#include <string_view>

#include "edufed/model_params.hpp"

namespace edufed {

enum class OptimizerKind { Adam, Sgd };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double decay = 1e-3;
};

/// Optimizer state. The effective rate is lr / (1 + decay * epoch); callers
/// set `epoch` before stepping. Adam moments are allocated on first use.
struct OptState {
  OptimizerConfig config;
  long long step = 0;
  int epoch = 0;
  ModelParams first_moment;
  ModelParams second_moment;

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  explicit OptState(OptimizerConfig cfg = {}) : config(cfg) {}
  double effective_lr() const;
};

/// In-place update; throws OptimizerError on non-finite gradients.
void optimizer_step(ModelParams& params, const Gradients& grads, OptState& opt);

}  // namespace edufed
