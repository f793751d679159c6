#include "edufed/optimizer.hpp"

#include <cmath>
#include <string>

#include "edufed/errors.hpp"

namespace edufed {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "adam") return OptimizerKind::Adam;
  if (text == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("optimizer must be 'adam' or 'sgd' (got '" + std::string(text) + "')");
}

double OptState::effective_lr() const {
  return config.lr / (1.0 + config.decay * static_cast<double>(epoch));
}

void optimizer_step(ModelParams& params, const Gradients& grads, OptState& opt) {
  require_congruent(params, grads, "optimizer step");
  if (!grads.all_finite()) throw OptimizerError("non-finite gradient entry");
  const double lr = opt.effective_lr();
  ++opt.step;
  if (opt.config.kind == OptimizerKind::Sgd) {
    axpy_inplace(-lr, grads, params);
    return;
  }
  if (!opt.first_moment.congruent(params)) {
    opt.first_moment = params.zeros_like();
    opt.second_moment = params.zeros_like();
  }
  const double b1 = OptState::kBeta1;
  const double b2 = OptState::kBeta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < params.num_layers(); ++i) {
    auto& theta = params.layer(i).values;
    const auto& g = grads.layer(i).values;
    auto& m = opt.first_moment.layer(i).values;
    auto& v = opt.second_moment.layer(i).values;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      theta[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + OptState::kEpsilon);
    }
  }
}

}  // namespace edufed
