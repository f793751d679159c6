#include "edufed/federation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

#include "edufed/errors.hpp"
#include "edufed/pretrain.hpp"
#include "edufed/rng.hpp"

namespace edufed {

namespace {

constexpr std::string_view kStrategyNames[] = {"Local",  "Central",      "FedAvg",    "FedAtt",
                                               "FedIRT", "PerFedAvgAgg", "PerFedAttn"};

template <typename F>
auto in_context(int round, const SubgroupKey& key, F&& f) {
  try {
    return f();
  } catch (const RunError&) {
    throw;
  } catch (const Error& e) {
    throw RunError("round " + std::to_string(round) + ", subgroup " + key.label() + ": " +
                   e.what());
  }
}

}  // namespace

std::string_view to_string(Strategy s) { return kStrategyNames[static_cast<int>(s)]; }

Strategy parse_strategy(std::string_view text) {
  for (Strategy s : kAllStrategies) {
    if (to_string(s) == text) return s;
  }
  throw ConfigError("unknown strategy '" + std::string(text) + "'");
}

bool is_personalized(Strategy s) {
  return s == Strategy::FedIRT || s == Strategy::PerFedAvgAgg || s == Strategy::PerFedAttn;
}

bool uses_meta_update(Strategy s) {
  return s == Strategy::PerFedAvgAgg || s == Strategy::PerFedAttn;
}

std::string_view to_string(MetaMode m) {
  return m == MetaMode::FirstOrder ? "first_order" : "hessian_fd";
}

MetaMode parse_meta_mode(std::string_view text) {
  if (text == "first_order") return MetaMode::FirstOrder;
  if (text == "hessian_fd") return MetaMode::HessianFd;
  throw ConfigError("meta mode must be first_order or hessian_fd (got '" + std::string(text) +
                    "')");
}

void MetaConfig::validate() const {
  if (!(inner_step >= 0.0) || !std::isfinite(inner_step)) {
    throw ValidationError("meta inner step must be non-negative");
  }
  if (!(outer_step >= 0.0) || !std::isfinite(outer_step)) {
    throw ValidationError("meta outer step must be non-negative");
  }
  if (!(hessian_delta > 0.0)) throw ValidationError("hessian step must be positive");
}

std::string_view to_string(AttnWeightMode m) {
  return m == AttnWeightMode::PerLayer ? "per_layer" : "scalar_sum";
}

AttnWeightMode parse_attn_weight_mode(std::string_view text) {
  if (text == "per_layer") return AttnWeightMode::PerLayer;
  if (text == "scalar_sum") return AttnWeightMode::ScalarSum;
  throw ConfigError("attention weight mode must be per_layer or scalar_sum (got '" +
                    std::string(text) + "')");
}

void FederationSchedule::validate() const {
  if (rounds < 0) throw ValidationError("number of rounds must be non-negative");
  if (local_epochs < 1) throw ValidationError("local epochs must be at least 1");
}

Gradients meta_gradient(const Objective& f, const ModelParams& theta, const MetaConfig& cfg,
                        double* loss_at_theta) {
  Gradients g0;
  const double loss = f.evaluate(theta, g0);
  if (loss_at_theta) *loss_at_theta = loss;
  if (!std::isfinite(loss) || !g0.all_finite()) {
    throw NumericError("non-finite loss or gradient before the inner step");
  }
  const ModelParams inner = params_axpy(-cfg.inner_step, g0, theta);
  Gradients v;
  f.evaluate(inner, v);
  if (!v.all_finite()) throw NumericError("non-finite gradient at the inner point");
  if (cfg.mode == MetaMode::FirstOrder) return v;

  const double norm = params_norm(v);
  if (norm == 0.0) return v;
  const double eps = cfg.hessian_delta / std::max(1.0, norm);
  Gradients up;
  Gradients down;
  f.evaluate(params_axpy(eps, v, theta), up);
  f.evaluate(params_axpy(-eps, v, theta), down);
  Gradients out = v;
  axpy_inplace(-cfg.inner_step / (2.0 * eps), up, out);
  axpy_inplace(cfg.inner_step / (2.0 * eps), down, out);
  if (!out.all_finite()) throw NumericError("non-finite Hessian-vector product");
  return out;
}

double meta_step(ModelParams& model, const Objective& f, const MetaConfig& cfg, OptState& opt) {
  double loss = 0.0;
  const Gradients g = meta_gradient(f, model, cfg, &loss);
  optimizer_step(model, g, opt);
  return loss;
}

double plain_step(ModelParams& model, const Objective& f, OptState& opt) {
  Gradients g;
  const double loss = f.evaluate(model, g);
  if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
  optimizer_step(model, g, opt);
  return loss;
}

double local_epoch(ModelParams& model, const DataView& train, const TrainingConfig& cfg,
                   OptState& opt, LocalUpdate update, const MetaConfig& meta, std::uint64_t seed,
                   std::uint64_t stream, int epoch) {
  if (train.empty()) throw ValidationError("client has no training data");
  opt.epoch = epoch;
  double total = 0.0;
  for (const auto& f : outcome_epoch(train, cfg, seed, stream, epoch)) {
    total += update == LocalUpdate::Meta ? meta_step(model, *f, meta, opt)
                                         : plain_step(model, *f, opt);
  }
  return total / static_cast<double>(train.size());
}

ModelParams local_adaptation(const ModelParams& global, ClientState& client, int epochs,
                             const TrainingConfig& training, const MetaConfig& meta,
                             std::uint64_t seed, int first_epoch, double* mean_loss) {
  if (epochs < 1) throw ValidationError("local adaptation needs at least one epoch");
  require_congruent(global, client.local, "local_adaptation");
  ModelParams model = global;
  double total = 0.0;
  for (int e = 0; e < epochs; ++e) {
    total += local_epoch(model, client.train, training, client.opt, LocalUpdate::Meta, meta, seed,
                         client.stream, first_epoch + e);
  }
  if (mean_loss) *mean_loss = total / epochs;
  return model;
}

ModelParams fedavg_aggregate(const std::vector<std::pair<const ModelParams*, double>>& locals) {
  if (locals.empty()) throw ValidationError("aggregation needs at least one local model");
  double total = 0.0;
  for (const auto& [model, count] : locals) {
    if (!(count >= 0.0)) throw ValidationError("client sizes must be non-negative");
    require_congruent(*locals.front().first, *model, "fedavg_aggregate");
    total += count;
  }
  if (!(total > 0.0)) throw ValidationError("total client size must be positive");
  ModelParams out = locals.front().first->zeros_like();
  for (const auto& [model, count] : locals) axpy_inplace(count / total, *model, out);
  return out;
}

std::vector<std::vector<double>> fedatt_weights(const ModelParams& global,
                                                const std::vector<const ModelParams*>& locals,
                                                AttnWeightMode mode) {
  if (locals.empty()) throw ValidationError("aggregation needs at least one local model");
  for (const ModelParams* m : locals) require_congruent(global, *m, "fedatt_aggregate");
  const std::size_t X = locals.size();
  const std::size_t L = global.num_layers();
  std::vector<std::vector<double>> w(X, std::vector<double>(L, 0.0));
  for (std::size_t l = 0; l < L; ++l) {
    const auto& g = global.layer(l).values;
    std::vector<double> dist(X);
    for (std::size_t x = 0; x < X; ++x) {
      const auto& v = locals[x]->layer(l).values;
      double sq = 0.0;
      for (std::size_t j = 0; j < g.size(); ++j) sq += (g[j] - v[j]) * (g[j] - v[j]);
      dist[x] = std::sqrt(sq);
    }
    const double top = *std::max_element(dist.begin(), dist.end());
    double z = 0.0;
    for (std::size_t x = 0; x < X; ++x) z += std::exp(dist[x] - top);
    for (std::size_t x = 0; x < X; ++x) w[x][l] = std::exp(dist[x] - top) / z;
  }
  if (mode == AttnWeightMode::ScalarSum) {
    std::vector<double> scalar(X, 0.0);
    double total = 0.0;
    for (std::size_t x = 0; x < X; ++x) {
      for (double a : w[x]) scalar[x] += a;
      total += scalar[x];
    }
    for (std::size_t x = 0; x < X; ++x) std::fill(w[x].begin(), w[x].end(), scalar[x] / total);
  }
  return w;
}

ModelParams fedatt_aggregate(const ModelParams& global,
                             const std::vector<const ModelParams*>& locals,
                             const AttnAggConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) throw ValidationError("attentive aggregation step must be positive");
  const auto w = fedatt_weights(global, locals, cfg.mode);
  ModelParams out = global;
  for (std::size_t l = 0; l < global.num_layers(); ++l) {
    const auto& g = global.layer(l).values;
    auto& o = out.layer(l).values;
    for (std::size_t x = 0; x < locals.size(); ++x) {
      const auto& v = locals[x]->layer(l).values;
      const double a = cfg.epsilon * w[x][l];
      for (std::size_t j = 0; j < g.size(); ++j) o[j] -= a * (g[j] - v[j]);
    }
  }
  return out;
}

ModelParams fedirt_init(const ModelParams& global, const std::optional<ModelParams>& previous,
                        double* lambda) {
  if (!previous) {
    if (lambda) *lambda = 0.0;
    return global;
  }
  const double lam = params_cosine(*previous, global);
  if (lambda) *lambda = lam;
  ModelParams out = global;
  scale_inplace(1.0 - lam, out);
  axpy_inplace(lam, *previous, out);
  return out;
}

ModelParams weighted_sum(const std::vector<std::pair<const ModelParams*, double>>& locals) {
  if (locals.empty()) throw ValidationError("aggregation needs at least one local model");
  double total = 0.0;
  for (const auto& [model, w] : locals) total += w;
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValidationError("aggregation weights must sum to 1");
  }
  ModelParams out = locals.front().first->zeros_like();
  for (const auto& [model, w] : locals) {
    require_congruent(out, *model, "weighted_sum");
    axpy_inplace(w, *model, out);
  }
  return out;
}

ModelParams initial_model(const ModelShape& shape, std::uint64_t seed,
                          const ModelParams* pretrained) {
  ModelParams fresh = make_attn_gru(shape);
  init_glorot(fresh, derive_seed({seed, 0x1a17ULL}));
  if (pretrained) return transfer_weights(*pretrained, fresh);
  return fresh;
}

ModelParams adapt_for_eval(const ModelParams& global, const ClientState& client,
                           Strategy strategy, const TrainingConfig& training,
                           const MetaConfig& meta, std::uint64_t seed, int epoch) {
  if (!is_personalized(strategy)) return global;
  if (client.train.empty()) throw ValidationError("client has no training data to adapt on");
  ModelParams model = global;
  OptState opt = client.opt;
  local_epoch(model, client.train, training, opt,
              uses_meta_update(strategy) ? LocalUpdate::Meta : LocalUpdate::Plain, meta, seed,
              client.stream, epoch);
  return model;
}

namespace {

struct Checkpoint {
  std::optional<double> auc;
  int round = -1;
  ModelParams model;
};

class Run {
 public:
  Run(const FederationConfig& cfg, const std::map<SubgroupKey, SubgroupData>& data,
      std::uint64_t seed, const ModelParams* pretrained)
      : cfg_(cfg), seed_(seed) {
    cfg.schedule.validate();
    cfg.meta.validate();
    if (data.empty()) throw ValidationError("federation needs at least one subgroup");
    result_.global = initial_model(cfg.shape, seed, pretrained);
    OptimizerConfig opt = cfg.training.optimizer;
    if (uses_meta_update(cfg.schedule.strategy)) opt.lr = cfg.meta.outer_step;
    std::uint64_t stream = 0;
    for (const auto& [key, d] : data) {
      if (d.train.empty()) {
        throw ValidationError("subgroup " + key.label() + " has no training data");
      }
      ClientState c{key, d.train, d.val, result_.global, std::nullopt, OptState(opt), stream++};
      clients_.push_back(std::move(c));
    }
  }

  FederationResult run() {
    const Strategy s = cfg_.schedule.strategy;
    if (s == Strategy::Local) {
      run_local();
    } else if (s == Strategy::Central) {
      run_central();
    } else {
      run_federated();
    }
    for (auto& c : clients_) {
      Checkpoint& best = best_[c.key.label()];
      result_.eval_models[c.key] = std::move(best.model);
      result_.best_round[c.key] = best.round;
    }
    return std::move(result_);
  }

 private:
  int E() const { return cfg_.schedule.local_epochs; }
  int K() const { return cfg_.schedule.rounds; }

  void consider(int round, const ClientState& c, const ModelParams& model,
                std::optional<double> train_loss) {
    const auto val = in_context(round, c.key, [&] { return try_auc(model, c.val, c.key); });
    result_.metrics.push_back(RoundMetric{round, c.key, cfg_.schedule.strategy, val,
                                          train_loss.value_or(std::nan(""))});
    Checkpoint& best = best_[c.key.label()];
    bool take = best.round < 0;
    if (val && (!best.auc || *val > *best.auc)) take = true;
    // With no defined validation AUC at all, the latest model is kept.
    if (!val && !best.auc) take = true;
    if (take) {
      best.auc = val;
      best.round = round;
      best.model = model;
    }
  }

  void run_local() {
    for (auto& c : clients_) {
      ModelParams model = result_.global;
      consider(0, c, model, std::nullopt);
      for (int epoch = 0; epoch < K() * E(); ++epoch) {
        const double loss = in_context(epoch / E() + 1, c.key, [&] {
          return local_epoch(model, c.train, cfg_.training, c.opt, LocalUpdate::Plain, cfg_.meta,
                             seed_, c.stream, epoch);
        });
        consider(epoch + 1, c, model, loss);
      }
      c.local = std::move(model);
    }
  }

  void run_central() {
    DataView pooled = clients_.front().train;
    for (std::size_t i = 1; i < clients_.size(); ++i) pooled = pooled.concat(clients_[i].train);
    OptState opt = clients_.front().opt;
    ModelParams& model = result_.global;
    for (auto& c : clients_) consider(0, c, model, std::nullopt);
    const SubgroupKey all{clients_.front().key.variable, "all"};
    for (int epoch = 0; epoch < K() * E(); ++epoch) {
      const double loss = in_context(epoch / E() + 1, all, [&] {
        return local_epoch(model, pooled, cfg_.training, opt, LocalUpdate::Plain, cfg_.meta, seed_,
                           0, epoch);
      });
      for (auto& c : clients_) consider(epoch + 1, c, model, loss);
    }
  }

  ModelParams eval_model(const ClientState& c, int round) const {
    return in_context(round, c.key, [&] {
      return adapt_for_eval(result_.global, c, cfg_.schedule.strategy, cfg_.training, cfg_.meta,
                            seed_, round * E());
    });
  }

  void fit_irt() {
    std::map<SubgroupKey, RaschFit> fits;
    for (const auto& c : clients_) {
      fits[c.key] = in_context(0, c.key, [&] {
        std::vector<std::pair<std::string, std::map<int, int>>> responses;
        for (std::size_t i = 0; i < c.train.size(); ++i) {
          responses.emplace_back(c.train[i].student_id, c.train[i].quiz_responses);
        }
        return fit_rasch(ResponseMatrix::from_responses(responses), cfg_.irt.max_iters,
                         cfg_.irt.tol, cfg_.irt.prior);
      });
    }
    result_.irt_weights = irt_confidence(fits);
  }

  void run_federated() {
    const Strategy s = cfg_.schedule.strategy;
    if (s == Strategy::FedIRT) fit_irt();
    for (auto& c : clients_) consider(0, c, eval_model(c, 0), std::nullopt);
    std::vector<double> losses(clients_.size());
    for (int k = 1; k <= K(); ++k) {
      const int first = (k - 1) * E();
      for (std::size_t x = 0; x < clients_.size(); ++x) {
        ClientState& c = clients_[x];
        in_context(k, c.key, [&] {
          if (uses_meta_update(s)) {
            c.local = local_adaptation(result_.global, c, E(), cfg_.training, cfg_.meta, seed_,
                                       first, &losses[x]);
            return 0;
          }
          c.local = s == Strategy::FedIRT ? fedirt_init(result_.global, c.previous)
                                          : result_.global;
          double total = 0.0;
          for (int e = 0; e < E(); ++e) {
            total += local_epoch(c.local, c.train, cfg_.training, c.opt, LocalUpdate::Plain,
                                 cfg_.meta, seed_, c.stream, first + e);
          }
          losses[x] = total / E();
          if (s == Strategy::FedIRT) c.previous = c.local;
          return 0;
        });
      }
      result_.global = in_context(k, SubgroupKey{clients_.front().key.variable, "global"},
                                  [&] { return aggregate(); });
      for (std::size_t x = 0; x < clients_.size(); ++x) {
        consider(k, clients_[x], eval_model(clients_[x], k), losses[x]);
      }
    }
  }

  ModelParams aggregate() const {
    const Strategy s = cfg_.schedule.strategy;
    if (s == Strategy::FedAvg || s == Strategy::PerFedAvgAgg) {
      std::vector<std::pair<const ModelParams*, double>> locals;
      for (const auto& c : clients_) {
        locals.emplace_back(&c.local, static_cast<double>(c.train.size()));
      }
      return fedavg_aggregate(locals);
    }
    if (s == Strategy::FedIRT) {
      std::vector<std::pair<const ModelParams*, double>> locals;
      for (const auto& c : clients_) locals.emplace_back(&c.local, result_.irt_weights.at(c.key));
      return weighted_sum(locals);
    }
    std::vector<const ModelParams*> locals;
    for (const auto& c : clients_) locals.push_back(&c.local);
    return fedatt_aggregate(result_.global, locals, cfg_.attn);
  }

  const FederationConfig& cfg_;
  std::uint64_t seed_;
  std::vector<ClientState> clients_;
  std::map<std::string, Checkpoint> best_;
  FederationResult result_;
};

}  // namespace

FederationResult run_federation(const FederationConfig& cfg,
                                const std::map<SubgroupKey, SubgroupData>& data,
                                std::uint64_t seed, const ModelParams* pretrained) {
  return Run(cfg, data, seed, pretrained).run();
}

void write_round_metrics(std::ostream& out, const std::vector<RoundMetric>& metrics) {
  out << "round,subgroup,strategy,val_auc,train_loss\n";
  const auto flags = out.flags();
  out << std::setprecision(10);
  for (const RoundMetric& m : metrics) {
    out << m.round << ',' << m.subgroup.label() << ',' << to_string(m.strategy) << ',';
    if (m.val_auc) out << *m.val_auc;
    out << ',';
    if (!std::isnan(m.train_loss)) out << m.train_loss;
    out << '\n';
  }
  out.flags(flags);
}

}  // namespace edufed
