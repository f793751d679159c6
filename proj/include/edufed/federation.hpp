#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

#include "edufed/attn_gru.hpp"
#include "edufed/data_model.hpp"
#include "edufed/irt.hpp"
#include "edufed/model_params.hpp"
#include "edufed/optimizer.hpp"
#include "edufed/training.hpp"

namespace edufed {

enum class Strategy { Local, Central, FedAvg, FedAtt, FedIRT, PerFedAvgAgg, PerFedAttn };

inline constexpr Strategy kAllStrategies[] = {
    Strategy::Local,  Strategy::Central,      Strategy::FedAvg,    Strategy::FedAtt,
    Strategy::FedIRT, Strategy::PerFedAvgAgg, Strategy::PerFedAttn};

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view text);
/// Strategies whose test-time model is adapted per subgroup from the global one.
bool is_personalized(Strategy s);
bool uses_meta_update(Strategy s);

enum class MetaMode { FirstOrder, HessianFd };
std::string_view to_string(MetaMode m);
MetaMode parse_meta_mode(std::string_view text);

struct MetaConfig {
  double inner_step = 0.01;   // alpha_in
  double outer_step = 1e-3;   // eta
  MetaMode mode = MetaMode::FirstOrder;
  double hessian_delta = 1e-4;

  void validate() const;
};

enum class AttnWeightMode { PerLayer, ScalarSum };
std::string_view to_string(AttnWeightMode m);
AttnWeightMode parse_attn_weight_mode(std::string_view text);

struct AttnAggConfig {
  double epsilon = 1.0;
  AttnWeightMode mode = AttnWeightMode::PerLayer;
};

struct FederationSchedule {
  int rounds = 10;        // K
  int local_epochs = 5;   // E
  Strategy strategy = Strategy::PerFedAttn;

  void validate() const;
};

struct IrtConfig {
  int max_iters = 200;
  double tol = 1e-6;
  double prior = kRaschPrior;
};

/// Meta-gradient of `f` at `theta`:
///   first_order: v = grad f(theta - alpha_in * grad f(theta))
///   hessian_fd:  v - alpha_in * H v, with H v from central differences of grad f
///                around theta (step delta / max(1, |v|)).
Gradients meta_gradient(const Objective& f, const ModelParams& theta, const MetaConfig& cfg,
                        double* loss_at_theta = nullptr);

/// One optimizer step on the meta-gradient. The optimizer rate plays eta.
double meta_step(ModelParams& model, const Objective& f, const MetaConfig& cfg, OptState& opt);
/// One optimizer step on the plain gradient.
double plain_step(ModelParams& model, const Objective& f, OptState& opt);

enum class LocalUpdate { Plain, Meta };

/// One full pass over `train` in shuffled batches. Returns the mean
/// per-student loss at the pre-step parameters.
double local_epoch(ModelParams& model, const DataView& train, const TrainingConfig& cfg,
                   OptState& opt, LocalUpdate update, const MetaConfig& meta, std::uint64_t seed,
                   std::uint64_t stream, int epoch);

struct ClientState {
  SubgroupKey key;
  DataView train;
  DataView val;
  ModelParams local;
  std::optional<ModelParams> previous;  // last round's local model (FedIRT)
  OptState opt;
  std::uint64_t stream = 0;
};

/// E meta-update epochs starting from the global model. `first_epoch` is the
/// global epoch index of the first of them (shuffle, dropout and lr decay).
ModelParams local_adaptation(const ModelParams& global, ClientState& client, int epochs,
                             const TrainingConfig& training, const MetaConfig& meta,
                             std::uint64_t seed, int first_epoch, double* mean_loss = nullptr);

/// sum_x (N_x / N) theta_x.
ModelParams fedavg_aggregate(const std::vector<std::pair<const ModelParams*, double>>& locals);

/// Per-layer softmax-over-clients weights of the distances |theta_g(l) - theta_x(l)|.
/// Result[x][l].
std::vector<std::vector<double>> fedatt_weights(const ModelParams& global,
                                                const std::vector<const ModelParams*>& locals,
                                                AttnWeightMode mode);
ModelParams fedatt_aggregate(const ModelParams& global,
                             const std::vector<const ModelParams*>& locals,
                             const AttnAggConfig& cfg);

/// lambda * previous + (1 - lambda) * global with lambda = cos(previous, global);
/// the global model itself when there is no previous local model.
ModelParams fedirt_init(const ModelParams& global, const std::optional<ModelParams>& previous,
                        double* lambda = nullptr);

/// sum_x alpha_x theta_x; the weights must sum to 1.
ModelParams weighted_sum(const std::vector<std::pair<const ModelParams*, double>>& locals);

struct FederationConfig {
  FederationSchedule schedule;
  TrainingConfig training;
  MetaConfig meta;
  AttnAggConfig attn;
  IrtConfig irt;
  ModelShape shape;
};

struct SubgroupData {
  DataView train;
  DataView val;
};

struct RoundMetric {
  int round = 0;  // epoch count for Local and Central
  SubgroupKey subgroup;
  Strategy strategy = Strategy::FedAvg;
  std::optional<double> val_auc;
  double train_loss = 0.0;
};

struct FederationResult {
  ModelParams global;  // final global model (Local: the shared initialization)
  std::vector<RoundMetric> metrics;
  // Checkpoint each subgroup is evaluated with on its test split.
  std::map<SubgroupKey, ModelParams> eval_models;
  std::map<SubgroupKey, int> best_round;
  std::map<SubgroupKey, double> irt_weights;  // FedIRT only
};

/// The initial global model for a run: Glorot from the seed, with the trunk
/// transferred from `pretrained` when given.
ModelParams initial_model(const ModelShape& shape, std::uint64_t seed,
                          const ModelParams* pretrained);

/// Runs one strategy for K rounds of E local epochs over the given subgroups.
/// Checkpoint candidates are the models after each round (0..K), or after
/// each epoch (0..K*E) for Local and Central. The best validation AUC wins,
/// earliest on ties.
FederationResult run_federation(const FederationConfig& cfg,
                                const std::map<SubgroupKey, SubgroupData>& data,
                                std::uint64_t seed, const ModelParams* pretrained = nullptr);

/// One local epoch from the global model on a copy of the client's optimizer
/// state: meta-updates for the meta strategies, plain descent for the others.
/// Global strategies are not adapted and get `global` back.
ModelParams adapt_for_eval(const ModelParams& global, const ClientState& client,
                           Strategy strategy, const TrainingConfig& training,
                           const MetaConfig& meta, std::uint64_t seed, int epoch);

/// round,subgroup,strategy,val_auc,train_loss
void write_round_metrics(std::ostream& out, const std::vector<RoundMetric>& metrics);

}  // namespace edufed
