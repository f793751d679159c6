#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <vector>

#include "edufed/attn_gru.hpp"
#include "edufed/data_model.hpp"
#include "edufed/metrics.hpp"
#include "edufed/model_params.hpp"
#include "edufed/optimizer.hpp"

namespace edufed {

enum class AccessPhase { Pretrain = 0, Train, Validate, Test };

/// Records which student records were read in which phase. Used to prove that
/// test students never reach pretraining or training.
class AccessLog {
 public:
  void record(AccessPhase phase, std::size_t record_index);
  std::set<std::size_t> reads(AccessPhase phase) const;
  void merge(const AccessLog& other);

 private:
  mutable std::mutex mutex_;
  std::set<std::size_t> reads_[4];
};

/// A subset of a record pool tagged with the phase it is read in. Every record
/// access goes through `operator[]` so it can be logged.
class DataView {
 public:
  DataView() = default;
  DataView(const std::vector<StudentRecord>* pool, std::vector<std::size_t> indices,
           AccessPhase phase, AccessLog* log = nullptr);

  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  const StudentRecord& operator[](std::size_t i) const;
  std::size_t pool_index(std::size_t i) const { return indices_[i]; }
  AccessPhase phase() const { return phase_; }

  DataView concat(const DataView& other) const;

 private:
  const std::vector<StudentRecord>* pool_ = nullptr;
  std::vector<std::size_t> indices_;
  AccessPhase phase_ = AccessPhase::Train;
  AccessLog* log_ = nullptr;
};

/// A differentiable scalar objective of a parameter set (a loss on one batch).
class Objective {
 public:
  virtual ~Objective() = default;
  /// Returns the loss at `at` and writes its gradient into `grad` (which is
  /// reset to zeros_like(at)).
  virtual double evaluate(const ModelParams& at, Gradients& grad) const = 0;
};

struct TrainingConfig {
  OptimizerConfig optimizer;
  std::size_t batch_size = 8;
  double dropout = 0.5;
};

/// Summed outcome BCE over a batch of students. Dropout masks are a function
/// of `mask_seed` and the batch position only, so repeated evaluations (as in
/// the meta-gradient) see the same masks.
class OutcomeObjective final : public Objective {
 public:
  OutcomeObjective(const DataView* data, std::vector<std::size_t> batch, double dropout,
                   std::uint64_t mask_seed);
  double evaluate(const ModelParams& at, Gradients& grad) const override;

 private:
  const DataView* data_;
  std::vector<std::size_t> batch_;
  double dropout_;
  std::uint64_t mask_seed_;
};

/// Shuffled mini-batches of [0, n).
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::uint64_t seed);

/// One epoch's outcome-loss batches for a client stream. The shuffle and the
/// dropout masks depend only on (seed, stream, epoch).
std::vector<std::unique_ptr<Objective>> outcome_epoch(const DataView& data,
                                                      const TrainingConfig& cfg,
                                                      std::uint64_t seed, std::uint64_t stream,
                                                      int epoch);

/// Pass probabilities (dropout off) for every student of a view.
std::vector<ScoredStudent> score_students(const ModelParams& params, const DataView& data,
                                          const SubgroupKey& key);

/// AUC of `params` on `data`, or nullopt when the view is single-class.
std::optional<double> try_auc(const ModelParams& params, const DataView& data,
                              const SubgroupKey& key);

}  // namespace edufed
