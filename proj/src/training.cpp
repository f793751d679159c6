#include "edufed/training.hpp"

#include <algorithm>
#include <numeric>

#include "edufed/errors.hpp"
#include "edufed/rng.hpp"

namespace edufed {

void AccessLog::record(AccessPhase phase, std::size_t record_index) {
  std::lock_guard lock(mutex_);
  reads_[static_cast<int>(phase)].insert(record_index);
}

std::set<std::size_t> AccessLog::reads(AccessPhase phase) const {
  std::lock_guard lock(mutex_);
  return reads_[static_cast<int>(phase)];
}

void AccessLog::merge(const AccessLog& other) {
  if (&other == this) return;
  std::scoped_lock lock(mutex_, other.mutex_);
  for (int i = 0; i < 4; ++i) reads_[i].insert(other.reads_[i].begin(), other.reads_[i].end());
}

DataView::DataView(const std::vector<StudentRecord>* pool, std::vector<std::size_t> indices,
                   AccessPhase phase, AccessLog* log)
    : pool_(pool), indices_(std::move(indices)), phase_(phase), log_(log) {}

const StudentRecord& DataView::operator[](std::size_t i) const {
  const std::size_t idx = indices_.at(i);
  if (log_) log_->record(phase_, idx);
  return (*pool_)[idx];
}

DataView DataView::concat(const DataView& other) const {
  if (pool_ && other.pool_ && pool_ != other.pool_) {
    throw ContractError("cannot concatenate views over different record pools");
  }
  std::vector<std::size_t> idx = indices_;
  idx.insert(idx.end(), other.indices_.begin(), other.indices_.end());
  return DataView(pool_ ? pool_ : other.pool_, std::move(idx), phase_, log_ ? log_ : other.log_);
}

OutcomeObjective::OutcomeObjective(const DataView* data, std::vector<std::size_t> batch,
                                   double dropout, std::uint64_t mask_seed)
    : data_(data), batch_(std::move(batch)), dropout_(dropout), mask_seed_(mask_seed) {}

double OutcomeObjective::evaluate(const ModelParams& at, Gradients& grad) const {
  if (!grad.congruent(at)) {
    grad = at.zeros_like();
  } else {
    grad.fill(0.0);
  }
  double loss = 0.0;
  for (std::size_t b = 0; b < batch_.size(); ++b) {
    const StudentRecord& rec = (*data_)[batch_[b]];
    const DropoutSpec drop{dropout_, derive_seed({mask_seed_, b})};
    const ForwardTrace tr = forward(at, rec.sequence, drop);
    loss += backward_into(tr, rec.label, at, grad);
  }
  return loss;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::uint64_t seed) {
  if (batch_size == 0) throw DomainError("batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return batches;
}

std::vector<std::unique_ptr<Objective>> outcome_epoch(const DataView& data,
                                                      const TrainingConfig& cfg,
                                                      std::uint64_t seed, std::uint64_t stream,
                                                      int epoch) {
  const auto e = static_cast<std::uint64_t>(epoch);
  auto batches = make_batches(data.size(), cfg.batch_size, derive_seed({seed, stream, e, 0xba7cULL}));
  std::vector<std::unique_ptr<Objective>> out;
  out.reserve(batches.size());
  for (std::size_t b = 0; b < batches.size(); ++b) {
    out.push_back(std::make_unique<OutcomeObjective>(
        &data, std::move(batches[b]), cfg.dropout, derive_seed({seed, stream, e, b, 0xd70bULL})));
  }
  return out;
}

std::vector<ScoredStudent> score_students(const ModelParams& params, const DataView& data,
                                          const SubgroupKey& key) {
  std::vector<ScoredStudent> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const StudentRecord& rec = data[i];
    out.push_back(ScoredStudent{rec.student_id, predict_pass(params, rec.sequence), rec.label, key});
  }
  return out;
}

std::optional<double> try_auc(const ModelParams& params, const DataView& data,
                              const SubgroupKey& key) {
  const auto scored = score_students(params, data, key);
  try {
    return auc(scored);
  } catch (const UndefinedAucError&) {
    return std::nullopt;
  }
}

}  // namespace edufed
