#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mile/corpus.hpp"
#include "mile/losses.hpp"
#include "mile/model.hpp"

namespace mile {

struct TrainConfig {
  double peak_lr = 3.0e-4;
  std::size_t warmup_steps = 100;
  std::size_t total_steps = 3000;
  double min_lr_ratio = 0.1;
  std::size_t batch_size = 32;
  double weight_decay = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  /// Validation every this many steps (and after the last step); 0 = last only.
  std::size_t eval_interval = 500;
  /// Cap on validation sequences for periodic evaluation; 0 = all.
  std::size_t eval_max_sequences = 0;
  /// Share of chunked sequences held out, taken from the end before shuffling.
  double eval_fraction = 0.02;
  LossSpec loss;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Linear warmup to peak_lr, then cosine decay to peak_lr * min_lr_ratio at
/// total_steps.
double lr_at(std::size_t step, const TrainConfig& config);

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;

  static OptimizerState zeros_like(std::span<const Tensor> params);
};

/// One AdamW update using each parameter's grad. Decoupled weight decay
/// (param *= 1 - lr * weight_decay) is applied before the Adam step. A
/// non-finite gradient raises NumericError before anything is modified.
void adamw_step(std::span<Tensor> params, OptimizerState& state, double lr, const TrainConfig& config);

/// Scales all grads so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

struct StepMetrics {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double ce = 0.0;
  double grad_norm = 0.0;
  std::optional<double> val_ppl;
};

struct RunMetrics {
  std::vector<StepMetrics> steps;

  /// step,lr,loss,ce,grad_norm,val_ppl with val_ppl empty off evaluation steps.
  void write_csv(std::ostream& os) const;
  void write_csv(const std::string& path) const;
};

/// Training and validation sequences, grouped by domain for sampling.
struct TrainingData {
  std::vector<SequenceSet> train;  // one per domain
  std::vector<double> domain_weights;  // same length as train
  SequenceSet eval;
};

/// Holds out the last `eval_fraction` of each domain's sequences (at least
/// one when a domain has two or more) and keeps the rest for training.
TrainingData split_training_data(std::vector<SequenceSet> domains, std::vector<double> domain_weights,
                                 double eval_fraction);

/// Fills batches from the training split. Sequence order is a per-epoch
/// shuffle drawn from the "data" stream of the train seed; the domain of each
/// row comes from the "domain-sampling" stream. Neither depends on the loss.
class BatchSampler {
 public:
  BatchSampler(const TrainingData& data, std::uint64_t seed);

  /// `batch` sequences of the shared seq_len, row-major.
  std::vector<TokenId> next(std::size_t batch);

 private:
  struct Cursor {
    std::vector<std::size_t> order;
    std::size_t pos = 0;
  };

  const TrainingData* data_;
  Rng data_rng_;
  Rng domain_rng_;
  std::vector<Cursor> cursors_;
};

/// Input/target views of sequences: inputs are positions [0, T-1), targets
/// positions [1, T).
struct LmBatch {
  TokenBatch inputs;
  std::vector<std::int32_t> targets;
  std::vector<std::uint8_t> mask;
};

LmBatch make_lm_batch(std::span<const TokenId> sequences, std::size_t n_sequences, std::size_t seq_len);

struct TrainResult {
  RunMetrics metrics;
  ModelParams params;
  OptimizerState optimizer;
};

/// Called after every step; returning false stops training early.
using StepCallback = std::function<bool(const StepMetrics&)>;

/// Runs config.total_steps AdamW steps from `init`. Numeric failures are
/// rethrown as NumericError carrying the step index.
TrainResult train(const ModelParams& init, const TrainingData& data, const TrainConfig& config,
                  const StepCallback& on_step = {});

/// Calls fn(sequence index, position, target id, logits row) for every
/// predicted position of every sequence, in sequence order.
using PredictionVisitor =
    std::function<void(std::size_t, std::size_t, TokenId, std::span<const double>)>;
void visit_predictions(const ModelParams& params, const SequenceSet& sequences, std::size_t batch_size,
                       const PredictionVisitor& fn, std::size_t max_sequences = 0);

/// exp(mean cross-entropy) over every predicted position; raw CE regardless
/// of the training loss.
double evaluate_ppl(const ModelParams& params, const SequenceSet& sequences, std::size_t batch_size = 32,
                    std::size_t max_sequences = 0);

/// Model checkpoint plus an optimizer section (step, then "m/<name>" and
/// "v/<name>" tensors in the model encoding).
void save_checkpoint(const std::string& path, const ModelParams& params, const OptimizerState& optimizer);
struct LoadedCheckpoint {
  ModelParams params;
  std::optional<OptimizerState> optimizer;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace mile
