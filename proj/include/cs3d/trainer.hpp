#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "cs3d/events.hpp"
#include "cs3d/network.hpp"

namespace cs3d {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  /// Stop once held-out accuracy reaches this value; 0 disables.
  double target_accuracy = 0.0;
  /// Copy the best-accuracy weights back into the model when training ends.
  bool restore_best = true;
  /// Before each evaluation, replace the batch-norm running statistics by
  /// the average batch statistics over the training set. The momentum
  /// estimate lags far behind when an epoch has only a few steps.
  bool recalibrate_bn = true;

  void validate() const;
};

/// Mean over the batch of -log softmax(logits)[label], max-subtracted.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;

  /// Zero moments shaped like `params`.
  static AdamState for_params(const std::vector<Tensor>& params);
};

/// Bias-corrected Adam update at step t >= 1, in place. Missing gradients
/// (empty spans) count as zero.
void adam_step(std::vector<Tensor>& params, const std::vector<std::span<const double>>& grads,
               AdamState& state, const TrainConfig& cfg, std::size_t t);

struct Metrics {
  std::size_t total = 0;
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<double> per_class_accuracy;           // NaN when a class has no samples

  /// "class,accuracy" block followed by the confusion matrix.
  void write_csv(std::ostream& os) const;
};

Metrics compute_metrics(const std::vector<std::size_t>& predictions,
                        const std::vector<std::size_t>& labels, std::size_t class_count);

/// Row-wise argmax of [B, K] logits, ties to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& logits);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double eval_accuracy = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based, 0 when no epoch ran
  double best_accuracy = 0.0;
  bool reached_target = false;

  /// Header "epoch,train_loss,eval_accuracy".
  void write_csv(std::ostream& os) const;
  void save_csv(const std::filesystem::path& path) const;
};

/// Called after each epoch; used by the CLI for progress output.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded mini-batch Adam training. `eval` defaults to the training set
/// when empty.
TrainingHistory train(Model& m, const Dataset& data, const Dataset& eval, const TrainConfig& cfg,
                      const EpochCallback& on_epoch = {});

Metrics evaluate(Model& m, const Dataset& data, std::size_t batch_size = 16);

/// Sets every running mean/var to the mean over `data` batches of the
/// per-batch statistics (train-mode forward, no tape).
void recalibrate_batchnorm(Model& m, const Dataset& data, std::size_t batch_size);

/// Stacks samples [first, last) of `order` into a [B, C, T, H, W] batch.
Tensor make_batch(const Dataset& data, const std::vector<std::size_t>& order, std::size_t first,
                  std::size_t last, std::vector<std::size_t>& labels);

}  // namespace cs3d
