#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ddt/augment.hpp"
#include "ddt/checkpoint.hpp"
#include "ddt/encoder.hpp"
#include "ddt/prototype.hpp"
#include "ddt/synthdata.hpp"

namespace ddt {

struct TrainConfig {
  TrainingMode mode = TrainingMode::ddt;
  std::string arch;    // canonical architecture text; empty selects the default
  int batch_size = 32;
  double pretrain_lr = 1e-3;
  int plateau_patience = 5;
  double plateau_factor = 0.1;
  int pretrain_patience = 10; // early stop on validation loss
  double finetune_lr = 1e-5;
  int finetune_patience = 30; // early stop on training loss
  int max_epochs = 200;
  double min_improvement = 1e-6; // a loss improves only if it drops by more than this
  double p_mix = 0.5;
  double p_flip = 0.5;
  MixAxis mix_axis = MixAxis::vertical;
  bool shots_per_class = true;
  std::uint64_t seed = 0;

  /// Throws ConfigError on invariant violations.
  void validate() const;
  AugmentConfig augment() const { return {p_mix, p_flip, mix_axis}; }
};

/// Counts epochs since the monitored value last dropped by more than `threshold`.
class ImprovementTracker {
public:
  explicit ImprovementTracker(double threshold) : threshold_(threshold) {}

  /// Returns true when `value` improves on the best seen so far.
  bool update(double value);
  int stale_epochs() const { return stale_; }
  /// +infinity until the first update.
  double best() const { return best_; }

private:
  double threshold_;
  double best_ = std::numeric_limits<double>::infinity();
  int stale_ = 0;
};

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// non-improving epochs, then starts counting again.
class PlateauScheduler {
public:
  PlateauScheduler(double lr, int patience, double factor, double threshold)
      : lr_(lr), patience_(patience), factor_(factor), tracker_(threshold) {}

  /// Feed one epoch's monitored loss; returns the learning rate for the next epoch.
  double step(double monitored);
  double lr() const { return lr_; }

private:
  double lr_;
  int patience_;
  double factor_;
  ImprovementTracker tracker_;
  int bad_ = 0;
};

class EarlyStopping {
public:
  EarlyStopping(int patience, double threshold) : patience_(patience), tracker_(threshold) {}

  /// Feed one epoch's monitored loss; returns true when training should stop.
  bool step(double monitored);

private:
  int patience_;
  ImprovementTracker tracker_;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;     // NaN when there is no validation pass
  double val_accuracy = 0.0; // NaN when there is no validation pass
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> history;
};

/// Architecture for `config`, defaulting to the desk-scale encoder.
Architecture resolve_architecture(const TrainConfig &config, const PrototypeDistribution &proto,
                                  int image_size);

/**
 * Source pre-training. Uses the train split for updates and the val split for
 * plateau decay, early stopping, and picking the returned (best) checkpoint.
 */
PretrainResult pretrain(const TrainConfig &config, const Dataset &source,
                        const PrototypeDistribution &proto);

/**
 * Few-shot fine-tuning on every sample in `target_shots`, each mixed every
 * epoch with a same-class image from the train split of `source_pool`.
 * An empty `target_shots` returns the checkpoint unchanged.
 */
Checkpoint finetune(const Checkpoint &checkpoint, const PrototypeDistribution &proto,
                    const Dataset &target_shots, const Dataset &source_pool,
                    const TrainConfig &config, std::vector<EpochRecord> *history = nullptr);

struct ClassDistances {
  std::vector<double> d;
  int predicted = 0;
};

/// d_c = W2(embedding, component c); predicted = argmin, lowest index on ties.
ClassDistances classify_embedding(const GaussianEmbedding &emb,
                                  const PrototypeDistribution &proto);
/// d = -logits; predicted = argmax of logits, lowest index on ties.
ClassDistances classify_logits(const std::vector<double> &logits);

ClassDistances classify(const Checkpoint &checkpoint, const PrototypeDistribution &proto,
                        const Image &image);

struct Metrics {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::vector<std::optional<double>> per_class_accuracy; // empty class -> nullopt
  std::vector<int> per_class_correct;
  std::vector<int> per_class_total;
  int correct = 0;
  int total = 0;

  bool operator==(const Metrics &) const = default;
};

/// Per-image classification over one split. Throws ConfigError if the split is empty.
Metrics evaluate(const Checkpoint &checkpoint, const PrototypeDistribution &proto,
                 const Dataset &dataset, Split split);

/**
 * k shots drawn without replacement from the train split of `target`.
 * Per-class semantics draws k of every class; total semantics spreads k over
 * the classes, lowest labels taking the remainder.
 */
Dataset sample_shots(const Dataset &target, int num_classes, int k, bool per_class,
                     std::uint64_t seed);

struct SweepRow {
  TrainingMode mode = TrainingMode::ddt;
  int shots = 0;
  std::uint64_t seed = 0;
  Split split = Split::test;
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

struct SweepSummary {
  int shots = 0;
  int runs = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0; // sample standard deviation, 0 for a single run
};

struct SweepTable {
  std::vector<SweepRow> rows;
  std::vector<SweepSummary> summary;
};

struct SweepConfig {
  std::vector<int> shots = {0, 5, 10, 25, 50, 100};
  int runs = 10;
  std::uint64_t seed_base = 0;
  int jobs = 1;
};

/**
 * For each k and run r (seed = seed_base + r): draw k target shots, fine-tune,
 * evaluate on the target test split. k = 0 is evaluated once, without
 * touching target training data.
 */
SweepTable fewshot_sweep(const Checkpoint &pretrained, const PrototypeDistribution &proto,
                         const Dataset &source, const Dataset &target, const SweepConfig &sweep,
                         const TrainConfig &config);

/// "mode,shots,seed,split,accuracy,mean_loss" with 6 decimals, LF endings.
std::string sweep_csv(const SweepTable &table);
/// Markdown table with one row per shot count and mean +- std accuracy in percent.
std::string sweep_markdown(const SweepTable &table);
/// "epoch,lr,train_loss,val_loss,val_accuracy".
std::string history_csv(const std::vector<EpochRecord> &history);

} // namespace ddt
