#include "ddt/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

#include "ddt/errors.hpp"

namespace ddt {

namespace {

Batch gather(const Dataset &ds, std::span<const std::size_t> indices) {
  Batch batch;
  batch.images.reserve(indices.size());
  batch.labels.reserve(indices.size());
  for (const auto i : indices) {
    batch.images.push_back(ds.samples[i].image);
    batch.labels.push_back(ds.samples[i].label);
  }
  return batch;
}

LossAndGrad loss_and_grad(TrainingMode mode, const EncoderParams &params, const Batch &batch,
                          const PrototypeDistribution &proto) {
  return mode == TrainingMode::ddt ? ddt_loss_and_grad(params, batch, proto)
                                   : ce_loss_and_grad(params, batch);
}

void check_compatible(const EncoderParams &params, const PrototypeDistribution &proto) {
  if (params.num_classes != proto.num_classes() || params.embedding_dim != proto.embedding_dim())
    throw ConfigError("checkpoint prototype (C=" + std::to_string(params.num_classes) +
                      ", K=" + std::to_string(params.embedding_dim) +
                      ") does not match configured prototype (C=" +
                      std::to_string(proto.num_classes()) +
                      ", K=" + std::to_string(proto.embedding_dim()) + ")");
}

ClassPool class_pool(const Dataset &ds, Split split, int num_classes) {
  ClassPool pool(static_cast<std::size_t>(num_classes));
  for (const auto i : ds.indices(split)) {
    const auto &s = ds.samples[i];
    if (s.label >= 0 && s.label < num_classes)
      pool[s.label].push_back(std::cref(s.image));
  }
  return pool;
}

// Per-sample loss of one prediction, matching the training objective.
double sample_loss(const ClassDistances &cd, TrainingMode mode, int label) {
  if (mode == TrainingMode::ddt)
    return cd.d[label];
  // d holds negated logits; cross-entropy = logsumexp(logits) - logits[label].
  const double top = -*std::min_element(cd.d.begin(), cd.d.end());
  double total = 0.0;
  for (const double v : cd.d)
    total += std::exp(-v - top);
  return std::log(total) + top + cd.d[label];
}

Metrics evaluate_indices(const Checkpoint &ckpt, const PrototypeDistribution &proto,
                         const Dataset &ds, const std::vector<std::size_t> &indices) {
  check_compatible(ckpt.params, proto);
  const int classes = proto.num_classes();
  Metrics m;
  m.per_class_correct.assign(classes, 0);
  m.per_class_total.assign(classes, 0);
  std::vector<double> losses;
  losses.reserve(indices.size());
  for (const auto i : indices) {
    const auto &s = ds.samples[i];
    if (s.label < 0 || s.label >= classes)
      throw IndexError("label " + std::to_string(s.label) + " outside prototype classes");
    const auto cd = classify(ckpt, proto, s.image);
    losses.push_back(sample_loss(cd, ckpt.mode, s.label));
    m.per_class_total[s.label] += 1;
    if (cd.predicted == s.label) {
      m.per_class_correct[s.label] += 1;
      m.correct += 1;
    }
    m.total += 1;
  }
  // Sorted summation keeps the mean independent of sample order.
  std::sort(losses.begin(), losses.end());
  m.mean_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / m.total;
  m.accuracy = static_cast<double>(m.correct) / m.total;
  for (int c = 0; c < classes; ++c)
    m.per_class_accuracy.push_back(
        m.per_class_total[c] == 0
            ? std::nullopt
            : std::optional<double>(static_cast<double>(m.per_class_correct[c]) /
                                    m.per_class_total[c]));
  return m;
}

// One pass over `batches` of pre-augmented images.
EncoderParams run_batches(EncoderParams params, TrainingMode mode, const std::vector<Batch> &batches,
                          const PrototypeDistribution &proto, double lr, double &mean_loss) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto &batch : batches) {
    const auto lg = loss_and_grad(mode, params, batch, proto);
    total += lg.loss * static_cast<double>(batch.images.size());
    count += batch.images.size();
    params = adam_step(std::move(params), lg.grads, lr);
  }
  mean_loss = count == 0 ? 0.0 : total / static_cast<double>(count);
  return params;
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

} // namespace

void TrainConfig::validate() const {
  if (!(pretrain_lr > 0.0) || !(finetune_lr > 0.0))
    throw ConfigError("learning rates must be positive");
  if (plateau_patience < 1 || pretrain_patience < 1 || finetune_patience < 1)
    throw ConfigError("patience values must be >= 1");
  if (batch_size < 1)
    throw ConfigError("batch size must be >= 1");
  if (max_epochs < 0)
    throw ConfigError("max_epochs must be >= 0");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0))
    throw ConfigError("plateau decay factor must lie in (0, 1)");
  if (!(min_improvement >= 0.0))
    throw ConfigError("min_improvement must be >= 0");
  if (p_mix < 0.0 || p_mix > 1.0 || p_flip < 0.0 || p_flip > 1.0)
    throw ConfigError("augmentation probabilities must lie in [0, 1]");
  if (!arch.empty())
    Architecture::parse(arch);
}

bool ImprovementTracker::update(double value) {
  if (value < best_ - threshold_) {
    best_ = value;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

double PlateauScheduler::step(double monitored) {
  if (tracker_.update(monitored)) {
    bad_ = 0;
  } else if (++bad_ >= patience_) {
    lr_ *= factor_;
    bad_ = 0;
  }
  return lr_;
}

bool EarlyStopping::step(double monitored) {
  tracker_.update(monitored);
  return tracker_.stale_epochs() >= patience_;
}

Architecture resolve_architecture(const TrainConfig &config, const PrototypeDistribution &proto,
                                  int image_size) {
  if (config.arch.empty())
    return default_architecture(proto.embedding_dim(), image_size);
  return Architecture::parse(config.arch);
}

PretrainResult pretrain(const TrainConfig &config, const Dataset &source,
                        const PrototypeDistribution &proto) {
  config.validate();
  const auto train_idx0 = source.indices(Split::train);
  const auto val_idx = source.indices(Split::val);
  if (train_idx0.empty())
    throw ConfigError("source dataset has no train split");
  if (val_idx.empty())
    throw ConfigError("source dataset has no val split");

  const int image_size = source.samples[train_idx0.front()].image.height;
  const bool head = config.mode == TrainingMode::ce;
  PretrainResult result;
  result.checkpoint.mode = config.mode;
  result.checkpoint.params =
      init_encoder(resolve_architecture(config, proto, image_size), proto.embedding_dim(),
                   proto.num_classes(), config.seed, head);
  if (config.max_epochs == 0)
    return result;

  std::mt19937_64 rng(config.seed);
  const auto pool = class_pool(source, Split::train, proto.num_classes());
  const auto aug = config.augment();
  PlateauScheduler scheduler(config.pretrain_lr, config.plateau_patience, config.plateau_factor,
                             config.min_improvement);
  EarlyStopping stopper(config.pretrain_patience, config.min_improvement);
  ImprovementTracker best(config.min_improvement);

  Checkpoint current = result.checkpoint;
  auto order = train_idx0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto n = std::min<std::size_t>(config.batch_size, order.size() - start);
      batches.push_back(augment_pretrain(
          gather(source, std::span(order).subspan(start, n)), pool, rng, aug));
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = scheduler.lr();
    current.params = run_batches(std::move(current.params), config.mode, batches, proto, rec.lr,
                                 rec.train_loss);
    const auto val = evaluate_indices(current, proto, source, val_idx);
    rec.val_loss = val.mean_loss;
    rec.val_accuracy = val.accuracy;
    result.history.push_back(rec);

    if (best.update(val.mean_loss))
      result.checkpoint = current;
    scheduler.step(val.mean_loss);
    if (stopper.step(val.mean_loss))
      break;
  }
  return result;
}

Checkpoint finetune(const Checkpoint &checkpoint, const PrototypeDistribution &proto,
                    const Dataset &target_shots, const Dataset &source_pool,
                    const TrainConfig &config, std::vector<EpochRecord> *history) {
  config.validate();
  check_compatible(checkpoint.params, proto);
  if (target_shots.samples.empty())
    return checkpoint;

  std::vector<int> per_class(proto.num_classes(), 0);
  for (const auto &s : target_shots.samples) {
    if (s.label < 0 || s.label >= proto.num_classes())
      throw IndexError("shot label " + std::to_string(s.label) + " outside prototype classes");
    per_class[s.label] += 1;
  }
  const auto pool = class_pool(source_pool, Split::train, proto.num_classes());
  for (int c = 0; c < proto.num_classes(); ++c) {
    if (per_class[c] == 0)
      throw ConfigError("fine-tuning needs at least one shot of class " + std::to_string(c));
    if (pool[c].empty())
      throw ConfigError("source pool has no train images of class " + std::to_string(c));
  }

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  EarlyStopping stopper(config.finetune_patience, config.min_improvement);
  ImprovementTracker best_tracker(config.min_improvement);

  Checkpoint current = checkpoint;
  // Fresh optimizer state for the new phase.
  current.params.opt = AdamState{std::vector<double>(current.params.weights.size(), 0.0),
                                 std::vector<double>(current.params.weights.size(), 0.0), 0};
  Checkpoint best = current;

  std::vector<std::size_t> order(target_shots.samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto n = std::min<std::size_t>(config.batch_size, order.size() - start);
      Batch batch;
      for (std::size_t j = start; j < start + n; ++j) {
        const auto &s = target_shots.samples[order[j]];
        Image img = augment_finetune(s.image, pool[s.label], rng, config.mix_axis);
        if (coin(rng) < config.p_flip)
          img = hflip(img);
        batch.images.push_back(std::move(img));
        batch.labels.push_back(s.label);
      }
      batches.push_back(std::move(batch));
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = config.finetune_lr;
    rec.val_loss = nan();
    rec.val_accuracy = nan();
    current.params = run_batches(std::move(current.params), current.mode, batches, proto,
                                 config.finetune_lr, rec.train_loss);
    if (history)
      history->push_back(rec);
    if (best_tracker.update(rec.train_loss))
      best = current;
    if (stopper.step(rec.train_loss))
      break;
  }
  return best;
}

ClassDistances classify_embedding(const GaussianEmbedding &emb,
                                  const PrototypeDistribution &proto) {
  ClassDistances cd;
  for (int c = 0; c < proto.num_classes(); ++c)
    cd.d.push_back(w2_diag_identity(emb, proto.class_mean(c)));
  cd.predicted =
      static_cast<int>(std::min_element(cd.d.begin(), cd.d.end()) - cd.d.begin());
  return cd;
}

ClassDistances classify_logits(const std::vector<double> &logits) {
  ClassDistances cd;
  for (const double l : logits)
    cd.d.push_back(-l);
  cd.predicted =
      static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  return cd;
}

ClassDistances classify(const Checkpoint &checkpoint, const PrototypeDistribution &proto,
                        const Image &image) {
  check_compatible(checkpoint.params, proto);
  const std::span<const Image> one(&image, 1);
  if (checkpoint.mode == TrainingMode::ce)
    return classify_logits(head_logits(checkpoint.params, one).front());
  return classify_embedding(encode(checkpoint.params, one).front(), proto);
}

Metrics evaluate(const Checkpoint &checkpoint, const PrototypeDistribution &proto,
                 const Dataset &dataset, Split split) {
  const auto idx = dataset.indices(split);
  if (idx.empty())
    throw ConfigError("dataset has no " + to_string(split) + " split");
  return evaluate_indices(checkpoint, proto, dataset, idx);
}

Dataset sample_shots(const Dataset &target, int num_classes, int k, bool per_class,
                     std::uint64_t seed) {
  if (k < 0)
    throw ConfigError("shot count must be >= 0");
  std::vector<int> want(num_classes, per_class ? k : k / num_classes);
  if (!per_class)
    for (int c = 0; c < k % num_classes; ++c)
      want[c] += 1;

  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (const auto i : target.indices(Split::train)) {
    const int y = target.samples[i].label;
    if (y >= 0 && y < num_classes)
      by_class[y].push_back(i);
  }
  std::mt19937_64 rng(seed);
  Dataset shots;
  for (int c = 0; c < num_classes; ++c) {
    if (static_cast<int>(by_class[c].size()) < want[c])
      throw ConfigError("target train pool has " + std::to_string(by_class[c].size()) +
                        " images of class " + std::to_string(c) + ", need " +
                        std::to_string(want[c]));
    std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
    for (int j = 0; j < want[c]; ++j)
      shots.samples.push_back(target.samples[by_class[c][j]]);
  }
  return shots;
}

SweepTable fewshot_sweep(const Checkpoint &pretrained, const PrototypeDistribution &proto,
                         const Dataset &source, const Dataset &target, const SweepConfig &sweep,
                         const TrainConfig &config) {
  config.validate();
  check_compatible(pretrained.params, proto);
  if (sweep.runs < 1)
    throw ConfigError("runs must be >= 1");
  if (!target.has_split(Split::test))
    throw ConfigError("target dataset has no test split");

  struct Cell {
    int shots;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const int k : sweep.shots) {
    if (k < 0)
      throw ConfigError("shot counts must be >= 0");
    if (k == 0) {
      cells.push_back({0, sweep.seed_base});
      continue;
    }
    // Fail fast on an undersized pool before any training starts.
    sample_shots(target, proto.num_classes(), k, config.shots_per_class, sweep.seed_base);
    for (int r = 0; r < sweep.runs; ++r)
      cells.push_back({k, sweep.seed_base + static_cast<std::uint64_t>(r)});
  }

  std::vector<SweepRow> rows(cells.size());
  auto run_cell = [&](std::size_t i) {
    const auto &cell = cells[i];
    Checkpoint model = pretrained;
    if (cell.shots > 0) {
      TrainConfig cfg = config;
      cfg.seed = cell.seed;
      const auto shots =
          sample_shots(target, proto.num_classes(), cell.shots, cfg.shots_per_class, cell.seed);
      model = finetune(pretrained, proto, shots, source, cfg);
    }
    const auto m = evaluate(model, proto, target, Split::test);
    rows[i] = {pretrained.mode, cell.shots, cell.seed, Split::test, m.accuracy, m.mean_loss};
  };

  const int jobs = std::max(1, sweep.jobs);
  if (jobs == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i)
      run_cell(i);
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(jobs);
    for (int w = 0; w < jobs; ++w)
      workers.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < cells.size(); i += jobs)
            run_cell(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto &t : workers)
      t.join();
    for (const auto &e : errors)
      if (e)
        std::rethrow_exception(e);
  }

  SweepTable table;
  table.rows = rows;
  std::vector<int> order;
  for (const int k : sweep.shots)
    if (std::find(order.begin(), order.end(), k) == order.end())
      order.push_back(k);
  for (const int k : order) {
    SweepSummary s;
    s.shots = k;
    std::vector<double> acc;
    for (const auto &r : rows)
      if (r.shots == k)
        acc.push_back(r.accuracy);
    s.runs = static_cast<int>(acc.size());
    s.mean_accuracy = std::accumulate(acc.begin(), acc.end(), 0.0) / s.runs;
    if (s.runs > 1) {
      double sq = 0.0;
      for (const double a : acc)
        sq += (a - s.mean_accuracy) * (a - s.mean_accuracy);
      s.std_accuracy = std::sqrt(sq / (s.runs - 1));
    }
    table.summary.push_back(s);
  }
  return table;
}

std::string sweep_csv(const SweepTable &table) {
  std::string out = "mode,shots,seed,split,accuracy,mean_loss\n";
  char line[256];
  for (const auto &r : table.rows) {
    std::snprintf(line, sizeof(line), "%s,%d,%llu,%s,%.6f,%.6f\n", to_string(r.mode).c_str(),
                  r.shots, static_cast<unsigned long long>(r.seed), to_string(r.split).c_str(),
                  r.accuracy, r.mean_loss);
    out += line;
  }
  return out;
}

std::string sweep_markdown(const SweepTable &table) {
  std::string out = "| Shots | Accuracy (%) |\n|---:|:---:|\n";
  char line[128];
  for (const auto &s : table.summary) {
    std::snprintf(line, sizeof(line), "| %d | %.2f ± %.2f |\n", s.shots, 100.0 * s.mean_accuracy,
                  100.0 * s.std_accuracy);
    out += line;
  }
  return out;
}

std::string history_csv(const std::vector<EpochRecord> &history) {
  std::string out = "epoch,lr,train_loss,val_loss,val_accuracy\n";
  char line[256];
  for (const auto &r : history) {
    std::snprintf(line, sizeof(line), "%d,%.6g,%.6f,%.6f,%.6f\n", r.epoch, r.lr, r.train_loss,
                  r.val_loss, r.val_accuracy);
    out += line;
  }
  return out;
}

} // namespace ddt
