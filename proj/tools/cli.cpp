#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ddt/checkpoint.hpp"
#include "ddt/encoder.hpp"
#include "ddt/errors.hpp"
#include "ddt/protocol.hpp"
#include "ddt/synthdata.hpp"

namespace ddt::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string axis_name(MixAxis axis) { return axis == MixAxis::vertical ? "vertical" : "horizontal"; }

MixAxis parse_axis(const std::string &text) {
  if (text == "vertical")
    return MixAxis::vertical;
  if (text == "horizontal")
    return MixAxis::horizontal;
  throw ConfigError("mix axis must be 'vertical' or 'horizontal', got '" + text + "'");
}

// Every accepted key with its default. A config file may only set keys that
// appear here, with a value of the same JSON kind.
json default_settings() {
  const TrainConfig t;
  const SweepConfig s;
  return {
      {"prototype", {{"classes", 2}, {"dim", 16}}},
      {"model", {{"arch", t.arch}}},
      {"train",
       {{"mode", to_string(t.mode)},
        {"batch_size", t.batch_size},
        {"pretrain_lr", t.pretrain_lr},
        {"plateau_patience", t.plateau_patience},
        {"plateau_factor", t.plateau_factor},
        {"pretrain_patience", t.pretrain_patience},
        {"finetune_lr", t.finetune_lr},
        {"finetune_patience", t.finetune_patience},
        {"max_epochs", t.max_epochs},
        {"min_improvement", t.min_improvement},
        {"p_mix", t.p_mix},
        {"p_flip", t.p_flip},
        {"mix_axis", axis_name(t.mix_axis)},
        {"shots_per_class", t.shots_per_class},
        {"seed", t.seed}}},
      {"data",
       {{"preset", "A"},
        {"seed", 0},
        {"per_class_train", 500},
        {"per_class_val", -1}, // -1: preset default
        {"per_class_test", 100},
        {"image_size", 32}}},
      {"sweep",
       {{"shots", s.shots}, {"runs", s.runs}, {"seed_base", s.seed_base}, {"jobs", s.jobs}}},
  };
}

bool same_kind(const json &a, const json &b) {
  if (a.is_number() && b.is_number())
    return !(a.is_number_integer() || a.is_number_unsigned()) ||
           (b.is_number_integer() || b.is_number_unsigned());
  return a.type() == b.type();
}

void merge(json &base, const json &overlay, const std::string &where) {
  if (!overlay.is_object())
    throw ConfigError("config section '" + where + "' must be an object");
  for (const auto &[key, value] : overlay.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key))
      throw ConfigError("unknown config key '" + path + "'");
    json &slot = base[key];
    if (slot.is_object()) {
      merge(slot, value, path);
    } else {
      if (!same_kind(slot, value))
        throw ConfigError("config key '" + path + "' expects " + std::string(slot.type_name()) +
                          ", got " + value.type_name());
      slot = value;
    }
  }
}

json load_config_file(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error &e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

template <class T> T get(const json &j, const char *section, const char *key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception &e) {
    throw ConfigError(std::string("bad value for ") + section + "." + key + ": " + e.what());
  }
}

TrainConfig train_config(const json &j) {
  TrainConfig t;
  t.mode = parse_mode(get<std::string>(j, "train", "mode"));
  t.arch = get<std::string>(j, "model", "arch");
  t.batch_size = get<int>(j, "train", "batch_size");
  t.pretrain_lr = get<double>(j, "train", "pretrain_lr");
  t.plateau_patience = get<int>(j, "train", "plateau_patience");
  t.plateau_factor = get<double>(j, "train", "plateau_factor");
  t.pretrain_patience = get<int>(j, "train", "pretrain_patience");
  t.finetune_lr = get<double>(j, "train", "finetune_lr");
  t.finetune_patience = get<int>(j, "train", "finetune_patience");
  t.max_epochs = get<int>(j, "train", "max_epochs");
  t.min_improvement = get<double>(j, "train", "min_improvement");
  t.p_mix = get<double>(j, "train", "p_mix");
  t.p_flip = get<double>(j, "train", "p_flip");
  t.mix_axis = parse_axis(get<std::string>(j, "train", "mix_axis"));
  t.shots_per_class = get<bool>(j, "train", "shots_per_class");
  t.seed = get<std::uint64_t>(j, "train", "seed");
  t.validate();
  return t;
}

PrototypeDistribution prototype(const json &j) {
  return PrototypeDistribution(get<int>(j, "prototype", "classes"),
                               get<int>(j, "prototype", "dim"));
}

DomainSpec domain_spec(const json &j) {
  auto spec = preset_domain(get<std::string>(j, "data", "preset"),
                            get<std::uint64_t>(j, "data", "seed"),
                            get<int>(j, "data", "per_class_train"),
                            get<int>(j, "data", "per_class_test"));
  const int val = get<int>(j, "data", "per_class_val");
  if (val >= 0)
    spec.per_class_val = val;
  spec.image_size = get<int>(j, "data", "image_size");
  spec.validate();
  return spec;
}

SweepConfig sweep_config(const json &j) {
  SweepConfig s;
  s.shots = get<std::vector<int>>(j, "sweep", "shots");
  s.runs = get<int>(j, "sweep", "runs");
  s.seed_base = get<std::uint64_t>(j, "sweep", "seed_base");
  s.jobs = get<int>(j, "sweep", "jobs");
  if (s.shots.empty())
    throw ConfigError("sweep.shots must not be empty");
  if (s.jobs < 1)
    throw ConfigError("sweep.jobs must be >= 1");
  return s;
}

std::string display(const json &v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

// Command-line options that override config values when given.
class Overrides {
public:
  explicit Overrides(const json &defaults) : defaults_(defaults) {}

  template <class T>
  CLI::Option *add(CLI::App *app, const std::string &flag, const std::string &pointer,
                   const std::string &help) {
    auto value = std::make_shared<T>();
    const json::json_pointer ptr(pointer);
    auto *opt = app->add_option(flag, *value, help)->default_str(display(defaults_.at(ptr)));
    entries_.push_back({opt, [value, ptr](json &j) { j[ptr] = *value; }});
    return opt;
  }

  CLI::Option *add_flag(CLI::App *app, const std::string &flag, const std::string &pointer,
                        bool when_set, const std::string &help) {
    auto *opt = app->add_flag(flag, help);
    const json::json_pointer ptr(pointer);
    entries_.push_back({opt, [ptr, when_set](json &j) { j[ptr] = when_set; }});
    return opt;
  }

  void apply(json &j) const {
    for (const auto &e : entries_)
      if (e.option->count() > 0)
        e.set(j);
  }

private:
  struct Entry {
    CLI::Option *option;
    std::function<void(json &)> set;
  };
  const json &defaults_;
  std::vector<Entry> entries_;
};

void add_prototype_flags(CLI::App *app, Overrides &o) {
  o.add<int>(app, "--classes", "/prototype/classes", "Number of classes C");
  o.add<int>(app, "--dim", "/prototype/dim", "Embedding dimension K (multiple of C)");
}

void add_train_flags(CLI::App *app, Overrides &o) {
  o.add<std::string>(app, "--arch", "/model/arch",
                     "Encoder architecture text; empty picks the default for K");
  o.add<int>(app, "--batch-size", "/train/batch_size", "Mini-batch size");
  o.add<int>(app, "--max-epochs", "/train/max_epochs", "Epoch cap");
  o.add<double>(app, "--pretrain-lr", "/train/pretrain_lr", "Initial pre-training learning rate");
  o.add<int>(app, "--plateau-patience", "/train/plateau_patience",
             "Bad validation epochs before the learning rate decays");
  o.add<double>(app, "--plateau-factor", "/train/plateau_factor", "Learning-rate decay factor");
  o.add<int>(app, "--pretrain-patience", "/train/pretrain_patience",
             "Early-stopping patience on validation loss");
  o.add<double>(app, "--finetune-lr", "/train/finetune_lr", "Fine-tuning learning rate");
  o.add<int>(app, "--finetune-patience", "/train/finetune_patience",
             "Early-stopping patience on fine-tuning training loss");
  o.add<double>(app, "--p-mix", "/train/p_mix", "Spatial mixup probability in pre-training");
  o.add<double>(app, "--p-flip", "/train/p_flip", "Horizontal flip probability");
  o.add<std::string>(app, "--mix-axis", "/train/mix_axis", "Mixup seam: vertical or horizontal");
  o.add_flag(app, "--total-shots", "/train/shots_per_class", false,
             "Count shots over all classes instead of per class");
  o.add<std::uint64_t>(app, "--seed", "/train/seed", "Training seed");
}

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << text;
  if (!out)
    throw IoError("write failed for " + path.string());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

struct Args {
  std::string config;
  std::string out;
  std::string data;
  std::string model;
  std::string target;
  std::string source;
  std::string split = "test";
  int shots = 0;
  bool corrupt_gradient = false;
};

int gen_data(const json &j, const Args &a, std::ostream &out, std::ostream &err) {
  const auto spec = domain_spec(j);
  const auto ds = generate_domain(spec);
  const auto manifest = write_dataset(ds, a.out);
  err << "wrote " << ds.samples.size() << " images for domain " << spec.domain_id << "\n";
  out << manifest.string() << "\n";
  return kOk;
}

int pretrain_cmd(const json &j, const Args &a, std::ostream &out, std::ostream &err) {
  const auto cfg = train_config(j);
  const auto proto = prototype(j);
  const auto source = load_dataset(a.data);
  const auto result = pretrain(cfg, source, proto);

  save_checkpoint(result.checkpoint, a.out);
  fs::path history = a.out;
  history.replace_extension(".history.csv");
  write_text(history, history_csv(result.history));
  for (const auto &r : result.history)
    err << "epoch " << r.epoch << " lr " << r.lr << " train " << fmt(r.train_loss) << " val "
        << fmt(r.val_loss) << " acc " << fmt(r.val_accuracy) << "\n";

  const auto val = evaluate(result.checkpoint, proto, source, Split::val);
  out << "val_loss," << fmt(val.mean_loss) << "\nval_accuracy," << fmt(val.accuracy) << "\n";
  return kOk;
}

int finetune_cmd(const json &j, const Args &a, std::ostream &out, std::ostream &err) {
  const auto cfg = train_config(j);
  const auto proto = prototype(j);
  const auto ckpt = load_checkpoint(a.model);
  const auto target = load_dataset(a.target);
  const auto source = load_dataset(a.source);
  const auto shots = sample_shots(target, proto.num_classes(), a.shots, cfg.shots_per_class,
                                  cfg.seed);
  std::vector<EpochRecord> history;
  const auto tuned = finetune(ckpt, proto, shots, source, cfg, &history);
  save_checkpoint(tuned, a.out);
  err << "fine-tuned on " << shots.samples.size() << " target images for " << history.size()
      << " epochs\n";
  double best = std::numeric_limits<double>::quiet_NaN();
  for (const auto &r : history)
    best = std::isnan(best) ? r.train_loss : std::min(best, r.train_loss);
  out << "train_loss," << fmt(best) << "\n";
  return kOk;
}

int eval_cmd(const json &j, const Args &a, std::ostream &out, std::ostream &err) {
  const auto proto = prototype(j);
  const auto ckpt = load_checkpoint(a.model);
  const auto split = parse_split(a.split);
  if (!split)
    throw ConfigError("unknown split '" + a.split + "'");
  const auto m = evaluate(ckpt, proto, load_dataset(a.data), *split);
  for (std::size_t c = 0; c < m.per_class_accuracy.size(); ++c)
    err << "class " << c << ": "
        << (m.per_class_accuracy[c] ? fmt(*m.per_class_accuracy[c]) : std::string("absent"))
        << " (" << m.per_class_correct[c] << "/" << m.per_class_total[c] << ")\n";

  SweepTable table;
  table.rows.push_back({ckpt.mode, 0, get<std::uint64_t>(j, "sweep", "seed_base"), *split,
                        m.accuracy, m.mean_loss});
  const auto csv = sweep_csv(table);
  if (!a.out.empty())
    write_text(a.out, csv);
  out << csv;
  return kOk;
}

int sweep_cmd(const json &j, const Args &a, std::ostream &out, std::ostream &err) {
  const auto cfg = train_config(j);
  const auto proto = prototype(j);
  const auto sweep = sweep_config(j);
  const auto ckpt = load_checkpoint(a.model);
  const auto target = load_dataset(a.target);
  const auto source = load_dataset(a.source);
  const auto table = fewshot_sweep(ckpt, proto, source, target, sweep, cfg);

  const auto csv = sweep_csv(table);
  const auto md = sweep_markdown(table);
  write_text(a.out, csv);
  fs::path md_path = a.out;
  md_path.replace_extension(".md");
  write_text(md_path, md);
  err << md;
  out << csv;
  return kOk;
}

int gradcheck_cmd(const json &j, const Args &a, std::ostream &out, std::ostream &) {
  constexpr double kStep = 1e-3;
  constexpr double kTolerance = 1e-4;
  const auto seed = get<std::uint64_t>(j, "train", "seed");
  const PrototypeDistribution proto(2, 4);
  const auto arch =
      Architecture::parse("input:8x8x3 conv:3-4:k3:s2 conv:4-6:k3:s2 dense:12 dense:8");
  const auto params = init_encoder(arch, 4, 2, seed, true);

  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Batch batch;
  for (int i = 0; i < 4; ++i) {
    Image img(8, 8);
    for (auto &v : img.pixels)
      v = u(rng);
    batch.images.push_back(std::move(img));
    batch.labels.push_back(i % 2);
  }

  auto corrupt = [&](LossAndGrad lg) {
    if (a.corrupt_gradient) {
      auto it = std::max_element(lg.grads.begin(), lg.grads.end(),
                                 [](double x, double y) { return std::abs(x) < std::abs(y); });
      *it *= 2.0;
    }
    return lg;
  };
  const double ddt_err = finite_diff_check(
      params, [&](const EncoderParams &p) { return corrupt(ddt_loss_and_grad(p, batch, proto)); },
      kStep);
  const double ce_err = finite_diff_check(
      params, [&](const EncoderParams &p) { return corrupt(ce_loss_and_grad(p, batch)); }, kStep);

  char line[128];
  std::snprintf(line, sizeof(line), "ddt,%.3e\nce,%.3e\n", ddt_err, ce_err);
  out << "loss,max_relative_error\n" << line;
  return ddt_err <= kTolerance && ce_err <= kTolerance ? kOk : kVerificationFailed;
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  const json defaults = default_settings();
  Overrides overrides(defaults);
  Args a;

  CLI::App app{"Deep Distribution Transfer: training, transfer and evaluation on synthetic "
               "domain-shift data",
               "ddt"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  auto config_option = [&](CLI::App *cmd) {
    cmd->add_option("--config", a.config,
                    "JSON config file with sections prototype, model, train, data, sweep; "
                    "flags take precedence")
        ->check(CLI::ExistingFile);
  };

  auto *gen = app.add_subcommand("gen-data", "Generate a synthetic domain as PPM images + index.tsv");
  config_option(gen);
  gen->add_option("--out", a.out, "Output directory")->required();
  overrides.add<std::string>(gen, "--preset", "/data/preset", "Domain preset: A or B");
  overrides.add<std::uint64_t>(gen, "--seed", "/data/seed", "Generator seed");
  overrides.add<int>(gen, "--per-class-train", "/data/per_class_train", "Train pairs per class");
  overrides.add<int>(gen, "--per-class-val", "/data/per_class_val",
                     "Validation images per class (-1: preset default)");
  overrides.add<int>(gen, "--per-class-test", "/data/per_class_test", "Test images per class");
  overrides.add<int>(gen, "--image-size", "/data/image_size", "Square image side in pixels");

  auto *pre = app.add_subcommand("pretrain", "Pre-train an encoder on a source dataset");
  config_option(pre);
  pre->add_option("--data", a.data, "Source dataset directory (needs train and val)")->required();
  pre->add_option("--out", a.out, "Checkpoint path; history goes to <stem>.history.csv")
      ->required();
  overrides.add<std::string>(pre, "--mode", "/train/mode", "Objective: ddt or ce");
  add_prototype_flags(pre, overrides);
  add_train_flags(pre, overrides);

  auto *ft = app.add_subcommand("finetune", "Fine-tune a checkpoint on k target shots");
  config_option(ft);
  ft->add_option("--model", a.model, "Input checkpoint")->required();
  ft->add_option("--target", a.target, "Target dataset directory")->required();
  ft->add_option("--source", a.source, "Source dataset directory (mixup pool)")->required();
  ft->add_option("--shots", a.shots, "Shots k (per class unless --total-shots)")->required();
  ft->add_option("--out", a.out, "Output checkpoint")->required();
  add_prototype_flags(ft, overrides);
  add_train_flags(ft, overrides);

  auto *ev = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  config_option(ev);
  ev->add_option("--model", a.model, "Checkpoint")->required();
  ev->add_option("--data", a.data, "Dataset directory")->required();
  ev->add_option("--split", a.split, "train, val or test")->capture_default_str();
  ev->add_option("--out", a.out, "Also write the result CSV here");
  add_prototype_flags(ev, overrides);
  overrides.add<std::uint64_t>(ev, "--seed-base", "/sweep/seed_base",
                               "Seed recorded in the result row");

  auto *sw = app.add_subcommand("sweep", "Few-shot sweep: fine-tune and evaluate per (k, run)");
  config_option(sw);
  sw->add_option("--model", a.model, "Pre-trained checkpoint")->required();
  sw->add_option("--target", a.target, "Target dataset directory")->required();
  sw->add_option("--source", a.source, "Source dataset directory (mixup pool)")->required();
  sw->add_option("--out", a.out, "CSV output; the markdown table goes to <stem>.md")->required();
  overrides.add<std::vector<int>>(sw, "--shots", "/sweep/shots", "Comma-separated shot counts")
      ->delimiter(',');
  overrides.add<int>(sw, "--runs", "/sweep/runs", "Runs (seeds) per shot count");
  overrides.add<std::uint64_t>(sw, "--seed-base", "/sweep/seed_base", "Seed of run 0");
  overrides.add<int>(sw, "--jobs", "/sweep/jobs", "Worker threads");
  add_prototype_flags(sw, overrides);
  add_train_flags(sw, overrides);

  auto *gc = app.add_subcommand("gradcheck",
                                "Finite-difference check of both losses on a tiny network");
  overrides.add<std::uint64_t>(gc, "--seed", "/train/seed", "Network and input seed");
  gc->add_flag("--corrupt-gradient", a.corrupt_gradient)->group("");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    json settings = defaults;
    if (!a.config.empty())
      merge(settings, load_config_file(a.config), "");
    overrides.apply(settings);
    err << "effective config:\n" << settings.dump(2) << "\n";

    if (gen->parsed())
      return gen_data(settings, a, out, err);
    if (pre->parsed())
      return pretrain_cmd(settings, a, out, err);
    if (ft->parsed())
      return finetune_cmd(settings, a, out, err);
    if (ev->parsed())
      return eval_cmd(settings, a, out, err);
    if (sw->parsed())
      return sweep_cmd(settings, a, out, err);
    return gradcheck_cmd(settings, a, out, err);
  } catch (const IoError &e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const FormatError &e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const ManifestError &e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const Error &e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception &e) {
    err << "internal error: " << e.what() << "\n";
    return kVerificationFailed;
  }
}

} // namespace ddt::cli
