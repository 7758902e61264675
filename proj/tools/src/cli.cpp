#include "dfd/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"

namespace dfd::cli {

namespace fs = std::filesystem;

// --- config ----------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename U>
U parse_number(const std::string& key, const std::string& value) {
  U out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty())
    throw std::invalid_argument("'" + key + "' expects a number, got '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw std::invalid_argument("'" + key + "' expects true or false, got '" + value + "'");
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
}

}  // namespace

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos || trim(line.substr(0, eq)).empty())
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected 'key = value'");
    out[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_key_values(os.str());
}

Seeds Seeds::from(std::uint64_t seed) {
  return {derive_seed(seed, "split"), derive_seed(seed, "init"), derive_seed(seed, "shuffle"),
          derive_seed(seed, "augment"), derive_seed(seed, "dropout")};
}

void RunConfig::apply(const std::map<std::string, std::string>& values) {
  const auto kind_it = values.find("model");
  const auto scale_it = values.find("scale");
  if (kind_it != values.end() || scale_it != values.end()) {
    const auto kind = kind_it != values.end() ? parse_model_kind(kind_it->second) : model.kind;
    const auto scale = scale_it != values.end() ? parse_scale(scale_it->second) : model.scale;
    model = ModelConfig::defaults(kind, scale);
  }
  for (const auto& [key, value] : values) {
    if (key == "model" || key == "scale") continue;
    if (key == "manifest") manifest = value;
    else if (key == "out") out = value;
    else if (key == "batch") batch_size = parse_number<std::size_t>(key, value);
    else if (key == "epochs") epochs = parse_number<std::size_t>(key, value);
    else if (key == "lr") adam.lr = parse_number<double>(key, value);
    else if (key == "beta1") adam.beta1 = parse_number<double>(key, value);
    else if (key == "beta2") adam.beta2 = parse_number<double>(key, value);
    else if (key == "epsilon") adam.epsilon = parse_number<double>(key, value);
    else if (key == "augment") augment.kind = parse_augment_kind(value);
    else if (key == "n_ops") augment.n_ops = parse_number<std::size_t>(key, value);
    else if (key == "magnitude") augment.magnitude = parse_number<double>(key, value);
    else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
    else if (key == "record_time") record_time = parse_bool(key, value);
    else if (ModelConfig::is_key(key)) model.set(key, value);
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

void RunConfig::validate() const {
  if (manifest.empty()) throw std::invalid_argument("a split manifest is required (--manifest)");
  if (!fs::is_regular_file(manifest)) throw std::invalid_argument("manifest not found: " + manifest.string());
  if (out.empty()) throw std::invalid_argument("an output directory is required (--out)");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  adam.validate();
  augment.validate();
  model.validate();
}

std::string format_prediction(const std::string& path, double p_fake) {
  const double fake_pct = p_fake * 100.0;
  const bool fake = p_fake >= 0.5;
  return path + ", " + (fake ? "fake" : "real") + ", " + fixed(fake_pct, 2) + "%, " + fixed(100.0 - fake_pct, 2) +
         "%";
}

// --- commands -----------------------------------------------------------------------

namespace {

struct SynthArgs {
  std::string out;
  SynthOptions options;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto counts = synth_dataset(a.out, a.options);
  out << "wrote " << counts[kReal] << " real and " << counts[kFake] << " fake images (" << a.options.size << "x"
      << a.options.size << ") to " << a.out << "\n";
  return kOk;
}

struct SplitArgs {
  std::string data;
  std::string manifest;
  std::string fractions = "0.7,0.15,0.15";
  std::uint64_t seed = 1;
  bool histogram = false;
};

SplitFractions parse_fractions(const std::string& text) {
  std::vector<double> v;
  std::string_view rest = text;
  while (true) {
    const auto comma = rest.find(',');
    v.push_back(parse_number<double>("fractions", std::string(trim(rest.substr(0, comma)))));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  if (v.size() != 3) throw std::invalid_argument("--fractions expects three values: train,val,test");
  SplitFractions f{v[0], v[1], v[2]};
  f.validate();
  return f;
}

int cmd_split(const SplitArgs& a, std::ostream& out) {
  const auto fractions = parse_fractions(a.fractions);
  const auto scanned = scan_directory(a.data);
  const auto index = scanned.is_split() ? scanned : split_dataset(scanned, fractions, Seeds::from(a.seed).split);
  const fs::path manifest = a.manifest.empty() ? fs::path(a.data) / "manifest.tsv" : fs::path(a.manifest);
  write_manifest(index, manifest);

  out << "split    real   fake  total\n";
  for (auto s : kSplits) {
    const auto r = index.count(s, kReal), f = index.count(s, kFake);
    char line[80];
    std::snprintf(line, sizeof(line), "%-6s %6zu %6zu %6zu\n", std::string(to_string(s)).c_str(), r, f, r + f);
    out << line;
  }
  out << "manifest: " << manifest.string() << "\n";
  if (a.histogram) {
    const auto report = histogram_check(index);
    out << "luma histogram L1: train-val " << fixed(report.train_val, 4) << ", train-test "
        << fixed(report.train_test, 4) << ", val-test " << fixed(report.val_test, 4)
        << (report.divergent() ? " (divergent)" : " (consistent)") << "\n";
  }
  return kOk;
}

struct TrainArgs {
  std::string config_file;
  std::map<std::string, std::string> flags;
  std::vector<std::string> sets;
};

std::string table_row(const std::string& name, const TrainRecord& r) {
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %9.4f %10.4f %9.4f %10.4f\n", name.c_str(), r.train_acc, r.train_loss,
                r.val_acc, r.val_loss);
  return line;
}

constexpr const char* kTableHeader = "model        train_acc train_loss   val_acc   val_loss\n";

int cmd_train(const TrainArgs& a, std::ostream& out) {
  std::map<std::string, std::string> values;
  if (!a.config_file.empty()) values = read_config_file(a.config_file);
  for (const auto& [k, v] : a.flags) values[k] = v;
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    values[std::string(trim(std::string_view(s).substr(0, eq)))] = std::string(trim(std::string_view(s).substr(eq + 1)));
  }
  RunConfig rc;
  rc.apply(values);
  rc.validate();

  const auto seeds = Seeds::from(rc.seed);
  const auto index = read_manifest(rc.manifest);
  const LoaderOptions train_opts{rc.batch_size, rc.model.height, rc.model.width, true};
  const LoaderOptions val_opts{rc.batch_size, rc.model.height, rc.model.width, false};
  const Loader train(index.of(Split::train), train_opts);
  const Loader val(index.of(Split::val), val_opts);

  Model model = build_model(rc.model, seeds.init);
  const std::string name(to_string(rc.model.kind));
  out << "training " << name << " (" << to_string(rc.model.scale) << ", " << model.count_params()
      << " parameters) on " << train.size() << " train / " << val.size() << " val images\n";

  FitOptions fo;
  fo.epochs = rc.epochs;
  fo.adam = rc.adam;
  fo.shuffle_seed = seeds.shuffle;
  fo.dropout_seed = seeds.dropout;
  fo.augment = rc.augment;
  fo.augment.seed = seeds.augment;
  fo.record_time = rc.record_time;
  const auto result = fit(model, train, val, fo, [&](const TrainRecord& r) {
    out << "epoch " << r.epoch << "/" << rc.epochs << "  train_acc " << fixed(r.train_acc, 4) << "  train_loss "
        << fixed(r.train_loss, 4) << "  val_acc " << fixed(r.val_acc, 4) << "  val_loss " << fixed(r.val_loss, 4)
        << "\n";
  });

  ensure_directory(rc.out);
  save_checkpoint(model, rc.out / "final.ckpt");
  write_curves_csv(result.records, rc.out / "curves.csv");
  model.load_state(result.best_state);
  save_checkpoint(model, rc.out / "best.ckpt");
  write_text(rc.out / "run.cfg", "model = " + name + "\n" + rc.model.to_text() + "seed = " +
                                     std::to_string(rc.seed) + "\nepochs = " + std::to_string(rc.epochs) +
                                     "\nbatch = " + std::to_string(rc.batch_size) + "\nlr = " + shortest(rc.adam.lr) +
                                     "\naugment = " + std::string(to_string(rc.augment.kind)) + "\n");

  if (!result.records.empty()) {
    out << kTableHeader << table_row(name, result.records.back());
    out << "best validation loss at epoch " << *result.best_epoch << "\n";
  } else {
    out << "0 epochs: saved the initialized model\n";
  }
  out << "wrote " << (rc.out / "best.ckpt").string() << ", " << (rc.out / "final.ckpt").string() << ", "
      << (rc.out / "curves.csv").string() << "\n";
  return kOk;
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  std::size_t batch = 16;
  std::string out;
  std::string name;
};

std::string percent(const Ratio& r) {
  return fixed(r.value * 100.0, 2) + "%" + (r.degenerate ? " (degenerate)" : "");
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  if (a.batch == 0) throw std::invalid_argument("batch size must be positive");
  const auto split = parse_split(a.split);
  const Model model = load_checkpoint(a.checkpoint);
  const auto index = read_manifest(a.manifest);
  const auto& cfg = model.config();
  const Loader loader(index.of(split), {a.batch, cfg.height, cfg.width, false});
  const auto result = evaluate_loader(model, loader);
  const auto cm = confusion(std::span<const float>(result.probabilities), std::span<const int>(result.labels));
  const std::string name = a.name.empty() ? std::string(to_string(cfg.kind)) : a.name;
  const auto report = make_report(name, cm);

  out << name << " on " << to_string(split) << " (" << cm.total() << " images)\n";
  out << "accuracy   " << fixed(report.accuracy * 100.0, 2) << "%\n";
  out << "precision  " << percent(report.precision) << "\n";
  out << "recall     " << percent(report.recall) << "\n";
  out << "f1         " << percent(report.f1) << "\n";
  out << "loss       " << fixed(result.loss, 4) << "\n";
  char grid[200];
  std::snprintf(grid, sizeof(grid),
                "confusion (rows actual, columns predicted)\n"
                "           fake    real\n"
                "  fake  %6llu  %6llu\n"
                "  real  %6llu  %6llu\n",
                static_cast<unsigned long long>(cm.tp), static_cast<unsigned long long>(cm.fn),
                static_cast<unsigned long long>(cm.fp), static_cast<unsigned long long>(cm.tn));
  out << grid;

  const fs::path dir = a.out.empty() ? fs::path(a.checkpoint).parent_path() : fs::path(a.out);
  if (!dir.empty()) ensure_directory(dir);
  write_text(dir / "metrics.csv", metrics_csv({report}));
  write_text(dir / "confusion.csv", confusion_csv(cm));
  out << "wrote " << (dir / "metrics.csv").string() << ", " << (dir / "confusion.csv").string() << "\n";
  return kOk;
}

struct PredictArgs {
  std::string checkpoint;
  std::vector<std::string> images;
};

int cmd_predict(const PredictArgs& a, std::ostream& out, std::ostream& err) {
  const Model model = load_checkpoint(a.checkpoint);
  const auto& cfg = model.config();
  std::size_t ok = 0;
  NoGradGuard no_grad;
  for (const auto& path : a.images) {
    try {
      auto planar = load_planar(path, cfg.height, cfg.width);
      const auto input = Tensor::from_values({1, 3, cfg.height, cfg.width}, std::move(planar.values));
      out << format_prediction(path, model.forward(input, Mode::inference).item()) << "\n";
      ++ok;
    } catch (const Error& e) {
      err << path << ", error: " << e.what() << "\n";
    }
  }
  return ok > 0 ? kOk : kFailure;
}

struct ReportArgs {
  std::vector<std::string> curves;
  std::vector<std::string> metrics;
  std::string out;
};

int cmd_report(const ReportArgs& a, std::ostream& out, std::ostream& err) {
  if (a.curves.empty() && a.metrics.empty())
    throw std::invalid_argument("report needs at least one --curves or --metrics input");

  struct Curves {
    std::string name;
    std::vector<TrainRecord> records;
  };
  std::vector<Curves> curves;
  for (const auto& spec : a.curves) {
    const auto eq = spec.find('=');
    fs::path path = eq == std::string::npos ? fs::path(spec) : fs::path(spec.substr(eq + 1));
    std::string name = eq == std::string::npos ? path.parent_path().filename().string() : spec.substr(0, eq);
    if (name.empty()) name = path.stem().string();
    if (!fs::is_regular_file(path)) throw std::invalid_argument("curves file not found: " + path.string());
    try {
      curves.push_back({name, read_curves_csv(path)});
    } catch (const DataError& e) {
      throw std::invalid_argument(e.what());
    }
  }
  std::vector<MetricsReport> metrics;
  for (const auto& path : a.metrics) {
    if (!fs::is_regular_file(path)) throw std::invalid_argument("metrics file not found: " + path);
    try {
      for (auto& r : parse_metrics_csv(read_text(path))) metrics.push_back(std::move(r));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(path + ": " + e.what());
    }
  }

  ensure_directory(a.out);
  const fs::path dir = a.out;
  for (const auto& c : curves) {
    if (c.records.empty()) err << "warning: " << c.name << " has no epochs; plotting empty axes\n";
    Series train_acc{"train", {}}, val_acc{"validation", {}}, train_loss{"train", {}}, val_loss{"validation", {}};
    for (const auto& r : c.records) {
      train_acc.values.push_back(r.train_acc);
      val_acc.values.push_back(r.val_acc);
      train_loss.values.push_back(r.train_loss);
      val_loss.values.push_back(r.val_loss);
    }
    write_text(dir / (c.name + "_accuracy.svg"), render_svg(c.name + " accuracy", "accuracy", {train_acc, val_acc}));
    write_text(dir / (c.name + "_loss.svg"), render_svg(c.name + " loss", "loss", {train_loss, val_loss}));
    out << "wrote " << (dir / (c.name + "_accuracy.svg")).string() << ", " << (dir / (c.name + "_loss.svg")).string()
        << "\n";
  }

  std::ostringstream summary;
  if (!curves.empty()) {
    summary << "Training (final epoch)\n" << kTableHeader;
    for (const auto& c : curves) {
      if (c.records.empty()) summary << c.name << "  (no epochs)\n";
      else summary << table_row(c.name, c.records.back());
    }
  }
  if (!metrics.empty()) {
    if (!curves.empty()) summary << "\n";
    summary << "Evaluation\n";
    std::size_t width = 5;
    for (const auto& m : metrics) width = std::max(width, m.model.size());
    summary << std::string("model") + std::string(width - 5 + 2, ' ') << "accuracy precision recall f1 tp tn fp fn\n";
    for (const auto& m : metrics)
      summary << m.model << std::string(width - m.model.size() + 2, ' ') << shortest(m.accuracy) << ' '
              << shortest(m.precision.value) << ' ' << shortest(m.recall.value) << ' ' << shortest(m.f1.value) << ' '
              << m.cm.tp << ' ' << m.cm.tn << ' ' << m.cm.fp << ' ' << m.cm.fn << '\n';
  }
  write_text(dir / "summary.txt", summary.str());
  out << summary.str() << "wrote " << (dir / "summary.txt").string() << "\n";
  return kOk;
}

}  // namespace

// --- dispatch ----------------------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deepfake image classification toolkit", "dfd"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic real/fake PNG dataset");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--n", synth.options.n_per_class, "Images per class")->capture_default_str();
  c_synth->add_option("--size", synth.options.size, "Image side in pixels")->capture_default_str();
  c_synth->add_option("--noise", synth.options.noise_level, "Gaussian noise std (in [0,1] units)")->capture_default_str();
  c_synth->add_option("--seed", synth.options.seed, "Random seed")->capture_default_str();

  SplitArgs split;
  auto* c_split = app.add_subcommand("split", "Write a stratified train/val/test manifest");
  c_split->add_option("--data", split.data, "Dataset root")->required();
  c_split->add_option("--manifest", split.manifest, "Manifest path (default <data>/manifest.tsv)");
  c_split->add_option("--fractions", split.fractions, "train,val,test fractions")->capture_default_str();
  c_split->add_option("--seed", split.seed, "Random seed")->capture_default_str();
  c_split->add_flag("--histogram", split.histogram, "Compare luma histograms across splits");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model and write checkpoints and curves");
  c_train->add_option("--config", train.config_file, "key = value config file (flags override)");
  const std::pair<const char*, const char*> train_flags[] = {
      {"model", "dfcnet | vfdnet | resnet | mobilenetv3"},
      {"scale", "desk | paper"},
      {"manifest", "Split manifest"},
      {"out", "Output directory"},
      {"epochs", "Epoch count (default 20)"},
      {"batch", "Batch size (default 16)"},
      {"lr", "Adam learning rate (default 0.001)"},
      {"beta1", "Adam beta1 (default 0.9)"},
      {"beta2", "Adam beta2 (default 0.999)"},
      {"epsilon", "Adam epsilon (default 1e-8)"},
      {"augment", "none | basic | rand_augment | auto_lite | combined"},
      {"n_ops", "RandAugment operations per image (default 2)"},
      {"magnitude", "RandAugment magnitude 0-10 (default 9)"},
      {"seed", "Global seed (default 1)"},
  };
  std::map<std::string, std::string> train_values;
  for (const auto& [key, help] : train_flags) {
    std::string flag = std::string("--") + key;
    std::replace(flag.begin() + 2, flag.end(), '_', '-');
    c_train->add_option(flag, train_values[key], help);
  }
  bool record_time = false;
  c_train->add_flag("--record-time", record_time, "Write wall-clock seconds to curves.csv");
  c_train->add_option("--set", train.sets, "Model config override key=value (repeatable)");

  EvaluateArgs eval;
  auto* c_eval = app.add_subcommand("evaluate", "Compute accuracy, precision, recall and F1 on a split");
  c_eval->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  c_eval->add_option("--manifest", eval.manifest, "Split manifest")->required();
  c_eval->add_option("--split", eval.split, "train | val | test")->capture_default_str();
  c_eval->add_option("--batch", eval.batch, "Batch size")->capture_default_str();
  c_eval->add_option("--out", eval.out, "Directory for metrics.csv and confusion.csv");
  c_eval->add_option("--name", eval.name, "Model label in the report");

  PredictArgs predict;
  auto* c_predict = app.add_subcommand("predict", "Classify images as real or fake");
  c_predict->add_option("--checkpoint", predict.checkpoint, "Checkpoint file")->required();
  c_predict->add_option("images", predict.images, "Image files")->required();

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "Plot learning curves and tabulate metrics");
  c_report->add_option("--curves", report.curves, "curves.csv, optionally name=path (repeatable)");
  c_report->add_option("--metrics", report.metrics, "metrics.csv (repeatable)");
  c_report->add_option("--out", report.out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth, out);
    if (c_split->parsed()) return cmd_split(split, out);
    if (c_train->parsed()) {
      for (const auto& [key, help] : train_flags) {
        std::string flag = std::string("--") + key;
        std::replace(flag.begin() + 2, flag.end(), '_', '-');
        if (c_train->count(flag) > 0) train.flags[key] = train_values[key];
      }
      if (record_time) train.flags["record_time"] = "true";
      return cmd_train(train, out);
    }
    if (c_eval->parsed()) return cmd_evaluate(eval, out);
    if (c_predict->parsed()) return cmd_predict(predict, out, err);
    if (c_report->parsed()) return cmd_report(report, out, err);
  } catch (const TrainingDiverged& e) {
    err << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kCheckpoint;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace dfd::cli
