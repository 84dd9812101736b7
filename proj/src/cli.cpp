#include "ecgxai/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "ecgxai/cluster.hpp"
#include "ecgxai/error.hpp"
#include "ecgxai/fcn.hpp"
#include "ecgxai/signal.hpp"
#include "ecgxai/stats.hpp"
#include "ecgxai/synth.hpp"
#include "ecgxai/trainer.hpp"
#include "ecgxai/xai.hpp"

namespace ecgxai::cli {

namespace fs = std::filesystem;

namespace {

struct KeySpec {
  std::string name;
  std::string fallback;
  std::string help;
  bool flag = false;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& text, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, sep);) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Flat key=value settings for one subcommand: defaults, then the config
// file, then explicit flags.
class Settings {
 public:
  Settings(std::string command, std::vector<KeySpec> keys) : command_(std::move(command)), keys_(std::move(keys)) {
    for (const auto& k : keys_) values_[k.name] = k.fallback;
  }

  const std::vector<KeySpec>& keys() const { return keys_; }

  void load_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = trim(line);
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
      }
      std::string key = trim(line.substr(0, eq));
      std::replace(key.begin(), key.end(), '_', '-');
      if (!values_.contains(key)) {
        throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": unknown key '" + key +
                              "' for command " + command_);
      }
      values_[key] = trim(line.substr(eq + 1));
    }
  }

  void set(const std::string& key, const std::string& value) { values_.at(key) = value; }

  const std::string& str(const std::string& key) const { return values_.at(key); }

  long integer(const std::string& key) const {
    const auto& v = str(key);
    try {
      std::size_t used = 0;
      const long x = std::stol(v, &used);
      if (used == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ValidationError("--" + key + " expects an integer, got '" + v + "'");
  }

  std::uint64_t seed(const std::string& key) const {
    const auto& v = str(key);
    try {
      std::size_t used = 0;
      if (!v.empty() && v[0] != '-') {
        const auto x = std::stoull(v, &used);
        if (used == v.size()) return x;
      }
    } catch (const std::exception&) {
    }
    throw ValidationError("--" + key + " expects a non-negative integer, got '" + v + "'");
  }

  double real(const std::string& key) const {
    const auto& v = str(key);
    try {
      std::size_t used = 0;
      const double x = std::stod(v, &used);
      if (used == v.size() && std::isfinite(x)) return x;
    } catch (const std::exception&) {
    }
    throw ValidationError("--" + key + " expects a finite number, got '" + v + "'");
  }

  bool flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off" || v.empty()) return false;
    throw ValidationError("--" + key + " expects a boolean, got '" + v + "'");
  }

  std::vector<int> int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& item : split_list(str(key))) {
      try {
        std::size_t used = 0;
        const int x = std::stoi(item, &used);
        if (used == item.size()) {
          out.push_back(x);
          continue;
        }
      } catch (const std::exception&) {
      }
      throw ValidationError("--" + key + " expects a comma-separated integer list, got '" + str(key) + "'");
    }
    return out;
  }

  // Resolved settings in a form load_file() accepts.
  void write(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << "# ecgxai " << command_ << " --config " << path.filename().string() << '\n';
    for (const auto& k : keys_) out << k.name << '=' << values_.at(k.name) << '\n';
  }

 private:
  std::string command_;
  std::vector<KeySpec> keys_;
  std::map<std::string, std::string> values_;
};

fs::path output_dir(const Settings& s) {
  std::string dir = s.str("out");
  if (dir.empty()) {
    if (const char* env = std::getenv(kOutputDirEnv); env && *env) dir = env;
  }
  if (dir.empty()) throw ValidationError(std::string("no output directory: pass --out or set ") + kOutputDirEnv);
  fs::create_directories(dir);
  return dir;
}

fs::path required_path(const Settings& s, const std::string& key) {
  const auto& v = s.str(key);
  if (v.empty()) throw ValidationError("--" + key + " is required");
  if (!fs::exists(v)) throw ValidationError("--" + key + " path does not exist: " + v);
  return v;
}

std::vector<std::string> lead_names_of(const signal::LabeledDataset& ds) {
  if (!ds.signals.empty() && ds.signals.front().lead_names().size() == static_cast<std::size_t>(ds.leads)) {
    return ds.signals.front().lead_names();
  }
  if (ds.leads == signal::kDefaultLeads) {
    const auto& std_names = signal::standard_lead_names();
    return {std_names.begin(), std_names.end()};
  }
  std::vector<std::string> out;
  for (int l = 0; l < ds.leads; ++l) out.push_back("L" + std::to_string(l));
  return out;
}

std::vector<fcn::LayerSpec> parse_layers(const std::string& text, fcn::Variant variant) {
  if (trim(text).empty()) return fcn::default_layers(variant);
  std::vector<fcn::LayerSpec> out;
  for (const auto& item : split_list(text)) {
    const auto parts = split_list(item, ':');
    fcn::LayerSpec spec;
    bool ok = parts.size() == 3;
    try {
      if (ok) {
        spec.filters = std::stoi(parts[0]);
        spec.kernel = std::stoi(parts[1]);
        spec.stride = std::stoi(parts[2]);
      }
    } catch (const std::exception&) {
      ok = false;
    }
    if (!ok) throw ValidationError("--layers expects filters:kernel:stride entries, got '" + item + "'");
    out.push_back(spec);
  }
  return out;
}

void check_model_fits(const fcn::FcnModel& model, const signal::LabeledDataset& ds) {
  if (model.steps != ds.steps || model.leads != ds.leads || model.class_count != ds.class_count) {
    throw ValidationError("checkpoint expects T=" + std::to_string(model.steps) + " L=" +
                          std::to_string(model.leads) + " C=" + std::to_string(model.class_count) +
                          ", dataset has T=" + std::to_string(ds.steps) + " L=" + std::to_string(ds.leads) +
                          " C=" + std::to_string(ds.class_count));
  }
}

signal::SplitIndices split_for(const Settings& s, const signal::LabeledDataset& ds, const fs::path& fallback_dir) {
  fs::path path = s.str("split");
  if (path.empty()) path = fallback_dir / "split.csv";
  if (!fs::exists(path)) throw ValidationError("split file not found: " + path.string());
  auto split = signal::read_split(path);
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    for (auto i : *part) {
      if (i >= ds.size()) throw ValidationError("split index " + std::to_string(i) + " exceeds the dataset");
    }
  }
  return split;
}

fcn::Tensor<float> single(const signal::LabeledDataset& ds, std::size_t index, fcn::Variant variant) {
  const std::size_t idx[1] = {index};
  return fcn::make_batch<float>(ds, idx, fcn::layout_of(variant));
}

// ---------------------------------------------------------------------------

std::vector<KeySpec> gen_keys() {
  return {{"out", "", "Output dataset directory"},
          {"samples-per-class", "100", "Samples generated per class"},
          {"classes", "24", "Number of classes"},
          {"steps", "200", "Time steps per signal"},
          {"leads", "12", "Number of leads"},
          {"noise-std", "0.05", "Gaussian noise standard deviation"},
          {"jitter", "10", "Maximum absolute time shift in steps"},
          {"variants", "1", "Morphological sub-types per class"},
          {"active-leads", "", "Comma-separated leads allowed to carry signal (names or indices)"},
          {"seed", "7", "Random seed"}};
}

int cmd_gen(const Settings& s, std::ostream& out) {
  synth::GeneratorConfig g;
  g.samples_per_class = static_cast<int>(s.integer("samples-per-class"));
  g.class_count = static_cast<int>(s.integer("classes"));
  g.steps = static_cast<int>(s.integer("steps"));
  g.leads = static_cast<int>(s.integer("leads"));
  g.noise_std = s.real("noise-std");
  g.jitter = static_cast<int>(s.integer("jitter"));
  g.variants = static_cast<int>(s.integer("variants"));
  g.seed = s.seed("seed");
  for (const auto& item : split_list(s.str("active-leads"))) {
    const bool numeric = std::all_of(item.begin(), item.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
    g.active_leads.push_back(numeric ? std::stoi(item) : signal::lead_index(item));
  }
  g.validate();
  const auto dir = output_dir(s);
  const auto ds = synth::generate_dataset(g);
  signal::write_dataset(ds, dir);
  s.write(dir / "resolved_config.txt");
  out << "N=" << ds.size() << " T=" << ds.steps << " L=" << ds.leads << " C=" << ds.class_count << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

std::vector<KeySpec> train_keys() {
  return {{"data", "", "Dataset directory"},
          {"out", "", "Run output directory"},
          {"variant", "image2d", "stacked1d, multichannel1d or image2d"},
          {"layers", "", "Blocks as filters:kernel:stride,... (default: tuned per variant)"},
          {"epochs", "100", "Maximum training epochs"},
          {"batch-size", "32", "Minibatch size"},
          {"lr", "0.001", "Learning rate"},
          {"optimizer", "adam", "adam or sgd"},
          {"momentum", "0", "SGD momentum"},
          {"patience", "15", "Epochs without validation improvement before stopping"},
          {"seed", "1", "Seed for initialization, split and shuffling"},
          {"fine-tune-epochs", "0", "Dense-head fine-tuning epochs after training (0 = skip)"},
          {"fine-tune-lr", "0.0001", "Learning rate of the fine-tuning stage"},
          {"split", "", "Existing split CSV (default: stratified split from --seed)"},
          {"split-ratios", "0.75,0.15,0.10", "Train, validation and test fractions"},
          {"groups", "3,5,9,11", "Class groups for grouped metrics, ';'-separated"},
          {"verbose", "1", "Log every epoch to stderr", true}};
}

void write_group_metrics(const train::ClassMetrics& metrics, const std::string& spec, int classes,
                         const fs::path& path, std::ostream& err) {
  std::vector<std::vector<int>> groups;
  for (const auto& g : split_list(spec, ';')) {
    std::vector<int> members;
    for (const auto& item : split_list(g)) members.push_back(std::stoi(item));
    if (std::any_of(members.begin(), members.end(), [&](int c) { return c < 0 || c >= classes; })) {
      err << "note: group {" << g << "} skipped, it names classes outside 0.." << classes - 1 << '\n';
      continue;
    }
    groups.push_back(std::move(members));
  }
  if (groups.empty()) return;
  const auto grouped = train::grouped_metrics(metrics, groups);
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "group,tp,fn,fp,tn,sensitivity,specificity\n" << std::fixed << std::setprecision(2);
  for (const auto& g : grouped) {
    std::string name;
    for (std::size_t i = 0; i < g.classes.size(); ++i) name += (i ? "|" : "") + std::to_string(g.classes[i]);
    out << name << ',' << g.counts.tp << ',' << g.counts.fn << ',' << g.counts.fp << ',' << g.counts.tn << ','
        << g.counts.sensitivity << ',' << g.counts.specificity << '\n';
  }
}

int cmd_train(const Settings& s, std::ostream& out, std::ostream& err) {
  const auto ds = signal::read_dataset(required_path(s, "data"));
  const auto variant = fcn::parse_variant(s.str("variant"));
  const auto layers = parse_layers(s.str("layers"), variant);
  const auto seed = s.seed("seed");

  train::TrainConfig tc;
  tc.epochs = static_cast<int>(s.integer("epochs"));
  tc.batch_size = static_cast<int>(s.integer("batch-size"));
  tc.learning_rate = s.real("lr");
  tc.optimizer = train::parse_optimizer(s.str("optimizer"));
  tc.sgd_momentum = s.real("momentum");
  tc.patience = static_cast<int>(s.integer("patience"));
  tc.seed = seed;
  tc.verbose = s.flag("verbose");
  tc.validate();
  const long ft_epochs = s.integer("fine-tune-epochs");
  if (ft_epochs < 0) throw ValidationError("--fine-tune-epochs must be >= 0");

  signal::SplitIndices split;
  if (!s.str("split").empty()) {
    split = split_for(s, ds, {});
  } else {
    const auto r = split_list(s.str("split-ratios"));
    if (r.size() != 3) throw ValidationError("--split-ratios expects three fractions");
    signal::SplitRatios ratios{std::stod(r[0]), std::stod(r[1]), std::stod(r[2])};
    split = signal::stratified_split(ds, ratios, seed);
  }

  const auto dir = output_dir(s);
  s.write(dir / "resolved_config.txt");
  auto model = fcn::build_model<float>(variant, layers, ds.class_count, ds.steps, ds.leads, seed);
  auto fitted = train::fit(model, ds, split, tc);
  train::write_history_csv(fitted.history, dir / "history.csv");
  if (ft_epochs > 0) {
    auto ft = tc;
    ft.epochs = static_cast<int>(ft_epochs);
    ft.learning_rate = s.real("fine-tune-lr");
    auto tuned = train::fine_tune(fitted.model, ds, split, ft);
    train::write_history_csv(tuned.history, dir / "fine_tune_history.csv");
    fitted.model = std::move(tuned.model);
  }
  fcn::write_checkpoint(fitted.model, dir / "model.fcnw");
  signal::write_split(split, dir / "split.csv");

  const auto predicted = train::predict(fitted.model, ds, split.test);
  std::vector<int> truth;
  for (auto i : split.test) truth.push_back(ds.labels[i]);
  const auto metrics = train::metrics_from_predictions(truth, predicted, ds.class_count);
  train::write_metrics_csv(metrics, dir / "metrics.csv");
  write_group_metrics(metrics, s.str("groups"), ds.class_count, dir / "group_metrics.csv", err);
  {
    std::ofstream p(dir / "predictions.csv");
    if (!p) throw FormatError("cannot write predictions.csv");
    p << "sample,label,predicted\n";
    for (std::size_t i = 0; i < split.test.size(); ++i) p << split.test[i] << ',' << truth[i] << ',' << predicted[i] << '\n';
  }
  out << "variant=" << fcn::to_string(variant) << " params=" << fcn::count_params(fitted.model)
      << " epochs=" << fitted.history.epochs.size() << " best_epoch=" << fitted.history.best_epoch
      << std::fixed << std::setprecision(2) << " test_accuracy=" << metrics.accuracy << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

std::vector<KeySpec> explain_keys() {
  return {{"data", "", "Dataset directory"},
          {"checkpoint", "", "Model checkpoint"},
          {"split", "", "Split CSV (default: split.csv next to the checkpoint)"},
          {"method", "guided-gradcam", "guided-backprop, gradcam, guided-gradcam or input-gradient"},
          {"abs", "0", "Take absolute values of Guided Grad-CAM scores", true},
          {"interpolate", "0", "Upsample 1D Grad-CAM maps to the input length", true},
          {"samples", "", "Comma-separated dataset indices (default: correctly classified test samples)"},
          {"limit", "0", "Explain at most this many samples (0 = all)"},
          {"out", "", "Output directory"}};
}

std::string dimensionality_rule(const fcn::FcnModel& model) {
  return "Guided Grad-CAM multiplies the guided-backprop map (dims " +
         xai::dims_string(xai::input_dims(model)) + ") element-wise with the Grad-CAM map (dims " +
         xai::dims_string(xai::gradcam_dims(model)) + "); the dimensions only match for image2d inputs, and this " +
         "checkpoint is " + fcn::to_string(model.variant) + ". Pass --interpolate to upsample explicitly.";
}

struct Selection {
  std::vector<std::size_t> samples;
  std::vector<int> labels;
  std::vector<int> predicted;
};

Selection correct_test_samples(const fcn::FcnModel& model, const signal::LabeledDataset& ds,
                               const signal::SplitIndices& split) {
  Selection sel;
  const auto predicted = train::predict(model, ds, split.test);
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    if (predicted[i] != ds.labels[split.test[i]]) continue;
    sel.samples.push_back(split.test[i]);
    sel.labels.push_back(predicted[i]);
    sel.predicted.push_back(predicted[i]);
  }
  return sel;
}

int cmd_explain(const Settings& s, std::ostream& out) {
  const auto checkpoint = required_path(s, "checkpoint");
  const auto model = fcn::read_checkpoint(checkpoint);
  const auto ds = signal::read_dataset(required_path(s, "data"));
  check_model_fits(model, ds);
  const auto method = xai::parse_method(s.str("method"));
  xai::CombineOptions opts{s.flag("abs"), s.flag("interpolate")};
  if (method == xai::Method::GuidedGradCam && !opts.interpolate &&
      xai::input_dims(model) != xai::gradcam_dims(model)) {
    throw ValidationError(dimensionality_rule(model));
  }

  Selection sel;
  if (!s.str("samples").empty()) {
    for (int i : s.int_list("samples")) {
      if (i < 0 || static_cast<std::size_t>(i) >= ds.size()) {
        throw ValidationError("sample " + std::to_string(i) + " is outside the dataset");
      }
      sel.samples.push_back(static_cast<std::size_t>(i));
      sel.labels.push_back(ds.labels[i]);
    }
    sel.predicted = train::predict(model, ds, sel.samples);
  } else {
    sel = correct_test_samples(model, ds, split_for(s, ds, checkpoint.parent_path()));
  }
  const long limit = s.integer("limit");
  if (limit < 0) throw ValidationError("--limit must be >= 0");
  if (limit > 0 && sel.samples.size() > static_cast<std::size_t>(limit)) {
    sel.samples.resize(static_cast<std::size_t>(limit));
    sel.labels.resize(static_cast<std::size_t>(limit));
    sel.predicted.resize(static_cast<std::size_t>(limit));
  }

  const auto dir = output_dir(s);
  s.write(dir / "resolved_config.txt");
  const auto names = lead_names_of(ds);
  std::ofstream index(dir / "index.csv");
  if (!index) throw FormatError("cannot write index.csv");
  index << "sample,label,predicted,file\n";
  for (std::size_t i = 0; i < sel.samples.size(); ++i) {
    const auto input = single(ds, sel.samples[i], model.variant);
    const int c = sel.labels[i];
    xai::SaliencyMap map;
    switch (method) {
      case xai::Method::GuidedBackprop: map = xai::guided_backprop(model, input, c); break;
      case xai::Method::InputGradient: map = xai::input_gradient(model, input, c); break;
      case xai::Method::GradCam: map = xai::gradcam(model, input, c); break;
      case xai::Method::GuidedGradCam: map = xai::guided_gradcam(model, input, c, opts); break;
    }
    const std::string file = "sample_" + std::to_string(sel.samples[i]) + ".csv";
    xai::write_saliency_csv(map, names, dir / file);
    index << sel.samples[i] << ',' << c << ',' << sel.predicted[i] << ',' << file << '\n';
  }
  out << "method=" << xai::to_string(method) << " maps=" << sel.samples.size() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

std::vector<KeySpec> cluster_keys() {
  return {{"data", "", "Dataset directory"},
          {"out", "", "Output directory"},
          {"k", "2,3,4", "Candidate cluster counts"},
          {"band", "", "Sakoe-Chiba half-width in steps (default: unconstrained)"},
          {"classes", "", "Comma-separated classes to cluster (default: all)"},
          {"max-per-class", "0", "Use at most this many samples per class, lowest indices first (0 = all)"},
          {"seed", "1", "Seed of the K-medoids initialization"}};
}

int cmd_cluster(const Settings& s, std::ostream& out, std::ostream& err) {
  const auto ds = signal::read_dataset(required_path(s, "data"));
  const auto ks = s.int_list("k");
  if (ks.empty()) throw ValidationError("--k needs at least one candidate");
  cluster::DtwOptions dtw;
  if (!s.str("band").empty()) dtw.band = static_cast<int>(s.integer("band"));
  std::vector<int> classes = s.int_list("classes");
  if (classes.empty()) {
    for (int c = 0; c < ds.class_count; ++c) classes.push_back(c);
  }
  const long cap = s.integer("max-per-class");
  if (cap < 0) throw ValidationError("--max-per-class must be >= 0");
  const auto seed = s.seed("seed");
  const int needed = *std::max_element(ks.begin(), ks.end()) + 1;

  const auto dir = output_dir(s);
  s.write(dir / "resolved_config.txt");
  std::ofstream summary(dir / "cluster_summary.csv");
  if (!summary) throw FormatError("cannot write cluster_summary.csv");
  summary << "class,samples,k,silhouette,cost,status\n" << std::setprecision(10);
  for (int c : classes) {
    if (c < 0 || c >= ds.class_count) throw ValidationError("class " + std::to_string(c) + " out of range");
    std::vector<std::size_t> ids;
    std::vector<signal::EcgSignal> members;
    for (std::size_t i = 0; i < ds.size() && (cap == 0 || ids.size() < static_cast<std::size_t>(cap)); ++i) {
      if (ds.labels[i] != c) continue;
      ids.push_back(i);
      members.push_back(ds.signals[i]);
    }
    if (static_cast<int>(ids.size()) < needed) {
      err << "warning: class " << c << " skipped, " << ids.size() << " samples but k up to " << needed - 1
          << " needs " << needed << '\n';
      summary << c << ',' << ids.size() << ",,,,skipped: too few samples\n";
      continue;
    }
    const auto dist = cluster::dtw_matrix(members, dtw);
    const auto result = cluster::select_k(dist, ks, seed);
    cluster::write_report_csv(result, dist, ids, dir / ("cluster_class_" + std::to_string(c) + ".csv"));
    summary << c << ',' << ids.size() << ',' << result.k << ',' << result.silhouette << ',' << result.cost << ",ok\n";
    out << "class " << c << ": k=" << result.k << " silhouette=" << result.silhouette << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

std::vector<KeySpec> lead_importance_keys() {
  return {{"data", "", "Dataset directory"},
          {"checkpoint", "", "Image2D model checkpoint"},
          {"split", "", "Split CSV (default: split.csv next to the checkpoint)"},
          {"out", "", "Output directory"}};
}

int cmd_lead_importance(const Settings& s, std::ostream& out) {
  const auto checkpoint = required_path(s, "checkpoint");
  const auto model = fcn::read_checkpoint(checkpoint);
  if (model.variant != fcn::Variant::Image2D) {
    throw ValidationError("lead importance needs T x L Guided Grad-CAM maps, which only an image2d checkpoint gives; "
                          "this checkpoint is " + fcn::to_string(model.variant));
  }
  const auto ds = signal::read_dataset(required_path(s, "data"));
  check_model_fits(model, ds);
  const auto sel = correct_test_samples(model, ds, split_for(s, ds, checkpoint.parent_path()));
  const xai::CombineOptions opts{true, false};
  std::vector<xai::SaliencyMap> maps;
  maps.reserve(sel.samples.size());
  for (std::size_t i = 0; i < sel.samples.size(); ++i) {
    maps.push_back(xai::guided_gradcam(model, single(ds, sel.samples[i], model.variant), sel.labels[i], opts));
  }
  const auto li = stats::lead_importance(maps, sel.labels, sel.predicted, ds.class_count, ds.steps, ds.leads);

  const auto dir = output_dir(s);
  s.write(dir / "resolved_config.txt");
  const auto names = lead_names_of(ds);
  std::vector<stats::VentricleImportance> ventricles;
  try {
    ventricles = stats::ventricle_rank(li, ds.ventricle_of_class);
  } catch (const ValidationError&) {
    stats::write_lead_importance_csv(li, {}, names, dir / "lead_importance.csv");
    throw;
  }
  stats::write_lead_importance_csv(li, ventricles, names, dir / "lead_importance.csv");
  stats::write_ranking_csv(ventricles, names, dir / "ventricle_ranking.csv");
  out << "samples=" << sel.samples.size();
  for (const auto& v : ventricles) {
    out << ' ' << signal::to_string(v.ventricle) << "_top=" << names[v.ranking[0]];
  }
  out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

std::vector<KeySpec> compare_keys() {
  return {{"predictions", "", "Network predictions CSV (sample,label,predicted)"},
          {"baseline", "", "Baseline predictions CSV (sample,scheme,region)"},
          {"scheme", "easy-wpw", "easy-wpw or arruda"},
          {"alpha", "0.05", "Significance level"},
          {"out", "", "Output directory"}};
}

int cmd_compare(const Settings& s, std::ostream& out) {
  if (s.str("baseline").empty() || !fs::exists(s.str("baseline"))) {
    throw ValidationError("baseline prediction file is missing: '" + s.str("baseline") + "'");
  }
  const auto pred_path = required_path(s, "predictions");
  std::vector<std::size_t> samples;
  std::vector<int> truth, predicted;
  {
    std::ifstream in(pred_path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto cols = split_list(line);
      if (cols.empty() || (lineno == 1 && cols[0] == "sample")) continue;
      if (cols.size() != 3) throw FormatError(pred_path.string() + ":" + std::to_string(lineno) + ": expected sample,label,predicted");
      try {
        samples.push_back(std::stoull(cols[0]));
        truth.push_back(std::stoi(cols[1]));
        predicted.push_back(std::stoi(cols[2]));
      } catch (const std::exception&) {
        throw FormatError(pred_path.string() + ":" + std::to_string(lineno) + ": non-numeric field");
      }
    }
  }
  const auto scheme = stats::parse_scheme(s.str("scheme"));
  const auto baseline = stats::read_baseline_csv(s.str("baseline"));
  const auto result = stats::dt_comparison(samples, truth, predicted, baseline, scheme, s.real("alpha"));

  const auto dir = output_dir(s);
  s.write(dir / "resolved_config.txt");
  stats::write_comparison_csv(result, dir / "comparison.csv");
  stats::write_comparison_summary(result, dir / "summary.txt");
  out << std::setprecision(4) << "fcn_accuracy=" << result.fcn_accuracy
      << " baseline_accuracy=" << result.baseline_accuracy << " p_value=" << result.p_value << ' '
      << (result.significant ? "significant" : "not significant") << '\n';
  return kExitOk;
}

struct Command {
  std::string name;
  std::string help;
  std::vector<KeySpec> keys;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv = {"ecgxai"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Train, explain and analyse fully convolutional ECG classifiers", "ecgxai"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  const std::vector<Command> commands = {
      {"gen", "Generate a synthetic labelled dataset", gen_keys()},
      {"train", "Train a network and evaluate it on the test split", train_keys()},
      {"explain", "Write saliency maps for test samples", explain_keys()},
      {"cluster", "DTW K-medoids clustering within each class", cluster_keys()},
      {"lead-importance", "Per-class and per-ventricle lead importance", lead_importance_keys()},
      {"compare", "Fisher comparison against baseline region predictions", compare_keys()}};

  std::vector<std::map<std::string, std::string>> raw(commands.size());
  std::vector<std::map<std::string, bool>> flags(commands.size());
  std::vector<std::string> config_paths(commands.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    auto* sub = app.add_subcommand(commands[i].name, commands[i].help);
    sub->add_option("--config", config_paths[i], "key=value file; flags override it");
    for (const auto& k : commands[i].keys) {
      if (k.flag) {
        flags[i][k.name] = false;
        sub->add_flag("--" + k.name, flags[i][k.name], k.help + " [" + k.fallback + "]");
      } else {
        raw[i][k.name];
        sub->add_option("--" + k.name, raw[i][k.name], k.help + (k.fallback.empty() ? "" : " [" + k.fallback + "]"));
      }
    }
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    for (std::size_t i = 0; i < commands.size(); ++i) {
      if (!subs[i]->parsed()) continue;
      Settings settings(commands[i].name, commands[i].keys);
      if (!config_paths[i].empty()) settings.load_file(config_paths[i]);
      for (const auto& k : commands[i].keys) {
        if (subs[i]->count("--" + k.name) == 0) continue;
        settings.set(k.name, k.flag ? (flags[i][k.name] ? "1" : "0") : raw[i][k.name]);
      }
      const auto& name = commands[i].name;
      if (name == "gen") return cmd_gen(settings, out);
      if (name == "train") return cmd_train(settings, out, err);
      if (name == "explain") return cmd_explain(settings, out);
      if (name == "cluster") return cmd_cluster(settings, out, err);
      if (name == "lead-importance") return cmd_lead_importance(settings, out);
      if (name == "compare") return cmd_compare(settings, out);
    }
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::out_of_range& e) {
    err << "error: value out of range (" << e.what() << ")\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace ecgxai::cli
