// Copyright 2026 The MVTER Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mvter/checkpoint.hpp"
#include "mvter/dataset.hpp"
#include "mvter/eval.hpp"
#include "mvter/model.hpp"
#include "mvter/training.hpp"

namespace mvter::cli {

// Configuration syntax error; `line` is 1-based, 0 for command-line flags.
class ConfigError : public DomainError {
 public:
  ConfigError(const std::string& what, int line) : DomainError(what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// Effective configuration of a run: defaults <- MVTER_SEED <- config file <- flags.
struct RunConfig {
  // paths
  std::string data;
  std::string out;
  std::string run;
  std::string checkpoint;
  // dataset
  std::uint64_t seed = 0;
  int train_per_class = 40;
  int val_per_class = 5;
  int test_per_class = 15;
  ShapeSpec shape;
  // rig
  int views = 12;
  double elevation = 30.0;
  int resolution = 32;
  double ortho_half_extent = 1.2;
  // model + training
  int feature_dim = 128;
  TrainConfig train;
  // evaluation
  int trials = 1000;
  std::vector<int> view_counts = {2, 4, 8, 12};
  int subsets = 8;
  std::vector<double> label_rates = {0.01, 0.02, 0.03, 0.04, 0.05, 0.1};
  int object = 0;
  Vec3 rotation{0.0, 0.0, 0.0};

  CameraRig rig() const { return CameraRig::ring(views, elevation, resolution, ortho_half_extent); }

  ModelConfig model(int num_classes) const { return {resolution, feature_dim, num_classes}; }

  void validate() const {
    auto fail = [](const std::string& flag, const std::string& why) {
      throw DomainError("invalid --" + flag + ": " + why);
    };
    if (train_per_class < 1) fail("train-per-class", "must be >= 1");
    if (val_per_class < 1) fail("val-per-class", "must be >= 1");
    if (test_per_class < 1) fail("test-per-class", "must be >= 1");
    if (shape.points_per_object < 64) fail("points-per-object", "must be >= 64");
    if (!(shape.scale_min > 0.0)) fail("scale-min", "must be > 0");
    if (!(shape.scale_max >= shape.scale_min)) fail("scale-max", "must be >= scale-min");
    if (!(shape.noise_sigma >= 0.0)) fail("noise-sigma", "must be >= 0");
    if (views < 1) fail("views", "must be >= 1");
    if (!(std::abs(elevation) < 90.0)) fail("elevation", "must lie strictly between -90 and 90");
    if (resolution < 8 || resolution % 8 != 0) fail("resolution", "must be a positive multiple of 8");
    if (!(ortho_half_extent > 0.0)) fail("ortho-half-extent", "must be > 0");
    if (feature_dim < 1) fail("feature-dim", "must be >= 1");
    if (!(train.lambda >= 0.0) || !std::isfinite(train.lambda)) fail("lambda", "must be >= 0");
    if (!(train.learning_rate > 0.0)) fail("learning-rate", "must be > 0");
    if (!(train.momentum >= 0.0 && train.momentum < 1.0)) fail("momentum", "must be in [0, 1)");
    if (!(train.weight_decay >= 0.0)) fail("weight-decay", "must be >= 0");
    if (train.lr_halving_period < 1) fail("lr-halving-period", "must be >= 1");
    if (train.batch_size < 1) fail("batch-size", "must be >= 1");
    if (train.epochs < 0) fail("epochs", "must be >= 0");
    if (!(train.label_rate > 0.0 && train.label_rate <= 1.0)) fail("label-rate", "must be in (0, 1]");
    if (train.threads < 1) fail("threads", "must be >= 1");
    if (trials < 1) fail("trials", "must be >= 1");
    if (subsets < 1) fail("subsets", "must be >= 1");
    if (view_counts.empty()) fail("view-counts", "must list at least one count");
    for (int c : view_counts)
      if (c < 1) fail("view-counts", "each count must be >= 1");
    if (label_rates.empty()) fail("label-rates", "must list at least one rate");
    for (double r : label_rates)
      if (!(r > 0.0 && r <= 1.0)) fail("label-rates", "each rate must be in (0, 1]");
    if (object < 0) fail("object", "must be >= 0");
    for (double a : rotation)
      if (!(a >= -180.0 && a <= 180.0)) fail("rotation", "angles must be in [-180, 180]");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  std::istringstream in(text);
  in.imbue(std::locale::classic());
  in >> value;
  if (text.empty() || in.fail() || !in.eof())
    throw DomainError("cannot parse value '" + text + "' for '" + key + "'");
  return value;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  if (out.empty()) throw DomainError("empty list for '" + key + "'");
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if constexpr (std::is_floating_point_v<T>)
      out += (i ? "," : "") + format_real(values[i]);
    else
      out += (i ? "," : "") + std::to_string(values[i]);
  }
  return out;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number_field(std::string key, T RunConfig::*member) {
  return {key, [key, member](RunConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_real(c.*member);
            else return std::to_string(c.*member);
          }};
}

template <typename T>
Field nested_field(std::string key, std::function<T&(RunConfig&)> ref) {
  return {key, [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_number<T>(key, v); },
          [ref](const RunConfig& c) {
            T& value = ref(const_cast<RunConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) return format_real(value);
            else return std::to_string(value);
          }};
}

inline Field string_field(std::string key, std::string RunConfig::*member) {
  return {key, [member](RunConfig& c, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return c.*member; }};
}

}  // namespace detail

// Every configuration key, in resolved-config.txt order. Flags use the same
// names with '_' replaced by '-'.
inline const std::vector<detail::Field>& config_fields() {
  using namespace detail;
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    f.push_back(string_field("data", &RunConfig::data));
    f.push_back(string_field("out", &RunConfig::out));
    f.push_back(string_field("run", &RunConfig::run));
    f.push_back(string_field("checkpoint", &RunConfig::checkpoint));
    f.push_back(number_field("seed", &RunConfig::seed));
    f.push_back(number_field("train_per_class", &RunConfig::train_per_class));
    f.push_back(number_field("val_per_class", &RunConfig::val_per_class));
    f.push_back(number_field("test_per_class", &RunConfig::test_per_class));
    f.push_back(nested_field<int>("points_per_object", [](RunConfig& c) -> int& { return c.shape.points_per_object; }));
    f.push_back(nested_field<double>("scale_min", [](RunConfig& c) -> double& { return c.shape.scale_min; }));
    f.push_back(nested_field<double>("scale_max", [](RunConfig& c) -> double& { return c.shape.scale_max; }));
    f.push_back(nested_field<double>("noise_sigma", [](RunConfig& c) -> double& { return c.shape.noise_sigma; }));
    f.push_back(number_field("views", &RunConfig::views));
    f.push_back(number_field("elevation", &RunConfig::elevation));
    f.push_back(number_field("resolution", &RunConfig::resolution));
    f.push_back(number_field("ortho_half_extent", &RunConfig::ortho_half_extent));
    f.push_back(number_field("feature_dim", &RunConfig::feature_dim));
    f.push_back({"scheme",
                 [](RunConfig& c, const std::string& v) { c.train.scheme = parse_scheme(v); },
                 [](const RunConfig& c) { return std::string(scheme_name(c.train.scheme)); }});
    f.push_back(nested_field<double>("lambda", [](RunConfig& c) -> double& { return c.train.lambda; }));
    f.push_back(nested_field<double>("learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; }));
    f.push_back(nested_field<double>("momentum", [](RunConfig& c) -> double& { return c.train.momentum; }));
    f.push_back(nested_field<double>("weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; }));
    f.push_back(nested_field<int>("lr_halving_period", [](RunConfig& c) -> int& { return c.train.lr_halving_period; }));
    f.push_back(nested_field<int>("batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; }));
    f.push_back(nested_field<int>("epochs", [](RunConfig& c) -> int& { return c.train.epochs; }));
    f.push_back(nested_field<double>("label_rate", [](RunConfig& c) -> double& { return c.train.label_rate; }));
    f.push_back(nested_field<int>("threads", [](RunConfig& c) -> int& { return c.train.threads; }));
    f.push_back(number_field("trials", &RunConfig::trials));
    f.push_back({"view_counts",
                 [](RunConfig& c, const std::string& v) { c.view_counts = parse_list<int>("view_counts", v); },
                 [](const RunConfig& c) { return join(c.view_counts); }});
    f.push_back(number_field("subsets", &RunConfig::subsets));
    f.push_back({"label_rates",
                 [](RunConfig& c, const std::string& v) { c.label_rates = parse_list<double>("label_rates", v); },
                 [](const RunConfig& c) { return join(c.label_rates); }});
    f.push_back(number_field("object", &RunConfig::object));
    f.push_back({"rotation",
                 [](RunConfig& c, const std::string& v) {
                   const auto a = parse_list<double>("rotation", v);
                   if (a.size() != 3) throw DomainError("rotation needs three angles alpha,beta,gamma");
                   c.rotation = {a[0], a[1], a[2]};
                 },
                 [](const RunConfig& c) {
                   return join(std::vector<double>(c.rotation.begin(), c.rotation.end()));
                 }});
    return f;
  }();
  return fields;
}

inline const detail::Field* find_field(std::string_view key) {
  for (const auto& f : config_fields())
    if (f.key == key) return &f;
  return nullptr;
}

inline void set_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const detail::Field* f = find_field(key);
  if (!f) throw DomainError("unknown configuration key '" + key + "'");
  f->set(cfg, value);
}

/// Parses `key = value` lines ('#' starts a comment) on top of `base`.
/// Unknown keys and unparsable values raise ConfigError naming the line.
inline RunConfig parse_config(std::istream& in, const std::string& source, RunConfig base = {}) {
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string text = detail::trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(number) + ": expected 'key = value'", number);
    const std::string key = detail::trim(std::string_view(text).substr(0, eq));
    const std::string value = detail::trim(std::string_view(text).substr(eq + 1));
    try {
      set_value(base, key, value);
    } catch (const DomainError& e) {
      throw ConfigError(source + ":" + std::to_string(number) + ": " + e.what(), number);
    }
  }
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  return parse_config(in, path.string(), std::move(base));
}

inline std::string resolved_config_text(const RunConfig& cfg) {
  std::string out = "# effective configuration\n";
  for (const auto& f : config_fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

namespace detail {

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline const std::string& require(const std::string& value, const char* flag) {
  if (value.empty()) throw DomainError(std::string("missing required --") + flag);
  return value;
}

// Directory the run artifacts of an evaluation command live in.
inline std::filesystem::path run_dir(const RunConfig& cfg) {
  if (!cfg.run.empty()) return cfg.run;
  if (!cfg.checkpoint.empty()) return std::filesystem::path(cfg.checkpoint).parent_path();
  throw DomainError("missing required --run (or --checkpoint)");
}

inline std::filesystem::path checkpoint_path(const RunConfig& cfg) {
  return cfg.checkpoint.empty() ? run_dir(cfg) / "checkpoint.mvtr" : std::filesystem::path(cfg.checkpoint);
}

inline std::filesystem::path reports_dir(const RunConfig& cfg) {
  const std::filesystem::path base = cfg.out.empty() ? run_dir(cfg) : std::filesystem::path(cfg.out);
  ensure_dir(base / "reports");
  return base / "reports";
}

inline Model<float> load_model(const RunConfig& cfg) {
  return Model<float>::from_named(load_checkpoint<float>(checkpoint_path(cfg)));
}

struct Loaded {
  Dataset ds;
  CameraRig rig;
  std::vector<ViewSet> views;
};

inline Loaded load_data(const RunConfig& cfg) {
  Loaded l{load_dataset(require(cfg.data, "data")), cfg.rig(), {}};
  l.views = render_dataset(l.ds, l.rig, cfg.train.threads);
  return l;
}

inline std::vector<int> labels_of(const Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<int> out;
  for (std::size_t i : idx) out.push_back(ds.objects[i].label);
  return out;
}

inline void check_model_matches(const Model<float>& model, const RunConfig& cfg, const Dataset& ds) {
  if (model.config().resolution != cfg.resolution)
    throw DomainError("checkpoint expects " + std::to_string(model.config().resolution) +
                      "px views but --resolution is " + std::to_string(cfg.resolution));
  if (model.config().num_classes != ds.num_classes)
    throw DomainError("checkpoint has " + std::to_string(model.config().num_classes) +
                      " classes but the dataset has " + std::to_string(ds.num_classes));
}

// ---- subcommands ----------------------------------------------------------

inline int cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
  const std::string& out = require(cfg.out, "out");
  const Dataset ds = generate_dataset({cfg.train_per_class, cfg.val_per_class, cfg.test_per_class},
                                      cfg.shape, cfg.seed);
  save_dataset(ds, out);
  log << "wrote " << ds.objects.size() << " objects to " << out << " (checksum " << std::hex
      << dataset_checksum(ds) << std::dec << ")\n";
  return 0;
}

inline int cmd_train(const RunConfig& cfg, std::ostream& log) {
  const std::filesystem::path out = require(cfg.out, "out");
  Loaded data = load_data(cfg);
  ensure_dir(out);
  write_text_file(out / "resolved-config.txt", resolved_config_text(cfg));
  const Dataset masked = mask_labels(data.ds, cfg.train.label_rate, cfg.seed);
  const auto result = fit<float>(masked, data.views, data.rig, cfg.train, cfg.model(data.ds.num_classes),
                                 [&](const EpochStats& s) {
                                   log << "epoch " << s.epoch << " lr " << format_real(s.learning_rate)
                                       << " task " << format_real(s.task_loss) << " mvter "
                                       << format_real(s.mvter_loss) << " val_acc "
                                       << format_real(s.val_acc) << "\n";
                                 });
  save_checkpoint(out / "checkpoint.mvtr", result.model.named_parameters());
  write_text_file(out / "history.csv", history_csv(result.history));
  log << "best epoch " << result.best_epoch << "; wrote " << (out / "checkpoint.mvtr").string() << "\n";
  return 0;
}

inline int cmd_eval(const RunConfig& cfg, std::ostream& log) {
  const Model<float> model = load_model(cfg);
  Loaded data = load_data(cfg);
  check_model_matches(model, cfg, data.ds);
  std::string csv = "split,objects,accuracy\n";
  for (Split split : {Split::train, Split::val, Split::test}) {
    const auto idx = data.ds.indices(split);
    if (idx.empty()) continue;
    const auto ptrs = view_pointers(data.views, idx);
    const double acc = accuracy(predict_labels(model, std::span(ptrs), cfg.train.threads), labels_of(data.ds, idx));
    csv += std::string(split_name(split)) + "," + std::to_string(idx.size()) + "," + format_real(acc) + "\n";
    log << split_name(split) << " accuracy " << format_real(acc) << "\n";
  }
  write_text_file(reports_dir(cfg) / "eval.csv", csv);
  return 0;
}

inline int cmd_retrieve(const RunConfig& cfg, std::ostream& log) {
  const Model<float> model = load_model(cfg);
  Loaded data = load_data(cfg);
  check_model_matches(model, cfg, data.ds);
  const auto q_idx = data.ds.indices(Split::test), g_idx = data.ds.indices(Split::train);
  const auto q_ptrs = view_pointers(data.views, q_idx), g_ptrs = view_pointers(data.views, g_idx);
  const Tensor<float> q = fused_descriptors(model, std::span(q_ptrs), cfg.train.threads);
  const Tensor<float> g = fused_descriptors(model, std::span(g_ptrs), cfg.train.threads);
  const auto ql = labels_of(data.ds, q_idx), gl = labels_of(data.ds, g_idx);
  const RetrievalResult r = retrieval_map<float>(q.data(), ql, g.data(), gl, q.dim(1));
  std::string csv = "query,label,average_precision\n";
  for (std::size_t i = 0; i < q_idx.size(); ++i)
    csv += std::to_string(q_idx[i]) + "," + std::to_string(ql[i]) + "," + format_real(r.average_precision[i]) + "\n";
  const auto dir = reports_dir(cfg);
  write_text_file(dir / "retrieval.csv", csv);
  write_text_file(dir / "retrieval_summary.csv",
                  "metric,value\nmap," + format_real(r.mean_average_precision) + "\n");
  log << "mAP " << format_real(r.mean_average_precision) << " over " << q_idx.size() << " queries\n";
  return 0;
}

inline int cmd_transform_error(const RunConfig& cfg, std::ostream& log) {
  const Model<float> model = load_model(cfg);
  Loaded data = load_data(cfg);
  check_model_matches(model, cfg, data.ds);
  const auto idx = data.ds.indices(Split::test);
  const auto report = transform_error(model, data.ds, data.views, idx, data.rig, cfg.train.scheme,
                                      static_cast<std::size_t>(cfg.trials), cfg.seed, cfg.train.threads);
  write_text_file(reports_dir(cfg) / "transform_error.csv", transform_error_csv(report));
  log << "transform MSE " << format_real(report.mse) << " (RMS " << format_real(report.rms_degrees)
      << " deg) over " << report.trials.size() << " trials\n";
  return 0;
}

inline int cmd_ablate_views(const RunConfig& cfg, std::ostream& log) {
  for (int c : cfg.view_counts)
    if (c > cfg.views)
      throw DomainError("invalid --view-counts: " + std::to_string(c) + " exceeds --views " +
                        std::to_string(cfg.views));
  const Model<float> model = load_model(cfg);
  Loaded data = load_data(cfg);
  check_model_matches(model, cfg, data.ds);
  const auto idx = data.ds.indices(Split::test);
  const auto report = ablate_views(model, data.ds, data.views, idx, cfg.view_counts,
                                   static_cast<std::size_t>(cfg.subsets), cfg.seed,
                                   "train_views=" + std::to_string(cfg.views), cfg.train.threads);
  write_text_file(reports_dir(cfg) / "ablate_views.csv", report.csv());
  for (const auto& r : report.rows) log << r.variant << " accuracy " << format_real(r.accuracy) << "\n";
  return 0;
}

inline int cmd_ablate_labels(const RunConfig& cfg, std::ostream& log) {
  const std::filesystem::path out = require(cfg.out, "out");
  Loaded data = load_data(cfg);
  ensure_dir(out / "reports");
  write_text_file(out / "resolved-config.txt", resolved_config_text(cfg));
  const auto outcomes = ablate_label_rate<float>(data.ds, data.views, data.rig, cfg.train,
                                                 cfg.model(data.ds.num_classes), cfg.label_rates,
                                                 [&](const std::string& line) { log << line << "\n"; });
  write_text_file(out / "reports" / "ablate_labels.csv", label_rate_report(outcomes).csv());
  return 0;
}

inline int cmd_export_features(const RunConfig& cfg, std::ostream& log) {
  const Model<float> model = load_model(cfg);
  const Dataset ds = load_dataset(require(cfg.data, "data"));
  if (static_cast<std::size_t>(cfg.object) >= ds.objects.size())
    throw DomainError("invalid --object: dataset has " + std::to_string(ds.objects.size()) + " objects");
  const PointCloud& cloud = ds.objects[static_cast<std::size_t>(cfg.object)].cloud;
  const std::filesystem::path base = cfg.out.empty() ? run_dir(cfg) : std::filesystem::path(cfg.out);
  const CameraRig rig = cfg.rig();
  std::size_t n = export_feature_maps(model, cloud, rig, base / "features");
  const Rotation3 t(cfg.rotation[0], cfg.rotation[1], cfg.rotation[2]);
  n += export_feature_maps(model, apply_rotation(cloud, t), rig, base / "features" / "transformed");
  log << "wrote " << n << " feature maps under " << (base / "features").string() << "\n";
  return 0;
}

}  // namespace detail

inline const std::vector<std::pair<std::string, std::string>>& subcommands() {
  static const std::vector<std::pair<std::string, std::string>> cmds = {
      {"gen-data", "Generate the procedural toy dataset (MVDS file)"},
      {"train", "Train a model; writes checkpoint.mvtr, history.csv, resolved-config.txt"},
      {"eval", "Classification accuracy per split"},
      {"retrieve", "Retrieval mAP of test queries against the train gallery"},
      {"transform-error", "Rotation decoding error on held-out objects"},
      {"ablate-views", "Accuracy with random subsets of test views"},
      {"ablate-labels", "Baseline vs MV-TER accuracy across label rates"},
      {"export-features", "Dump first-block feature maps as PGM"},
  };
  return cmds;
}

/// Runs one subcommand. Exit codes: 0 success, 1 usage/validation/domain
/// error, 2 I/O or file-format error. Every error prints exactly one line to
/// `err`.
inline int dispatch(int argc, const char* const* argv, std::ostream& log = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Multi-view transformation equivariant representation learning on toy 3D shapes", "mvter"};
  app.require_subcommand(1, 1);
  std::map<std::string, std::string> flag_values;
  std::string config_path;
  std::map<std::string, CLI::App*> sub;
  for (const auto& [name, help] : subcommands()) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("--config", config_path, "key = value configuration file");
    for (const auto& f : config_fields()) {
      std::string flag = "--" + f.key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      if (f.key == "learning_rate") flag += ",--lr";
      s->add_option(flag, flag_values[f.key], "overrides config key '" + f.key + "'");
    }
    sub[name] = s;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    log << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    log << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    for (auto& [name, s] : sub) {
      (void)name;
      if (s->parsed() && e.get_name() == "CallForHelp") {
        log << s->help();
        return 0;
      }
    }
    err << "mvter: error: " << e.what() << "\n";
    return 1;
  }

  std::string command;
  for (const auto& [name, s] : sub)
    if (s->parsed()) command = name;

  try {
    RunConfig cfg;
    if (const char* env_seed = std::getenv("MVTER_SEED"); env_seed && *env_seed) {
      try {
        set_value(cfg, "seed", env_seed);
      } catch (const DomainError& e) {
        throw DomainError(std::string("MVTER_SEED: ") + e.what());
      }
    }
    if (!config_path.empty()) cfg = load_config(config_path, cfg);
    for (const auto& f : config_fields()) {
      const auto it = flag_values.find(f.key);
      if (it == flag_values.end() || sub[command]->count("--" + [&] {
            std::string k = f.key;
            std::replace(k.begin(), k.end(), '_', '-');
            return k;
          }()) == 0)
        continue;
      try {
        f.set(cfg, it->second);
      } catch (const DomainError& e) {
        std::string flag = f.key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        throw DomainError("invalid --" + flag + ": " + e.what());
      }
    }
    cfg.train.seed = cfg.seed;
    cfg.validate();

    if (command == "gen-data") return detail::cmd_gen_data(cfg, log);
    if (command == "train") return detail::cmd_train(cfg, log);
    if (command == "eval") return detail::cmd_eval(cfg, log);
    if (command == "retrieve") return detail::cmd_retrieve(cfg, log);
    if (command == "transform-error") return detail::cmd_transform_error(cfg, log);
    if (command == "ablate-views") return detail::cmd_ablate_views(cfg, log);
    if (command == "ablate-labels") return detail::cmd_ablate_labels(cfg, log);
    if (command == "export-features") return detail::cmd_export_features(cfg, log);
    err << "mvter: error: unknown command\n";
    return 1;
  } catch (const IoError& e) {
    err << "mvter: error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    err << "mvter: error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "mvter: error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mvter::cli
