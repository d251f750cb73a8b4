// cs3d command-line entry point: convert, synth, train, eval, profile,
// gradcheck. Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cs3d/events.hpp"
#include "cs3d/experiment.hpp"
#include "cs3d/gradsuite.hpp"
#include "cs3d/parallel.hpp"
#include "cs3d/profiler.hpp"
#include "cs3d/serialize.hpp"
#include "cs3d/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cs3d;

namespace {

constexpr const char* kVersion = "1.0.0";

// Failure inside a named stage; reported as "error: <stage>: <what>".
struct StageError : std::runtime_error {
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error(stage + ": " + what) {}
};

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "out";
};

class Manifest {
 public:
  Manifest(std::string subcommand, const Globals& g) {
    doc_["tool"] = "cs3d";
    doc_["version"] = kVersion;
    doc_["subcommand"] = std::move(subcommand);
    doc_["seed"] = g.seed;
    doc_["started_at"] = iso_now();
    doc_["artifacts"] = json::array();
    doc_["config"] = json::object();
    out_ = g.out;
  }

  json& config() { return doc_["config"]; }
  void artifact(const fs::path& p) { doc_["artifacts"].push_back(p.lexically_normal().string()); }

  void write(const std::string& status) {
    doc_["status"] = status;
    doc_["finished_at"] = iso_now();
    fs::create_directories(out_);
    std::ofstream os(out_ / "manifest.json");
    os << doc_.dump(2) << '\n';
  }

 private:
  json doc_;
  fs::path out_;
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

json config_json(const ModelConfig& cfg) { return json::parse(config_to_json(cfg)); }

ModelConfig named_model(const std::string& name) {
  if (name == "cs3d") return default_cs3d_config();
  if (name == "c3d") return default_c3d_config();
  throw std::invalid_argument("unknown model '" + name + "' (expected cs3d or c3d)");
}

struct ModelOptions {
  std::string model = "cs3d";
  std::vector<std::size_t> input_shape;
  std::size_t classes = 0;
  std::optional<double> ssn_theta;
  std::optional<double> ssn_beta;
  AblationFlags ablation;

  void add(CLI::App* app, bool with_ablation = true) {
    app->add_option("--model", model, "Built-in model when no --config is given")
        ->check(CLI::IsMember({"cs3d", "c3d"}));
    app->add_option("--input-shape", input_shape, "Input extents C,T,H,W")
        ->delimiter(',')
        ->expected(4);
    app->add_option("--classes", classes, "Override the class count");
    app->add_option("--ssn-theta", ssn_theta, "Spiking threshold for every layer");
    app->add_option("--ssn-beta", ssn_beta, "Surrogate steepness for every layer")
        ->check(CLI::PositiveNumber);
    if (with_ablation) {
      app->add_flag("--no-ssn", ablation.no_ssn, "Rectifier instead of the spiking neuron");
      app->add_flag("--no-factorized", ablation.no_factorized,
                    "Dense 3x3x3 convolutions instead of factorized blocks");
      app->add_flag("--no-temporal-attn", ablation.no_temporal_attn, "Drop temporal attention");
      app->add_flag("--no-spatial-attn", ablation.no_spatial_attn, "Drop spatial attention");
    }
  }

  // Config file, then flags on top.
  ModelConfig resolve(const Globals& g, bool seed_given) const {
    ModelConfig cfg = g.config.empty() ? named_model(model) : load_config(g.config);
    if (!input_shape.empty()) {
      cfg.input_shape = {input_shape[0], input_shape[1], input_shape[2], input_shape[3]};
    }
    if (classes) cfg.class_count = classes;
    // Overrides reach per-layer settings from the config file too.
    auto set_ssn = [&](SsnParams& p) {
      if (ssn_theta) p.theta = *ssn_theta;
      if (ssn_beta) p.beta = *ssn_beta;
    };
    set_ssn(cfg.ssn_defaults);
    for (auto& l : cfg.layers)
      if (l.ssn) set_ssn(*l.ssn);
    if (seed_given || g.config.empty()) cfg.seed = g.seed;
    cfg = apply_ablation(cfg, ablation);
    cfg.validate();
    return cfg;
  }
};

// ---- convert ------------------------------------------------------------------

struct ConvertArgs {
  std::string input;
  double threshold = 0.2;
  double frame_interval_us = 10000;
  std::vector<std::size_t> crop;
  std::vector<std::size_t> resize;
  std::string format = "csv";
  std::size_t voxel_bins = 0;
  std::string voxel_policy = "count";
  std::optional<std::size_t> label;
};

int cmd_convert(const ConvertArgs& a, const Globals& g, Manifest& man) {
  const fs::path out = g.out;
  fs::create_directories(out);
  std::vector<Image> frames = stage("read", [&] {
    return fs::is_directory(a.input) ? read_frames_dir(a.input) : read_video_csv(a.input);
  });
  if (!a.crop.empty() || !a.resize.empty()) {
    frames = stage("preprocess", [&] {
      CropBox box{0, 0, frames.at(0).width, frames.at(0).height};
      if (!a.crop.empty()) box = {a.crop[0], a.crop[1], a.crop[2], a.crop[3]};
      const std::size_t h = a.resize.empty() ? box.height : a.resize[0];
      const std::size_t w = a.resize.empty() ? box.width : a.resize[1];
      return preprocess_frames(frames, box, h, w);
    });
  }
  SimulatorOptions sim;
  sim.threshold = a.threshold;
  sim.frame_interval_us = a.frame_interval_us;
  EventStream s = stage("simulate", [&] { return frames_to_events(frames, sim); });
  s.label = a.label;
  const fs::path events = out / (a.format == "csv" ? "events.csv" : "events.bin");
  stage("write", [&] {
    write_events(events, s, a.format == "csv" ? EventFormat::kCsv : EventFormat::kBinary);
    return 0;
  });
  man.artifact(events);
  if (a.voxel_bins > 0) {
    const fs::path voxels = out / "voxels.tnsr";
    stage("voxelize", [&] {
      VoxelGrid grid = voxelize(s, a.voxel_bins, s.height, s.width,
                                voxel_policy_from_string(a.voxel_policy));
      save_tensor(voxels, grid.data);
      return 0;
    });
    man.artifact(voxels);
  }
  man.config() = {{"input", a.input},
                  {"threshold", a.threshold},
                  {"frame_interval_us", a.frame_interval_us},
                  {"frames", frames.size()},
                  {"events", s.events.size()},
                  {"format", a.format}};
  std::cout << "converted " << frames.size() << " frames into " << s.events.size()
            << " events: " << events.string() << "\n";
  return 0;
}

// ---- synth --------------------------------------------------------------------

struct SynthArgs {
  std::string kind = "moving-bar-4dir";
  std::size_t n_per_class = 50;
  std::size_t width = 32;
  std::size_t height = 32;
  std::size_t frames = 17;
  double threshold = 0.2;
  bool no_jitter = false;
  std::string format = "bin";
};

int cmd_synth(const SynthArgs& a, const Globals& g, Manifest& man) {
  SynthOptions o;
  o.kind = synth_kind_from_string(a.kind);
  o.n_per_class = a.n_per_class;
  o.width = a.width;
  o.height = a.height;
  o.frames = a.frames;
  o.simulator.threshold = a.threshold;
  o.jitter = !a.no_jitter;
  o.seed = g.seed;
  const fs::path out = g.out;
  const fs::path dir = out / "events";
  fs::create_directories(dir);
  const std::size_t k = synth_class_count(o.kind);
  std::vector<ManifestEntry> entries(k * o.n_per_class);
  const std::string ext = a.format == "csv" ? ".csv" : ".bin";
  stage("generate", [&] {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const std::size_t label = i / o.n_per_class;
      std::ostringstream name;
      name << "sample_" << std::setw(5) << std::setfill('0') << i << ext;
      const EventStream s = synth_stream(o, label, i);
      write_events(dir / name.str(), s, format_for_path(dir / name.str()));
      entries[i] = {fs::path("events") / name.str(), label};
    }
    return 0;
  });
  const fs::path manifest = out / "dataset.csv";
  write_manifest(manifest, entries);
  man.artifact(manifest);
  man.artifact(dir);
  man.config() = {{"kind", a.kind},         {"n_per_class", a.n_per_class},
                  {"width", a.width},       {"height", a.height},
                  {"frames", a.frames},     {"threshold", a.threshold},
                  {"jitter", !a.no_jitter}, {"format", a.format}};
  std::cout << "wrote " << entries.size() << " streams (" << k << " classes) to " << dir.string()
            << "\n";
  return 0;
}

// ---- train / eval -------------------------------------------------------------

struct DataArgs {
  std::string data;
  double test_fraction = 0.2;
  std::string voxel_policy = "count";

  void add(CLI::App* app) {
    app->add_option("--data", data, "Dataset manifest (path,label CSV)")
        ->required()
        ->check(CLI::ExistingFile);
    app->add_option("--test-fraction", test_fraction, "Held-out fraction of each class")
        ->check(CLI::Range(0.0, 0.95));
    app->add_option("--voxel-policy", voxel_policy, "count, binary or bilinear-time")
        ->check(CLI::IsMember({"count", "binary", "bilinear-time"}));
  }
};

// Model input extents default to the dataset geometry unless set by a
// config file or --input-shape.
void adopt_data_shape(ModelConfig& cfg, const DataArgs& d, const Globals& g,
                      const ModelOptions& mo) {
  if (!g.config.empty() || !mo.input_shape.empty()) return;
  const auto entries = read_manifest(d.data);
  if (entries.empty()) throw std::runtime_error("dataset manifest is empty");
  const EventStream first = parse_events(entries.front().path);
  cfg.input_shape = {2, 16, first.height, first.width};
  std::size_t k = 0;
  for (const auto& e : entries) k = std::max(k, e.label + 1);
  if (!mo.classes) cfg.class_count = std::max<std::size_t>(k, 2);
  cfg.validate();
}

Dataset load_data(const DataArgs& d, const ModelConfig& cfg) {
  VoxelOptions vo;
  vo.bins = cfg.input_shape[1];
  vo.height = cfg.input_shape[2];
  vo.width = cfg.input_shape[3];
  vo.policy = voxel_policy_from_string(d.voxel_policy);
  Dataset ds = load_manifest_dataset(d.data, vo);
  if (ds.empty()) throw std::runtime_error("dataset is empty");
  if (ds.class_count > cfg.class_count) {
    throw std::runtime_error("dataset has " + std::to_string(ds.class_count) +
                             " classes, model has " + std::to_string(cfg.class_count));
  }
  ds.class_count = cfg.class_count;
  return ds;
}

struct TrainArgs {
  ModelOptions model;
  DataArgs data;
  TrainConfig train;
  double val_fraction = 0.0;
  bool ablation_table = false;
  std::vector<std::size_t> profile_shape{2, 16, 112, 112};
};

void write_metrics(const fs::path& p, const Metrics& m) {
  auto os = open_out(p);
  m.write_csv(os);
}

int cmd_train(TrainArgs a, const Globals& g, bool seed_given, Manifest& man) {
  const fs::path out = g.out;
  fs::create_directories(out);
  ModelConfig cfg = stage("config", [&] { return a.model.resolve(g, seed_given); });
  stage("config", [&] {
    adopt_data_shape(cfg, a.data, g, a.model);
    return 0;
  });
  a.train.seed = g.seed;
  const Dataset all = stage("load-data", [&] { return load_data(a.data, cfg); });
  auto [train_set, test_set] = split_dataset(all, a.data.test_fraction, g.seed);
  Dataset val_set;
  if (a.val_fraction > 0.0) {
    auto [fit, val] = split_dataset(train_set, a.val_fraction, g.seed + 1);
    train_set = std::move(fit);
    val_set = std::move(val);
  }
  const Dataset& monitor = !val_set.empty() ? val_set : test_set;

  man.config()["model"] = config_json(cfg);
  man.config()["train"] = {{"learning_rate", a.train.learning_rate},
                           {"batch_size", a.train.batch_size},
                           {"epochs", a.train.epochs},
                           {"beta1", a.train.beta1},
                           {"beta2", a.train.beta2},
                           {"epsilon", a.train.epsilon},
                           {"target_accuracy", a.train.target_accuracy},
                           {"test_fraction", a.data.test_fraction},
                           {"val_fraction", a.val_fraction},
                           {"voxel_policy", a.data.voxel_policy},
                           {"data", a.data.data}};
  std::cout << "train " << train_set.size() << ", validation " << val_set.size() << ", test "
            << test_set.size() << " samples; threads " << thread_count() << "\n";

  if (a.ablation_table) {
    const Shape ps{a.profile_shape[0], a.profile_shape[1], a.profile_shape[2], a.profile_shape[3]};
    const auto rows = stage("ablation", [&] {
      return run_ablation(train_set, test_set.empty() ? monitor : test_set, a.train, cfg.seed, ps);
    });
    const fs::path csv = out / "ablation.csv";
    auto os = open_out(csv);
    write_ablation_csv(os, rows);
    write_ablation_csv(std::cout, rows);
    man.artifact(csv);
    return 0;
  }

  Model m = stage("build", [&] { return build_model(cfg); });
  const TrainingHistory h = stage("train", [&] {
    return train(m, train_set, monitor, a.train, [](const EpochRecord& r) {
      std::cout << "epoch " << r.epoch << "  loss " << std::setprecision(6) << r.train_loss
                << "  accuracy " << r.eval_accuracy << std::endl;
    });
  });
  const fs::path history = out / "history.csv";
  h.save_csv(history);
  man.artifact(history);
  const fs::path ckpt = out / "model.ckpt";
  m.save(ckpt);
  man.artifact(ckpt);
  const fs::path cfg_path = out / "config.json";
  save_config(cfg_path, cfg);
  man.artifact(cfg_path);
  const Dataset& final_set = test_set.empty() ? train_set : test_set;
  const Metrics metrics = stage("evaluate", [&] { return evaluate(m, final_set, a.train.batch_size); });
  const fs::path mpath = out / "metrics.csv";
  write_metrics(mpath, metrics);
  man.artifact(mpath);
  std::cout << "test accuracy " << metrics.accuracy << " on " << metrics.total << " samples\n";
  return 0;
}

struct EvalArgs {
  ModelOptions model;
  DataArgs data;
  std::string checkpoint;
  std::string split = "all";
  std::size_t batch_size = 16;
};

int cmd_eval(EvalArgs a, Globals g, bool seed_given, Manifest& man) {
  const fs::path out = g.out;
  fs::create_directories(out);
  const fs::path beside = fs::path(a.checkpoint).parent_path() / "config.json";
  if (g.config.empty() && fs::exists(beside)) g.config = beside.string();
  ModelConfig cfg = stage("config", [&] {
    ModelConfig c = a.model.resolve(g, seed_given);
    adopt_data_shape(c, a.data, g, a.model);
    return c;
  });
  Model m = stage("build", [&] { return build_model(cfg); });
  stage("load-checkpoint", [&] {
    m.load(a.checkpoint);
    return 0;
  });
  const Dataset all = stage("load-data", [&] { return load_data(a.data, cfg); });
  const Dataset set = a.split == "test" ? split_dataset(all, a.data.test_fraction, g.seed).second : all;
  const Metrics metrics = stage("evaluate", [&] { return evaluate(m, set, a.batch_size); });
  const fs::path mpath = out / "metrics.csv";
  write_metrics(mpath, metrics);
  man.artifact(mpath);
  man.config()["model"] = config_json(cfg);
  man.config()["checkpoint"] = a.checkpoint;
  man.config()["split"] = a.split;
  std::cout << "accuracy " << metrics.accuracy << " on " << metrics.total << " samples\n";
  return 0;
}

// ---- profile ------------------------------------------------------------------

struct ProfileArgs {
  ModelOptions model;
  std::vector<std::string> traces;
  std::string format = "table";
  std::string quadrature = "left";
  std::vector<std::string> compare;
  bool ablation = false;
};

int cmd_profile(const ProfileArgs& a, const Globals& g, bool seed_given, Manifest& man) {
  const fs::path out = g.out;
  fs::create_directories(out);
  const Quadrature q = a.quadrature == "trapezoid" ? Quadrature::kTrapezoid : Quadrature::kLeftRiemann;
  auto trace_at = [&](std::size_t i) -> std::optional<PowerTrace> {
    if (i >= a.traces.size()) return std::nullopt;
    return load_power_trace(a.traces[i]);
  };
  auto shape_of = [](const ModelConfig& c) {
    return Shape{c.input_shape[0], c.input_shape[1], c.input_shape[2], c.input_shape[3]};
  };

  std::vector<ModelConfig> configs;
  if (a.ablation) {
    const ModelConfig base = stage("config", [&] { return a.model.resolve(g, seed_given); });
    for (auto& v : ablation_variants(base.input_shape, base.class_count, base.seed)) {
      v.config.name = v.label;
      configs.push_back(v.config);
    }
  } else if (!a.compare.empty()) {
    for (const auto& name : a.compare) {
      ModelOptions mo = a.model;
      mo.model = name;
      Globals bare = g;
      bare.config.clear();
      configs.push_back(stage("config", [&] { return mo.resolve(bare, seed_given); }));
    }
  }

  if (!configs.empty()) {
    std::vector<ProfileReport> reports;
    for (std::size_t i = 0; i < configs.size(); ++i) {
      reports.push_back(stage("profile", [&] {
        const Model m = build_model(configs[i]);
        return profile(m, shape_of(configs[i]), trace_at(i), q);
      }));
      man.config()["models"].push_back(config_json(configs[i]));
    }
    const fs::path csv = out / "compare.csv";
    auto os = open_out(csv);
    write_comparison_csv(os, reports);
    write_comparison_csv(std::cout, reports);
    man.artifact(csv);
    return 0;
  }

  const ModelConfig cfg = stage("config", [&] { return a.model.resolve(g, seed_given); });
  const ProfileReport r = stage("profile", [&] {
    const Model m = build_model(cfg);
    return profile(m, shape_of(cfg), trace_at(0), q);
  });
  man.config()["model"] = config_json(cfg);
  const fs::path csv = out / "profile.csv";
  auto os = open_out(csv);
  r.write_csv(os);
  man.artifact(csv);
  if (a.format == "csv") {
    r.write_csv(std::cout);
  } else {
    r.write_table(std::cout);
  }
  return 0;
}

// ---- gradcheck ----------------------------------------------------------------

int cmd_gradcheck(const CheckOptions& opt, const Globals& g, Manifest& man) {
  const fs::path out = g.out;
  fs::create_directories(out);
  const auto entries = stage("gradcheck", [&] { return run_gradient_suite(g.seed, opt); });
  const fs::path csv = out / "gradcheck.csv";
  auto os = open_out(csv);
  os << "module,method,coordinates,nonsmooth,max_rel_error,max_abs_error,status\n";
  std::cout << std::left << std::setw(28) << "module" << std::setw(14) << "method" << std::right
            << std::setw(14) << "max_rel_err" << "  status\n";
  bool ok = true;
  for (const auto& e : entries) {
    const char* method = e.analytic ? "analytic" : "central-diff";
    const char* status = e.report.passed ? "pass" : "FAIL";
    ok = ok && e.report.passed;
    os << e.name << ',' << method << ',' << e.report.coordinates << ',' << e.report.nonsmooth << ','
       << e.report.max_rel_error << ',' << e.report.max_abs_error << ',' << status << '\n';
    std::cout << std::left << std::setw(28) << e.name << std::setw(14) << method << std::right
              << std::setw(14) << std::setprecision(3) << std::scientific << e.report.max_rel_error
              << std::defaultfloat << "  " << status << '\n';
  }
  man.artifact(csv);
  man.config() = {{"step", opt.step}, {"tolerance", opt.tolerance}, {"floor", opt.floor}};
  std::cout << (ok ? "all modules pass" : "gradient check FAILED") << " at tolerance "
            << opt.tolerance << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cs3d: factorized spiking 3D CNN toolkit for event streams"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Globals g;
  auto* config_opt = app.add_option("--config", g.config, "Model config (JSON)")
                         ->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out", g.out, "Artifact directory")->capture_default_str();
  (void)config_opt;

  ConvertArgs ca;
  auto* convert = app.add_subcommand("convert", "Frames (directory or video CSV) to events");
  convert->add_option("--input", ca.input, "Frames directory or video CSV")
      ->required()
      ->check(CLI::ExistingPath);
  convert->add_option("--threshold", ca.threshold, "Log-intensity contrast threshold")
      ->check(CLI::PositiveNumber);
  convert->add_option("--frame-interval-us", ca.frame_interval_us, "Time between frames")
      ->check(CLI::PositiveNumber);
  convert->add_option("--crop", ca.crop, "Crop box x,y,w,h")->delimiter(',')->expected(4);
  convert->add_option("--resize", ca.resize, "Target H,W")->delimiter(',')->expected(2);
  convert->add_option("--format", ca.format, "csv or bin")->check(CLI::IsMember({"csv", "bin"}));
  convert->add_option("--voxel-bins", ca.voxel_bins, "Also dump a voxel grid with this many bins");
  convert->add_option("--voxel-policy", ca.voxel_policy)
      ->check(CLI::IsMember({"count", "binary", "bilinear-time"}));
  convert->add_option("--label", ca.label, "Class label stored with the stream");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic event dataset");
  synth->add_option("--kind", sa.kind)
      ->check(CLI::IsMember({"moving-bar-4dir", "expanding-vs-contracting"}));
  synth->add_option("--n-per-class", sa.n_per_class)->check(CLI::PositiveNumber);
  synth->add_option("--width", sa.width);
  synth->add_option("--height", sa.height);
  synth->add_option("--frames", sa.frames);
  synth->add_option("--threshold", sa.threshold)->check(CLI::PositiveNumber);
  synth->add_flag("--no-jitter", sa.no_jitter, "Disable per-sample speed/position jitter");
  synth->add_option("--format", sa.format)->check(CLI::IsMember({"csv", "bin"}));

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset manifest");
  ta.model.add(train_cmd);
  ta.data.add(train_cmd);
  train_cmd->add_option("--epochs", ta.train.epochs);
  train_cmd->add_option("--lr", ta.train.learning_rate)->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch-size", ta.train.batch_size)->check(CLI::PositiveNumber);
  train_cmd->add_option("--val-fraction", ta.val_fraction,
                        "Validation fraction of the training split (drives early stopping)")
      ->check(CLI::Range(0.0, 0.95));
  train_cmd->add_option("--target-accuracy", ta.train.target_accuracy,
                        "Stop once monitored accuracy reaches this value")
      ->check(CLI::Range(0.0, 1.0));
  train_cmd->add_flag("--ablation", ta.ablation_table,
                      "Train all five comparison variants and write ablation.csv");
  train_cmd->add_option("--profile-shape", ta.profile_shape, "FLOPs shape for --ablation")
      ->delimiter(',')
      ->expected(4);

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  ea.model.add(eval_cmd);
  ea.data.add(eval_cmd);
  eval_cmd->add_option("--checkpoint", ea.checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", ea.split, "all or test")->check(CLI::IsMember({"all", "test"}));
  eval_cmd->add_option("--batch-size", ea.batch_size)->check(CLI::PositiveNumber);

  ProfileArgs pa;
  auto* profile_cmd = app.add_subcommand("profile", "FLOPs, parameters and energy report");
  pa.model.add(profile_cmd);
  profile_cmd->add_option("--trace", pa.traces, "Power trace CSV (one per compared model)")
      ->delimiter(',')
      ->check(CLI::ExistingFile);
  profile_cmd->add_option("--format", pa.format)->check(CLI::IsMember({"table", "csv"}));
  profile_cmd->add_option("--quadrature", pa.quadrature)->check(CLI::IsMember({"left", "trapezoid"}));
  profile_cmd->add_option("--compare", pa.compare, "Comma-separated built-in models")
      ->delimiter(',')
      ->check(CLI::IsMember({"cs3d", "c3d"}));
  profile_cmd->add_flag("--ablation", pa.ablation, "Five-row comparison of the ablation variants");

  CheckOptions co;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference suite over all modules");
  gradcheck->add_option("--tolerance", co.tolerance)->check(CLI::PositiveNumber);
  gradcheck->add_option("--step", co.step)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  const bool seed_given = seed_opt->count() > 0;
  CLI::App* cmd = app.get_subcommands().front();
  Manifest man(cmd->get_name(), g);
  try {
    int rc = 0;
    if (cmd == convert) {
      rc = cmd_convert(ca, g, man);
    } else if (cmd == synth) {
      rc = cmd_synth(sa, g, man);
    } else if (cmd == train_cmd) {
      rc = cmd_train(ta, g, seed_given, man);
    } else if (cmd == eval_cmd) {
      rc = cmd_eval(ea, g, seed_given, man);
    } else if (cmd == profile_cmd) {
      rc = cmd_profile(pa, g, seed_given, man);
    } else {
      rc = cmd_gradcheck(co, g, man);
    }
    man.write(rc == 0 ? "ok" : "failed");
    return rc;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    try {
      man.write("failed");
    } catch (const std::exception&) {
    }
    return 1;
  }
}
