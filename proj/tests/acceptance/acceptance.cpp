// Acceptance harness: one PASS/FAIL line per criterion, exit code 1 if any
// criterion fails. Artifacts go under --out.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cs3d/attention.hpp"
#include "cs3d/conv.hpp"
#include "cs3d/events.hpp"
#include "cs3d/experiment.hpp"
#include "cs3d/gradsuite.hpp"
#include "cs3d/network.hpp"
#include "cs3d/ops.hpp"
#include "cs3d/profiler.hpp"
#include "cs3d/random.hpp"
#include "cs3d/serialize.hpp"
#include "cs3d/trainer.hpp"
#include "instrumented.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace cs3d;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Result {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

// ---------------------------------------------------------------- 1

Result gradient_suite() {
  const auto t0 = Clock::now();
  std::size_t failed = 0, total = 0;
  bool analytic_exact = true;
  std::set<std::string> names;
  std::string worst;
  double worst_rel = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (const auto& e : run_gradient_suite(seed)) {
      ++total;
      names.insert(e.name);
      if (!e.report.passed) {
        ++failed;
        worst += " " + e.name;
      }
      if (e.analytic && e.report.max_abs_error != 0.0) analytic_exact = false;
      if (!e.analytic && e.report.max_rel_error > worst_rel) worst_rel = e.report.max_rel_error;
    }
  }
  const double secs = seconds_since(t0);
  const std::vector<std::string> required = {
      "elementwise.add", "elementwise.mul", "reduce.sum", "reduce.mean", "reduce.max", "linear",
      "dwconv3d.temporal", "dwconv3d.spatial_strided", "pwconv3d", "dense_conv3d",
      "batchnorm3d.train", "temporal_attention", "spatial_attention", "joint_attention",
      "cross_entropy", "ssn.surrogate"};
  std::string missing;
  for (const auto& r : required)
    if (!names.count(r)) missing += " " + r;
  Result r;
  r.pass = failed == 0 && analytic_exact && missing.empty() && secs < 120.0;
  r.detail = std::to_string(total - failed) + "/" + std::to_string(total) +
             " checks pass, worst rel err " + fmt(worst_rel) + " (tol 1e-4), ssn surrogate " +
             (analytic_exact ? "exact" : "NOT exact") + ", " + fmt(secs) + " s (limit 120 s)";
  if (!missing.empty()) r.detail += ", missing:" + missing;
  if (failed) r.detail += ", failed:" + worst;
  return r;
}

// ---------------------------------------------------------------- 2

ConvParams conv_params(Tensor w, Tensor b, Extent3 stride, Extent3 pad) {
  ConvParams p;
  p.weight = std::move(w);
  p.bias = std::move(b);
  p.stride = stride;
  p.padding = pad;
  return p;
}

Result oracle_equivalence() {
  constexpr int kCases = 25;
  constexpr double kTol = 1e-10;
  std::map<std::string, double> worst;
  auto note = [&](const std::string& k, double d) { worst[k] = std::max(worst[k], d); };
  Rng rng(2024);
  for (int rep = 0; rep < kCases; ++rep) {
    const std::size_t n = pick(rng, 1, 2), ci = pick(rng, 1, 4), co = pick(rng, 1, 4);
    const Extent3 k{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
    const Extent3 s{pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)};
    const Extent3 pad{rng.below(k.t), rng.below(k.h), rng.below(k.w)};
    Tensor x = oracle::random_tensor({n, ci, pick(rng, 3, 6), pick(rng, 3, 6), pick(rng, 3, 6)}, rng);

    Tensor wd = oracle::random_tensor({co, ci, k.t, k.h, k.w}, rng);
    Tensor bd = oracle::random_tensor({co}, rng);
    note("dense", oracle::max_abs_diff(dense_conv3d(x, conv_params(wd, bd, s, pad), k),
                                       oracle::conv3d(x, wd, &bd, 1, s.t, s.h, s.w, pad.t, pad.h, pad.w)));

    Tensor ww = oracle::random_tensor({ci, 1, k.t, k.h, k.w}, rng);
    Tensor bw = rep % 2 ? oracle::random_tensor({ci}, rng) : Tensor();
    note("depthwise",
         oracle::max_abs_diff(dwconv3d(x, conv_params(ww, bw, s, pad), k),
                              oracle::conv3d(x, ww, bw.defined() ? &bw : nullptr, ci, s.t, s.h, s.w, pad.t,
                                             pad.h, pad.w)));

    Tensor wp = oracle::random_tensor({co, ci, 1, 1, 1}, rng);
    note("pointwise", oracle::max_abs_diff(pwconv3d(x, conv_params(wp, {}, {1, 1, 1}, {0, 0, 0})),
                                           oracle::conv3d(x, wp, nullptr, 1, 1, 1, 1, 0, 0, 0)));

    const Extent3 win{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3)};
    const Extent3 ps{pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)};
    note("maxpool", oracle::max_abs_diff(maxpool3d(x, win, ps), oracle::pool3d(x, oracle::Pool::kMax, win.t, win.h,
                                                                                win.w, ps.t, ps.h, ps.w)));
    note("avgpool", oracle::max_abs_diff(avgpool3d(x, win, ps), oracle::pool3d(x, oracle::Pool::kAvg, win.t, win.h,
                                                                                win.w, ps.t, ps.h, ps.w)));

    const std::size_t c = pick(rng, 2, 6), kt = rep % 3 == 0 ? 1 : 3, cr = std::max<std::size_t>(1, c / 2);
    TemporalAttentionParams tp;
    tp.conv1.weight = oracle::random_tensor({cr, c, kt, 1, 1}, rng);
    tp.conv1.bias = oracle::random_tensor({cr}, rng);
    tp.conv1.padding = {kt / 2, 0, 0};
    tp.conv2.weight = oracle::random_tensor({c, cr, kt, 1, 1}, rng);
    tp.conv2.bias = oracle::random_tensor({c}, rng);
    tp.conv2.padding = {kt / 2, 0, 0};
    tp.phi = rep % 4 == 3 ? GateActivation::kIdentity : GateActivation::kRelu;
    Tensor xa = oracle::random_tensor({pick(rng, 1, 2), c, pick(rng, 1, 5), pick(rng, 1, 5), pick(rng, 1, 5)}, rng);
    note("temporal_attention",
         oracle::max_abs_diff(temporal_attention(xa, tp),
                              oracle::temporal_attention(xa, tp.conv1.weight, tp.conv1.bias, tp.conv2.weight,
                                                         tp.conv2.bias, tp.phi == GateActivation::kRelu)));

    const Extent3 sk{rep % 2 ? 3u : 1u, 2 * pick(rng, 0, 2) + 1, 2 * pick(rng, 0, 2) + 1};
    SpatialAttentionParams sp;
    sp.conv.weight = oracle::random_tensor({1, 2, sk.t, sk.h, sk.w}, rng);
    sp.conv.bias = oracle::random_tensor({1}, rng);
    sp.conv.padding = {sk.t / 2, sk.h / 2, sk.w / 2};
    Tensor xs = oracle::random_tensor({pick(rng, 1, 2), pick(rng, 1, 5), pick(rng, 1, 4), pick(rng, 2, 6), pick(rng, 2, 6)}, rng);
    note("spatial_attention", oracle::max_abs_diff(spatial_attention(xs, sp),
                                                   oracle::spatial_attention(xs, sp.conv.weight, sp.conv.bias)));
  }
  Result r;
  r.pass = true;
  std::string d = std::to_string(kCases) + " cases each; max |diff|:";
  for (const auto& [k, v] : worst) {
    r.pass = r.pass && v < kTol;
    d += " " + k + "=" + fmt(v, 2);
  }
  r.detail = d + " (tol 1e-10)";
  return r;
}

// ---------------------------------------------------------------- 3

Result zero_attention() {
  Rng rng(3);
  double e_t = 0, e_s = 0, e_j = 0;
  auto dev = [](const Tensor& y, const Tensor& x, double f) {
    double m = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) m = std::max(m, std::abs(y.data()[i] - f * x.data()[i]));
    return m;
  };
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t c = pick(rng, 2, 8);
    TemporalAttentionParams tp;
    tp.conv1.weight = Tensor::zeros({std::max<std::size_t>(1, c / 2), c, 3, 1, 1});
    tp.conv1.bias = Tensor::zeros({std::max<std::size_t>(1, c / 2)});
    tp.conv1.padding = {1, 0, 0};
    tp.conv2.weight = Tensor::zeros({c, std::max<std::size_t>(1, c / 2), 3, 1, 1});
    tp.conv2.bias = Tensor::zeros({c});
    tp.conv2.padding = {1, 0, 0};
    SpatialAttentionParams sp;
    sp.conv.weight = Tensor::zeros({1, 2, 1, 7, 7});
    sp.conv.bias = Tensor::zeros({1});
    sp.conv.padding = {0, 3, 3};
    Tensor x = oracle::random_tensor({pick(rng, 1, 2), c, pick(rng, 1, 6), pick(rng, 2, 6), pick(rng, 2, 6)}, rng, -3, 3);
    e_t = std::max(e_t, dev(temporal_attention(x, tp), x, 1.5));
    e_s = std::max(e_s, dev(spatial_attention(x, sp), x, 1.5));
    e_j = std::max(e_j, dev(joint_attention(x, tp, sp), x, 3.25));
  }
  Result r;
  r.pass = e_t <= 1e-12 && e_s <= 1e-12 && e_j <= 1e-12;
  r.detail = "max |y - kX|: temporal(1.5)=" + fmt(e_t, 2) + " spatial(1.5)=" + fmt(e_s, 2) +
             " joint(3.25)=" + fmt(e_j, 2) + " (tol 1e-12)";
  return r;
}

// ---------------------------------------------------------------- 4

LayerSpec spec(LayerKind k, const char* name) {
  LayerSpec s;
  s.kind = k;
  s.name = name;
  return s;
}

ModelConfig mixed_config(std::size_t variant) {
  ModelConfig cfg;
  cfg.name = "mixed" + std::to_string(variant);
  cfg.input_shape = {2, 4 + 2 * variant, 8, 8 + 4 * variant};
  cfg.class_count = 3 + variant;
  LayerSpec c = spec(LayerKind::kDenseConv, "conv1");
  c.out_channels = 3 + variant;
  LayerSpec p = spec(LayerKind::kMaxPool, "pool1");
  LayerSpec b = spec(LayerKind::kFactorizedBlock, "block2");
  b.out_channels = variant == 1 ? c.out_channels : 4 + variant;  // identity residual on variant 1
  LayerSpec mp = spec(LayerKind::kMultiPool, "multi_pool");
  mp.window = mp.stride = {2, 2, 2};
  LayerSpec at = spec(LayerKind::kAttention, "attention");
  at.spatial_kernel = {1, 3, 3};
  LayerSpec h = spec(LayerKind::kLinear, "fc1");
  h.features = 6;
  h.hidden = true;
  cfg.layers = {c, p, b, mp, at, spec(LayerKind::kFlatten, "flatten"), h, spec(LayerKind::kLinear, "fc2")};
  return cfg;
}

bool is_counted_kind(const std::string& k) {
  return k == "dense_conv3d" || k == "dwconv3d" || k == "pwconv3d" || k == "linear";
}

// Returns mismatching row count; `rows` receives the number compared.
std::size_t compare_counts(Model& m, const Shape& in, std::size_t& rows) {
  const ProfileReport r = count_flops(m, in);
  const auto counted = oracle::instrumented_counts(m, in);
  std::size_t bad = 0, seen = 0;
  for (const auto& row : r.rows) {
    if (!is_counted_kind(row.kind)) continue;
    ++seen;
    auto it = counted.find(row.name);
    if (it == counted.end() || it->second != row.flops) {
      ++bad;
      std::cerr << "  count mismatch " << m.config().name << " " << row.name << ": analytic " << row.flops
                << " instrumented " << (it == counted.end() ? 0 : it->second) << "\n";
    }
  }
  if (seen != counted.size()) bad += counted.size() > seen ? counted.size() - seen : seen - counted.size();
  rows += seen;
  return bad;
}

Result flops_accounting() {
  std::size_t rows = 0, bad = 0;
  for (std::size_t v = 0; v < 3; ++v) {
    Model m = build_model(mixed_config(v));
    bad += compare_counts(m, m.config().input(1), rows);
  }
  for (auto cfg : {default_cs3d_config(), default_c3d_config()}) {
    cfg.input_shape = {2, 16, 32, 32};
    Model m = build_model(cfg);
    bad += compare_counts(m, m.config().input(1), rows);
  }
  const Shape ref{1, 2, 16, 112, 112};
  const auto cs = count_flops(build_cs3d(), ref);
  const auto c3 = count_flops(build_c3d(), ref);
  const double ratio = static_cast<double>(cs.total_flops) / static_cast<double>(c3.total_flops);
  Result r;
  r.pass = bad == 0 && rows > 0 && ratio >= 0.15 && ratio <= 0.35;
  r.detail = std::to_string(rows - std::min(rows, bad)) + "/" + std::to_string(rows) +
             " conv/linear rows exact; at 2x16x112x112 CS3D " + fmt(cs.flops_g(), 5) + " G, C3D " +
             fmt(c3.flops_g(), 5) + " G, ratio " + fmt(ratio, 4) + " (band [0.15, 0.35])";
  return r;
}

// ---------------------------------------------------------------- 5

PowerTrace trace_of(const std::vector<double>& t, const std::vector<double>& p, std::string source = {}) {
  PowerTrace tr;
  tr.source = std::move(source);
  for (std::size_t i = 0; i < t.size(); ++i) tr.samples.push_back({t[i], p[i]});
  return tr;
}

Result energy() {
  // Constant 5 W over one second on dyadic timestamps, so every interval
  // is representable and the left sum is exact up to one rounding.
  std::vector<double> t, p;
  for (int i = 0; i <= 128; ++i) {
    t.push_back(i / 128.0);
    p.push_back(5.0);
  }
  const double flat = integrate_energy(trace_of(t, p));
  const double flat_err = std::abs(flat - 5.0) / 5.0;
  const bool flat_ok = flat_err <= std::numeric_limits<double>::epsilon();

  t.assign(101, 0.0);
  p.assign(101, 0.0);
  for (int i = 0; i <= 100; ++i) t[i] = 0.01 * i;
  // p(t) = 10 t on t_i = i/100: sum_{i<100} 10 (i/100) (1/100) = 4.95.
  for (int i = 0; i <= 100; ++i) p[i] = 10.0 * t[i];
  const double ramp = integrate_energy(trace_of(t, p));
  const bool ramp_ok = std::abs(ramp - 4.95) < 1e-12;

  // 18.2 J over one second at 100 Hz.
  std::vector<double> tt, pp;
  for (int i = 0; i <= 100; ++i) {
    tt.push_back(0.01 * i);
    pp.push_back(18.2);
  }
  ProfileReport rep = profile(build_cs3d(), Shape{1, 2, 16, 112, 112}, trace_of(tt, pp, "titan-x"));
  const std::string rendered = rep.energy_mj() ? format_engineering(*rep.energy_mj(), "mJ") : "<none>";
  const bool render_ok = rendered == "18.2 × 10³ mJ";

  Result r;
  r.pass = flat_ok && ramp_ok && render_ok;
  r.detail = "constant rel err " + fmt(flat_err, 2) + " (<= 1 eps), ramp " + fmt(ramp, 17) +
             " vs 4.95 (tol 1e-12), 18.2 J renders as \"" + rendered + "\"";
  return r;
}

// ---------------------------------------------------------------- 6

EventStream random_stream(Rng& rng, std::size_t n, std::uint32_t w, std::uint32_t h) {
  EventStream s;
  s.width = w;
  s.height = h;
  std::uint64_t t = rng.below(1000);
  for (std::size_t i = 0; i < n; ++i) {
    t += rng.below(50);
    s.events.push_back({t, static_cast<std::uint16_t>(rng.below(w)), static_cast<std::uint16_t>(rng.below(h)),
                        static_cast<std::int8_t>(rng.below(2) ? 1 : -1)});
  }
  return s;
}

Result event_pipeline(const fs::path& out) {
  fs::create_directories(out);
  Rng rng(6);
  std::size_t sum_bad = 0, trip_bad = 0;
  for (int rep = 0; rep < 100; ++rep) {
    EventStream s = random_stream(rng, 1 + rng.below(500), 4 + rng.below(40), 4 + rng.below(40));
    if (rep % 3 == 0) s.label = rng.below(4);
    const std::size_t bins = 1 + rng.below(16);
    VoxelGrid g = voxelize(s, bins, s.height, s.width, VoxelPolicy::kCount);
    double total = 0.0;
    for (double v : g.data.data()) total += v;
    if (total != static_cast<double>(s.events.size())) ++sum_bad;

    for (const char* name : {"stream.csv", "stream.bin"}) {
      const fs::path p = out / name;
      write_events(p, s, format_for_path(p));
      const EventStream back = parse_events(p);
      if (back.events != s.events || back.width != s.width || back.height != s.height || back.label != s.label)
        ++trip_bad;
    }
  }
  fs::remove(out / "stream.csv");
  fs::remove(out / "stream.bin");

  std::size_t static_events = 0;
  for (double level : {0.0, 0.3, 1.0}) {
    std::vector<Image> frames(12, Image{24, 16, 1, std::vector<double>(24 * 16, level)});
    static_events += frames_to_events(frames, {}).events.size();
  }

  // Deterministic artifacts for the rerun comparison.
  SynthOptions so;
  so.seed = 7;
  const EventStream sample = synth_stream(so, 2, 3);
  write_events(out / "events.csv", sample, EventFormat::kCsv);
  write_events(out / "events.bin", sample, EventFormat::kBinary);
  VoxelGrid vg = voxelize(sample, 16, 32, 32, VoxelPolicy::kCount);
  save_tensor(out / "voxels.tnsr", vg.data);

  Result r;
  r.pass = sum_bad == 0 && trip_bad == 0 && static_events == 0;
  r.detail = "voxel sums exact on " + std::to_string(100 - sum_bad) + "/100 streams, round trips ok " +
             std::to_string(200 - trip_bad) + "/200 (csv+binary), static-frame events " +
             std::to_string(static_events);
  return r;
}

// ---------------------------------------------------------------- 7

Result desk_learning(const fs::path& out) {
  fs::create_directories(out);
  const auto t0 = Clock::now();
  SynthOptions so;
  so.kind = SynthKind::kMovingBar4Dir;
  so.n_per_class = 50;
  so.bins = 16;
  so.width = so.height = 32;
  so.seed = 7;
  const Dataset all = synth_dataset(so);
  auto [fit_and_val, test] = split_dataset(all, 0.2, 7);
  auto [fit, val] = split_dataset(fit_and_val, 0.2, 8);

  ModelConfig cfg = default_cs3d_config();
  cfg.input_shape = all.input_shape();
  cfg.class_count = all.class_count;
  cfg.seed = 7;
  Model m = build_model(cfg);

  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.batch_size = 16;
  tc.epochs = 30;
  tc.seed = 7;
  tc.target_accuracy = 0.95;
  const TrainingHistory h = train(m, fit, val, tc, [&](const EpochRecord& e) {
    std::cerr << "  [c7] epoch " << e.epoch << " loss " << e.train_loss << " val acc " << e.eval_accuracy
              << " (" << fmt(seconds_since(t0), 4) << " s)\n";
  });
  const Metrics met = evaluate(m, test, tc.batch_size);
  const double secs = seconds_since(t0);

  h.save_csv(out / "history.csv");
  {
    std::ofstream os(out / "metrics.csv");
    met.write_csv(os);
  }
  m.save(out / "model.ckpt");

  Result r;
  r.pass = met.accuracy >= 0.90 && h.epochs.size() <= 30 && secs <= 600.0;
  r.detail = "held-out accuracy " + fmt(met.accuracy, 4) + " on " + std::to_string(test.size()) +
             " samples (need >= 0.90), " + std::to_string(h.epochs.size()) + " epochs (<= 30), " +
             std::to_string(fit.size()) + " train / " + std::to_string(val.size()) + " val, " +
             fmt(secs, 4) + " s wall (limit 600 s)";
  return r;
}

// ---------------------------------------------------------------- 8

Result ablation(const fs::path& out) {
  fs::create_directories(out);
  SynthOptions so;
  so.n_per_class = 3;
  so.seed = 8;
  const Dataset all = synth_dataset(so);
  auto [train_set, test_set] = split_dataset(all, 0.34, 8);
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.batch_size = 4;
  tc.epochs = 1;
  tc.seed = 8;
  std::vector<AblationRow> rows;
  std::string error;
  try {
    rows = run_ablation(train_set, test_set, tc, 8, Shape{2, 16, 112, 112});
  } catch (const std::exception& e) {
    error = e.what();
  }
  {
    std::ofstream os(out / "ablation.csv");
    write_ablation_csv(os, rows);
  }
  std::size_t max_fact = 0, min_dense = std::numeric_limits<std::size_t>::max();
  std::size_t n_fact = 0, n_dense = 0;
  bool finite = true;
  for (const auto& row : rows) {
    const bool factorized = row.variant.find("Factorized") != std::string::npos || row.variant == "CS3D";
    if (factorized) {
      max_fact = std::max(max_fact, row.flops);
      ++n_fact;
    } else {
      min_dense = std::min(min_dense, row.flops);
      ++n_dense;
    }
    finite = finite && std::isfinite(row.train_loss);
  }
  std::ifstream in(out / "ablation.csv");
  const auto lines = std::count(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>(), '\n');
  Result r;
  r.pass = error.empty() && rows.size() == 5 && lines == 6 && n_fact > 0 && n_dense > 0 && max_fact < min_dense &&
           finite;
  std::ostringstream d;
  d << rows.size() << " variants trained 1 epoch, csv rows " << (lines - 1) << ", max factorized "
    << fmt(static_cast<double>(max_fact) / 1e9, 5) << " G < min dense "
    << fmt(static_cast<double>(min_dense) / 1e9, 5) << " G";
  if (!error.empty()) d << ", error: " << error;
  r.detail = d.str();
  return r;
}

// ---------------------------------------------------------------- 9

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Result determinism(const fs::path& first, const fs::path& second) {
  std::size_t files = 0, differ = 0;
  std::string which;
  for (const auto& e : fs::recursive_directory_iterator(first)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path rel = fs::relative(e.path(), first);
    if (!fs::exists(second / rel) || slurp(e.path()) != slurp(second / rel)) {
      ++differ;
      which += " " + rel.generic_string();
    }
  }
  Result r;
  r.pass = files > 0 && differ == 0;
  r.detail = std::to_string(files - differ) + "/" + std::to_string(files) +
             " artifacts of criteria 6-8 bitwise identical across two runs";
  if (differ) r.detail += ", differ:" + which;
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string out = "acceptance_out";
  std::vector<int> only;
  app.add_option("--out", out, "artifact directory");
  app.add_option("--only", only, "run only these criteria (9 implies 6-8)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int n) {
    return only.empty() || std::find(only.begin(), only.end(), n) != only.end() ||
           (n >= 6 && n <= 8 && std::find(only.begin(), only.end(), 9) != only.end());
  };
  set_warning_sink([](const std::string&) {});
  const fs::path root(out);
  fs::remove_all(root);
  fs::create_directories(root);

  bool all = true;
  auto report = [&](int n, const Result& r) {
    all = all && r.pass;
    std::cout << "criterion " << n << ": " << (r.pass ? "PASS" : "FAIL") << "  " << r.detail << std::endl;
  };
  auto guarded = [&](int n, const std::function<Result()>& f) {
    if (!wanted(n)) return;
    const auto t0 = Clock::now();
    Result r;
    try {
      r = f();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    r.detail += " [" + fmt(seconds_since(t0), 4) + " s]";
    report(n, r);
  };

  const fs::path run1 = root / "run1", run2 = root / "run2";
  guarded(1, gradient_suite);
  guarded(2, oracle_equivalence);
  guarded(3, zero_attention);
  guarded(4, flops_accounting);
  guarded(5, energy);
  guarded(6, [&] { return event_pipeline(run1 / "c6"); });
  guarded(7, [&] { return desk_learning(run1 / "c7"); });
  guarded(8, [&] { return ablation(run1 / "c8"); });
  guarded(9, [&] {
    if (!only.empty() && !wanted(6)) return Result{false, "needs criteria 6-8"};
    event_pipeline(run2 / "c6");
    if (wanted(7)) desk_learning(run2 / "c7");
    ablation(run2 / "c8");
    return determinism(run1, run2);
  });
  return all ? 0 : 1;
}
