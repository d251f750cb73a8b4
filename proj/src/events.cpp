#include "cs3d/events.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "cs3d/parallel.hpp"
#include "cs3d/random.hpp"
#include "cs3d/serialize.hpp"

namespace cs3d {

namespace {

WarningSink& sink() {
  static WarningSink s = [](const std::string& m) { std::cerr << "warning: " << m << "\n"; };
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

// Reads "key=value" tokens from a comment line.
std::map<std::string, std::string> comment_fields(std::string_view line) {
  std::map<std::string, std::string> out;
  std::istringstream is{std::string(line.substr(1))};
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq != std::string::npos) out[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return out;
}

void finish_stream(EventStream& s, bool infer_geometry) {
  if (infer_geometry) {
    for (const auto& e : s.events) {
      s.width = std::max<std::uint32_t>(s.width, e.x + 1u);
      s.height = std::max<std::uint32_t>(s.height, e.y + 1u);
    }
  }
  s.validate();
  if (!s.sorted()) {
    warn("event timestamps are not monotone; stream sorted by timestamp");
    s.sort();
  }
}

double log_intensity(double v) { return std::log(v + kLogEpsilon); }

}  // namespace

void set_warning_sink(WarningSink s) {
  sink() = s ? std::move(s) : [](const std::string& m) { std::cerr << "warning: " << m << "\n"; };
}

void warn(const std::string& message) { sink()(message); }

// ---- streams ----------------------------------------------------------------

void EventStream::validate() const {
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (e.x >= width || e.y >= height) {
      throw EventError("event " + std::to_string(i) + " at (" + std::to_string(e.x) + "," +
                       std::to_string(e.y) + ") outside " + std::to_string(width) + "x" +
                       std::to_string(height) + " sensor");
    }
    if (e.p != 1 && e.p != -1) {
      throw EventError("event " + std::to_string(i) + " has polarity " + std::to_string(e.p));
    }
  }
}

bool EventStream::sorted() const {
  return std::is_sorted(events.begin(), events.end(),
                        [](const Event& a, const Event& b) { return a.t < b.t; });
}

void EventStream::sort() {
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
}

EventStream read_events_csv(std::istream& is) {
  EventStream s;
  bool geometry = false;
  bool header = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string_view v = trim(line);
    if (v.empty()) continue;
    if (v.front() == '#') {
      const auto f = comment_fields(v);
      if (f.count("width") && f.count("height")) {
        if (!parse_number(f.at("width"), s.width) || !parse_number(f.at("height"), s.height)) {
          throw EventError("line " + std::to_string(lineno) + ": bad geometry comment");
        }
        geometry = true;
      }
      if (f.count("label")) {
        std::size_t label = 0;
        if (!parse_number(f.at("label"), label)) {
          throw EventError("line " + std::to_string(lineno) + ": bad label");
        }
        s.label = label;
      }
      continue;
    }
    if (!header) {
      if (v != "t_us,x,y,p") {
        throw EventError("line " + std::to_string(lineno) + ": expected header 't_us,x,y,p'");
      }
      header = true;
      continue;
    }
    const auto f = split(v, ',');
    Event e;
    int p = 0;
    if (f.size() != 4 || !parse_number(f[0], e.t) || !parse_number(f[1], e.x) ||
        !parse_number(f[2], e.y) || !parse_number(f[3], p) || (p != 1 && p != -1)) {
      throw EventError("line " + std::to_string(lineno) + ": malformed record '" + std::string(v) +
                       "'");
    }
    e.p = static_cast<std::int8_t>(p);
    s.events.push_back(e);
  }
  finish_stream(s, !geometry);
  return s;
}

void write_events_csv(std::ostream& os, const EventStream& s) {
  os << "# cs3d events v1 width=" << s.width << " height=" << s.height;
  if (s.label) os << " label=" << *s.label;
  os << "\nt_us,x,y,p\n";
  for (const auto& e : s.events) {
    os << e.t << ',' << e.x << ',' << e.y << ',' << static_cast<int>(e.p) << '\n';
  }
}

EventStream read_events_binary(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || !std::equal(magic, magic + 8, kEventMagic)) {
    throw EventError("not a binary event file (bad magic)");
  }
  EventStream s;
  try {
    s.width = le::get_u32(is);
    s.height = le::get_u32(is);
    const auto label = static_cast<std::int64_t>(le::get_u64(is));
    if (label >= 0) s.label = static_cast<std::size_t>(label);
    const std::uint64_t count = le::get_u64(is);
    s.events.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 24)));
    for (std::uint64_t i = 0; i < count; ++i) {
      Event e;
      e.t = le::get_u64(is);
      e.x = le::get_u16(is);
      e.y = le::get_u16(is);
      e.p = static_cast<std::int8_t>(le::get_u8(is));
      s.events.push_back(e);
    }
  } catch (const FormatError&) {
    throw EventError("truncated binary event file after " + std::to_string(s.events.size()) +
                     " records");
  }
  finish_stream(s, false);
  return s;
}

void write_events_binary(std::ostream& os, const EventStream& s) {
  os.write(kEventMagic, 8);
  le::put_u32(os, s.width);
  le::put_u32(os, s.height);
  le::put_u64(os, s.label ? static_cast<std::uint64_t>(*s.label) : ~std::uint64_t{0});
  le::put_u64(os, s.events.size());
  for (const auto& e : s.events) {
    le::put_u64(os, e.t);
    le::put_u16(os, e.x);
    le::put_u16(os, e.y);
    le::put_u8(os, static_cast<std::uint8_t>(e.p));
  }
}

EventStream parse_events(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw EventError("cannot open event file " + path.string());
  char head[8] = {};
  is.read(head, 8);
  const bool binary = is.gcount() == 8 && std::equal(head, head + 8, kEventMagic);
  is.clear();
  is.seekg(0);
  try {
    return binary ? read_events_binary(is) : read_events_csv(is);
  } catch (const EventError& e) {
    throw EventError(path.string() + ": " + e.what());
  }
}

EventFormat format_for_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? EventFormat::kCsv : EventFormat::kBinary;
}

void write_events(const std::filesystem::path& path, const EventStream& s, EventFormat format) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw EventError("cannot write event file " + path.string());
  if (format == EventFormat::kCsv) {
    write_events_csv(os, s);
  } else {
    write_events_binary(os, s);
  }
}

// ---- images -----------------------------------------------------------------

namespace {

std::string pnm_token(std::istream& is) {
  std::string tok;
  char c;
  while (is.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(is, rest);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw EventError("cannot open image " + path.string());
  const std::string magic = pnm_token(is);
  Image img;
  if (magic == "P2" || magic == "P5") {
    img.channels = 1;
  } else if (magic == "P3" || magic == "P6") {
    img.channels = 3;
  } else {
    throw EventError(path.string() + ": unsupported image type '" + magic + "'");
  }
  std::size_t maxval = 0;
  if (!parse_number(pnm_token(is), img.width) || !parse_number(pnm_token(is), img.height) ||
      !parse_number(pnm_token(is), maxval) || img.width == 0 || img.height == 0 || maxval == 0 ||
      maxval > 65535) {
    throw EventError(path.string() + ": bad image header");
  }
  const std::size_t n = img.width * img.height * img.channels;
  img.pixels.resize(n);
  const double scale = 1.0 / static_cast<double>(maxval);
  if (magic == "P2" || magic == "P3") {
    for (auto& v : img.pixels) {
      std::size_t raw = 0;
      if (!parse_number(pnm_token(is), raw) || raw > maxval) {
        throw EventError(path.string() + ": bad pixel value");
      }
      v = static_cast<double>(raw) * scale;
    }
  } else {
    const std::size_t bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(n * bytes);
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
      throw EventError(path.string() + ": truncated pixel data");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t raw = bytes == 2 ? (std::size_t{buf[2 * i]} << 8) | buf[2 * i + 1] : buf[i];
      img.pixels[i] = static_cast<double>(raw) * scale;
    }
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const Image& gray) {
  if (gray.channels != 1) throw EventError("write_pgm needs a grayscale image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw EventError("cannot write image " + path.string());
  os << "P5\n" << gray.width << ' ' << gray.height << "\n255\n";
  for (double v : gray.pixels) {
    const long q = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
    os.put(static_cast<char>(q));
  }
}

std::vector<Image> read_frames_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw EventError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Image> frames;
  for (const auto& f : files) frames.push_back(read_pnm(f));
  return frames;
}

std::vector<Image> read_video_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw EventError("cannot open video " + path.string());
  std::string line;
  std::size_t width = 0;
  std::size_t height = 0;
  if (!std::getline(is, line) || trim(line).empty() || trim(line).front() != '#') {
    throw EventError(path.string() + ": expected '# width=W height=H' header");
  }
  const auto f = comment_fields(trim(line));
  if (!f.count("width") || !f.count("height") || !parse_number(f.at("width"), width) ||
      !parse_number(f.at("height"), height) || width == 0 || height == 0) {
    throw EventError(path.string() + ": bad video geometry");
  }
  std::vector<Image> frames;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(trim(line), ',');
    if (cells.size() != width * height) {
      throw EventError(path.string() + ": line " + std::to_string(lineno) + " has " +
                       std::to_string(cells.size()) + " values, expected " +
                       std::to_string(width * height));
    }
    Image img{width, height, 1, std::vector<double>(width * height)};
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (!parse_number(cells[i], img.pixels[i])) {
        throw EventError(path.string() + ": line " + std::to_string(lineno) + ": bad value");
      }
    }
    frames.push_back(std::move(img));
  }
  return frames;
}

// ---- simulation -------------------------------------------------------------

EventStream frames_to_events(const std::vector<Image>& frames, const SimulatorOptions& opts) {
  if (frames.size() < 2) throw EventError("frames_to_events needs at least 2 frames");
  if (!(opts.threshold > 0.0) || !std::isfinite(opts.threshold)) {
    throw EventError("contrast threshold must be positive");
  }
  const std::size_t w = frames[0].width;
  const std::size_t h = frames[0].height;
  if (w > 65535 || h > 65535) throw EventError("frame larger than 65535 pixels");
  std::vector<std::vector<double>> logs;
  logs.reserve(frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const Image gray = frames[k].channels == 1 ? frames[k] : to_gray(frames[k]);
    if (gray.width != w || gray.height != h) {
      throw EventError("frame " + std::to_string(k) + " is " + std::to_string(gray.width) + "x" +
                       std::to_string(gray.height) + ", expected " + std::to_string(w) + "x" +
                       std::to_string(h));
    }
    std::vector<double> l(gray.pixels.size());
    for (std::size_t i = 0; i < l.size(); ++i) {
      const double v = gray.pixels[i];
      if (!std::isfinite(v)) {
        throw EventError("frame " + std::to_string(k) + " has a non-finite pixel at index " +
                         std::to_string(i));
      }
      l[i] = log_intensity(v);
    }
    logs.push_back(std::move(l));
  }

  EventStream s;
  s.width = static_cast<std::uint32_t>(w);
  s.height = static_cast<std::uint32_t>(h);
  std::vector<double> ref = logs[0];
  const double theta = opts.threshold;
  const double dt = opts.frame_interval_us;
  for (std::size_t k = 1; k < logs.size(); ++k) {
    const double t0 = static_cast<double>(k - 1) * dt;
    const auto& prev = logs[k - 1];
    const auto& cur = logs[k];
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const double diff = cur[i] - ref[i];
      // A change of exactly k thresholds (e.g. returning to the reference
      // level) must give k events despite rounding in the log differences.
      const auto n = static_cast<std::size_t>(std::floor(std::abs(diff) / theta + 1e-9));
      if (n == 0) continue;
      const double sign = diff > 0 ? 1.0 : -1.0;
      const double span = cur[i] - prev[i];
      for (std::size_t j = 1; j <= n; ++j) {
        const double level = ref[i] + sign * static_cast<double>(j) * theta;
        double frac = span != 0.0 ? (level - prev[i]) / span : 1.0;
        frac = std::clamp(frac, 0.0, 1.0);
        Event e;
        e.t = static_cast<std::uint64_t>(std::floor(t0 + frac * dt));
        e.x = static_cast<std::uint16_t>(i % w);
        e.y = static_cast<std::uint16_t>(i / w);
        e.p = sign > 0 ? 1 : -1;
        s.events.push_back(e);
      }
      ref[i] += sign * static_cast<double>(n) * theta;
    }
  }
  s.sort();
  return s;
}

// ---- voxelization -----------------------------------------------------------

const char* to_string(VoxelPolicy p) {
  switch (p) {
    case VoxelPolicy::kCount:
      return "count";
    case VoxelPolicy::kBinary:
      return "binary";
    case VoxelPolicy::kBilinearTime:
      return "bilinear-time";
  }
  return "unknown";
}

VoxelPolicy voxel_policy_from_string(const std::string& s) {
  if (s == "count") return VoxelPolicy::kCount;
  if (s == "binary") return VoxelPolicy::kBinary;
  if (s == "bilinear-time") return VoxelPolicy::kBilinearTime;
  throw EventError("unknown voxel policy '" + s + "'");
}

VoxelGrid voxelize(const EventStream& s, std::size_t bins, std::size_t height, std::size_t width,
                   VoxelPolicy policy) {
  if (bins == 0 || height == 0 || width == 0) throw EventError("voxel grid extents must be >= 1");
  VoxelGrid g;
  g.data = Tensor::zeros(Shape{2, bins, height, width});
  if (s.events.empty()) return g;
  if (s.width == 0 || s.height == 0) throw EventError("event stream has no sensor geometry");
  s.validate();

  const std::uint64_t t_first = s.events.front().t;
  const std::uint64_t t_last = s.events.back().t;
  if (t_last < t_first) throw EventError("voxelize needs a time-sorted stream");
  const std::uint64_t duration = t_last - t_first;
  if (duration == 0 && s.events.size() > 1) {
    warn("zero-duration stream with " + std::to_string(s.events.size()) +
         " events; all events placed in bin 0");
  }
  g.bin_duration_us = static_cast<double>(duration) / static_cast<double>(bins);

  auto data = g.data.mutable_data();
  const std::size_t plane = height * width;
  auto cell = [&](const Event& e, std::size_t bin) -> double& {
    const std::size_t c = e.p > 0 ? 0 : 1;
    const std::size_t y = static_cast<std::size_t>(e.y) * height / s.height;
    const std::size_t x = static_cast<std::size_t>(e.x) * width / s.width;
    return data[(c * bins + bin) * plane + y * width + x];
  };

  for (const auto& e : s.events) {
    if (duration == 0) {
      cell(e, 0) += 1.0;
      continue;
    }
    const auto offset = static_cast<unsigned __int128>(e.t - t_first);
    if (policy == VoxelPolicy::kBilinearTime) {
      // Position in bin units relative to bin centres.
      const double u = static_cast<double>(e.t - t_first) / static_cast<double>(duration) *
                           static_cast<double>(bins) -
                       0.5;
      if (u <= 0.0) {
        cell(e, 0) += 1.0;
      } else if (u >= static_cast<double>(bins - 1)) {
        cell(e, bins - 1) += 1.0;
      } else {
        const auto lo = static_cast<std::size_t>(std::floor(u));
        const double frac = u - static_cast<double>(lo);
        cell(e, lo) += 1.0 - frac;
        cell(e, lo + 1) += frac;
      }
      continue;
    }
    auto bin = static_cast<std::size_t>(offset * bins / duration);
    if (bin >= bins) bin = bins - 1;
    cell(e, bin) += 1.0;
  }
  if (policy == VoxelPolicy::kBinary) {
    for (auto& v : data) v = v > 0.0 ? 1.0 : 0.0;
  }
  return g;
}

void normalize_max(Tensor& t) {
  auto d = t.mutable_data();
  double m = 0.0;
  for (double v : d) m = std::max(m, v);
  if (m <= 0.0) return;
  for (auto& v : d) v /= m;
}

// ---- preprocessing ----------------------------------------------------------

Image to_gray(const Image& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3) throw EventError("expected 1 or 3 image channels");
  Image g{img.width, img.height, 1, std::vector<double>(img.width * img.height)};
  for (std::size_t i = 0; i < g.pixels.size(); ++i) {
    const double* p = &img.pixels[3 * i];
    g.pixels[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
  }
  return g;
}

Image resize_bilinear(const Image& gray, std::size_t height, std::size_t width) {
  if (gray.channels != 1) throw EventError("resize_bilinear needs a grayscale image");
  if (height == 0 || width == 0) throw EventError("resize target must be non-empty");
  Image out{width, height, 1, std::vector<double>(width * height)};
  const double sy = static_cast<double>(gray.height) / static_cast<double>(height);
  const double sx = static_cast<double>(gray.width) / static_cast<double>(width);
  auto coord = [](std::size_t dst, double scale, std::size_t n, std::size_t& i0, double& f) {
    double c = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    c = std::clamp(c, 0.0, static_cast<double>(n - 1));
    i0 = std::min(static_cast<std::size_t>(std::floor(c)), n - 1);
    f = c - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0;
    double fy;
    coord(y, sy, gray.height, y0, fy);
    const std::size_t y1 = std::min(y0 + 1, gray.height - 1);
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t x0;
      double fx;
      coord(x, sx, gray.width, x0, fx);
      const std::size_t x1 = std::min(x0 + 1, gray.width - 1);
      const double top = (1 - fx) * gray.at(x0, y0) + fx * gray.at(x1, y0);
      const double bottom = (1 - fx) * gray.at(x0, y1) + fx * gray.at(x1, y1);
      out.pixels[y * width + x] = (1 - fy) * top + fy * bottom;
    }
  }
  return out;
}

std::vector<Image> preprocess_frames(const std::vector<Image>& frames, const CropBox& crop,
                                     std::size_t target_height, std::size_t target_width) {
  std::vector<Image> out;
  out.reserve(frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const Image& f = frames[k];
    if (crop.width == 0 || crop.height == 0 || crop.x + crop.width > f.width ||
        crop.y + crop.height > f.height) {
      throw EventError("crop box " + std::to_string(crop.width) + "x" +
                       std::to_string(crop.height) + "+" + std::to_string(crop.x) + "+" +
                       std::to_string(crop.y) + " outside frame " + std::to_string(k) + " (" +
                       std::to_string(f.width) + "x" + std::to_string(f.height) + ")");
    }
    Image c{crop.width, crop.height, f.channels,
            std::vector<double>(crop.width * crop.height * f.channels)};
    for (std::size_t y = 0; y < crop.height; ++y) {
      const double* src = &f.pixels[((crop.y + y) * f.width + crop.x) * f.channels];
      std::copy(src, src + crop.width * f.channels, &c.pixels[y * crop.width * f.channels]);
    }
    out.push_back(resize_bilinear(to_gray(c), target_height, target_width));
  }
  return out;
}

// ---- datasets ---------------------------------------------------------------

std::array<std::size_t, 4> Dataset::input_shape() const {
  if (samples.empty()) throw EventError("empty dataset has no input shape");
  const Shape& s = samples[0].input.shape();
  return {s[0], s[1], s[2], s[3]};
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double test_fraction,
                                          std::uint64_t seed) {
  if (test_fraction < 0.0 || test_fraction >= 1.0) {
    throw EventError("test fraction must lie in [0, 1)");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.samples[i].label].push_back(i);
  Rng rng(seed);
  std::vector<bool> is_test(ds.size(), false);
  for (auto& [label, idx] : by_class) {
    shuffle(idx, rng);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    if (test_fraction > 0.0 && n_test == 0 && idx.size() > 1) n_test = 1;
    for (std::size_t j = 0; j < n_test; ++j) is_test[idx[j]] = true;
  }
  Dataset train;
  Dataset test;
  train.class_count = test.class_count = ds.class_count;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    (is_test[i] ? test : train).samples.push_back(ds.samples[i]);
  }
  return {std::move(train), std::move(test)};
}

const char* to_string(SynthKind k) {
  return k == SynthKind::kMovingBar4Dir ? "moving-bar-4dir" : "expanding-vs-contracting";
}

SynthKind synth_kind_from_string(const std::string& s) {
  if (s == "moving-bar-4dir") return SynthKind::kMovingBar4Dir;
  if (s == "expanding-vs-contracting") return SynthKind::kExpandingContracting;
  throw EventError("unknown synthetic dataset '" + s + "'");
}

std::size_t synth_class_count(SynthKind k) { return k == SynthKind::kMovingBar4Dir ? 4 : 2; }

namespace {

constexpr double kBackground = 0.1;
constexpr double kForeground = 0.9;

// Overlap of pixel [a, a+1) with the bar [p, p+w).
double coverage(double a, double p, double w) {
  return std::clamp(std::min(a + 1.0, p + w) - std::max(a, p), 0.0, 1.0);
}

std::vector<Image> moving_bar(const SynthOptions& o, std::size_t label, Rng& rng) {
  const double bar = o.jitter ? rng.uniform(3.0, 5.0) : 4.0;
  const double speed = o.jitter ? rng.uniform(1.1, 1.6) : 1.35;
  const double shift = o.jitter ? rng.uniform(-2.0, 2.0) : 0.0;
  const bool vertical_motion = label < 2;  // 0 up, 1 down, 2 left, 3 right
  const double extent = static_cast<double>(vertical_motion ? o.height : o.width);
  const double travel = speed * static_cast<double>(o.frames - 1);
  const double start = (extent - travel - bar) / 2.0 + shift;

  std::vector<Image> frames;
  for (std::size_t k = 0; k < o.frames; ++k) {
    const double p = start + speed * static_cast<double>(k);
    Image img{o.width, o.height, 1, std::vector<double>(o.width * o.height)};
    for (std::size_t y = 0; y < o.height; ++y) {
      for (std::size_t x = 0; x < o.width; ++x) {
        // Coordinate along the motion axis, mirrored for up/left.
        std::size_t a = 0;
        switch (label) {
          case 0: a = o.height - 1 - y; break;
          case 1: a = y; break;
          case 2: a = o.width - 1 - x; break;
          default: a = x; break;
        }
        const double c = coverage(static_cast<double>(a), p, bar);
        img.pixels[y * o.width + x] = kBackground + (kForeground - kBackground) * c;
      }
    }
    frames.push_back(std::move(img));
  }
  return frames;
}

std::vector<Image> disc(const SynthOptions& o, std::size_t label, Rng& rng) {
  const double cx = static_cast<double>(o.width) / 2.0 + (o.jitter ? rng.uniform(-2.0, 2.0) : 0.0);
  const double cy = static_cast<double>(o.height) / 2.0 + (o.jitter ? rng.uniform(-2.0, 2.0) : 0.0);
  const double limit = static_cast<double>(std::min(o.width, o.height)) / 2.0 - 2.0;
  const double r0 = o.jitter ? rng.uniform(1.5, 3.0) : 2.0;
  const double r1 = limit * (o.jitter ? rng.uniform(0.8, 1.0) : 0.9);

  std::vector<Image> frames;
  for (std::size_t k = 0; k < o.frames; ++k) {
    double f = static_cast<double>(k) / static_cast<double>(o.frames - 1);
    if (label == 1) f = 1.0 - f;  // contracting replays expansion backwards
    const double r = r0 + (r1 - r0) * f;
    Image img{o.width, o.height, 1, std::vector<double>(o.width * o.height)};
    for (std::size_t y = 0; y < o.height; ++y) {
      for (std::size_t x = 0; x < o.width; ++x) {
        const double d = std::hypot(static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy);
        const double c = std::clamp(r - d + 0.5, 0.0, 1.0);
        img.pixels[y * o.width + x] = kBackground + (kForeground - kBackground) * c;
      }
    }
    frames.push_back(std::move(img));
  }
  return frames;
}

void check_synth(const SynthOptions& o) {
  if (o.width < 8 || o.height < 8) {
    throw EventError("synthetic geometry " + std::to_string(o.width) + "x" +
                     std::to_string(o.height) + " is degenerate (minimum 8x8)");
  }
  if (o.n_per_class == 0) throw EventError("n_per_class must be >= 1");
  if (o.frames < 2) throw EventError("synthetic sequences need at least 2 frames");
  if (o.bins == 0) throw EventError("bins must be >= 1");
}

}  // namespace

std::vector<Image> synth_frames(const SynthOptions& opts, std::size_t label, std::size_t index) {
  check_synth(opts);
  if (label >= synth_class_count(opts.kind)) throw EventError("label out of range");
  Rng rng(opts.seed ^ index);
  return opts.kind == SynthKind::kMovingBar4Dir ? moving_bar(opts, label, rng)
                                                : disc(opts, label, rng);
}

EventStream synth_stream(const SynthOptions& opts, std::size_t label, std::size_t index) {
  EventStream s = frames_to_events(synth_frames(opts, label, index), opts.simulator);
  s.label = label;
  return s;
}

Dataset synth_dataset(const SynthOptions& opts) {
  check_synth(opts);
  const std::size_t k = synth_class_count(opts.kind);
  Dataset ds;
  ds.class_count = k;
  ds.samples.resize(k * opts.n_per_class);
  parallel_for(ds.samples.size(), [&](std::size_t i) {
    const std::size_t label = i / opts.n_per_class;
    const EventStream s = synth_stream(opts, label, i);
    Tensor v = voxelize(s, opts.bins, opts.height, opts.width, opts.policy).data;
    normalize_max(v);
    ds.samples[i] = Sample{v, label};
  });
  return ds;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw EventError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  const auto base = path.parent_path();
  while (std::getline(is, line)) {
    ++lineno;
    const auto v = trim(line);
    if (v.empty() || v.front() == '#') continue;
    if (!header) {
      if (v != "path,label") throw EventError(path.string() + ": expected header 'path,label'");
      header = true;
      continue;
    }
    const auto f = split(v, ',');
    ManifestEntry e;
    if (f.size() != 2 || f[0].empty() || !parse_number(f[1], e.label)) {
      throw EventError(path.string() + ": line " + std::to_string(lineno) + ": malformed entry");
    }
    const std::filesystem::path p{std::string(f[0])};
    e.path = p.is_absolute() ? p : base / p;
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw EventError("cannot write manifest " + path.string());
  os << "path,label\n";
  const auto base = path.parent_path();
  for (const auto& e : entries) {
    // Relative paths are already relative to the manifest.
    const auto p = e.path.is_absolute()
                       ? std::filesystem::relative(e.path, base.empty() ? "." : base)
                       : e.path;
    if (p.empty()) throw EventError("cannot express " + e.path.string() + " relative to the manifest");
    os << p.generic_string() << ',' << e.label << '\n';
  }
}

Dataset load_manifest_dataset(const std::filesystem::path& manifest, const VoxelOptions& opts) {
  const auto entries = read_manifest(manifest);
  Dataset ds;
  ds.samples.resize(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const EventStream s = parse_events(entries[i].path);
    Tensor v = voxelize(s, opts.bins, opts.height, opts.width, opts.policy).data;
    if (opts.normalize) normalize_max(v);
    ds.samples[i] = Sample{v, entries[i].label};
    ds.class_count = std::max(ds.class_count, entries[i].label + 1);
  }
  return ds;
}

}  // namespace cs3d
