#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cs3d/tensor.hpp"

namespace cs3d {

class EventError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-fatal diagnostics (auto-sorted streams, degenerate voxel windows).
/// Defaults to stderr; tests can capture.
using WarningSink = std::function<void(const std::string&)>;
void set_warning_sink(WarningSink sink);
void warn(const std::string& message);

struct Event {
  std::uint64_t t = 0;  // microseconds
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;  // +1 ON, -1 OFF

  bool operator==(const Event&) const = default;
};

struct EventStream {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<Event> events;
  std::optional<std::size_t> label;

  /// Throws EventError on out-of-bounds coordinates or bad polarity.
  void validate() const;
  bool sorted() const;
  /// Stable sort by timestamp.
  void sort();
};

enum class EventFormat { kCsv, kBinary };

// CSV: "# cs3d events v1 width=W height=H [label=K]", then "t_us,x,y,p".
// Binary: "CS3DEVT1", u32 width, u32 height, i64 label (-1 = none),
// u64 count, then packed u64 t, u16 x, u16 y, i8 p records.
inline constexpr char kEventMagic[8] = {'C', 'S', '3', 'D', 'E', 'V', 'T', '1'};

EventStream read_events_csv(std::istream& is);
void write_events_csv(std::ostream& os, const EventStream& s);
EventStream read_events_binary(std::istream& is);
void write_events_binary(std::ostream& os, const EventStream& s);

/// Detects the format from the leading bytes. Unsorted input is sorted
/// with a warning.
EventStream parse_events(const std::filesystem::path& path);
void write_events(const std::filesystem::path& path, const EventStream& s, EventFormat format);
EventFormat format_for_path(const std::filesystem::path& path);

/// Row-major image with intensities in [0, 1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;  // 1 gray, 3 RGB
  std::vector<double> pixels;

  double at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
};

Image read_pnm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image& gray);
/// All .pgm/.ppm files in name order.
std::vector<Image> read_frames_dir(const std::filesystem::path& dir);
/// "# width=W height=H" then one row of W*H intensities per frame.
std::vector<Image> read_video_csv(const std::filesystem::path& path);

struct SimulatorOptions {
  double threshold = 0.2;            // log-intensity contrast
  double frame_interval_us = 10000;  // time between consecutive frames
};

inline constexpr double kLogEpsilon = 1e-3;

/// Simplified frame-to-event simulation on log(I + 1e-3) with per-pixel
/// reference levels. Timestamps are interpolated inside each frame interval.
EventStream frames_to_events(const std::vector<Image>& frames, const SimulatorOptions& opts);

enum class VoxelPolicy { kCount, kBinary, kBilinearTime };

const char* to_string(VoxelPolicy p);
VoxelPolicy voxel_policy_from_string(const std::string& s);

struct VoxelGrid {
  Tensor data;  // [2, T, H, W]; channel 0 ON, channel 1 OFF
  double bin_duration_us = 0.0;
};

VoxelGrid voxelize(const EventStream& s, std::size_t bins, std::size_t height, std::size_t width,
                   VoxelPolicy policy);
/// Scales to [0, 1] by the maximum cell; all-zero tensors stay zero.
void normalize_max(Tensor& t);

struct CropBox {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t width = 0;
  std::size_t height = 0;
};

/// Crop, luma conversion (0.299, 0.587, 0.114) and bilinear resize with
/// pixel-centre alignment.
std::vector<Image> preprocess_frames(const std::vector<Image>& frames, const CropBox& crop,
                                     std::size_t target_height, std::size_t target_width);
Image to_gray(const Image& img);
Image resize_bilinear(const Image& gray, std::size_t height, std::size_t width);

struct Sample {
  Tensor input;  // [2, T, H, W]
  std::size_t label = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t class_count = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  /// (C, T, H, W) of the first sample.
  std::array<std::size_t, 4> input_shape() const;
};

/// Stratified seeded split; returns {train, test}.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double test_fraction,
                                          std::uint64_t seed);

enum class SynthKind { kMovingBar4Dir, kExpandingContracting };

const char* to_string(SynthKind k);
SynthKind synth_kind_from_string(const std::string& s);
std::size_t synth_class_count(SynthKind k);

struct SynthOptions {
  SynthKind kind = SynthKind::kMovingBar4Dir;
  std::size_t n_per_class = 50;
  std::size_t width = 32;
  std::size_t height = 32;
  std::size_t bins = 16;
  std::size_t frames = 17;
  bool jitter = true;
  VoxelPolicy policy = VoxelPolicy::kCount;
  SimulatorOptions simulator{};
  std::uint64_t seed = 0;
};

/// Frame sequence for one sample of class `label`. Sample `index` draws
/// its jitter from seed ^ index, so samples are order independent.
std::vector<Image> synth_frames(const SynthOptions& opts, std::size_t label, std::size_t index);
EventStream synth_stream(const SynthOptions& opts, std::size_t label, std::size_t index);
/// Voxelized, max-normalized samples; n_per_class per label, class-major.
Dataset synth_dataset(const SynthOptions& opts);

/// Manifest CSV: header "path,label", paths relative to the manifest.
struct ManifestEntry {
  std::filesystem::path path;
  std::size_t label = 0;
};
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

struct VoxelOptions {
  std::size_t bins = 16;
  std::size_t height = 32;
  std::size_t width = 32;
  VoxelPolicy policy = VoxelPolicy::kCount;
  bool normalize = true;
};

Dataset load_manifest_dataset(const std::filesystem::path& manifest, const VoxelOptions& opts);

}  // namespace cs3d
