#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "masq/filter.hpp"
#include "masq/geom.hpp"
#include "masq/labelgen.hpp"
#include "masq/retarget.hpp"

namespace masq::dataset {

inline constexpr std::uint16_t kFormatVersion = 1;

enum class Source : std::uint8_t { Human = 0, Robot = 1 };
const char* source_name(Source s);
Source parse_source(const std::string& s);

/// Row-major binary32 matrix. Equality is bitwise.
struct FloatArray {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> data;

  FloatArray() = default;
  FloatArray(std::uint32_t r, std::uint32_t c) : rows(r), cols(c), data(std::size_t(r) * c, 0.f) {}

  bool empty() const { return data.empty(); }
  float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const FloatArray& o) const;
};

// Fixed per-frame row layouts.
inline constexpr int kCameraCols = 13;  // fx fy cx cy w h qw qx qy qz tx ty tz
inline constexpr int kHandCols = retarget::kNumKeypoints * 5 + 1;  // xyz, uv, confidence
inline constexpr int kTruthCols = 8;    // per arm: x y z grip (world)

/// One egocentric clip or robot demonstration. Frame data is columnar.
struct ClipBundle {
  std::string clip_id;
  std::string annotation;
  Source source = Source::Human;
  std::int32_t task = 0;
  std::int32_t scene_style = 0;
  std::int32_t embodiment = 0;
  std::uint64_t seed = 0;

  FloatArray features;   // T x F
  FloatArray embedding;  // 1 x d
  FloatArray cameras;    // T x kCameraCols
  FloatArray presence;   // T x 2, or empty
  FloatArray hands;      // T x 2*kHandCols, or empty
  FloatArray plane;      // 1 x 4 (nx ny nz offset), or empty
  FloatArray labels;     // T x 2*(1 + 2(H+1)), or empty
  FloatArray keep;       // T x 1, or empty (all kept)
  FloatArray actions;    // T x (A * action_dim), or empty
  FloatArray truth_ee;   // T x kTruthCols, or empty

  int frames() const { return static_cast<int>(features.rows); }
  int feature_dim() const { return static_cast<int>(features.cols); }
  int embed_dim() const { return static_cast<int>(embedding.cols); }
  bool has_hands() const { return !hands.empty(); }
  bool has_labels() const { return !labels.empty(); }
  bool has_actions() const { return !actions.empty(); }
  /// Horizon H recovered from the label layout, 0 without labels.
  int label_horizon() const;

  /// Throws InvalidArgument when the bundle breaks its invariants.
  void validate() const;

  bool operator==(const ClipBundle&) const = default;
};

// Typed access into the columnar layout.
geom::CameraModel camera_at(const ClipBundle& b, int t);
void set_camera(ClipBundle& b, int t, const geom::CameraModel& cam);
retarget::HandKeypoints21 hand_at(const ClipBundle& b, int t, Side side);
void set_hand(ClipBundle& b, int t, const retarget::HandKeypoints21& hand);
labelgen::HandFlags presence_at(const ClipBundle& b, int t);
labelgen::LabelPair labels_at(const ClipBundle& b, int t);
void set_labels(ClipBundle& b, std::span<const labelgen::LabelPair> labels, int horizon);
bool kept(const ClipBundle& b, int t);
std::optional<geom::Plane> plane_of(const ClipBundle& b);
std::vector<geom::CameraModel> camera_track(const ClipBundle& b);

struct ManifestEntry {
  std::string clip_id;
  Source source = Source::Human;
  std::string path;  // relative to the manifest directory
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  std::uint32_t crc32c = 0;
  filter::FilterReport filter;  // per-clip counts

  bool operator==(const ManifestEntry& o) const;
};

struct DatasetManifest {
  std::uint16_t format_version = kFormatVersion;
  int horizon = 16;
  int feature_dim = 128;
  int embed_dim = 64;
  std::map<std::string, std::string> config;  // echo of generating config
  std::vector<ManifestEntry> clips;

  filter::FilterReport filter_aggregate() const;
  void validate() const;
};

/// Serializes a bundle to one payload file. Returns its manifest entry with
/// `path` set to the file name.
ManifestEntry write_bundle(const ClipBundle& bundle, const std::filesystem::path& path);
/// Reads `entry.length` bytes at `entry.offset`; verifies checksum and version.
/// Throws TruncatedFile, ChecksumMismatch, VersionMismatch.
ClipBundle read_bundle(const std::filesystem::path& path, const ManifestEntry& entry);

std::vector<std::uint8_t> encode_bundle(const ClipBundle& bundle);
ClipBundle decode_bundle(std::span<const std::uint8_t> bytes);

std::string format_manifest(const DatasetManifest& m);
DatasetManifest parse_manifest(const std::string& text);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Writes bundles under `dir/clips/` and the manifest at `dir/manifest.txt`.
/// `reports`, when given, supplies per-clip filter counts (one per bundle).
DatasetManifest save_dataset(const std::filesystem::path& dir, std::span<const ClipBundle> bundles,
                             DatasetManifest header,
                             std::span<const filter::FilterReport> reports = {});
/// Loads every clip listed by the manifest at `manifest_path`.
std::vector<ClipBundle> load_dataset(const std::filesystem::path& manifest_path);
std::vector<ClipBundle> load_dataset(const std::filesystem::path& manifest_path,
                                     const DatasetManifest& manifest);

/// Deterministic stand-in for a sentence embedding: FNV-1a of the UTF-8 bytes
/// seeds a standard normal draw which is scaled to unit norm.
/// Throws EmptyAnnotation.
std::vector<double> embed_language(const std::string& annotation, int dim = 64);

/// Clip-level sampling without replacement. A seeded permutation is cut at
/// round(fraction * N), so smaller fractions give subsets of larger ones.
DatasetManifest subsample(const DatasetManifest& manifest, double fraction, std::uint64_t seed);
/// Same selection rule on any list size; returns kept indices in order.
std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, std::uint64_t seed);

}  // namespace masq::dataset
