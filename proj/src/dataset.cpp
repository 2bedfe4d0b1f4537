#include "masq/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>
#include <sstream>

#include "masq/error.hpp"
#include "masq/io.hpp"
#include "masq/rng.hpp"

namespace masq::dataset {

namespace fs = std::filesystem;

const char* source_name(Source s) { return s == Source::Human ? "human" : "robot"; }

Source parse_source(const std::string& s) {
  if (s == "human") return Source::Human;
  if (s == "robot") return Source::Robot;
  throw FormatError("unknown clip source '" + s + "'");
}

bool FloatArray::operator==(const FloatArray& o) const {
  return rows == o.rows && cols == o.cols && data.size() == o.data.size() &&
         (data.empty() || std::memcmp(data.data(), o.data.data(), data.size() * sizeof(float)) == 0);
}

int ClipBundle::label_horizon() const {
  if (labels.empty()) return 0;
  return static_cast<int>((labels.cols / 2 - 1) / 2) - 1;
}

void ClipBundle::validate() const {
  auto fail = [&](const std::string& what) {
    throw InvalidArgument("clip '" + clip_id + "': " + what);
  };
  if (clip_id.empty()) fail("empty clip id");
  if (clip_id.find_first_of("\t\n\r") != std::string::npos) fail("clip id has control chars");
  const std::uint32_t t = features.rows;
  if (t == 0 || features.cols == 0) fail("no frames");
  if (embedding.rows != 1 || embedding.cols == 0) fail("embedding must be 1 x d");
  if (cameras.rows != t || cameras.cols != kCameraCols) fail("camera track shape");
  auto per_frame = [&](const FloatArray& a, std::uint32_t cols, const char* name) {
    if (!a.empty() && (a.rows != t || (cols != 0 && a.cols != cols))) {
      fail(std::string(name) + " shape");
    }
  };
  per_frame(presence, 2, "presence");
  per_frame(hands, 2 * kHandCols, "hands");
  per_frame(labels, 0, "labels");
  per_frame(keep, 1, "keep");
  per_frame(actions, 0, "actions");
  per_frame(truth_ee, kTruthCols, "truth_ee");
  if (!plane.empty() && (plane.rows != 1 || plane.cols != 4)) fail("plane shape");
  if (hands.empty() != presence.empty()) fail("hands and presence must come together");
  if (!labels.empty() && (labels.cols % 2 != 0 || labels.cols / 2 < 5 || (labels.cols / 2 - 1) % 2 != 0)) {
    fail("label layout");
  }
  if (source == Source::Robot && actions.empty()) fail("robot clips must carry actions");
}

geom::CameraModel camera_at(const ClipBundle& b, int t) {
  auto r = b.cameras.row(static_cast<std::size_t>(t));
  geom::CameraModel c;
  c.fx = r[0];
  c.fy = r[1];
  c.cx = r[2];
  c.cy = r[3];
  c.width = r[4];
  c.height = r[5];
  c.pose.rotation = Quat(r[6], r[7], r[8], r[9]).normalized();
  c.pose.translation = Vec3(r[10], r[11], r[12]);
  return c;
}

void set_camera(ClipBundle& b, int t, const geom::CameraModel& c) {
  auto r = b.cameras.row(static_cast<std::size_t>(t));
  const double v[kCameraCols] = {c.fx,
                                 c.fy,
                                 c.cx,
                                 c.cy,
                                 c.width,
                                 c.height,
                                 c.pose.rotation.w(),
                                 c.pose.rotation.x(),
                                 c.pose.rotation.y(),
                                 c.pose.rotation.z(),
                                 c.pose.translation.x(),
                                 c.pose.translation.y(),
                                 c.pose.translation.z()};
  for (int i = 0; i < kCameraCols; ++i) r[i] = static_cast<float>(v[i]);
}

retarget::HandKeypoints21 hand_at(const ClipBundle& b, int t, Side side) {
  auto r = b.hands.row(static_cast<std::size_t>(t)).subspan(index_of(side) * kHandCols, kHandCols);
  retarget::HandKeypoints21 h;
  h.side = side;
  for (int k = 0; k < retarget::kNumKeypoints; ++k) {
    h.points[k] = Vec3(r[3 * k], r[3 * k + 1], r[3 * k + 2]);
    h.points2d[k] = Vec2(r[63 + 2 * k], r[63 + 2 * k + 1]);
  }
  h.confidence = r[105];
  return h;
}

void set_hand(ClipBundle& b, int t, const retarget::HandKeypoints21& h) {
  auto r = b.hands.row(static_cast<std::size_t>(t)).subspan(index_of(h.side) * kHandCols, kHandCols);
  for (int k = 0; k < retarget::kNumKeypoints; ++k) {
    for (int d = 0; d < 3; ++d) r[3 * k + d] = static_cast<float>(h.points[k](d));
    for (int d = 0; d < 2; ++d) r[63 + 2 * k + d] = static_cast<float>(h.points2d[k](d));
  }
  r[105] = static_cast<float>(h.confidence);
}

labelgen::HandFlags presence_at(const ClipBundle& b, int t) {
  if (b.presence.empty()) return {false, false};
  return {b.presence.at(t, 0) != 0.f, b.presence.at(t, 1) != 0.f};
}

labelgen::LabelPair labels_at(const ClipBundle& b, int t) {
  const int h = b.label_horizon();
  const int per_side = 1 + 2 * (h + 1);
  labelgen::LabelPair out;
  auto r = b.labels.row(static_cast<std::size_t>(t));
  for (Side side : kSides) {
    auto& l = out[index_of(side)];
    const int off = index_of(side) * per_side;
    l.side = side;
    l.source_frame = t;
    l.valid = r[off] != 0.f;
    l.waypoints.resize(static_cast<std::size_t>(h + 1));
    for (int k = 0; k <= h; ++k) l.waypoints[k] = Vec2(r[off + 1 + 2 * k], r[off + 2 + 2 * k]);
  }
  return out;
}

void set_labels(ClipBundle& b, std::span<const labelgen::LabelPair> labels, int horizon) {
  const int per_side = 1 + 2 * (horizon + 1);
  b.labels = FloatArray(static_cast<std::uint32_t>(labels.size()),
                        static_cast<std::uint32_t>(2 * per_side));
  for (std::size_t t = 0; t < labels.size(); ++t) {
    auto r = b.labels.row(t);
    for (int s = 0; s < 2; ++s) {
      const auto& l = labels[t][s];
      if (static_cast<int>(l.waypoints.size()) != horizon + 1) {
        throw InvalidArgument("label length does not match horizon");
      }
      const int off = s * per_side;
      r[off] = l.valid ? 1.f : 0.f;
      for (int k = 0; k <= horizon; ++k) {
        r[off + 1 + 2 * k] = static_cast<float>(l.waypoints[k].x());
        r[off + 2 + 2 * k] = static_cast<float>(l.waypoints[k].y());
      }
    }
  }
}

bool kept(const ClipBundle& b, int t) {
  return b.keep.empty() || b.keep.at(static_cast<std::size_t>(t), 0) != 0.f;
}

std::optional<geom::Plane> plane_of(const ClipBundle& b) {
  if (b.plane.empty()) return std::nullopt;
  geom::Plane p;
  p.normal = Vec3(b.plane.at(0, 0), b.plane.at(0, 1), b.plane.at(0, 2));
  p.offset = b.plane.at(0, 3);
  return p;
}

std::vector<geom::CameraModel> camera_track(const ClipBundle& b) {
  std::vector<geom::CameraModel> cams;
  cams.reserve(b.cameras.rows);
  for (int t = 0; t < b.frames(); ++t) cams.push_back(camera_at(b, t));
  return cams;
}

bool ManifestEntry::operator==(const ManifestEntry& o) const {
  return clip_id == o.clip_id && source == o.source && path == o.path && offset == o.offset &&
         length == o.length && crc32c == o.crc32c &&
         filter.total_frames == o.filter.total_frames &&
         filter.kept_frames == o.filter.kept_frames &&
         filter.dropped_camera_motion == o.filter.dropped_camera_motion &&
         filter.dropped_invalid_action == o.filter.dropped_invalid_action &&
         filter.dropped_both_hands_missing == o.filter.dropped_both_hands_missing;
}

filter::FilterReport DatasetManifest::filter_aggregate() const {
  filter::FilterReport r;
  for (const auto& c : clips) r.accumulate(c.filter);
  return r;
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& c : clips) {
    if (!ids.insert(c.clip_id).second) throw FormatError("duplicate clip id '" + c.clip_id + "'");
  }
}

// ---------------------------------------------------------------------------
// Payload encoding

namespace {

constexpr char kMetaMagic[4] = {'M', 'Q', 'M', 'T'};
constexpr char kArrayMagic[4] = {'M', 'Q', 'A', 'R'};

void put_string(io::ByteWriter& w, const std::string& s) {
  w.u32(static_cast<std::uint32_t>(s.size()));
  w.raw(s);
}

std::string get_string(io::ByteReader& r) {
  const auto n = r.u32();
  return std::string(r.raw(n));
}

void put_array(io::ByteWriter& w, const FloatArray& a) {
  w.raw(std::string_view(kArrayMagic, 4));
  w.u16(kFormatVersion);
  w.u16(a.empty() ? 0 : 2);
  w.u32(a.empty() ? 0 : a.rows);
  w.u32(a.empty() ? 0 : a.cols);
  for (float v : a.data) w.f32(v);
}

void check_magic(io::ByteReader& r, const char* magic) {
  if (r.raw(4) != std::string_view(magic, 4)) throw FormatError("bad section magic");
}

FloatArray get_array(io::ByteReader& r) {
  check_magic(r, kArrayMagic);
  if (r.u16() != kFormatVersion) throw VersionMismatch("unsupported array version");
  const auto rank = r.u16();
  const auto rows = r.u32();
  const auto cols = r.u32();
  if (rank == 0) return {};
  if (rank != 2) throw FormatError("unsupported array rank");
  if (static_cast<std::uint64_t>(rows) * cols * 4 > r.remaining()) {
    throw TruncatedFile("array extends past end of payload");
  }
  FloatArray a(rows, cols);
  for (auto& v : a.data) v = r.f32();
  return a;
}

}  // namespace

std::vector<std::uint8_t> encode_bundle(const ClipBundle& b) {
  io::ByteWriter meta;
  put_string(meta, b.clip_id);
  put_string(meta, b.annotation);
  meta.u8(static_cast<std::uint8_t>(b.source));
  meta.u32(static_cast<std::uint32_t>(b.task));
  meta.u32(static_cast<std::uint32_t>(b.scene_style));
  meta.u32(static_cast<std::uint32_t>(b.embodiment));
  meta.u64(b.seed);

  io::ByteWriter w;
  w.raw(std::string_view(kMetaMagic, 4));
  w.u16(kFormatVersion);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(meta.data().size()));
  w.u32(0);
  w.bytes(meta.data());
  for (const FloatArray* a : {&b.features, &b.embedding, &b.cameras, &b.presence, &b.hands,
                              &b.plane, &b.labels, &b.keep, &b.actions, &b.truth_ee}) {
    put_array(w, *a);
  }
  return w.take();
}

ClipBundle decode_bundle(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  check_magic(r, kMetaMagic);
  if (r.u16() != kFormatVersion) throw VersionMismatch("unsupported payload version");
  r.u16();
  const auto meta_len = r.u32();
  r.u32();
  if (meta_len > r.remaining()) throw TruncatedFile("metadata extends past end of payload");
  ClipBundle b;
  b.clip_id = get_string(r);
  b.annotation = get_string(r);
  const auto src = r.u8();
  if (src > 1) throw FormatError("unknown clip source code");
  b.source = static_cast<Source>(src);
  b.task = static_cast<std::int32_t>(r.u32());
  b.scene_style = static_cast<std::int32_t>(r.u32());
  b.embodiment = static_cast<std::int32_t>(r.u32());
  b.seed = r.u64();
  for (FloatArray* a : {&b.features, &b.embedding, &b.cameras, &b.presence, &b.hands, &b.plane,
                        &b.labels, &b.keep, &b.actions, &b.truth_ee}) {
    *a = get_array(r);
  }
  return b;
}

ManifestEntry write_bundle(const ClipBundle& bundle, const fs::path& path) {
  bundle.validate();
  const auto bytes = encode_bundle(bundle);
  io::write_file_atomic(path, bytes);
  ManifestEntry e;
  e.clip_id = bundle.clip_id;
  e.source = bundle.source;
  e.path = path.filename().string();
  e.offset = 0;
  e.length = bytes.size();
  e.crc32c = io::crc32c(bytes);
  return e;
}

ClipBundle read_bundle(const fs::path& path, const ManifestEntry& entry) {
  const auto file = io::read_file(path);
  if (entry.offset > file.size() || file.size() - entry.offset < entry.length) {
    throw TruncatedFile("payload shorter than manifest length: " + path.string());
  }
  std::span<const std::uint8_t> slice(file.data() + entry.offset, entry.length);
  if (io::crc32c(slice) != entry.crc32c) {
    throw ChecksumMismatch("checksum mismatch for clip '" + entry.clip_id + "'");
  }
  return decode_bundle(slice);
}

// ---------------------------------------------------------------------------
// Manifest text

std::string format_manifest(const DatasetManifest& m) {
  std::ostringstream os;
  os << "# masq dataset manifest\n";
  os << "format_version = " << m.format_version << "\n";
  os << "horizon = " << m.horizon << "\n";
  os << "feature_dim = " << m.feature_dim << "\n";
  os << "embed_dim = " << m.embed_dim << "\n";
  for (const auto& [k, v] : m.config) os << "config." << k << " = " << v << "\n";
  const auto agg = m.filter_aggregate();
  os << "filter.total_frames = " << agg.total_frames << "\n";
  os << "filter.kept_frames = " << agg.kept_frames << "\n";
  os << "filter.dropped_camera_motion = " << agg.dropped_camera_motion << "\n";
  os << "filter.dropped_invalid_action = " << agg.dropped_invalid_action << "\n";
  os << "filter.dropped_both_hands_missing = " << agg.dropped_both_hands_missing << "\n";
  os << "clips = " << m.clips.size() << "\n";
  os << "[clips]\n";
  os << "# id\tsource\tpath\toffset\tlength\tcrc32c\ttotal\tkept\tcamera_motion\tinvalid_action"
        "\tboth_hands_missing\n";
  for (const auto& c : m.clips) {
    char crc[9];
    std::snprintf(crc, sizeof(crc), "%08x", c.crc32c);
    os << c.clip_id << '\t' << source_name(c.source) << '\t' << c.path << '\t' << c.offset << '\t'
       << c.length << '\t' << crc << '\t' << c.filter.total_frames << '\t'
       << c.filter.kept_frames << '\t' << c.filter.dropped_camera_motion << '\t'
       << c.filter.dropped_invalid_action << '\t' << c.filter.dropped_both_hands_missing << '\n';
  }
  return os.str();
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_tabs(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto p = s.find('\t', start);
    out.push_back(s.substr(start, p - start));
    if (p == std::string::npos) break;
    start = p + 1;
  }
  return out;
}

std::uint64_t to_u64(const std::string& s) {
  std::size_t used = 0;
  const auto v = std::stoull(s, &used);
  if (used != s.size()) throw FormatError("bad integer '" + s + "'");
  return v;
}

}  // namespace

DatasetManifest parse_manifest(const std::string& text) {
  DatasetManifest m;
  std::istringstream is(text);
  std::string line;
  bool in_clips = false;
  bool saw_version = false;
  std::size_t declared = 0;
  try {
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (trim(line).empty() || line[0] == '#') continue;
      if (line == "[clips]") {
        if (!saw_version) throw FormatError("manifest missing format_version");
        in_clips = true;
        continue;
      }
      if (in_clips) {
        const auto f = split_tabs(line);
        if (f.size() != 11) throw FormatError("clip row must have 11 fields");
        ManifestEntry e;
        e.clip_id = f[0];
        e.source = parse_source(f[1]);
        e.path = f[2];
        e.offset = to_u64(f[3]);
        e.length = to_u64(f[4]);
        e.crc32c = static_cast<std::uint32_t>(std::stoul(f[5], nullptr, 16));
        e.filter.total_frames = to_u64(f[6]);
        e.filter.kept_frames = to_u64(f[7]);
        e.filter.dropped_camera_motion = to_u64(f[8]);
        e.filter.dropped_invalid_action = to_u64(f[9]);
        e.filter.dropped_both_hands_missing = to_u64(f[10]);
        m.clips.push_back(std::move(e));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("expected key = value: " + line);
      const auto key = trim(line.substr(0, eq));
      const auto value = trim(line.substr(eq + 1));
      if (key == "format_version") {
        if (to_u64(value) != kFormatVersion) {
          throw VersionMismatch("manifest format version " + value + " is not supported");
        }
        saw_version = true;
      } else if (key == "horizon") {
        m.horizon = static_cast<int>(to_u64(value));
      } else if (key == "feature_dim") {
        m.feature_dim = static_cast<int>(to_u64(value));
      } else if (key == "embed_dim") {
        m.embed_dim = static_cast<int>(to_u64(value));
      } else if (key == "clips") {
        declared = to_u64(value);
      } else if (key.rfind("config.", 0) == 0) {
        m.config[key.substr(7)] = value;
      }
      // filter.* aggregates are derived from the clip rows.
    }
  } catch (const std::invalid_argument&) {
    throw FormatError("malformed number in manifest");
  } catch (const std::out_of_range&) {
    throw FormatError("number out of range in manifest");
  }
  if (!saw_version) throw FormatError("manifest missing format_version");
  if (declared != m.clips.size()) throw TruncatedFile("manifest clip table is incomplete");
  m.validate();
  return m;
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  m.validate();
  io::write_text_atomic(path, format_manifest(m));
}

DatasetManifest read_manifest(const fs::path& path) { return parse_manifest(io::read_text(path)); }

DatasetManifest save_dataset(const fs::path& dir, std::span<const ClipBundle> bundles,
                             DatasetManifest header, std::span<const filter::FilterReport> reports) {
  if (!reports.empty() && reports.size() != bundles.size()) {
    throw InvalidArgument("one filter report per bundle expected");
  }
  header.clips.clear();
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    const auto& b = bundles[i];
    const fs::path rel = fs::path("clips") / (b.clip_id + ".bin");
    auto e = write_bundle(b, dir / rel);
    e.path = rel.generic_string();
    if (!reports.empty()) {
      e.filter = reports[i];
      e.filter.reasons.clear();
    }
    header.clips.push_back(std::move(e));
  }
  write_manifest(header, dir / "manifest.txt");
  return header;
}

std::vector<ClipBundle> load_dataset(const fs::path& manifest_path, const DatasetManifest& m) {
  std::vector<ClipBundle> out;
  out.reserve(m.clips.size());
  const fs::path dir = manifest_path.parent_path();
  for (const auto& e : m.clips) out.push_back(read_bundle(dir / e.path, e));
  return out;
}

std::vector<ClipBundle> load_dataset(const fs::path& manifest_path) {
  return load_dataset(manifest_path, read_manifest(manifest_path));
}

std::vector<double> embed_language(const std::string& annotation, int dim) {
  if (annotation.empty()) throw EmptyAnnotation("annotation must be nonempty");
  if (dim < 1) throw InvalidArgument("embedding dimension must be positive");
  Rng rng(fnv1a64(annotation));
  std::vector<double> v(static_cast<std::size_t>(dim));
  double ss = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    ss += x * x;
  }
  const double inv = 1.0 / std::sqrt(ss);
  for (auto& x : v) x *= inv;
  return v;
}

std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidArgument("fraction must be in [0, 1]");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::size_t count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (fraction > 0.0 && n > 0) count = std::max<std::size_t>(count, 1);
  count = std::min(count, n);
  std::vector<std::size_t> chosen(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

DatasetManifest subsample(const DatasetManifest& manifest, double fraction, std::uint64_t seed) {
  DatasetManifest out = manifest;
  out.clips.clear();
  for (auto i : subsample_indices(manifest.clips.size(), fraction, seed)) {
    out.clips.push_back(manifest.clips[i]);
  }
  return out;
}

}  // namespace masq::dataset
