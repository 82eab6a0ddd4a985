#include "talign/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "talign/errors.hpp"

namespace talign::data {

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr char kMagic[4] = {'T', 'A', 'L', 'D'};

// Stream tags for deriving independent random streams from one base seed.
constexpr std::uint64_t kSampleStream = 0x74616c642d67656eULL;
constexpr std::uint64_t kSplitStream = 0x74616c642d73706cULL;

class ByteWriter {
 public:
  void put_u32(std::uint32_t v) {
    bytes_.push_back(static_cast<std::uint8_t>(v & 0xff));
    bytes_.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    bytes_.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    bytes_.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
  }

  void put_u8(std::uint8_t v) { bytes_.push_back(v); }

  void put_f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(bits);
  }

  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }

  std::uint8_t get_u8(const char* what) {
    require(1, what);
    return bytes_[pos_++];
  }

  std::uint32_t get_u32(const char* what) {
    require(4, what);
    std::uint32_t v = static_cast<std::uint32_t>(bytes_[pos_]) |
                      (static_cast<std::uint32_t>(bytes_[pos_ + 1]) << 8) |
                      (static_cast<std::uint32_t>(bytes_[pos_ + 2]) << 16) |
                      (static_cast<std::uint32_t>(bytes_[pos_ + 3]) << 24);
    pos_ += 4;
    return v;
  }

  float get_f32(const char* what) {
    const std::uint32_t bits = get_u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  void expect_end() {
    if (pos_ != bytes_.size()) {
      throw FormatError("trailing bytes after sample payload", pos_);
    }
  }

 private:
  void require(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(std::string("unexpected end of data while reading ") + what, pos_);
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_sample(const Sample& sample) {
  const auto& d = sample.input;
  if (d.tooth_count() != geom::kToothCount ||
      static_cast<int>(sample.target.transforms.size()) != geom::kToothCount) {
    throw std::invalid_argument("encode_sample: sample must have exactly " +
                                std::to_string(geom::kToothCount) + " tooth slots");
  }
  ByteWriter w;
  for (char c : kMagic) w.put_u8(static_cast<std::uint8_t>(c));
  w.put_u32(kVersion);
  w.put_u32(static_cast<std::uint32_t>(geom::kToothCount));
  w.put_u32(static_cast<std::uint32_t>(geom::kPointsPerTooth));
  for (int i = 0; i < geom::kToothCount; ++i) {
    w.put_u8(d.validity[static_cast<std::size_t>(i)] ? 1 : 0);
  }
  for (int i = 0; i < geom::kToothCount; ++i) {
    const auto& pts = d.teeth[static_cast<std::size_t>(i)].points;
    if (pts.rows() != geom::kPointsPerTooth) {
      throw std::invalid_argument("encode_sample: tooth " + std::to_string(i) +
                                  " has " + std::to_string(pts.rows()) + " points, expected " +
                                  std::to_string(geom::kPointsPerTooth));
    }
    if (!pts.allFinite()) {
      throw std::invalid_argument("encode_sample: tooth " + std::to_string(i) +
                                  " has non-finite coordinates");
    }
    for (Eigen::Index p = 0; p < pts.rows(); ++p) {
      for (int c = 0; c < 3; ++c) w.put_f32(static_cast<float>(pts(p, c)));
    }
  }
  for (int i = 0; i < geom::kToothCount; ++i) {
    const auto& m = sample.target.transforms[static_cast<std::size_t>(i)].matrix;
    if (!m.allFinite()) {
      throw std::invalid_argument("encode_sample: transform " + std::to_string(i) +
                                  " has non-finite entries");
    }
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) w.put_f32(static_cast<float>(m(r, c)));
    }
  }
  return w.take();
}

Sample decode_sample(std::span<const std::uint8_t> bytes, std::string id) {
  ByteReader r(bytes);
  for (char c : kMagic) {
    const std::size_t at = r.offset();
    if (r.get_u8("magic") != static_cast<std::uint8_t>(c)) {
      throw FormatError("bad magic, not a TALD container", at);
    }
  }
  {
    const std::size_t at = r.offset();
    const std::uint32_t version = r.get_u32("version");
    if (version != kVersion) {
      throw FormatError("unsupported TALD version " + std::to_string(version), at);
    }
  }
  {
    const std::size_t at = r.offset();
    const std::uint32_t teeth = r.get_u32("tooth count");
    if (teeth != static_cast<std::uint32_t>(geom::kToothCount)) {
      throw FormatError("tooth count " + std::to_string(teeth) + ", expected " +
                            std::to_string(geom::kToothCount),
                        at);
    }
  }
  {
    const std::size_t at = r.offset();
    const std::uint32_t ppt = r.get_u32("points per tooth");
    if (ppt != static_cast<std::uint32_t>(geom::kPointsPerTooth)) {
      throw FormatError("points per tooth " + std::to_string(ppt) + ", expected " +
                            std::to_string(geom::kPointsPerTooth),
                        at);
    }
  }

  Sample s;
  s.id = std::move(id);
  s.input = geom::Dentition::empty_arch();
  s.target = geom::TransformSet::identities();

  for (int i = 0; i < geom::kToothCount; ++i) {
    const std::size_t at = r.offset();
    const std::uint8_t v = r.get_u8("validity flag");
    if (v > 1) {
      throw FormatError("validity flag must be 0 or 1, got " + std::to_string(v), at);
    }
    s.input.validity[static_cast<std::size_t>(i)] = v;
  }
  for (int i = 0; i < geom::kToothCount; ++i) {
    auto& pts = s.input.teeth[static_cast<std::size_t>(i)].points;
    for (int p = 0; p < geom::kPointsPerTooth; ++p) {
      for (int c = 0; c < 3; ++c) {
        const std::size_t at = r.offset();
        const float v = r.get_f32("point coordinate");
        if (!std::isfinite(v)) {
          throw FormatError("non-finite point coordinate", at);
        }
        pts(p, c) = static_cast<double>(v);
      }
    }
  }
  for (int i = 0; i < geom::kToothCount; ++i) {
    auto& m = s.target.transforms[static_cast<std::size_t>(i)].matrix;
    for (int row = 0; row < 4; ++row) {
      for (int c = 0; c < 4; ++c) {
        const std::size_t at = r.offset();
        const float v = r.get_f32("transform entry");
        if (!std::isfinite(v)) {
          throw FormatError("non-finite transform entry", at);
        }
        m(row, c) = static_cast<double>(v);
      }
    }
  }
  r.expect_end();
  return s;
}

namespace {

struct ToothShape {
  double rx, ry, rz;  // ellipsoid semi-axes, arch units
};

// Semi-axes per slot within one jaw, outermost (molar) to outermost, mirror
// symmetric around the front teeth.
ToothShape slot_shape(int j) {
  const int k = j < 8 ? j : 15 - j;
  switch (k) {
    case 0:
    case 1:
    case 2:
      return {2.1, 2.0, 1.7};  // molars
    case 3:
    case 4:
      return {1.7, 1.6, 1.8};  // premolars
    case 5:
      return {1.4, 1.3, 2.1};  // canines
    default:
      return {1.15, 1.0, 2.2};  // incisors
  }
}

geom::RigidTransform about_centroid(const geom::Mat3& r, const geom::Vec3& c,
                                    const geom::Vec3& shift) {
  // T(c + shift) * R * T(-c): rotate about c, then translate.
  return geom::make_transform(r, c + shift - r * c);
}

}  // namespace

std::vector<GeneratedSample> generate_synthetic_with_ideal(int count, std::uint64_t seed,
                                                           const GeneratorConfig& cfg) {
  if (count < 0) throw std::invalid_argument("generate_synthetic: negative count");
  if (cfg.tooth_count != geom::kToothCount ||
      cfg.points_per_tooth != geom::kPointsPerTooth) {
    throw std::invalid_argument("generate_synthetic: container format fixes 32 teeth x 128 points");
  }
  if (cfg.perturb_angle < 0 || cfg.perturb_shift < 0 || cfg.invalid_fraction < 0 ||
      cfg.invalid_fraction > 1) {
    throw std::invalid_argument("generate_synthetic: perturbation bounds must be >= 0 and "
                                "invalid_fraction within [0,1]");
  }

  // Arch layout constants: slot positions along a parabola, upper jaw above
  // the occlusal plane, lower jaw slightly narrower below it.
  constexpr double kSpacing = 3.3;
  constexpr double kBend = 0.041;
  constexpr double kJawGap = 1.6;
  constexpr double kLowerScale = 0.94;

  std::vector<GeneratedSample> out;
  out.reserve(static_cast<std::size_t>(count));
  const Rng base(seed);

  for (int idx = 0; idx < count; ++idx) {
    Rng rs = base.fork(kSampleStream + static_cast<std::uint64_t>(idx));

    GeneratedSample gs;
    gs.sample.input = geom::Dentition::empty_arch();
    gs.sample.target = geom::TransformSet::identities();
    gs.ideal = geom::Dentition::empty_arch();
    {
      char buf[16];
      std::snprintf(buf, sizeof buf, "s%05d", idx);
      gs.sample.id = buf;
    }

    for (int slot = 0; slot < geom::kToothCount; ++slot) {
      const auto s = static_cast<std::size_t>(slot);
      if (rs.uniform01() < cfg.invalid_fraction) {
        continue;  // missing tooth: zero points, identity target
      }
      gs.sample.input.validity[s] = 1;
      gs.ideal.validity[s] = 1;

      const bool upper = slot < 16;
      const int j = slot % 16;
      const double jaw_scale = upper ? 1.0 : kLowerScale;
      // The lower arch is the upper one scaled toward the origin, so its
      // points sit on y = kBend * x^2 / jaw_scale.
      const double cx = jaw_scale * kSpacing * (static_cast<double>(j) - 7.5);
      const double cy = kBend * cx * cx / jaw_scale;
      const double cz = upper ? kJawGap : -kJawGap;

      ToothShape shape = slot_shape(j);
      shape.rx *= rs.uniform(0.9, 1.1);
      shape.ry *= rs.uniform(0.9, 1.1);
      shape.rz *= rs.uniform(0.9, 1.1);

      // Align the ellipsoid's x-axis with the arch tangent at the slot.
      const double theta = std::atan2(2.0 * kBend * cx / jaw_scale, 1.0);
      const geom::Mat3 orient = geom::euler_to_rotation(geom::Vec3(0, 0, theta));

      geom::PointMatrix pts(geom::kPointsPerTooth, 3);
      for (int p = 0; p < geom::kPointsPerTooth; ++p) {
        double ux, uy, uz;
        do {
          ux = rs.uniform(-1.0, 1.0);
          uy = rs.uniform(-1.0, 1.0);
          uz = rs.uniform(-1.0, 1.0);
        } while (ux * ux + uy * uy + uz * uz > 1.0);
        const geom::Vec3 local(ux * shape.rx, uy * shape.ry, uz * shape.rz);
        const geom::Vec3 world = orient * local + geom::Vec3(cx, cy, cz);
        pts(p, 0) = world[0];
        pts(p, 1) = world[1];
        pts(p, 2) = world[2];
      }

      // Snap the ideal tooth to binary32 first so every later product is a
      // function of exactly representable inputs.
      geom::PointCloud ideal_tooth(geom::round_f32(pts));

      const geom::Vec3 angles(rs.uniform(-cfg.perturb_angle, cfg.perturb_angle),
                              rs.uniform(-cfg.perturb_angle, cfg.perturb_angle),
                              rs.uniform(-cfg.perturb_angle, cfg.perturb_angle));
      const geom::Vec3 shift(rs.uniform(-cfg.perturb_shift, cfg.perturb_shift),
                             rs.uniform(-cfg.perturb_shift, cfg.perturb_shift),
                             rs.uniform(-cfg.perturb_shift, cfg.perturb_shift));
      const geom::Vec3 c = geom::centroid(ideal_tooth);
      const geom::RigidTransform perturb =
          about_centroid(geom::euler_to_rotation(angles), c, shift);

      geom::PointCloud input_tooth(
          geom::round_f32(geom::apply_transform(perturb, ideal_tooth).points));

      geom::RigidTransform target;
      target.matrix = geom::round_f32(geom::invert(perturb).matrix);

      // The stored ideal is the rounded image of the stored target applied to
      // the stored input, so the alignment identity survives serialization.
      geom::PointCloud stored_ideal(
          geom::round_f32(geom::apply_transform(target, input_tooth).points));

      gs.sample.input.teeth[s] = std::move(input_tooth);
      gs.sample.target.transforms[s] = target;
      gs.ideal.teeth[s] = std::move(stored_ideal);
    }
    out.push_back(std::move(gs));
  }
  return out;
}

std::vector<Sample> generate_synthetic(int count, std::uint64_t seed,
                                       const GeneratorConfig& cfg) {
  auto full = generate_synthetic_with_ideal(count, seed, cfg);
  std::vector<Sample> out;
  out.reserve(full.size());
  for (auto& g : full) out.push_back(std::move(g.sample));
  return out;
}

void validate(const AugmentConfig& cfg, int tooth_count) {
  if (cfg.k_min < 1 || cfg.k_min > cfg.k_max || cfg.k_max > tooth_count) {
    throw std::invalid_argument("AugmentConfig: need 1 <= k_min <= k_max <= " +
                                std::to_string(tooth_count));
  }
  if (!(cfg.max_angle >= 0.0) || !(cfg.max_shift >= 0.0)) {
    throw std::invalid_argument("AugmentConfig: max_angle and max_shift must be >= 0");
  }
}

AugmentResult augment_multi_rotation(const Sample& sample, const AugmentConfig& cfg,
                                     Rng& rng) {
  validate(cfg, sample.input.tooth_count());
  std::vector<int> valid;
  for (int i = 0; i < sample.input.tooth_count(); ++i) {
    if (sample.input.valid(i)) valid.push_back(i);
  }
  if (static_cast<int>(valid.size()) < cfg.k_min) {
    return {sample, false,
            "skipped: only " + std::to_string(valid.size()) + " valid teeth, need " +
                std::to_string(cfg.k_min)};
  }

  int k = cfg.k_min + static_cast<int>(rng.uniform_index(
                          static_cast<std::size_t>(cfg.k_max - cfg.k_min + 1)));
  k = std::min(k, static_cast<int>(valid.size()));

  // Partial Fisher-Yates draws the subset; sorting pins the per-tooth draw
  // order to slot order.
  for (int i = 0; i < k; ++i) {
    const std::size_t j =
        static_cast<std::size_t>(i) + rng.uniform_index(valid.size() - static_cast<std::size_t>(i));
    std::swap(valid[static_cast<std::size_t>(i)], valid[j]);
  }
  std::vector<int> chosen(valid.begin(), valid.begin() + k);
  std::sort(chosen.begin(), chosen.end());

  AugmentResult res{sample, true, {}};
  for (int slot : chosen) {
    const auto s = static_cast<std::size_t>(slot);
    const geom::Vec3 angles(rng.uniform(-cfg.max_angle, cfg.max_angle),
                            rng.uniform(-cfg.max_angle, cfg.max_angle),
                            rng.uniform(-cfg.max_angle, cfg.max_angle));
    const geom::Vec3 c = geom::centroid(res.sample.input.teeth[s]);
    const geom::RigidTransform u =
        about_centroid(geom::euler_to_rotation(angles), c, geom::Vec3::Zero());
    res.sample.input.teeth[s] = geom::apply_transform(u, res.sample.input.teeth[s]);
    res.sample.target.transforms[s] =
        geom::compose(res.sample.target.transforms[s], geom::invert(u));
  }
  return res;
}

AugmentResult augment_single_translation(const Sample& sample, const AugmentConfig& cfg,
                                         Rng& rng) {
  validate(cfg, sample.input.tooth_count());
  std::vector<int> valid;
  for (int i = 0; i < sample.input.tooth_count(); ++i) {
    if (sample.input.valid(i)) valid.push_back(i);
  }
  if (valid.empty()) {
    return {sample, false, "skipped: no valid teeth"};
  }
  const int slot = valid[rng.uniform_index(valid.size())];
  const auto s = static_cast<std::size_t>(slot);
  const geom::Vec3 d(rng.uniform(-cfg.max_shift, cfg.max_shift),
                     rng.uniform(-cfg.max_shift, cfg.max_shift),
                     rng.uniform(-cfg.max_shift, cfg.max_shift));

  AugmentResult res{sample, true, {}};
  res.sample.input.teeth[s].points.rowwise() += d.transpose();
  res.sample.target.transforms[s] =
      geom::compose(res.sample.target.transforms[s],
                    geom::make_transform(geom::Mat3::Identity(), -d));
  return res;
}

namespace {

// Split assignment per index: floored proportions for val and test, remainder
// to train, over a seeded shuffle of the indices.
std::vector<int> split_assignment(std::size_t n, const SplitSpec& spec, std::uint64_t seed) {
  const std::uint64_t total = spec.train + spec.val + spec.test;
  if (total == 0) {
    throw std::invalid_argument("split_dataset: ratios sum to zero");
  }
  const auto n_val = static_cast<std::size_t>(
      (static_cast<unsigned __int128>(n) * spec.val) / total);
  const auto n_test = static_cast<std::size_t>(
      (static_cast<unsigned __int128>(n) * spec.test) / total);
  const std::size_t n_train = n - n_val - n_test;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng(seed).fork(kSplitStream);
  shuffle(order, rng);

  std::vector<int> assignment(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pos = order[i];
    assignment[pos] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
  }
  return assignment;
}

const char* split_name(int a) { return a == 0 ? "train" : (a == 1 ? "val" : "test"); }

}  // namespace

DatasetSplits split_dataset(const std::vector<Sample>& samples, const SplitSpec& spec,
                            std::uint64_t seed) {
  const auto assignment = split_assignment(samples.size(), spec, seed);
  DatasetSplits out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    switch (assignment[i]) {
      case 0: out.train.push_back(samples[i]); break;
      case 1: out.val.push_back(samples[i]); break;
      default: out.test.push_back(samples[i]); break;
    }
  }
  return out;
}

void save_sample(const std::filesystem::path& path, const Sample& sample) {
  const auto bytes = encode_sample(sample);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw FileError("cannot open for writing: " + path.string());
  }
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) {
    throw FileError("write failed: " + path.string());
  }
}

Sample load_sample(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw FileError("file not found: " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_sample(bytes, path.stem().string());
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                   const SplitSpec& spec, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const auto assignment = split_assignment(samples.size(), spec, seed);

  nlohmann::ordered_json manifest;
  manifest["format"] = "tald-dataset";
  manifest["version"] = 1;
  manifest["samples"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string file = samples[i].id + ".tald";
    save_sample(dir / file, samples[i]);
    manifest["samples"].push_back({{"id", samples[i].id},
                                   {"split", split_name(assignment[i])},
                                   {"file", file}});
  }
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  if (!f) {
    throw FileError("cannot open for writing: " + (dir / "manifest.json").string());
  }
  f << manifest.dump(2) << "\n";
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream f(path);
  if (!f) {
    throw FileError("file not found: " + path.string());
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("manifest parse error: " + std::string(e.what()),
                      static_cast<std::size_t>(e.byte));
  }
  if (!doc.is_object() || doc.value("format", "") != "tald-dataset") {
    throw FormatError("not a tald-dataset manifest: " + path.string(), 0);
  }
  std::vector<ManifestEntry> entries;
  for (const auto& e : doc.at("samples")) {
    ManifestEntry m;
    m.id = e.at("id").get<std::string>();
    m.split = e.at("split").get<std::string>();
    m.file = e.at("file").get<std::string>();
    if (m.split != "train" && m.split != "val" && m.split != "test") {
      throw FormatError("manifest split must be train/val/test, got '" + m.split + "'", 0);
    }
    entries.push_back(std::move(m));
  }
  return entries;
}

std::vector<Sample> load_split(const std::filesystem::path& dir, const std::string& split) {
  if (split != "train" && split != "val" && split != "test") {
    throw std::invalid_argument("load_split: split must be train/val/test, got '" + split + "'");
  }
  std::vector<Sample> out;
  for (const auto& e : read_manifest(dir)) {
    if (e.split != split) continue;
    Sample s = load_sample(dir / e.file);
    s.id = e.id;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace talign::data
