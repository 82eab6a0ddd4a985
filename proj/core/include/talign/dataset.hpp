#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "talign/geometry.hpp"
#include "talign/rng.hpp"

namespace talign::data {

// One dentition case: pre-treatment point sets plus the per-tooth rigid
// transforms that align them. Geometry is held in double precision, but every
// value is exactly representable in IEEE binary32, which is what the on-disk
// container stores; encode/decode is therefore lossless in both directions.
struct Sample {
  geom::Dentition input;
  geom::TransformSet target;
  std::string id;
};

// TALD v1 container, little-endian throughout:
//
//   offset  size        field
//   0       4           magic "TALD"
//   4       4           u32 version (1)
//   8       4           u32 tooth count (32)
//   12      4           u32 points per tooth (128)
//   16      32          u8 validity flags (0 or 1)
//   48      32*128*3*4  f32 points, tooth-major, point-major, xyz
//   49200   32*16*4     f32 transforms, row-major 4x4 per tooth
//   51248   end
//
// The sample id is not part of the payload; it travels in the dataset
// manifest (or is taken from the file stem for bare files).
std::vector<std::uint8_t> encode_sample(const Sample& sample);
Sample decode_sample(std::span<const std::uint8_t> bytes, std::string id = {});

struct GeneratorConfig {
  int tooth_count = geom::kToothCount;
  int points_per_tooth = geom::kPointsPerTooth;
  // Per-axis bounds of the random malocclusion perturbation applied about
  // each tooth centroid.
  double perturb_angle = 0.2617993877991494;  // radians (15 degrees)
  double perturb_shift = 2.0;                 // arch units
  double invalid_fraction = 0.05;             // per-tooth missing probability
};

// Synthetic sample plus the well-aligned dentition it was perturbed from.
// The ideal positions are the generator's ground truth: applying the target
// transforms to the input must land on them.
struct GeneratedSample {
  Sample sample;
  geom::Dentition ideal;
};

std::vector<GeneratedSample> generate_synthetic_with_ideal(
    int count, std::uint64_t seed, const GeneratorConfig& cfg = {});
std::vector<Sample> generate_synthetic(int count, std::uint64_t seed,
                                       const GeneratorConfig& cfg = {});

struct AugmentConfig {
  int k_min = 5;
  int k_max = 10;
  double max_angle = 0.2617993877991494;  // radians per axis
  double max_shift = 2.0;                 // arch units per component
};

// Throws std::invalid_argument on out-of-range fields. Zero bounds are legal
// (they produce identity perturbations); negative ones are not.
void validate(const AugmentConfig& cfg, int tooth_count);

// applied == false means the sample did not meet the operation's
// precondition and was passed through untouched; `note` says why.
struct AugmentResult {
  Sample sample;
  bool applied = false;
  std::string note;
};

// Rotates k teeth (k drawn from [k_min, k_max], capped at the valid count)
// about their own centroids and folds the inverse motion into the targets,
// so target-aligned geometry is unchanged. Skips when fewer than k_min teeth
// are valid.
AugmentResult augment_multi_rotation(const Sample& sample, const AugmentConfig& cfg,
                                     Rng& rng);

// Translates one valid tooth by a bounded random offset, folding the inverse
// into its target. Skips when no tooth is valid.
AugmentResult augment_single_translation(const Sample& sample,
                                         const AugmentConfig& cfg, Rng& rng);

// Split proportions; only ratios matter. Counts are assigned by floored
// proportion for val and test, remainder to train.
struct SplitSpec {
  std::uint64_t train = 74;
  std::uint64_t val = 20;
  std::uint64_t test = 30;
};

struct DatasetSplits {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

// Deterministic shuffle (seeded) followed by proportional assignment. The
// three splits partition the input exactly.
DatasetSplits split_dataset(const std::vector<Sample>& samples, const SplitSpec& spec,
                            std::uint64_t seed);

// ---- directory layout: one .tald file per sample plus manifest.json ----

struct ManifestEntry {
  std::string id;
  std::string split;  // "train" | "val" | "test"
  std::string file;   // relative to the dataset directory
};

void save_sample(const std::filesystem::path& path, const Sample& sample);
Sample load_sample(const std::filesystem::path& path);

// Writes every sample and a manifest recording the seeded split assignment.
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                   const SplitSpec& spec, std::uint64_t seed);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);

// Loads the samples of one split ("train", "val", "test") in manifest order.
std::vector<Sample> load_split(const std::filesystem::path& dir, const std::string& split);

}  // namespace talign::data
