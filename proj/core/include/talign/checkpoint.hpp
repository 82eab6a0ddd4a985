#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "talign/dtmd.hpp"
#include "talign/prn.hpp"

namespace talign::ckpt {

// Checkpoint container: a little-endian u32 byte length, a JSON header
// (model kind, model config, optimizer step, parameter names and shapes),
// then the raw binary32 little-endian parameter blobs concatenated in header
// order. Training runs in binary32, so save/load round-trips are lossless.

std::vector<std::uint8_t> serialize_prn(const prn::PRNModel<float>& model, long step);

std::vector<std::uint8_t> serialize_dtmd(const dtmd::NoiseEstimator<float>& model,
                                         const dtmd::ScheduleConfig& schedule,
                                         double normalize_scale, long step);

struct LoadedPRN {
  prn::PRNModel<float> model;
  long step = 0;
};

struct LoadedDTMD {
  dtmd::NoiseEstimator<float> model;
  dtmd::ScheduleConfig schedule;
  double normalize_scale = 1.0;
  long step = 0;
};

// Rebuild a model from the header config and fill its parameters from the
// blobs. Throws FormatError on malformed bytes (with the byte offset),
// CheckpointError when the payload is a different model kind or its
// parameter names/shapes do not match the rebuilt model.
LoadedPRN deserialize_prn(std::span<const std::uint8_t> bytes);
LoadedDTMD deserialize_dtmd(std::span<const std::uint8_t> bytes);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

inline void save_prn(const std::filesystem::path& path, const prn::PRNModel<float>& model,
                     long step) {
  const auto bytes = serialize_prn(model, step);
  write_file(path, bytes);
}

inline void save_dtmd(const std::filesystem::path& path,
                      const dtmd::NoiseEstimator<float>& model,
                      const dtmd::ScheduleConfig& schedule, double normalize_scale,
                      long step) {
  const auto bytes = serialize_dtmd(model, schedule, normalize_scale, step);
  write_file(path, bytes);
}

inline LoadedPRN load_prn(const std::filesystem::path& path) {
  return deserialize_prn(read_file(path));
}

inline LoadedDTMD load_dtmd(const std::filesystem::path& path) {
  return deserialize_dtmd(read_file(path));
}

}  // namespace talign::ckpt
