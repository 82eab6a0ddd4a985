#include "talign/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "talign/errors.hpp"

namespace talign::ckpt {
namespace {

using ordered_json = nlohmann::ordered_json;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = static_cast<std::uint32_t>(bytes_[pos_]) |
                      static_cast<std::uint32_t>(bytes_[pos_ + 1]) << 8 |
                      static_cast<std::uint32_t>(bytes_[pos_ + 2]) << 16 |
                      static_cast<std::uint32_t>(bytes_[pos_ + 3]) << 24;
    pos_ += 4;
    return v;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto view = bytes_.subspan(pos_, n);
    pos_ += n;
    return view;
  }

  void expect_end() {
    if (pos_ != bytes_.size()) {
      throw FormatError("checkpoint: trailing bytes after parameter blobs", pos_);
    }
  }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw FormatError(std::string("checkpoint: truncated while reading ") + what, pos_);
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

ordered_json shape_json(const ad::Shape& shape) {
  ordered_json arr = ordered_json::array();
  for (std::size_t d : shape) arr.push_back(d);
  return arr;
}

std::vector<std::uint8_t> serialize(const ordered_json& header,
                                    const std::vector<std::pair<std::string, ad::Tensor<float>>>& params) {
  const std::string text = header.dump();
  if (text.size() > 0xffffffffull) throw CheckpointError("checkpoint: header too large");
  std::vector<std::uint8_t> out;
  std::size_t blob = 0;
  for (const auto& [name, t] : params) blob += t.size() * 4;
  out.reserve(4 + text.size() + blob);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, t] : params) {
    for (float v : t.values()) put_f32(out, v);
  }
  return out;
}

ordered_json params_json(const std::vector<std::pair<std::string, ad::Tensor<float>>>& params) {
  ordered_json arr = ordered_json::array();
  for (const auto& [name, t] : params) {
    arr.push_back(ordered_json{{"name", name}, {"shape", shape_json(t.shape())}});
  }
  return arr;
}

struct ParsedHeader {
  ordered_json header;
  Reader reader;  // positioned at the first blob byte
};

ParsedHeader parse_header(std::span<const std::uint8_t> bytes, const char* expected_model) {
  Reader r(bytes);
  const std::uint32_t len = r.u32("header length");
  const auto text = r.take(len, "JSON header");
  ordered_json header;
  try {
    header = ordered_json::parse(text.begin(), text.end());
  } catch (const ordered_json::parse_error& e) {
    throw FormatError(std::string("checkpoint: bad JSON header: ") + e.what(), 4);
  }
  if (!header.is_object() || header.value("format", "") != "talign-checkpoint") {
    throw FormatError("checkpoint: missing 'format': 'talign-checkpoint' marker", 4);
  }
  if (header.value("version", -1) != 1) {
    throw FormatError("checkpoint: unsupported version", 4);
  }
  const std::string model = header.value("model", "");
  if (model != expected_model) {
    throw CheckpointError("checkpoint holds model kind '" + model + "', expected '" +
                          expected_model + "'");
  }
  if (!header.contains("config") || !header["config"].is_object() ||
      !header.contains("params") || !header["params"].is_array()) {
    throw FormatError("checkpoint: header needs 'config' object and 'params' array", 4);
  }
  return ParsedHeader{std::move(header), std::move(r)};
}

// Fill the freshly built model's parameters from the blob section, in header
// order. Names and shapes must match the model exactly.
void read_params(Reader& r, const ordered_json& header,
                 std::vector<std::pair<std::string, ad::Tensor<float>>> model_params) {
  const auto& entries = header["params"];
  if (entries.size() != model_params.size()) {
    throw CheckpointError("checkpoint lists " + std::to_string(entries.size()) +
                          " parameters, model has " + std::to_string(model_params.size()));
  }
  for (std::size_t i = 0; i < model_params.size(); ++i) {
    const auto& entry = entries[i];
    auto& [name, tensor] = model_params[i];
    if (!entry.is_object() || entry.value("name", "") != name) {
      throw CheckpointError("checkpoint parameter " + std::to_string(i) + " is '" +
                            entry.value("name", std::string("?")) + "', model expects '" +
                            name + "'");
    }
    ad::Shape shape;
    for (const auto& d : entry.value("shape", ordered_json::array())) {
      shape.push_back(d.get<std::size_t>());
    }
    if (shape != tensor.shape()) {
      throw CheckpointError("checkpoint parameter '" + name + "' has shape " +
                            ad::shape_to_string(shape) + ", model expects " +
                            ad::shape_to_string(tensor.shape()));
    }
    auto& values = tensor.mutable_values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      values[k] = r.f32(name.c_str());
    }
  }
  r.expect_end();
}

}  // namespace

std::vector<std::uint8_t> serialize_prn(const prn::PRNModel<float>& model, long step) {
  const auto& cfg = model.config();
  ordered_json header;
  header["format"] = "talign-checkpoint";
  header["version"] = 1;
  header["model"] = "prn";
  header["step"] = step;
  header["config"] = ordered_json{{"encoder_channels", cfg.encoder_channels},
                                  {"decoder_channels", cfg.decoder_channels}};
  const auto params = model.named_parameters();
  header["params"] = params_json(params);
  return serialize(header, params);
}

std::vector<std::uint8_t> serialize_dtmd(const dtmd::NoiseEstimator<float>& model,
                                         const dtmd::ScheduleConfig& schedule,
                                         double normalize_scale, long step) {
  const auto& cfg = model.config();
  ordered_json header;
  header["format"] = "talign-checkpoint";
  header["version"] = 1;
  header["model"] = "dtmd";
  header["step"] = step;
  header["config"] = ordered_json{
      {"rows", cfg.rows},
      {"hidden", cfg.hidden},
      {"time_embed_dim", cfg.time_embed_dim},
      {"schedule", ordered_json{{"steps", schedule.steps},
                                {"beta_min", schedule.beta_min},
                                {"beta_max", schedule.beta_max}}},
      {"normalize_scale", normalize_scale}};
  const auto params = model.named_parameters();
  header["params"] = params_json(params);
  return serialize(header, params);
}

LoadedPRN deserialize_prn(std::span<const std::uint8_t> bytes) {
  auto parsed = parse_header(bytes, "prn");
  const auto& cfg_json = parsed.header["config"];
  prn::PRNConfig cfg;
  try {
    cfg.encoder_channels = cfg_json.at("encoder_channels").get<std::vector<int>>();
    cfg.decoder_channels = cfg_json.at("decoder_channels").get<std::vector<int>>();
  } catch (const ordered_json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad prn config: ") + e.what());
  }
  LoadedPRN out{prn::PRNModel<float>(cfg), parsed.header.value("step", 0L)};
  read_params(parsed.reader, parsed.header, out.model.named_parameters());
  return out;
}

LoadedDTMD deserialize_dtmd(std::span<const std::uint8_t> bytes) {
  auto parsed = parse_header(bytes, "dtmd");
  const auto& cfg_json = parsed.header["config"];
  dtmd::EstimatorConfig cfg;
  dtmd::ScheduleConfig schedule;
  double scale = 1.0;
  try {
    cfg.rows = cfg_json.at("rows").get<int>();
    cfg.hidden = cfg_json.at("hidden").get<std::vector<int>>();
    cfg.time_embed_dim = cfg_json.at("time_embed_dim").get<int>();
    const auto& s = cfg_json.at("schedule");
    schedule.steps = s.at("steps").get<int>();
    schedule.beta_min = s.at("beta_min").get<double>();
    schedule.beta_max = s.at("beta_max").get<double>();
    scale = cfg_json.at("normalize_scale").get<double>();
  } catch (const ordered_json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad dtmd config: ") + e.what());
  }
  LoadedDTMD out{dtmd::NoiseEstimator<float>(cfg), schedule, scale,
                 parsed.header.value("step", 0L)};
  read_params(parsed.reader, parsed.header, out.model.named_parameters());
  return out;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError("write failed: " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw FileError("read failed: " + path.string());
  return bytes;
}

}  // namespace talign::ckpt
