// talign: dataset generation, staged training, evaluation, inference, and
// export for the tooth-alignment pipeline.

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "talign/checkpoint.hpp"
#include "talign/dataset.hpp"
#include "talign/errors.hpp"
#include "talign/geometry.hpp"
#include "talign/losses.hpp"
#include "talign/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace talign;

namespace {

// Violations of the run-config document structure: unknown keys, wrong types.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---- seeds ----

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("TALIGN_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (errno != 0 || end == raw || *end != '\0') {
    throw ConfigError("TALIGN_SEED must be an unsigned integer, got '" + std::string(raw) +
                      "'");
  }
  return static_cast<std::uint64_t>(v);
}

// Precedence: --seed flag, then config file (when it carries one), then the
// TALIGN_SEED environment variable, then 0.
std::uint64_t resolve_seed(bool flag_set, std::uint64_t flag_value,
                           std::optional<std::uint64_t> config_value) {
  if (flag_set) return flag_value;
  if (config_value) return *config_value;
  if (auto env = env_seed()) return *env;
  return 0;
}

// ---- run-config document ----

void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& ctx) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const auto& k : allowed) known = known || (k == it.key());
    if (!known) throw ConfigError("unknown key '" + it.key() + "' in " + ctx);
  }
}

const json& member(const json& obj, const char* key) { return obj.at(key); }

int get_int(const json& obj, const char* key, int fallback, const std::string& ctx) {
  if (!obj.contains(key)) return fallback;
  const json& v = member(obj, key);
  if (!v.is_number_integer()) throw ConfigError(ctx + "." + key + " must be an integer");
  return v.get<int>();
}

double get_double(const json& obj, const char* key, double fallback, const std::string& ctx) {
  if (!obj.contains(key)) return fallback;
  const json& v = member(obj, key);
  if (!v.is_number()) throw ConfigError(ctx + "." + key + " must be a number");
  return v.get<double>();
}

std::uint64_t get_u64(const json& obj, const char* key, std::uint64_t fallback,
                      const std::string& ctx) {
  if (!obj.contains(key)) return fallback;
  const json& v = member(obj, key);
  if (!(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0))) {
    throw ConfigError(ctx + "." + key + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

std::vector<int> get_int_list(const json& obj, const char* key, std::vector<int> fallback,
                              const std::string& ctx) {
  if (!obj.contains(key)) return fallback;
  const json& v = member(obj, key);
  if (!v.is_array()) throw ConfigError(ctx + "." + key + " must be an array of integers");
  std::vector<int> out;
  for (const auto& e : v) {
    if (!e.is_number_integer()) {
      throw ConfigError(ctx + "." + key + " must be an array of integers");
    }
    out.push_back(e.get<int>());
  }
  return out;
}

struct ParsedRunConfig {
  train::TrainConfig cfg;
  bool has_seed = false;
};

// Schema-validating load: every key optional (defaults match the built-in
// training configuration), unknown keys rejected at every level.
ParsedRunConfig parse_run_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw FileError("file not found: " + file.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  if (!doc.is_object()) throw ConfigError("config root must be a JSON object");

  check_keys(doc,
             {"epochs_stage1", "epochs_stage2", "batch_size", "lr_prn", "lr_dtmd", "weights",
              "seed", "augment_probability", "augment", "schedule", "normalize_scale",
              "validation_interval", "prn", "estimator"},
             "config");

  ParsedRunConfig out;
  auto& cfg = out.cfg;
  cfg.epochs_stage1 = get_int(doc, "epochs_stage1", cfg.epochs_stage1, "config");
  cfg.epochs_stage2 = get_int(doc, "epochs_stage2", cfg.epochs_stage2, "config");
  cfg.batch_size = get_int(doc, "batch_size", cfg.batch_size, "config");
  cfg.lr_prn = get_double(doc, "lr_prn", cfg.lr_prn, "config");
  cfg.lr_dtmd = get_double(doc, "lr_dtmd", cfg.lr_dtmd, "config");
  cfg.augment_probability =
      get_double(doc, "augment_probability", cfg.augment_probability, "config");
  cfg.normalize_scale = get_double(doc, "normalize_scale", cfg.normalize_scale, "config");
  cfg.validation_interval =
      get_int(doc, "validation_interval", cfg.validation_interval, "config");
  if (doc.contains("seed")) {
    cfg.seed = get_u64(doc, "seed", 0, "config");
    out.has_seed = true;
  }

  if (doc.contains("weights")) {
    const json& w = doc["weights"];
    if (!w.is_object()) throw ConfigError("config.weights must be an object");
    check_keys(w, {"lambda_center", "lambda_denoise", "lambda_diffusion"}, "config.weights");
    cfg.weights.lambda_center =
        get_double(w, "lambda_center", cfg.weights.lambda_center, "config.weights");
    cfg.weights.lambda_denoise =
        get_double(w, "lambda_denoise", cfg.weights.lambda_denoise, "config.weights");
    cfg.weights.lambda_diffusion =
        get_double(w, "lambda_diffusion", cfg.weights.lambda_diffusion, "config.weights");
  }

  if (doc.contains("augment")) {
    const json& a = doc["augment"];
    if (!a.is_object()) throw ConfigError("config.augment must be an object");
    check_keys(a, {"k_min", "k_max", "max_angle", "max_shift"}, "config.augment");
    cfg.augment.k_min = get_int(a, "k_min", cfg.augment.k_min, "config.augment");
    cfg.augment.k_max = get_int(a, "k_max", cfg.augment.k_max, "config.augment");
    cfg.augment.max_angle = get_double(a, "max_angle", cfg.augment.max_angle, "config.augment");
    cfg.augment.max_shift = get_double(a, "max_shift", cfg.augment.max_shift, "config.augment");
  }

  if (doc.contains("schedule")) {
    const json& s = doc["schedule"];
    if (!s.is_object()) throw ConfigError("config.schedule must be an object");
    check_keys(s, {"steps", "beta_min", "beta_max"}, "config.schedule");
    cfg.schedule.steps = get_int(s, "steps", cfg.schedule.steps, "config.schedule");
    cfg.schedule.beta_min = get_double(s, "beta_min", cfg.schedule.beta_min, "config.schedule");
    cfg.schedule.beta_max = get_double(s, "beta_max", cfg.schedule.beta_max, "config.schedule");
  }

  if (doc.contains("prn")) {
    const json& p = doc["prn"];
    if (!p.is_object()) throw ConfigError("config.prn must be an object");
    check_keys(p, {"encoder_channels", "decoder_channels"}, "config.prn");
    cfg.prn.encoder_channels =
        get_int_list(p, "encoder_channels", cfg.prn.encoder_channels, "config.prn");
    cfg.prn.decoder_channels =
        get_int_list(p, "decoder_channels", cfg.prn.decoder_channels, "config.prn");
  }

  if (doc.contains("estimator")) {
    const json& e = doc["estimator"];
    if (!e.is_object()) throw ConfigError("config.estimator must be an object");
    check_keys(e, {"hidden", "time_embed_dim"}, "config.estimator");
    cfg.estimator_hidden = get_int_list(e, "hidden", cfg.estimator_hidden, "config.estimator");
    cfg.time_embed_dim =
        get_int(e, "time_embed_dim", cfg.time_embed_dim, "config.estimator");
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FileError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw FileError("write failed: " + path.string());
}

// ---- commands ----

struct GenArgs {
  std::string out;
  int count = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
  double perturb_angle = data::GeneratorConfig{}.perturb_angle;
  double perturb_shift = data::GeneratorConfig{}.perturb_shift;
};

void cmd_gen_data(const GenArgs& args) {
  const std::uint64_t seed = resolve_seed(args.seed_set, args.seed, std::nullopt);
  data::GeneratorConfig gcfg;
  gcfg.perturb_angle = args.perturb_angle;
  gcfg.perturb_shift = args.perturb_shift;
  const auto samples = data::generate_synthetic(args.count, seed, gcfg);
  fs::create_directories(args.out);
  data::write_dataset(args.out, samples, data::SplitSpec{}, seed);

  int train_n = 0, val_n = 0, test_n = 0;
  for (const auto& e : data::read_manifest(args.out)) {
    if (e.split == "train") ++train_n;
    if (e.split == "val") ++val_n;
    if (e.split == "test") ++test_n;
  }
  std::cout << "wrote " << samples.size() << " samples to " << args.out
            << " (train=" << train_n << " val=" << val_n << " test=" << test_n
            << " seed=" << seed << ")\n";
}

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void cmd_train(const TrainArgs& args) {
  ParsedRunConfig parsed;
  if (!args.config.empty()) parsed = parse_run_config(args.config);
  auto& cfg = parsed.cfg;
  cfg.seed = resolve_seed(args.seed_set, args.seed,
                          parsed.has_seed ? std::optional<std::uint64_t>(cfg.seed)
                                          : std::nullopt);

  const auto train_set = data::load_split(args.data, "train");
  const auto val_set = data::load_split(args.data, "val");
  if (train_set.empty()) {
    throw InsufficientDataError("dataset has no training samples: " + args.data);
  }

  fs::create_directories(args.out);
  const fs::path out_dir(args.out);
  const auto artifacts = train::train_staged(train_set, val_set, cfg, out_dir);

  ckpt::write_file(out_dir / "prn.ckpt", artifacts.prn_checkpoint);
  ckpt::write_file(out_dir / "dtmd.ckpt", artifacts.dtmd_checkpoint);
  ckpt::write_file(out_dir / "dtmd_stage1.ckpt", artifacts.dtmd_stage1_snapshot);
  write_text(out_dir / "trace.csv", train::trace_to_csv(artifacts.trace));
  if (!val_set.empty()) {
    write_text(out_dir / "validation.csv", losses::to_csv(artifacts.final_validation));
    write_text(out_dir / "validation.json", losses::to_json(artifacts.final_validation));
  }

  const auto& last = artifacts.trace.back();
  std::cout << "trained " << artifacts.trace.size() << " epochs (seed=" << cfg.seed
            << "): l_rec=" << format_double(last.l_rec);
  if (last.validated) {
    std::cout << " val_tre=" << format_double(last.val_tre)
              << " val_aae=" << format_double(last.val_aae);
  }
  std::cout << " -> " << args.out << "\n";
}

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string split = "test";
  std::string csv_out;
  std::string json_out;
};

void cmd_eval(const EvalArgs& args) {
  auto loaded = ckpt::load_prn(args.checkpoint);
  const auto samples = data::load_split(args.data, args.split);
  if (samples.empty()) {
    throw InsufficientDataError("split '" + args.split + "' is empty in " + args.data);
  }
  const auto report = train::evaluate(loaded.model, samples);
  std::cout << losses::to_csv(report);
  if (!args.csv_out.empty()) write_text(args.csv_out, losses::to_csv(report));
  if (!args.json_out.empty()) write_text(args.json_out, losses::to_json(report));
}

struct InferArgs {
  std::string input;
  std::string checkpoint;
  std::string out;
};

// Inference touches the regression network only; the output container holds
// the aligned points plus the predicted per-tooth transforms.
void cmd_infer(const InferArgs& args) {
  const auto sample = data::load_sample(args.input);
  auto loaded = ckpt::load_prn(args.checkpoint);
  const geom::TransformSet pred = loaded.model.regress(sample.input);
  const geom::Dentition aligned = geom::apply_transforms(pred, sample.input);
  data::save_sample(args.out, data::Sample{aligned, pred, sample.id});
  std::cout << "aligned " << sample.input.valid_count() << " teeth from " << args.input
            << " -> " << args.out << "\n";
}

struct ExportArgs {
  std::string input;
  std::string transforms;
  std::string format;
  std::string out;
};

std::string to_ply(const geom::Dentition& d) {
  const int m = d.tooth_count();
  Eigen::Index total = 0;
  for (const auto& t : d.teeth) total += t.points.rows();
  std::string out;
  out += "ply\nformat ascii 1.0\n";
  out += "comment tooth-labeled dentition point cloud\n";
  out += "element vertex " + std::to_string(total) + "\n";
  out += "property float x\nproperty float y\nproperty float z\n";
  out += "property int tooth\nproperty uchar valid\n";
  out += "end_header\n";
  char line[160];
  for (int i = 0; i < m; ++i) {
    const auto& pts = d.teeth[static_cast<std::size_t>(i)].points;
    const int valid = d.valid(i) ? 1 : 0;
    for (Eigen::Index r = 0; r < pts.rows(); ++r) {
      std::snprintf(line, sizeof(line), "%.9g %.9g %.9g %d %d\n", pts(r, 0), pts(r, 1),
                    pts(r, 2), i, valid);
      out += line;
    }
  }
  return out;
}

// One row per tooth slot: the raw matrix plus its rotation decomposed to
// intrinsic XYZ Euler angles (radians) and the translation column.
std::string transforms_to_csv(const geom::TransformSet& set,
                              const std::vector<std::uint8_t>& validity) {
  std::string out = "tooth,valid";
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      out += ",m" + std::to_string(r) + std::to_string(c);
    }
  }
  out += ",euler_x,euler_y,euler_z,tx,ty,tz\n";
  for (int i = 0; i < set.size(); ++i) {
    const auto& t = set.transforms[static_cast<std::size_t>(i)];
    out += std::to_string(i) + ",";
    out += std::to_string(static_cast<int>(validity[static_cast<std::size_t>(i)]));
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        out += "," + format_double(t.matrix(r, c));
      }
    }
    const geom::Vec3 angles = geom::rotation_to_euler(t.rotation());
    const geom::Vec3 d = t.displacement();
    for (int k = 0; k < 3; ++k) out += "," + format_double(angles(k));
    for (int k = 0; k < 3; ++k) out += "," + format_double(d(k));
    out += "\n";
  }
  return out;
}

void cmd_export(const ExportArgs& args) {
  const auto sample = data::load_sample(args.input);
  geom::TransformSet set = sample.target;
  if (!args.transforms.empty()) set = data::load_sample(args.transforms).target;

  if (args.format == "ply") {
    // Transforms are applied when supplied; otherwise the stored points are
    // exported as they are.
    const geom::Dentition cloud = args.transforms.empty()
                                      ? sample.input
                                      : geom::apply_transforms(set, sample.input);
    write_text(args.out, to_ply(cloud));
  } else {
    write_text(args.out, transforms_to_csv(set, sample.input.validity));
  }
  std::cout << "exported " << args.input << " as " << args.format << " -> " << args.out
            << "\n";
}

int run_guarded(const std::function<void()>& fn) {
  try {
    fn();
    return 0;
  } catch (const FileError& e) {
    std::cerr << "error: file-not-found: " << e.what() << "\n";
  } catch (const ConfigError& e) {
    std::cerr << "error: config-schema: " << e.what() << "\n";
  } catch (const FormatError& e) {
    std::cerr << "error: format: " << e.what() << "\n";
  } catch (const CheckpointError& e) {
    std::cerr << "error: checkpoint: " << e.what() << "\n";
  } catch (const InsufficientDataError& e) {
    std::cerr << "error: insufficient-data: " << e.what() << "\n";
  } catch (const NumericError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: invalid-argument: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tooth alignment: synthetic data, staged training, inference"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* cmd_gen = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
  cmd_gen->add_option("--out", gen.out, "output dataset directory")->required();
  cmd_gen->add_option("--count", gen.count, "number of samples")
      ->required()
      ->check(CLI::PositiveNumber);
  auto* gen_seed = cmd_gen->add_option("--seed", gen.seed, "generator seed");
  cmd_gen->add_option("--perturb-angle", gen.perturb_angle,
                      "max per-axis malocclusion rotation (radians)");
  cmd_gen->add_option("--perturb-shift", gen.perturb_shift,
                      "max per-axis malocclusion shift (arch units)");

  TrainArgs tr;
  auto* cmd_tr = app.add_subcommand("train", "run the staged training loop");
  cmd_tr->add_option("--data", tr.data, "dataset directory (with manifest.json)")->required();
  cmd_tr->add_option("--config", tr.config, "run-config JSON file");
  cmd_tr->add_option("--out", tr.out, "artifact output directory")->required();
  auto* tr_seed = cmd_tr->add_option("--seed", tr.seed, "training seed");

  EvalArgs ev;
  auto* cmd_ev = app.add_subcommand("eval", "score a checkpoint on a dataset split");
  cmd_ev->add_option("--data", ev.data, "dataset directory")->required();
  cmd_ev->add_option("--checkpoint", ev.checkpoint, "regression network checkpoint")
      ->required();
  cmd_ev->add_option("--split", ev.split, "split to score")
      ->check(CLI::IsMember({"train", "val", "test"}));
  cmd_ev->add_option("--csv-out", ev.csv_out, "also write the CSV report here");
  cmd_ev->add_option("--json-out", ev.json_out, "also write the JSON report here");

  InferArgs inf;
  auto* cmd_inf = app.add_subcommand("infer", "predict alignment for one sample");
  cmd_inf->add_option("--input", inf.input, "input sample (.tald)")->required();
  cmd_inf->add_option("--checkpoint", inf.checkpoint, "regression network checkpoint")
      ->required();
  cmd_inf->add_option("--out", inf.out, "output sample (.tald)")->required();

  ExportArgs ex;
  auto* cmd_ex = app.add_subcommand("export", "export a sample for inspection");
  cmd_ex->add_option("--input", ex.input, "input sample (.tald)")->required();
  cmd_ex->add_option("--transforms", ex.transforms,
                     "take transforms from this sample file instead");
  cmd_ex->add_option("--format", ex.format, "ply (points) or csv (transforms)")
      ->required()
      ->check(CLI::IsMember({"ply", "csv"}));
  cmd_ex->add_option("--out", ex.out, "output file")->required();

  CLI11_PARSE(app, argc, argv);

  gen.seed_set = gen_seed->count() > 0;
  tr.seed_set = tr_seed->count() > 0;

  if (cmd_gen->parsed()) return run_guarded([&] { cmd_gen_data(gen); });
  if (cmd_tr->parsed()) return run_guarded([&] { cmd_train(tr); });
  if (cmd_ev->parsed()) return run_guarded([&] { cmd_eval(ev); });
  if (cmd_inf->parsed()) return run_guarded([&] { cmd_infer(inf); });
  if (cmd_ex->parsed()) return run_guarded([&] { cmd_export(ex); });
  return 1;
}
