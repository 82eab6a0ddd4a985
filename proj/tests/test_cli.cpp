// End-to-end checks of the command-line tool, driven as a subprocess. The
// binary path arrives in TALIGN_CLI (set by the test registration).
#include <sys/wait.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "talign/dataset.hpp"
#include "temp_dir.hpp"

namespace fs = std::filesystem;
using namespace talign;

namespace {

struct CliResult {
  int status = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// Runs the tool through sh with stdout/stderr captured to files. The
// TALIGN_SEED variable is scrubbed unless a test injects its own value.
CliResult run_cli(const std::string& args, const fs::path& scratch,
                  const std::string& env_prefix = "env -u TALIGN_SEED") {
  static std::atomic<int> counter{0};
  const char* bin = std::getenv("TALIGN_CLI");
  REQUIRE_MESSAGE(bin != nullptr, "TALIGN_CLI must point at the tool binary");
  const int k = ++counter;
  const fs::path out_file = scratch / ("stdout" + std::to_string(k) + ".txt");
  const fs::path err_file = scratch / ("stderr" + std::to_string(k) + ".txt");
  const std::string cmd = env_prefix + " \"" + bin + "\" " + args + " > " + q(out_file) +
                          " 2> " + q(err_file);
  const int rc = std::system(cmd.c_str());
  CliResult r;
  r.status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

long count_lines(const std::string& text) {
  return std::count(text.begin(), text.end(), '\n');
}

void write_text_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  out << text;
}

// Minimal run config so training finishes in well under a second.
const char* kTinyConfig = R"({
  "epochs_stage1": 1,
  "epochs_stage2": 1,
  "batch_size": 4,
  "seed": 77,
  "validation_interval": 1,
  "schedule": {"steps": 8},
  "prn": {"encoder_channels": [4, 6], "decoder_channels": [8, 16]},
  "estimator": {"hidden": [8], "time_embed_dim": 4}
})";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("gen-data writes a deterministic dataset directory") {
  testutil::TempDir tmp("cli-gen");
  const fs::path a = tmp.path() / "a";
  const fs::path b = tmp.path() / "b";

  const auto ra = run_cli("gen-data --out " + q(a) + " --count 12 --seed 9", tmp.path());
  REQUIRE(ra.status == 0);
  CHECK(contains(ra.out, "wrote 12 samples"));
  CHECK(contains(ra.out, "(train=9 val=1 test=2 seed=9)"));

  const auto rb = run_cli("gen-data --out " + q(b) + " --count 12 --seed 9", tmp.path());
  REQUIRE(rb.status == 0);

  const auto manifest = data::read_manifest(a);
  REQUIRE(manifest.size() == 12);
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  for (const auto& e : manifest) {
    CHECK(slurp(a / e.file) == slurp(b / e.file));
  }

  // A different seed must actually change the data.
  const fs::path c = tmp.path() / "c";
  REQUIRE(run_cli("gen-data --out " + q(c) + " --count 12 --seed 10", tmp.path()).status == 0);
  CHECK(slurp(a / manifest[0].file) != slurp(c / manifest[0].file));

  // The tree round-trips through the library loaders.
  CHECK(data::load_split(a, "train").size() == 9);
  CHECK(data::load_split(a, "val").size() == 1);
  CHECK(data::load_split(a, "test").size() == 2);
}

TEST_CASE("gen-data rejects a non-positive count") {
  testutil::TempDir tmp("cli-gen-bad");
  const auto r = run_cli("gen-data --out " + q(tmp.path() / "d") + " --count 0", tmp.path());
  CHECK(r.status != 0);
}

TEST_CASE("running without a subcommand fails") {
  testutil::TempDir tmp("cli-none");
  CHECK(run_cli("", tmp.path()).status != 0);
}

TEST_CASE("train, eval, infer, and export cooperate on one dataset") {
  testutil::TempDir tmp("cli-pipeline");
  const fs::path dataset = tmp.path() / "data";
  const fs::path run = tmp.path() / "run";
  const fs::path cfg = tmp.path() / "tiny.json";
  write_text_file(cfg, kTinyConfig);

  REQUIRE(run_cli("gen-data --out " + q(dataset) + " --count 10 --seed 5", tmp.path()).status ==
          0);

  const auto tr = run_cli("train --data " + q(dataset) + " --config " + q(cfg) + " --out " +
                              q(run),
                          tmp.path());
  REQUIRE_MESSAGE(tr.status == 0, tr.err);
  CHECK(contains(tr.out, "trained 2 epochs (seed=77)"));
  CHECK(contains(tr.out, "val_tre="));

  // Artifact contract: both stage checkpoints, the trace, and the
  // validation reports. Stage two froze the estimator, so the final
  // diffusion checkpoint equals the stage-boundary snapshot byte for byte.
  for (const char* name :
       {"prn.ckpt", "dtmd.ckpt", "dtmd_stage1.ckpt", "trace.csv", "validation.csv",
        "validation.json"}) {
    CAPTURE(name);
    CHECK(fs::exists(run / name));
  }
  CHECK(slurp(run / "dtmd.ckpt") == slurp(run / "dtmd_stage1.ckpt"));
  const std::string trace = slurp(run / "trace.csv");
  CHECK(trace.rfind("epoch,stage,l_rec,l_center,l_denoi,l_diffusion,val_tre,val_aae\n", 0) ==
        0);
  CHECK(count_lines(trace) == 3);

  SUBCASE("eval reproduces the training-time validation report") {
    const fs::path csv_out = tmp.path() / "eval.csv";
    const fs::path json_out = tmp.path() / "eval.json";
    const auto ev = run_cli("eval --data " + q(dataset) + " --checkpoint " +
                                q(run / "prn.ckpt") + " --split val --csv-out " + q(csv_out) +
                                " --json-out " + q(json_out),
                            tmp.path());
    REQUIRE_MESSAGE(ev.status == 0, ev.err);
    CHECK(ev.out == slurp(run / "validation.csv"));
    CHECK(slurp(csv_out) == ev.out);
    CHECK(slurp(json_out).rfind("{", 0) == 0);
  }

  SUBCASE("infer writes a sample container export can consume") {
    const auto manifest = data::read_manifest(dataset);
    fs::path test_file;
    for (const auto& e : manifest) {
      if (e.split == "test") test_file = dataset / e.file;
    }
    REQUIRE_FALSE(test_file.empty());

    const fs::path aligned = tmp.path() / "aligned.tald";
    const auto inf = run_cli("infer --input " + q(test_file) + " --checkpoint " +
                                 q(run / "prn.ckpt") + " --out " + q(aligned),
                             tmp.path());
    REQUIRE_MESSAGE(inf.status == 0, inf.err);
    CHECK(contains(inf.out, "aligned"));

    const auto original = data::load_sample(test_file);
    const auto result = data::load_sample(aligned);
    CHECK(result.input.validity == original.input.validity);

    const fs::path ply = tmp.path() / "cloud.ply";
    REQUIRE(run_cli("export --input " + q(aligned) + " --format ply --out " + q(ply),
                    tmp.path())
                .status == 0);
    const std::string body = slurp(ply);
    CHECK(body.rfind("ply\nformat ascii 1.0\n", 0) == 0);
    CHECK(contains(body, "element vertex 4096\n"));
    CHECK(contains(body, "property int tooth\n"));
    CHECK(contains(body, "end_header\n"));
    CHECK(count_lines(body) == 4106);  // 10 header lines + 32*128 vertices

    const fs::path tcsv = tmp.path() / "transforms.csv";
    REQUIRE(run_cli("export --input " + q(aligned) + " --format csv --out " + q(tcsv),
                    tmp.path())
                .status == 0);
    const std::string table = slurp(tcsv);
    CHECK(table.rfind("tooth,valid,m00,m01,m02,m03,m10", 0) == 0);
    CHECK(contains(table, ",euler_x,euler_y,euler_z,tx,ty,tz\n"));
    CHECK(count_lines(table) == 33);  // header + one row per tooth slot

    // Applying transforms from a second container at export time.
    const fs::path ply2 = tmp.path() / "cloud2.ply";
    REQUIRE(run_cli("export --input " + q(test_file) + " --transforms " + q(aligned) +
                        " --format ply --out " + q(ply2),
                    tmp.path())
                .status == 0);
    CHECK(contains(slurp(ply2), "element vertex 4096\n"));
  }
}

TEST_CASE("seed precedence: flag beats config beats environment") {
  testutil::TempDir tmp("cli-seed");
  const fs::path dataset = tmp.path() / "data";
  const fs::path cfg = tmp.path() / "tiny.json";
  write_text_file(cfg, kTinyConfig);  // carries "seed": 77
  REQUIRE(run_cli("gen-data --out " + q(dataset) + " --count 10 --seed 5", tmp.path()).status ==
          0);

  SUBCASE("environment seed applies when nothing else is given") {
    const fs::path d = tmp.path() / "env-only";
    const auto r = run_cli("gen-data --out " + q(d) + " --count 4", tmp.path(),
                           "env TALIGN_SEED=111");
    REQUIRE(r.status == 0);
    CHECK(contains(r.out, "seed=111"));

    // Same seed through the flag gives the identical dataset.
    const fs::path d2 = tmp.path() / "flag-same";
    REQUIRE(run_cli("gen-data --out " + q(d2) + " --count 4 --seed 111", tmp.path()).status ==
            0);
    CHECK(slurp(d / "manifest.json") == slurp(d2 / "manifest.json"));
  }

  SUBCASE("the flag wins over the environment") {
    const fs::path d = tmp.path() / "flag-wins";
    const auto r = run_cli("gen-data --out " + q(d) + " --count 4 --seed 5", tmp.path(),
                           "env TALIGN_SEED=111");
    REQUIRE(r.status == 0);
    CHECK(contains(r.out, "seed=5"));
  }

  SUBCASE("a config seed wins over the environment") {
    const auto r = run_cli("train --data " + q(dataset) + " --config " + q(cfg) + " --out " +
                               q(tmp.path() / "run-cfg"),
                           tmp.path(), "env TALIGN_SEED=999");
    REQUIRE_MESSAGE(r.status == 0, r.err);
    CHECK(contains(r.out, "(seed=77)"));
  }

  SUBCASE("the flag wins over the config seed") {
    const auto r = run_cli("train --data " + q(dataset) + " --config " + q(cfg) +
                               " --seed 123 --out " + q(tmp.path() / "run-flag"),
                           tmp.path());
    REQUIRE_MESSAGE(r.status == 0, r.err);
    CHECK(contains(r.out, "(seed=123)"));
  }

  SUBCASE("a malformed environment seed is a config error") {
    const auto r = run_cli("gen-data --out " + q(tmp.path() / "bad-env") + " --count 4",
                           tmp.path(), "env TALIGN_SEED=abc");
    CHECK(r.status == 1);
    CHECK(r.err.rfind("error: config-schema: TALIGN_SEED must be an unsigned integer", 0) ==
          0);
  }
}

TEST_CASE("failures map to stable error categories on stderr") {
  testutil::TempDir tmp("cli-errors");
  const fs::path dataset = tmp.path() / "data";
  REQUIRE(run_cli("gen-data --out " + q(dataset) + " --count 10 --seed 5", tmp.path()).status ==
          0);

  SUBCASE("missing inputs are file-not-found") {
    const auto r = run_cli("eval --data " + q(dataset) + " --checkpoint " +
                               q(tmp.path() / "nope.ckpt"),
                           tmp.path());
    CHECK(r.status == 1);
    CHECK(r.err.rfind("error: file-not-found:", 0) == 0);

    const auto r2 = run_cli("infer --input " + q(tmp.path() / "nope.tald") +
                                " --checkpoint " + q(tmp.path() / "nope.ckpt") + " --out " +
                                q(tmp.path() / "x.tald"),
                            tmp.path());
    CHECK(r2.status == 1);
    CHECK(r2.err.rfind("error: file-not-found:", 0) == 0);

    const auto r3 = run_cli("train --data " + q(tmp.path() / "no-dataset") + " --out " +
                                q(tmp.path() / "run"),
                            tmp.path());
    CHECK(r3.status == 1);
    CHECK(r3.err.rfind("error: file-not-found:", 0) == 0);
  }

  SUBCASE("schema violations are config-schema") {
    auto expect_schema_error = [&](const std::string& text, const std::string& fragment) {
      const fs::path bad = tmp.path() / "bad.json";
      write_text_file(bad, text);
      const auto r = run_cli("train --data " + q(dataset) + " --config " + q(bad) +
                                 " --out " + q(tmp.path() / "run"),
                             tmp.path());
      CHECK(r.status == 1);
      CHECK(r.err.rfind("error: config-schema:", 0) == 0);
      CHECK(contains(r.err, fragment));
    };
    expect_schema_error(R"({"foo": 1})", "unknown key 'foo' in config");
    expect_schema_error(R"({"batch_size": "four"})", "config.batch_size must be an integer");
    expect_schema_error(R"({"weights": {"lambda_bogus": 1}})",
                        "unknown key 'lambda_bogus' in config.weights");
    expect_schema_error("{nope", "config is not valid JSON");
    expect_schema_error("[1, 2]", "config root must be a JSON object");
  }

  SUBCASE("well-formed configs with illegal values are invalid-argument") {
    const fs::path bad = tmp.path() / "zero-epochs.json";
    write_text_file(bad, R"({"epochs_stage1": 0})");
    const auto r = run_cli("train --data " + q(dataset) + " --config " + q(bad) + " --out " +
                               q(tmp.path() / "run"),
                           tmp.path());
    CHECK(r.status == 1);
    CHECK(r.err.rfind("error: invalid-argument:", 0) == 0);
  }

  SUBCASE("corrupt sample containers are format errors") {
    const fs::path garbage = tmp.path() / "garbage.tald";
    write_text_file(garbage, "NOT A SAMPLE");
    const auto r = run_cli("export --input " + q(garbage) + " --format ply --out " +
                               q(tmp.path() / "x.ply"),
                           tmp.path());
    CHECK(r.status == 1);
    CHECK(r.err.rfind("error: format:", 0) == 0);
  }

  SUBCASE("a checkpoint of the wrong model kind is a checkpoint error") {
    const fs::path cfg = tmp.path() / "tiny.json";
    write_text_file(cfg, kTinyConfig);
    const fs::path run = tmp.path() / "run-ck";
    REQUIRE(run_cli("train --data " + q(dataset) + " --config " + q(cfg) + " --out " + q(run),
                    tmp.path())
                .status == 0);
    const auto r = run_cli("eval --data " + q(dataset) + " --checkpoint " +
                               q(run / "dtmd.ckpt") + " --split val",
                           tmp.path());
    CHECK(r.status == 1);
    CHECK(r.err.rfind("error: checkpoint:", 0) == 0);
  }

  SUBCASE("an empty split is insufficient data") {
    // 3 samples split 3/0/0, so the val split has nothing to score.
    const fs::path tiny = tmp.path() / "tiny-data";
    REQUIRE(run_cli("gen-data --out " + q(tiny) + " --count 3 --seed 5", tmp.path()).status ==
            0);
    const fs::path cfg = tmp.path() / "tiny.json";
    write_text_file(cfg, kTinyConfig);
    const fs::path run = tmp.path() / "run-id";
    REQUIRE(run_cli("train --data " + q(dataset) + " --config " + q(cfg) + " --out " + q(run),
                    tmp.path())
                .status == 0);
    const auto r = run_cli("eval --data " + q(tiny) + " --checkpoint " + q(run / "prn.ckpt") +
                               " --split val",
                           tmp.path());
    CHECK(r.status == 1);
    CHECK(r.err.rfind("error: insufficient-data:", 0) == 0);
  }
}

}  // TEST_SUITE("cli")
