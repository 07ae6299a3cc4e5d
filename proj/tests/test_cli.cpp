#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "earu/cli.hpp"
#include "earu/io_util.hpp"
#include "earu/volume_io.hpp"
#include "support.hpp"

using namespace earu;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Commands that print to standard output drop their manifest into the
// working directory; keep that inside the scratch area.
struct ScopedCwd {
  fs::path saved = fs::current_path();
  explicit ScopedCwd(const fs::path& p) { fs::current_path(p); }
  ~ScopedCwd() { fs::current_path(saved); }
};

json read_json(const fs::path& p) {
  const auto b = read_file(p);
  return json::parse(b.begin(), b.end());
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(cli({}).code == kExitUsage);
  const auto unknown = cli({"evaluate", "--bogus"});
  CHECK(unknown.code == kExitUsage);
  CHECK_FALSE(unknown.err.empty());
  CHECK(cli({"--preset", "huge", "--print-defaults"}).code == kExitUsage);
  CHECK(cli({"--loss-ratio", "1-1", "--print-defaults"}).code == kExitUsage);
  CHECK(cli({"gradcheck", "--size", "full"}).code == kExitUsage);
}

TEST_CASE("version and defaults") {
  const auto v = cli({"--version"});
  CHECK(v.code == 0);
  CHECK(v.out.find(kToolVersion) != std::string::npos);
  const auto d = cli({"--seed", "7", "--loss-ratio", "0.8:0.2", "--preset", "desk", "--print-defaults"});
  REQUIRE(d.code == 0);
  const auto j = json::parse(d.out);
  CHECK(j["train"]["seed"] == 7);
  CHECK(j["train"]["loss_weights"]["bce"] == 0.8);
  CHECK(j["model"]["input_size"] == json::array({64, 64}));
  const auto full = json::parse(cli({"--print-defaults"}).out);
  CHECK(full["model"]["input_size"] == json::array({256, 256}));
  CHECK(full["train"]["batch_size"] == 16);
  CHECK(full["train"]["epochs"] == 60);

  const auto dir = earu::test::scratch_dir("cli_cfg");
  write_file_atomic(dir / "c.json", std::string(R"({"train": {"epochs": 3, "typo": 1}})"));
  CHECK(cli({"--config", (dir / "c.json").string(), "--print-defaults"}).code == kExitUsage);
  write_file_atomic(dir / "ok.json", std::string(R"({"train": {"epochs": 3}})"));
  const auto ok = cli({"--config", (dir / "ok.json").string(), "--print-defaults"});
  REQUIRE(ok.code == 0);
  CHECK(json::parse(ok.out)["train"]["epochs"] == 3);
}

TEST_CASE("evaluate on identical volumes reports dice 1") {
  const auto dir = earu::test::scratch_dir("cli_eval");
  const ScopedCwd cwd(dir);
  const auto ph = earu::test::make_phantom(10, 24, 24, Spacing{2.0, 1.0, 1.0}, 9);
  write_volume(VolumeData::from_labels(ph.mask), dir / "g.nii");
  const auto r = cli({"evaluate", "--pred", (dir / "g.nii").string(), "--gt", (dir / "g.nii").string(), "--out",
                      (dir / "m.csv").string()});
  REQUIRE(r.code == 0);
  const auto csv = read_file(dir / "m.csv");
  const std::string text(csv.begin(), csv.end());
  CHECK(text.find("g,1,0,0,0,0") != std::string::npos);
  CHECK(fs::exists(dir / "m.manifest.json"));
  CHECK(read_json(dir / "m.manifest.json")["command"] == "evaluate");

  CHECK(cli({"evaluate", "--pred", (dir / "g.nii").string()}).code == kExitUsage);
  write_file_atomic(dir / "bad.nii", std::string("not a nifti file at all"));
  CHECK(cli({"evaluate", "--pred", (dir / "bad.nii").string(), "--gt", (dir / "g.nii").string()}).code == kExitData);
}

TEST_CASE("pipeline commands write outputs and manifests") {
  const auto dir = earu::test::scratch_dir("cli_pipe");
  const ScopedCwd cwd(dir);
  const auto ph = earu::test::make_phantom(8, 40, 40, Spacing{2.0, 0.9, 0.9}, 12);
  write_volume(VolumeData::from_ct(ph.ct, DType::i16), dir / "ct.nii");
  write_volume(VolumeData::from_labels(ph.mask), dir / "gt.nii");
  const auto ct = (dir / "ct.nii").string(), gt = (dir / "gt.nii").string();
  const auto ct_before = read_file(ct);

  REQUIRE(cli({"preprocess", "--image", ct, "--mask", gt, "--out", (dir / "slices").string()}).code == 0);
  CHECK(fs::exists(dir / "slices" / "ct" / "manifest.json"));
  CHECK(read_json(dir / "slices" / "run_manifest.json")["command"] == "preprocess");
  CHECK(cli({"preprocess", "--image", ct, "--out", (dir / "x").string()}).code == kExitUsage);

  const std::vector<std::string> train_args{"--preset",     "micro", "--seed", "4", "train", "--data",
                                            (dir / "slices").string(), "--out", (dir / "m.ckpt").string(),
                                            "--epochs",     "2",     "--batch-size", "2"};
  REQUIRE(cli(train_args).code == 0);
  CHECK(fs::exists(dir / "m.best.ckpt"));
  CHECK(fs::exists(dir / "m.loss.csv"));
  const auto manifest = read_json(dir / "m.manifest.json");
  CHECK(manifest["seed"] == 4);
  CHECK(manifest["tool_version"] == kToolVersion);
  const auto ck1 = read_file(dir / "m.ckpt");
  REQUIRE(cli(train_args).code == 0);
  CHECK(read_file(dir / "m.ckpt") == ck1);

  REQUIRE(cli({"segment", "--model", (dir / "m.ckpt").string(), "--image", ct, "--out", (dir / "p.nii").string()})
              .code == 0);
  const auto pred = read_volume(dir / "p.nii");
  CHECK(pred.d == 8);
  CHECK(pred.h == 40);
  CHECK(pred.w == 40);
  CHECK(pred.dtype == DType::u8);
  CHECK(read_json(dir / "p.manifest.json")["details"]["geometry"] == "original");
  CHECK(read_file(ct) == ct_before);

  const auto ev = cli({"evaluate", "--pred", (dir / "p.nii").string(), "--gt", gt});
  CHECK(ev.code == 0);
  CHECK(ev.out.rfind("case_id,dice,voe,rvd,assd_mm,msd_mm\n", 0) == 0);
  CHECK(fs::exists(dir / "evaluate.manifest.json"));

  write_file_atomic(dir / "junk.ckpt", std::string("junk"));
  CHECK(cli({"segment", "--model", (dir / "junk.ckpt").string(), "--image", ct, "--out", (dir / "q.nii").string()})
            .code == kExitData);
  CHECK(cli({"segment", "--model", (dir / "m.ckpt").string(), "--image", ct, "--out", (dir / "q.nii").string(),
             "--threshold", "1.5"})
            .code == kExitUsage);

  REQUIRE(cli({"--seed", "2", "augment", "--data", (dir / "slices").string(), "--out", (dir / "aug").string()})
              .code == 0);
  const auto n = read_slice_archive(dir / "slices").size();
  CHECK(read_slice_archive(dir / "aug").size() == 8 * n);
}

TEST_CASE("gradcheck subcommand reports and exits by result") {
  const auto dir = earu::test::scratch_dir("cli_gc");
  const auto r = cli({"gradcheck", "--size", "micro", "--per-tensor", "2", "--out", (dir / "gc.json").string()});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("max_rel_error=", 0) == 0);
  const auto j = read_json(dir / "gc.json");
  CHECK(j["failures"] == 0);
  CHECK(j["max_rel_error"].get<double>() < 1e-3);
  CHECK(fs::exists(dir / "gc.manifest.json"));
}
