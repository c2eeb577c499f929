// End-to-end drive of the command-line front end, in-process via
// cli_dispatch. Uses a deliberately tiny simulation so the whole pipeline
// (simulate -> train -> infer -> evaluate -> baseline) stays fast.

#include <cstdio>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"
#include "mfsr/dataset.hpp"
#include "mfsr/evaluate.hpp"
#include "test_helpers.hpp"

namespace {

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("mfsr");
  for (const auto& a : args) argv.push_back(a.c_str());
  return mfsr::cli_dispatch(static_cast<int>(argv.size()), argv.data());
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& stem) : path(mfsr::testing::scratch_file(stem)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("cli pipeline round trip") {
  TempFile ds("cli_ds");
  TempFile cfg("cli_cfg");
  TempFile ckpt("cli_ckpt");
  TempFile hist("cli_hist");
  TempFile pred("cli_pred");
  TempFile report("cli_report");
  TempFile tri("cli_tri");

  REQUIRE(run_cli({"simulate", "--ra", "1e4", "--nx", "16", "--nz", "8", "--t-final", "0.75",
                   "--dt", "0.005", "--snapshot-every", "50", "--seed", "3", "--d-t", "2",
                   "--d-s", "2", "--out", ds.path}) == 0);
  const mfsr::Dataset loaded = mfsr::load_dataset(ds.path);
  CHECK(loaded.hr.extent(0) == 4);
  CHECK(loaded.lr.extent(0) == 2);

  mfsr::testing::spew_file(
      cfg.path,
      R"({"train": {"lr_window": [2, 2, 2], "samples_per_epoch": 4, "batch_windows": 2,
          "points_per_window": 8, "unet": {"n_c": 4, "depth": 1, "base_width": 4},
          "mlp": {"n_c": 4, "hidden": [8]}}})");

  REQUIRE(run_cli({"train", "--data", ds.path, "--config", cfg.path, "--epochs", "2", "--gamma",
                   "0.05", "--lr", "0.01", "--seed", "5", "--out", ckpt.path, "--history",
                   hist.path}) == 0);
  const std::string csv = mfsr::testing::slurp_file(hist.path);
  CHECK(csv.rfind("epoch,loss_total,loss_pred,loss_eq\n", 0) == 0);

  REQUIRE(run_cli({"infer", "--checkpoint", ckpt.path, "--data", ds.path, "--out", pred.path}) ==
          0);
  const mfsr::Field4 sr = mfsr::load_field(pred.path);
  const std::array<int, 3> covered = mfsr::covered_extents(loaded);
  CHECK(sr.extent(0) == covered[0]);
  CHECK(sr.extent(1) == covered[1]);
  CHECK(sr.extent(2) == covered[2]);
  CHECK_FALSE(sr.normalized);

  REQUIRE(run_cli({"evaluate", "--pred", pred.path, "--data", ds.path, "--out", report.path}) ==
          0);
  const mfsr::MetricsReport rep = mfsr::report_from_json(mfsr::testing::slurp_file(report.path));
  CHECK(rep.rows.size() == mfsr::kNumMetrics);

  REQUIRE(run_cli({"baseline", "--kind", "trilinear", "--data", ds.path, "--out", tri.path}) ==
          0);
  const mfsr::Field4 tri_field = mfsr::load_field(tri.path);
  CHECK(tri_field.extent(2) == covered[2]);
}

TEST_CASE("cli reports usage and data errors with distinct codes") {
  CHECK(run_cli({"no-such-command"}) == 1);
  CHECK(run_cli({"--help"}) == 0);
  CHECK(run_cli({"train", "--data", "/nonexistent/ds.mfsr", "--out", "/tmp/x"}) == 2);
  CHECK(run_cli({"evaluate", "--pred", "/nonexistent/pred.mfsr", "--data",
                 "/nonexistent/ds.mfsr"}) == 2);
  CHECK(run_cli({"infer", "--checkpoint", "a", "--data", "b"}) == 1);  // missing --out
  CHECK(run_cli({"baseline", "--kind", "nearest", "--data", "x", "--out", "y"}) == 2);
}
