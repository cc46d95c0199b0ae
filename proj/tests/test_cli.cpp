#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "ll/cli.hpp"

using namespace ll;
using namespace ll::cli;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("lorlab_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const std::string& name, const json& j) {
  fs::path p = dir / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

std::string error_of(const json& cfg, bool slow = false) {
  try {
    load_scenario(cfg, "", -1, slow);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string l;
  int n = 0;
  while (std::getline(in, l)) ++n;
  return n;
}

json small_observe() {
  return json::parse(R"({"version": 1, "pipeline": "observe", "seed": 3,
    "family": {"T": 4.0, "positions": [[0,0,0],[1,0,0],[0,1,0],[0,0,1]]},
    "sample": {"mode": "random", "n": 12}})");
}

}  // namespace

TEST(Config, ShippedScenariosValidate) {
  int n = 0;
  for (auto& e : fs::directory_iterator(LL_SCENARIO_DIR)) {
    if (e.path().filename() == "schema.json") continue;
    auto j = read_json_file(e.path());
    EXPECT_NO_THROW(load_scenario(j, "", -1, true)) << e.path();
    ++n;
  }
  EXPECT_GE(n, 10);
}

TEST(Config, BadCflNamesTheField) {
  auto j = json::parse(R"({"version": 1, "pipeline": "simulate", "simulate": {"n": 64, "cfl": 0.9, "t_q": 1.0, "slices": [2.0]}})");
  std::string e = error_of(j);
  EXPECT_EQ(e.rfind("simulate.cfl:", 0), 0u) << e;
  // derived cfl too large: the step count is at fault
  auto k = json::parse(R"({"version": 1, "pipeline": "simulate", "simulate": {"n": 64, "steps": 10, "t_q": 1.0, "slices": [3.0]}})");
  EXPECT_EQ(error_of(k).rfind("simulate.steps:", 0), 0u) << error_of(k);
}

TEST(Config, FieldPathsInErrors) {
  auto j = json::parse(R"({"version": 1, "pipeline": "simulate", "simulate": {"cfll": 0.3}})");
  EXPECT_EQ(error_of(j), "simulate.cfll: unknown key");
  auto f = json::parse(R"({"version": 1, "pipeline": "fourwave", "fourwave": {"configs": [[0.5, 0.5, 0.5], [1, 2, 3, 4]]}})");
  EXPECT_EQ(error_of(f).rfind("fourwave.configs[0]:", 0), 0u) << error_of(f);
  auto m = json::parse(R"({"version": 1, "pipeline": "observe", "metric": {"kind": "bump", "amp": 0.5}})");
  EXPECT_EQ(error_of(m).rfind("metric.amp:", 0), 0u) << error_of(m);
  EXPECT_EQ(error_of(json::parse(R"({"pipeline": "observe"})")), "version: missing");
  auto d = json::parse(R"({"version": 1, "pipeline": "simulate", "simulate": {"dims": 4, "n": 32, "cfl": 0.4, "t_q": 0.5, "slices": [1.0]}})");
  EXPECT_EQ(error_of(d).rfind("simulate.dims:", 0), 0u);
  EXPECT_EQ(error_of(d, true), "");
  EXPECT_THROW(load_scenario(small_observe(), "fourwave"), ConfigError);
}

TEST(Run, MinkowskiPassiveVerifies) {
  auto out = scratch("mp");
  auto r = run_scenario(fs::path(LL_SCENARIO_DIR) / "minkowski_passive.json", out);
  EXPECT_TRUE(r.report["embedding_pass"].get<bool>());
  EXPECT_LT(r.report["max_rel_error_centers"].get<double>(), 1e-6);
  EXPECT_GE(r.report["centers"].get<int>(), 5);
  EXPECT_EQ(r.report["orientation_failures"].get<int>(), 0);
  EXPECT_EQ(count_lines(out / "fits.csv"), 1 + r.report["fits"].get<int>());
}

TEST(Run, SameSeedSameBytes) {
  auto dir = scratch("det");
  auto cfg = write_config(dir, "obs.json", small_observe());
  auto a = run_scenario(cfg, dir / "a"), b = run_scenario(cfg, dir / "b");
  std::string ma = read_file(dir / "a" / "manifest.json"), mb = read_file(dir / "b" / "manifest.json");
  EXPECT_EQ(ma, mb);
  auto c = run_scenario(cfg, dir / "c", "", 4);
  auto hash = [](const fs::path& m, const std::string& f) {
    json man = json::parse(read_file(m));
    for (auto& x : man["artifacts"])
      if (x["path"] == f) return x["sha256"].get<std::string>();
    return std::string();
  };
  EXPECT_NE(hash(dir / "a" / "manifest.json", "records.json"), hash(dir / "c" / "manifest.json", "records.json"));
  // every listed hash matches the file on disk
  json man = json::parse(ma);
  for (auto& x : man["artifacts"])
    EXPECT_EQ(sha256_hex(read_file(dir / "a" / x["path"].get<std::string>())), x["sha256"].get<std::string>());
}

TEST(Run, ObserveRecordsRoundTrip) {
  auto dir = scratch("obs");
  auto cfg = write_config(dir, "obs.json", small_observe());
  run_scenario(cfg, dir / "out");
  auto rs = records_from_json(read_json_file(dir / "out" / "records.json"), false);
  ASSERT_EQ(rs.records.size(), 12u);
  EXPECT_EQ(rs.family.size(), 4u);
  for (auto& r : rs.records) {
    ASSERT_TRUE(r.truth.has_value());
    EXPECT_NEAR(r.times[1], earliest_obs_time(rs.family, 1, *r.truth).s, 2e-9);
  }
  EXPECT_EQ(count_lines(dir / "out" / "observations.csv"), 13);
}

TEST(Run, ReconstructFromRecordsFile) {
  auto dir = scratch("file");
  auto sc = passive_scenario(MetricSpec::minkowski(), 39, 5e-4, 3);
  auto recs = make_records(sc.family, sc.sources, true);
  std::ofstream(dir / "records.json") << records_to_json(sc.family, recs).dump();
  auto cfg = write_config(dir, "rec.json", json::parse(R"({"version": 1, "pipeline": "reconstruct",
      "reconstruct": {"mode": "file", "records_file": "records.json"}})"));
  auto r = run_scenario(cfg, dir / "out");
  EXPECT_EQ(r.report["records"].get<int>(), 39);
  EXPECT_TRUE(r.report["embedding_pass"].get<bool>());
  EXPECT_GT(r.report["fits"].get<int>(), 30);
}

TEST(Run, FourwaveTermsHave48Rows) {
  auto dir = scratch("fw");
  auto cfg = write_config(dir, "fw.json", json::parse(R"({"version": 1, "pipeline": "fourwave",
      "fourwave": {"configs": [[0.859, 0.277, 0.069, 0.933]], "taus": [1e3, 1e4], "polarizations": 3}})"));
  auto r = run_scenario(cfg, dir / "out");
  EXPECT_EQ(count_lines(dir / "out" / "terms.csv"), 49);
  EXPECT_EQ(count_lines(dir / "out" / "dominance.csv"), 4);
  EXPECT_EQ(r.report["G_zero"].get<int>(), 0);
}

TEST(Run, SimulateWritesSnapshotsAndRidges) {
  auto dir = scratch("sim");
  auto cfg = write_config(dir, "sim.json", json::parse(R"({"version": 1, "pipeline": "simulate",
      "simulate": {"n": 96, "half": 1.5, "cfl": 0.3, "t_q": 0.7, "width_cells": 5, "window": 0.35,
                   "slices": [1.2, 1.4], "negative": true, "translate_by": 0.8, "remainder": false}})"));
  auto r = run_scenario(cfg, dir / "out");
  for (int k = 0; k < 2; ++k) {
    char b[32];
    std::snprintf(b, sizeof b, "%03d", k);
    fs::path side = dir / "out" / ("snap_" + std::string(b) + ".json");
    auto s = read_json_file(side);
    EXPECT_EQ(s["dims"], json({96, 96}));
    // slices land on the nearest step
    EXPECT_NEAR(s["time"].get<double>(), k ? 1.4 : 1.2, s["dt"].get<double>());
    EXPECT_EQ(fs::file_size(dir / "out" / ("snap_" + std::string(b) + ".bin")), 96u * 96u * 8u);
    EXPECT_TRUE(fs::exists(dir / "out" / ("ridges_pos_" + std::string(b) + ".csv")));
    EXPECT_TRUE(fs::exists(dir / "out" / ("ridges_neg_" + std::string(b) + ".csv")));
  }
  std::ifstream in(dir / "out" / "ridges_pos_000.csv");
  std::string head;
  std::getline(in, head);
  EXPECT_EQ(head, "t,x,y");
  EXPECT_TRUE(r.report.contains("negative"));
}

TEST(Run, GeodesicPathTable) {
  auto out = scratch("geo");
  auto r = run_scenario(fs::path(LL_SCENARIO_DIR) / "geodesic_sphere.json", out);
  EXPECT_EQ(count_lines(out / "geodesic.csv"), 102);
  EXPECT_NEAR(r.report["conjugate_time"].get<double>(), r.report["cut_time"].get<double>(), 1e-6);
}

TEST(Emit, FormatsAndErrors) {
  auto dir = scratch("emit");
  auto cfg = write_config(dir, "obs.json", small_observe());
  run_scenario(cfg, dir / "out", "", -1, false, "json");
  EXPECT_TRUE(fs::exists(dir / "out" / "records.json"));
  auto t = read_json_file(dir / "out" / "records.json");
  EXPECT_TRUE(t.contains("records"));
  EXPECT_TRUE(fs::exists(dir / "out" / "observations.json"));
  EXPECT_THROW(emit_results(dir / "out", "xml"), std::invalid_argument);
  EXPECT_THROW(emit_results(dir / "nowhere", "csv"), std::invalid_argument);
  auto files = emit_results(dir / "out", "csv");
  ASSERT_EQ(files.size(), 1u);
  auto man = read_json_file(dir / "out" / "manifest.json");
  bool listed = false;
  for (auto& a : man["artifacts"]) listed |= a["path"] == "observations.csv";
  EXPECT_TRUE(listed);
}

TEST(Run, PipelineErrorNamesModule) {
  auto j = small_observe();
  j["family"]["velocities"] = json::parse("[[0, 0, 0], [1.2, 0, 0]]");
  auto s = load_scenario(j);
  try {
    run_scenario(s, scratch("perr"));
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.module, "observation");
    EXPECT_NE(std::string(e.what()).find("not future timelike"), std::string::npos);
  }
}

TEST(Binary, ExitCodes) {
  auto dir = scratch("bin");
  auto bad = write_config(dir, "bad.json", json::parse(R"({"version": 1, "simulate": {"n": 64, "cfl": 0.9}})"));
  std::string cmd = std::string(LL_LORLAB) + " simulate --config " + bad.string() + " --out " + (dir / "o").string() +
                    " > " + (dir / "log").string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  EXPECT_EQ(WEXITSTATUS(rc), 2);
  EXPECT_NE(read_file(dir / "log").find("simulate.cfl"), std::string::npos);
  auto good = write_config(dir, "good.json", small_observe());
  cmd = std::string(LL_LORLAB) + " observe --seed 5 --config " + good.string() + " --out " + (dir / "g").string() + " > /dev/null 2>&1";
  EXPECT_EQ(WEXITSTATUS(std::system(cmd.c_str())), 0);
  EXPECT_EQ(read_json_file(dir / "g" / "manifest.json")["seed"].get<int>(), 5);
}
