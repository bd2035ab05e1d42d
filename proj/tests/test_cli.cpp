#include "swarmchor/cli.hpp"
#include "swarmchor/service/orchestrator.hpp"

#include "support/oracle.hpp"
#include "support/tempdir.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>
#include <sys/wait.h>

using namespace swarmchor;
namespace sc = swarmchor::cli;

namespace {

const std::filesystem::path kRepoData = SWARMCHOR_REPO_DATA_DIR;

std::filesystem::path click_wav(const TempDir& dir, double bpm = 120.0) {
  std::vector<double> clicks;
  for (int k = 0; 0.5 + k * 60.0 / bpm < 10.0; ++k) clicks.push_back(0.5 + k * 60.0 / bpm);
  const auto p = dir / "click.wav";
  write_wav(p, synth_click_track(clicks, 10.0));
  return p;
}

nlohmann::json read_json(const std::filesystem::path& p) { return detail::read_json_file(p); }

int run_binary(const std::string& args) {
  const int status = std::system((std::string(SWARMCHOR_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(ExitCodes, DistinctPerErrorClass) {
  std::set<int> seen{sc::kExitOk, sc::kExitInternal, sc::kExitUsage};
  for (int c = 0; c <= static_cast<int>(ErrorCode::InvalidArgument); ++c) {
    const int code = sc::exit_code(static_cast<ErrorCode>(c));
    EXPECT_TRUE(seen.insert(code).second) << "duplicate exit code " << code;
    EXPECT_LT(code, 126);
  }
}

TEST(CliPipeline, ClickTrackSixDronesCollisionFree) {
  TempDir dir;
  sc::PipelineArgs a;
  a.song = click_wav(dir).string();
  a.drones = 6;
  a.seed = 4;
  a.out = (dir / "run").string();
  std::ostringstream out, err;
  ASSERT_EQ(sc::cmd_pipeline(a, out, err), 0) << err.str();
  for (const auto& name : artifact_names()) EXPECT_TRUE(std::filesystem::exists(dir / "run" / name)) << name;
  const auto m = read_json(dir / "run" / "manifest.json");
  EXPECT_EQ(m["seed"], 4);
  EXPECT_EQ(m["artifacts"].size(), artifact_names().size());
  EXPECT_EQ(m["stages"], nlohmann::json({"beats", "generate", "filter", "simulate"}));
  EXPECT_EQ(read_json(dir / "run" / "analytics.json")["collision_pct_filtered"].get<double>(), 0.0);

  // Independent check of the exported filtered trajectory at the control rate.
  const auto t = filtered_from_json(read_json(dir / "run" / "filtered.json"));
  EXPECT_EQ(oracle::percent_colliding(oracle::upsample(t.p, t.dt, 48.0), oracle::Limits{}.semi, -1e-4), 0.0);
  EXPECT_EQ(oracle::scan(t.p, t.dt, oracle::Limits{}).total(), 0u);
}

TEST(CliPipeline, SameSeedSameHashes) {
  TempDir dir;
  sc::PipelineArgs a;
  a.beats = (kRepoData / "songs" / "neon_pulse.json").string();
  a.drones = 5;
  a.seed = 11;
  a.out = (dir / "a").string();
  const auto ma = sc::run_pipeline(a);
  a.out = (dir / "b").string();
  const auto mb = sc::run_pipeline(a);
  EXPECT_EQ(ma.artifacts, mb.artifacts);
  for (const auto& name : artifact_names())
    EXPECT_EQ(read_text_file(dir / "a" / name), read_text_file(dir / "b" / name)) << name;
  a.seed = 12;
  a.out = (dir / "c").string();
  const auto mc = sc::run_pipeline(a);
  EXPECT_NE(ma.artifacts["script.json"], mc.artifacts["script.json"]);
}

TEST(CliPipeline, ErrorsMapToExitCodes) {
  TempDir dir;
  std::ostringstream out, err;
  sc::PipelineArgs a;
  a.beats = (dir / "missing.json").string();
  a.out = (dir / "x").string();
  EXPECT_EQ(sc::cmd_pipeline(a, out, err), sc::exit_code(ErrorCode::Io));
  a.beats = (kRepoData / "songs" / "slow_bloom.json").string();
  a.drones = 17;
  EXPECT_EQ(sc::cmd_pipeline(a, out, err), sc::exit_code(ErrorCode::TooManyDrones));
  a.drones = 3;
  a.song_id = "nope";
  EXPECT_EQ(sc::cmd_pipeline(a, out, err), sc::exit_code(ErrorCode::InvalidArgument));
  a.beats.clear();
  a.config = (kRepoData / "config.json").string();
  EXPECT_EQ(sc::cmd_pipeline(a, out, err), sc::exit_code(ErrorCode::UnknownSong));
}

TEST(CliPipeline, RepromptIsRecordedInTranscript) {
  TempDir dir;
  sc::PipelineArgs a;
  a.beats = (kRepoData / "songs" / "slow_bloom.json").string();
  a.drones = 4;
  a.reprompts = {"fly faster", "go higher"};
  a.out = (dir / "r").string();
  sc::run_pipeline(a);
  const auto transcript = read_text_file(dir / "r" / "prompt_transcript.txt");
  const auto p1 = transcript.find("fly faster"), p2 = transcript.find("go higher");
  ASSERT_NE(p1, std::string::npos);
  ASSERT_NE(p2, std::string::npos);
  EXPECT_LT(p1, p2);
  EXPECT_NE(transcript.find("[assistant]"), std::string::npos);
}

TEST(CliPipeline, MatchesServiceArtifacts) {
  TempDir dir;
  auto cfg = load_config(kRepoData / "config.json");
  cfg.sessions_dir = dir / "sessions";
  Orchestrator orch(cfg);
  const auto id = orch.create_session({"waltz_of_lights", 4, "", 21, std::nullopt});
  for (auto st : {Stage::generated, Stage::filtered, Stage::simulated}) orch.run_stage(id, st);

  sc::PipelineArgs a;
  a.config = (kRepoData / "config.json").string();
  a.song_id = "waltz_of_lights";
  a.drones = 4;
  a.seed = 21;
  a.out = (dir / "cli").string();
  sc::run_pipeline(a);
  for (const auto& name : artifact_names())
    EXPECT_EQ(read_text_file(dir / "cli" / name), orch.artifact(id, name)) << name;
}

TEST(CliFilter, FeasibleScriptPrintsCertificate) {
  TempDir dir;
  sc::PipelineArgs a;
  a.beats = (kRepoData / "songs" / "slow_bloom.json").string();
  a.drones = 3;
  a.out = (dir / "r").string();
  sc::run_pipeline(a);
  std::ostringstream out, err;
  sc::FilterArgs f{"", (dir / "r" / "script.json").string(), (dir / "f").string()};
  ASSERT_EQ(sc::cmd_filter(f, out, err), 0) << err.str();
  const auto text = out.str();
  const auto pos = text.find("min h (samples): ");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_GE(std::stod(text.substr(pos + 17)), -1e-4);
  EXPECT_NE(text.find("sweeps per window:"), std::string::npos);
  // Same core as the pipeline: identical filtered trajectory.
  EXPECT_EQ(read_text_file(dir / "f" / "filtered.json"), read_text_file(dir / "r" / "filtered.json"));
}

TEST(CliFilter, MalformedJsonIsParseError) {
  TempDir dir;
  std::ofstream(dir / "bad.json") << "{\"drones\": [";
  std::ostringstream out, err;
  EXPECT_EQ(sc::cmd_filter({"", (dir / "bad.json").string(), ""}, out, err), sc::exit_code(ErrorCode::ParseError));
  EXPECT_EQ(sc::cmd_filter({"", (dir / "none.json").string(), ""}, out, err), sc::exit_code(ErrorCode::Io));
}

TEST(CliFilter, DenseSwarmIsRejected) {
  // 17 drones whose waypoints all sit in a 0.5 m cube.
  TempDir dir;
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-0.25, 0.25);
  nlohmann::json drones = nlohmann::json::array();
  for (int i = 0; i < 17; ++i) {
    nlohmann::json wps = nlohmann::json::array();
    for (int k = 1; k <= 4; ++k) wps.push_back({{"t", 0.5 * k}, {"x", u(rng)}, {"y", u(rng)}, {"z", 1.2 + u(rng)}});
    drones.push_back({{"id", i}, {"waypoints", wps}});
  }
  std::ofstream(dir / "dense.json") << nlohmann::json{{"drones", drones}}.dump();
  std::ostringstream out, err;
  const int rc = sc::cmd_filter({"", (dir / "dense.json").string(), ""}, out, err);
  EXPECT_TRUE(rc == sc::exit_code(ErrorCode::SeparationFailed) || rc == sc::exit_code(ErrorCode::FilteringFailed))
      << rc << " " << err.str();
}

TEST(CliAnalyze, BatchSeries) {
  TempDir dir;
  sc::BatchArgs b;
  b.base.beats = (kRepoData / "songs" / "waltz_of_lights.json").string();
  b.base.drones = 9;
  b.base.style = "adversarial";
  b.base.out = (dir / "batch").string();
  b.runs = 4;
  std::ostringstream out, err;
  ASSERT_EQ(sc::cmd_batch(b, out, err), 0) << err.str();

  const auto hist = sc::analyze_batch({"", b.base.out, "collision_hist", ""});
  std::istringstream in(hist);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "bucket_lo,bucket_hi,count_before,count_after");
  int before = 0, after = 0, first_after = -1;
  while (std::getline(in, line)) {
    int cb = 0, ca = 0;
    double lo = 0, hi = 0;
    ASSERT_EQ(std::sscanf(line.c_str(), "%lf,%lf,%d,%d", &lo, &hi, &cb, &ca), 4);
    if (first_after < 0) first_after = ca;
    before += cb;
    after += ca;
  }
  EXPECT_EQ(before, 4);
  EXPECT_EQ(after, 4);
  EXPECT_EQ(first_after, 4);

  const auto rmse = sc::analyze_batch({"", b.base.out, "rmse_bars", ""});
  EXPECT_EQ(std::count(rmse.begin(), rmse.end(), '\n'), 5);
  EXPECT_EQ(rmse.rfind("choreo,rmse,lo,hi\nrun_000,", 0), 0u);
}

TEST(CliAnalyze, SinglePairVelocityBars) {
  TempDir dir;
  sc::BatchArgs b;
  b.base.beats = (kRepoData / "songs" / "neon_pulse.json").string();
  b.base.drones = 6;
  b.base.out = (dir / "batch").string();
  b.runs = 1;
  b.reprompt = "fly faster";
  std::ostringstream out, err;
  ASSERT_EQ(sc::cmd_batch(b, out, err), 0) << err.str();
  const auto csv = sc::analyze_batch({"", b.base.out, "velocity_bars", ""});
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  double before = 0, after = 0;
  ASSERT_EQ(std::sscanf(csv.c_str() + csv.find("run_000,"), "run_000,%lf,%lf", &before, &after), 2);
  EXPECT_GT(after, before);
}

TEST(CliAnalyze, EmptyBatch) {
  TempDir dir;
  std::ostringstream out, err;
  EXPECT_EQ(sc::cmd_analyze({"", dir.path().string(), "collision_hist", ""}, out, err),
            sc::exit_code(ErrorCode::EmptyBatch));
  EXPECT_EQ(sc::cmd_analyze({"", (dir / "nope").string(), "collision_hist", ""}, out, err),
            sc::exit_code(ErrorCode::Io));
}

TEST(CliBinary, ExitCodes) {
  TempDir dir;
  EXPECT_EQ(run_binary("--help"), 0);
  EXPECT_EQ(run_binary("pipeline --drones many"), sc::kExitUsage);
  EXPECT_EQ(run_binary("pipeline --beats " + (dir / "missing.json").string() + " --out " + (dir / "o").string()),
            sc::exit_code(ErrorCode::Io));
  EXPECT_EQ(run_binary("clicktrack --bpm 150 --out " + (dir / "c.wav").string()), 0);
  EXPECT_EQ(run_binary("pipeline --song " + (dir / "c.wav").string() + " --drones 3 --out " + (dir / "p").string()), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "p" / "manifest.json"));
}
