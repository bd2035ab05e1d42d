#ifndef SWARMCHOR_PIPELINE_HPP
#define SWARMCHOR_PIPELINE_HPP

// Stage functions and artifact serialization shared by the CLI and the
// session service, so both write byte-identical files for the same inputs.

#include "swarmchor/analytics.hpp"
#include "swarmchor/config.hpp"

#include <openssl/evp.h>

#include <map>
#include <optional>

namespace swarmchor {

enum class Stage { created, generated, filtered, simulated };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::created: return "created";
    case Stage::generated: return "generated";
    case Stage::filtered: return "filtered";
    case Stage::simulated: return "simulated";
  }
  return "";
}

inline Stage stage_from_string(const std::string& s) {
  for (auto st : {Stage::created, Stage::generated, Stage::filtered, Stage::simulated})
    if (to_string(st) == s) return st;
  fail(ErrorCode::ParseError, "unknown stage '" + s + "'");
}

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    fail(ErrorCode::Io, "sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xF];
  }
  return out;
}

struct Generation {
  PromptBundle bundle;
  /// Latest model answer; bundle.response_history ends with it.
  std::string response;
  WaypointScript raw;
  WaypointScript preprocessed;
  ValidationReport report;
};

struct AnalyticsSummary {
  double collision_before = 0.0;
  double collision_filtered = 0.0;
  double collision_sim = 0.0;
  double mean_speed_script = 0.0;
  double mean_speed_filtered = 0.0;
  double mean_speed_sim = 0.0;
  RmseBar rmse;
};

struct Simulation {
  SimLog log;
  AnalyticsSummary summary;
};

/// Everything one run or session has produced so far.
struct PipelineState {
  BeatGrid beats;
  SongMeta song;
  std::size_t n_drones = 0;
  GenBackendConfig backend;
  std::vector<std::string> reprompts;
  std::optional<Generation> gen;
  std::optional<FilteredTrajectory> filtered;
  std::optional<Simulation> sim;

  Stage stage() const {
    if (sim) return Stage::simulated;
    if (filtered) return Stage::filtered;
    if (gen) return Stage::generated;
    return Stage::created;
  }
};

inline ConstraintsEcho constraints_echo(const AppConfig& cfg) {
  ConstraintsEcho c;
  c.volume = cfg.volume;
  c.max_speed = cfg.limits.max_speed;
  c.max_accel = cfg.limits.max_thrust;
  c.min_separation = cfg.separation.min_distance;
  return c;
}

/// Initial prompt with the re-prompt history and earlier answers replayed.
inline PromptBundle make_bundle(const AppConfig& cfg, const PipelineState& st,
                                const std::vector<std::string>& responses = {}) {
  auto b = build_initial_prompt(st.beats, st.n_drones, default_initial_positions(st.n_drones, cfg.volume),
                                constraints_echo(cfg), st.song, cfg.prompt);
  for (const auto& r : st.reprompts) b = build_reprompt(b, r);
  b.response_history = responses;
  return b;
}

/// Parses, validates and preprocesses a model answer.
inline Generation generation_from_response(const AppConfig& cfg, PromptBundle bundle, std::string response) {
  Generation g;
  g.raw = parse_waypoint_response(response, expected_shape(bundle));
  g.report = validate_script(g.raw, cfg.volume, cfg.separation);
  g.preprocessed = preprocess(g.raw, cfg.volume, cfg.separation);
  bundle.response_history.push_back(response);
  g.bundle = std::move(bundle);
  g.response = std::move(response);
  return g;
}

/// Queries the backend for the current prompt. Earlier answers are carried
/// over so re-prompts can replay them.
inline Generation run_generate(const AppConfig& cfg, const PipelineState& st) {
  std::vector<std::string> history;
  if (st.gen) history = st.gen->bundle.response_history;
  auto bundle = make_bundle(cfg, st, history);
  auto response = request_choreography(bundle, st.backend);
  return generation_from_response(cfg, std::move(bundle), std::move(response));
}

inline FilteredTrajectory run_filter(const AppConfig& cfg, const WaypointScript& preprocessed) {
  return filter_swarm(preprocessed, cfg.horizon, cfg.limits, cfg.envelope, cfg.volume);
}

inline SwarmTracks truncate_to(const SwarmTracks& t, std::size_t n) {
  SwarmTracks out = t;
  for (auto& tr : out)
    if (tr.size() > n) tr.resize(n);
  return out;
}

/// Simulates the filtered trajectory and computes the run's analytics. The
/// "before" collision figure flies the raw script in straight lines.
inline Simulation run_simulate(const AppConfig& cfg, const WaypointScript& raw, const FilteredTrajectory& traj) {
  Simulation s;
  const double hz = cfg.sim.ctrl_hz;
  const auto cmds = resample_commands(traj, cfg.sim.sim_hz, hz);
  std::vector<Vec3> start;
  for (const auto& tr : traj.p) start.push_back(tr.front());
  s.log = run_simulation(cmds.ctrl, cfg.sim, states_at_rest(start), traj.ids);

  auto& a = s.summary;
  const auto script = script_tracks(raw, hz);
  a.collision_before = percent_in_collision(script, cfg.envelope).percent_in_collision;
  a.collision_filtered = percent_in_collision(cmds.ctrl.positions, cfg.envelope).percent_in_collision;
  const auto flown = s.log.positions_at_ctrl();
  a.collision_sim = percent_in_collision(flown, cfg.envelope).percent_in_collision;
  a.mean_speed_script = mean_speed(script, 1.0 / hz);
  a.mean_speed_filtered = mean_speed(traj.p, traj.dt);
  a.mean_speed_sim = mean_speed(flown, 1.0 / hz);
  const std::size_t n = std::min(flown.front().size(), cmds.ctrl.samples());
  a.rmse = rmse_bar("run", truncate_to(flown, n), truncate_to(cmds.ctrl.positions, n));
  return s;
}

inline nlohmann::json summary_to_json(const AnalyticsSummary& a) {
  return {{"collision_pct_before", a.collision_before},
          {"collision_pct_filtered", a.collision_filtered},
          {"collision_pct_sim", a.collision_sim},
          {"mean_speed_script", a.mean_speed_script},
          {"mean_speed_filtered", a.mean_speed_filtered},
          {"mean_speed_sim", a.mean_speed_sim},
          {"rmse", {{"overall", a.rmse.rmse}, {"lo", a.rmse.lo}, {"hi", a.rmse.hi}}}};
}

/// Artifact file names in the order they are produced.
inline const std::vector<std::string>& artifact_names() {
  static const std::vector<std::string> names = {
      "beats.json",    "prompt_transcript.txt", "response.txt",     "script.json",     "script_preprocessed.json",
      "validation.json", "filtered.json",       "filtered.csv",     "certificate.json", "beat_xy.csv",
      "sim_log.csv",   "analytics.json",        "collision_hist.csv", "rmse_bars.csv"};
  return names;
}

/// Stage at which an artifact first exists.
inline Stage artifact_stage(const std::string& name) {
  static const std::map<std::string, Stage> m = {
      {"beats.json", Stage::created},           {"prompt_transcript.txt", Stage::generated},
      {"response.txt", Stage::generated},       {"script.json", Stage::generated},
      {"script_preprocessed.json", Stage::generated}, {"validation.json", Stage::generated},
      {"filtered.json", Stage::filtered},       {"filtered.csv", Stage::filtered},
      {"certificate.json", Stage::filtered},    {"beat_xy.csv", Stage::filtered},
      {"sim_log.csv", Stage::simulated},        {"analytics.json", Stage::simulated},
      {"collision_hist.csv", Stage::simulated}, {"rmse_bars.csv", Stage::simulated}};
  const auto it = m.find(name);
  if (it == m.end()) fail(ErrorCode::InvalidArgument, "unknown artifact '" + name + "'");
  return it->second;
}

/// Contents of every artifact the state has reached, keyed by file name.
inline std::map<std::string, std::string> artifact_files(const PipelineState& st) {
  std::map<std::string, std::string> f;
  f["beats.json"] = beat_grid_json(st.beats);
  if (st.gen) {
    f["prompt_transcript.txt"] = prompt_transcript(st.gen->bundle);
    f["response.txt"] = st.gen->response;
    f["script.json"] = script_to_json(st.gen->raw, true).dump(2) + "\n";
    f["script_preprocessed.json"] = script_to_json(st.gen->preprocessed, true).dump(2) + "\n";
    f["validation.json"] = report_to_json(st.gen->report).dump(2) + "\n";
  }
  if (st.filtered) {
    f["filtered.json"] = filtered_to_json(*st.filtered).dump() + "\n";
    f["filtered.csv"] = filtered_to_csv(*st.filtered);
    f["certificate.json"] = certificate_to_json(st.filtered->certificate).dump(2) + "\n";
    f["beat_xy.csv"] = beat_xy_csv(*st.filtered);
  }
  if (st.sim) {
    const auto& a = st.sim->summary;
    f["sim_log.csv"] = simlog_to_csv(st.sim->log);
    f["analytics.json"] = summary_to_json(a).dump(2) + "\n";
    f["collision_hist.csv"] = collision_hist_csv({a.collision_before}, {a.collision_filtered});
    f["rmse_bars.csv"] = rmse_bars_csv({a.rmse});
  }
  return f;
}

inline nlohmann::json artifact_hashes(const std::map<std::string, std::string>& files) {
  nlohmann::json h = nlohmann::json::object();
  for (const auto& [name, body] : files) h[name] = sha256_hex(body);
  return h;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes via a temporary file and rename so readers never see partial files.
inline void write_text_file(const std::filesystem::path& path, std::string_view body) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + tmp.string());
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) fail(ErrorCode::Io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

}  // namespace swarmchor

#endif  // SWARMCHOR_PIPELINE_HPP
