#ifndef SWARMCHOR_CLI_HPP
#define SWARMCHOR_CLI_HPP

// Batch commands behind the `swarmchor` executable. Each returns a process
// exit code; see exit_code() for the mapping from error classes.

#include "swarmchor/pipeline.hpp"

#include <algorithm>
#include <iostream>

namespace swarmchor::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
/// Error classes map to kExitErrorBase + their position in ErrorCode.
inline constexpr int kExitErrorBase = 10;

inline int exit_code(ErrorCode c) { return kExitErrorBase + static_cast<int>(c); }

inline AppConfig config_or_default(const std::string& path) {
  if (path.empty()) {
    AppConfig c;
    c.validate();
    return c;
  }
  return load_config(path);
}

/// Reports an error on err and returns its exit code.
inline int report(const Error& e, std::ostream& err) {
  err << "error: " << e.what() << "\n";
  if (const auto* f = dynamic_cast<const FilteringError*>(&e)) err << "failed window: " << f->window() << "\n";
  return exit_code(e.code());
}

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    return report(e, err);
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

struct PipelineArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string backend;
  std::string style;
  std::string out = "out";
  std::size_t drones = 6;
  std::string beats;
  std::string song;
  /// Catalog entry from the config; carries the song's title, mood and genre.
  std::string song_id;
  std::vector<std::string> reprompts;
};

/// Manifest of a pipeline run. Timings are informational and stay out of the
/// artifact hashes.
struct RunManifest {
  std::string config;
  std::uint64_t seed = 0;
  std::string backend;
  std::vector<std::string> stages;
  std::string out_dir;
  std::map<std::string, double> timings_ms;
  nlohmann::json artifacts = nlohmann::json::object();

  nlohmann::json to_json() const {
    return {{"config", config},     {"seed", seed},           {"backend", backend},      {"stages", stages},
            {"out_dir", out_dir},   {"timings_ms", timings_ms}, {"artifacts", artifacts}};
  }
};

inline void write_artifacts(const std::filesystem::path& dir, const std::map<std::string, std::string>& files) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  for (const auto& [name, body] : files) write_text_file(dir / name, body);
}

/// beats -> generate -> preprocess -> filter -> simulate -> analytics, all
/// artifacts and manifest.json written to args.out.
inline RunManifest run_pipeline(const PipelineArgs& args) {
  if (!args.beats.empty() + !args.song.empty() + !args.song_id.empty() != 1)
    fail(ErrorCode::InvalidArgument, "give exactly one of --beats, --song or --song-id");
  const auto cfg = config_or_default(args.config);
  const SongEntry* entry = nullptr;
  if (!args.song_id.empty()) {
    for (const auto& s : cfg.songs)
      if (s.id == args.song_id) entry = &s;
    if (!entry) fail(ErrorCode::UnknownSong, "no song '" + args.song_id + "' in the catalog");
  }
  if (args.drones < 1 || args.drones > cfg.max_drones)
    fail(ErrorCode::TooManyDrones, "--drones must be in [1, " + std::to_string(cfg.max_drones) + "]");

  RunManifest m;
  m.config = args.config;
  m.out_dir = args.out;
  using clock = std::chrono::steady_clock;
  auto timed = [&](const std::string& stage, auto&& fn) {
    const auto t0 = clock::now();
    fn();
    m.timings_ms[stage] += std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    if (std::find(m.stages.begin(), m.stages.end(), stage) == m.stages.end()) m.stages.push_back(stage);
  };

  PipelineState st;
  st.n_drones = args.drones;
  st.backend = cfg.backend;
  if (!args.backend.empty()) st.backend.kind = backend_kind_from_string(args.backend == "http" ? "http_chat" : args.backend);
  if (!args.style.empty()) st.backend.style = procedural_style_from_string(args.style);
  if (args.seed) st.backend.seed = *args.seed;
  m.seed = st.backend.seed;
  m.backend = std::string(to_string(st.backend.kind));

  timed("beats", [&] {
    if (entry) {
      st.beats = beats_from_file(entry->path, cfg.beats);
      st.song = {entry->title, entry->mood, entry->genre};
    } else {
      const std::filesystem::path input = args.beats.empty() ? args.song : args.beats;
      st.beats = args.beats.empty() ? beats_from_file(input, cfg.beats) : load_beat_file(input);
      st.song.title = input.stem().string();
    }
  });
  timed("generate", [&] { st.gen = run_generate(cfg, st); });
  for (const auto& r : args.reprompts)
    timed("reprompt", [&] {
      st.reprompts.push_back(build_reprompt(PromptBundle{}, r).reprompt_history.back());
      st.gen = run_generate(cfg, st);
    });
  timed("filter", [&] { st.filtered = run_filter(cfg, st.gen->preprocessed); });
  timed("simulate", [&] { st.sim = run_simulate(cfg, st.gen->raw, *st.filtered); });

  const auto files = artifact_files(st);
  write_artifacts(args.out, files);
  m.artifacts = artifact_hashes(files);
  write_text_file(std::filesystem::path(args.out) / "manifest.json", m.to_json().dump(2) + "\n");
  return m;
}

inline int cmd_pipeline(const PipelineArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto m = run_pipeline(args);
    const auto a = detail::read_json_file(std::filesystem::path(args.out) / "analytics.json");
    out << "wrote " << m.artifacts.size() << " artifacts to " << m.out_dir << "\n"
        << "collision % before: " << format_g6(a["collision_pct_before"].get<double>())
        << ", after: " << format_g6(a["collision_pct_filtered"].get<double>())
        << ", simulated: " << format_g6(a["collision_pct_sim"].get<double>()) << "\n"
        << "tracking RMSE: " << format_g6(a["rmse"]["overall"].get<double>()) << " m\n";
    return kExitOk;
  });
}

struct FilterArgs {
  std::string config;
  std::string script;
  std::string out;
};

inline WaypointScript load_script_file(const std::filesystem::path& path) {
  const auto text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return script_from_json(j);
}

/// Preprocess and filter one script file, printing the certificate.
inline int cmd_filter(const FilterArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto cfg = config_or_default(args.config);
    const auto script = preprocess(load_script_file(args.script), cfg.volume, cfg.separation);
    const auto traj = run_filter(cfg, script);
    out << certificate_summary(traj.certificate);
    if (!args.out.empty())
      write_artifacts(args.out, {{"filtered.json", filtered_to_json(traj).dump() + "\n"},
                                 {"filtered.csv", filtered_to_csv(traj)},
                                 {"certificate.json", certificate_to_json(traj.certificate).dump(2) + "\n"}});
    return kExitOk;
  });
}

struct AnalyzeArgs {
  std::string config;
  std::string batch;
  std::string kind;
  std::string out;
};

struct BatchRun {
  std::string name;
  std::filesystem::path dir;
};

/// Run directories (sorted by name) holding a script.json + filtered.json
/// pair. A run directory given directly is a batch of one.
inline std::vector<BatchRun> batch_runs(const std::filesystem::path& batch) {
  if (!std::filesystem::is_directory(batch)) fail(ErrorCode::Io, "batch directory " + batch.string() + " not found");
  std::vector<BatchRun> runs;
  auto is_run = [](const std::filesystem::path& d) {
    return std::filesystem::exists(d / "script.json") && std::filesystem::exists(d / "filtered.json");
  };
  if (is_run(batch)) return {{batch.filename().string(), batch}};
  for (const auto& e : std::filesystem::directory_iterator(batch))
    if (e.is_directory() && is_run(e.path())) runs.push_back({e.path().filename().string(), e.path()});
  std::sort(runs.begin(), runs.end(), [](const BatchRun& a, const BatchRun& b) { return a.name < b.name; });
  return runs;
}

inline FilteredTrajectory load_filtered(const std::filesystem::path& p) {
  return filtered_from_json(detail::read_json_file(p));
}

/// Plot series over a batch of pipeline runs.
inline std::string analyze_batch(const AnalyzeArgs& args) {
  const auto cfg = config_or_default(args.config);
  const auto kind = plot_kind_from_string(args.kind);
  const auto runs = batch_runs(args.batch);
  if (runs.empty()) fail(ErrorCode::EmptyBatch, "no runs with script.json and filtered.json in " + args.batch);
  const double hz = cfg.sim.ctrl_hz;

  switch (kind) {
    case PlotKind::collision_hist: {
      std::vector<double> before, after;
      for (const auto& r : runs) {
        const auto raw = script_from_json(detail::read_json_file(r.dir / "script.json"));
        before.push_back(percent_in_collision(script_tracks(raw, hz), cfg.envelope).percent_in_collision);
        after.push_back(percent_in_collision(load_filtered(r.dir / "filtered.json"), cfg.envelope, hz).percent_in_collision);
      }
      return collision_hist_csv(before, after);
    }
    case PlotKind::velocity_bars: {
      std::vector<VelocityBar> rows;
      for (const auto& r : runs) {
        if (!std::filesystem::exists(r.dir / "reprompt" / "filtered.json")) continue;
        const auto b = load_filtered(r.dir / "filtered.json");
        const auto a = load_filtered(r.dir / "reprompt" / "filtered.json");
        rows.push_back({r.name, mean_speed(b.p, b.dt), mean_speed(a.p, a.dt)});
      }
      if (rows.empty()) fail(ErrorCode::EmptyBatch, "no run has a reprompt/ counterpart");
      return velocity_bars_csv(rows);
    }
    case PlotKind::rmse_bars: {
      std::vector<RmseBar> rows;
      for (const auto& r : runs) {
        const auto raw = script_from_json(detail::read_json_file(r.dir / "script.json"));
        auto bar = run_simulate(cfg, raw, load_filtered(r.dir / "filtered.json")).summary.rmse;
        bar.choreo = r.name;
        rows.push_back(bar);
      }
      return rmse_bars_csv(rows);
    }
    case PlotKind::beat_xy:
      if (runs.size() != 1) fail(ErrorCode::InvalidArgument, "beat_xy takes a single run directory");
      return beat_xy_csv(load_filtered(runs.front().dir / "filtered.json"));
  }
  fail(ErrorCode::InvalidArgument, "unsupported plot kind");
}

inline int cmd_analyze(const AnalyzeArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto csv = analyze_batch(args);
    if (args.out.empty()) out << csv;
    else write_text_file(args.out, csv);
    return kExitOk;
  });
}

struct BatchArgs {
  PipelineArgs base;
  std::size_t runs = 20;
  std::uint64_t seed = 1;
  std::string reprompt;
};

/// runs pipelines with seeds seed, seed+1, ... into out/run_NNN; with a
/// re-prompt each run also gets a reprompt/ counterpart.
inline int cmd_batch(const BatchArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.runs < 1) fail(ErrorCode::InvalidArgument, "--runs must be at least 1");
    int status = kExitOk;
    for (std::size_t i = 0; i < args.runs; ++i) {
      char name[16];
      std::snprintf(name, sizeof name, "run_%03zu", i);
      PipelineArgs a = args.base;
      a.seed = args.seed + i;
      a.out = (std::filesystem::path(args.base.out) / name).string();
      a.reprompts.clear();
      int rc = guarded(err, [&] {
        run_pipeline(a);
        if (!args.reprompt.empty()) {
          PipelineArgs b = a;
          b.reprompts = {args.reprompt};
          b.out = (std::filesystem::path(a.out) / "reprompt").string();
          run_pipeline(b);
        }
        return kExitOk;
      });
      out << name << " seed " << *a.seed << (rc == kExitOk ? " ok" : " failed") << "\n";
      if (rc != kExitOk && status == kExitOk) status = rc;
    }
    return status;
  });
}

struct ClickArgs {
  double bpm = 120.0;
  double duration = 10.0;
  double offset = 0.5;
  std::string out;
};

inline int cmd_clicktrack(const ClickArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!(args.bpm > 0.0 && args.duration > 0.0 && args.offset >= 0.0))
      fail(ErrorCode::InvalidArgument, "bpm and duration must be positive");
    std::vector<double> clicks;
    for (int k = 0;; ++k) {
      const double t = args.offset + k * 60.0 / args.bpm;
      if (t >= args.duration) break;
      clicks.push_back(t);
    }
    write_wav(args.out, synth_click_track(clicks, args.duration));
    out << "wrote " << clicks.size() << " clicks to " << args.out << "\n";
    return kExitOk;
  });
}

}  // namespace swarmchor::cli

#endif  // SWARMCHOR_CLI_HPP
