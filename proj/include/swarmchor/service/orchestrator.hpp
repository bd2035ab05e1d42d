#ifndef SWARMCHOR_SERVICE_ORCHESTRATOR_HPP
#define SWARMCHOR_SERVICE_ORCHESTRATOR_HPP

// File-backed interactive sessions: one directory per session holding
// session.json plus the artifacts of every stage reached.

#include "swarmchor/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <memory>
#include <mutex>
#include <random>
#include <set>

namespace swarmchor {

struct SessionRequest {
  std::string song_id;
  std::size_t n_drones = 0;
  /// Empty keeps the configured backend.
  std::string backend;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> style;
};

class Orchestrator {
 public:
  struct Session {
    std::string id;
    std::string song_id;
    std::string created_at;
    PipelineState state;
    /// Held for the whole of a stage execution.
    std::mutex run;
    /// Guards state and status against concurrent readers.
    std::mutex data;
    /// "idle" or the stage being executed.
    std::string status = "idle";
  };

  /// Exclusive hold on a session's stage execution; other stage requests
  /// fail with Busy while it lives.
  class Hold {
   public:
    explicit Hold(std::shared_ptr<Session> s) : s_(std::move(s)), lock_(s_->run, std::try_to_lock) {
      if (!lock_.owns_lock()) {
        std::lock_guard d(s_->data);
        fail(ErrorCode::Busy, "session " + s_->id + " is " + s_->status);
      }
    }
    Session& session() { return *s_; }

   private:
    std::shared_ptr<Session> s_;
    std::unique_lock<std::mutex> lock_;
  };

  explicit Orchestrator(AppConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::error_code ec;
    std::filesystem::create_directories(cfg_.sessions_dir, ec);
    if (ec) fail(ErrorCode::Io, "cannot create " + cfg_.sessions_dir.string() + ": " + ec.message());
    for (const auto& e : std::filesystem::directory_iterator(cfg_.sessions_dir))
      if (e.is_directory() && std::filesystem::exists(e.path() / "session.json")) {
        try {
          load(e.path());
        } catch (const Error& err) {
          load_errors_.push_back(e.path().filename().string() + ": " + err.what());
        }
      }
  }

  /// Session directories that could not be reloaded.
  const std::vector<std::string>& load_errors() const { return load_errors_; }

  const AppConfig& config() const { return cfg_; }

  nlohmann::json list_songs() {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : cfg_.songs) {
      nlohmann::json e = {{"id", s.id}, {"title", s.title}, {"mood", s.mood}, {"genre", s.genre}};
      try {
        const auto& g = beats_for(s);
        e["beats"] = g.size();
        e["tempo_bpm"] = g.tempo_bpm;
      } catch (const Error& err) {
        e["error"] = {{"code", to_string(err.code())}, {"message", err.what()}};
      }
      out.push_back(std::move(e));
    }
    return out;
  }

  std::string create_session(const SessionRequest& req) {
    const SongEntry* song = nullptr;
    for (const auto& s : cfg_.songs)
      if (s.id == req.song_id) song = &s;
    if (!song) fail(ErrorCode::UnknownSong, "no song '" + req.song_id + "' in the catalog");
    if (req.n_drones < 1 || req.n_drones > cfg_.max_drones)
      fail(ErrorCode::TooManyDrones, "n_drones must be in [1, " + std::to_string(cfg_.max_drones) + "]");

    auto s = std::make_shared<Session>();
    s->song_id = song->id;
    s->created_at = now_iso();
    auto& st = s->state;
    st.beats = beats_for(*song);
    st.song = {song->title, song->mood, song->genre};
    st.n_drones = req.n_drones;
    st.backend = cfg_.backend;
    if (!req.backend.empty()) st.backend.kind = backend_kind_from_string(req.backend);
    if (req.seed) st.backend.seed = *req.seed;
    if (req.style) st.backend.style = procedural_style_from_string(*req.style);
    // The prompt must be buildable for this song and swarm size.
    make_bundle(cfg_, st);

    std::lock_guard lock(mu_);
    do s->id = new_id();
    while (sessions_.count(s->id) || std::filesystem::exists(cfg_.sessions_dir / s->id));
    std::filesystem::create_directories(dir(s->id));
    persist(*s);
    sessions_[s->id] = s;
    return s->id;
  }

  /// Reserves a session for stage execution.
  Hold hold(const std::string& id) { return Hold(find(id)); }

  nlohmann::json run_stage(const std::string& id, Stage stage) {
    auto h = hold(id);
    auto& s = h.session();
    auto& st = s.state;
    const Stage at = st.stage();
    const auto need = static_cast<int>(stage) - 1;
    if (stage == Stage::created) fail(ErrorCode::InvalidArgument, "created is not a runnable stage");
    if (static_cast<int>(at) < need)
      fail(ErrorCode::StageOrderViolation, std::string(to_string(stage)) + " requires stage " +
                                               std::string(to_string(static_cast<Stage>(need))) + ", session is " +
                                               std::string(to_string(at)));
    Busy busy(s, stage);
    PipelineState next = st;
    if (stage == Stage::generated) {
      // Rerunning replaces the latest answer and keeps the earlier ones.
      std::vector<std::string> history;
      if (st.gen) history = st.gen->bundle.response_history;
      if (!history.empty()) history.pop_back();
      auto bundle = make_bundle(cfg_, st, history);
      auto response = request_choreography(bundle, st.backend);
      next.gen = generation_from_response(cfg_, std::move(bundle), std::move(response));
      next.filtered.reset();
      next.sim.reset();
    } else if (stage == Stage::filtered) {
      next.filtered = run_filter(cfg_, next.gen->preprocessed);
      next.sim.reset();
    } else {
      next.sim = run_simulate(cfg_, next.gen->raw, *next.filtered);
    }
    std::lock_guard d(s.data);
    st = std::move(next);
    persist(s);
    s.status = "idle";
    return view_of(s);
  }

  nlohmann::json reprompt(const std::string& id, const std::string& text) {
    auto h = hold(id);
    auto& s = h.session();
    auto& st = s.state;
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) fail(ErrorCode::EmptyReprompt, "re-prompt text is empty");
    if (!st.gen) fail(ErrorCode::StageOrderViolation, "re-prompting requires a generated script");
    Busy busy(s, Stage::generated);
    PipelineState next = st;
    next.reprompts.push_back(build_reprompt(PromptBundle{}, text).reprompt_history.back());
    next.gen = run_generate(cfg_, next);
    next.filtered.reset();
    next.sim.reset();
    std::lock_guard d(s.data);
    st = std::move(next);
    persist(s);
    s.status = "idle";
    return view_of(s);
  }

  nlohmann::json view(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->data);
    return view_of(*s);
  }

  /// Raw artifact contents; the name must belong to a reached stage.
  std::string artifact(const std::string& id, const std::string& name) {
    auto s = find(id);
    std::lock_guard lock(s->data);
    require_artifact(*s, name);
    return read_text_file(dir(id) / name);
  }

  /// Simulated positions for playback, downsampled to roughly fps frames/s.
  nlohmann::json playback(const std::string& id, double fps) {
    auto s = find(id);
    std::lock_guard lock(s->data);
    if (!s->state.sim) fail(ErrorCode::StageOrderViolation, "playback requires a simulated session");
    if (!(fps > 0.0)) fail(ErrorCode::InvalidArgument, "fps must be positive");
    const auto& log = s->state.sim->log;
    const auto stride = static_cast<std::size_t>(std::max(1.0, std::round(log.sim_hz / fps)));
    return simlog_to_json(log, stride);
  }

  /// Bundle of every artifact plus the prompt history, also written to the
  /// session's export/ directory.
  nlohmann::json export_bundle(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->data);
    if (s->state.stage() < Stage::filtered)
      fail(ErrorCode::StageOrderViolation, "export requires a filtered session");
    nlohmann::json files = nlohmann::json::object();
    const auto out = dir(id) / "export";
    std::filesystem::create_directories(out);
    for (const auto& name : present_artifacts(*s)) {
      auto body = read_text_file(dir(id) / name);
      write_text_file(out / name, body);
      files[name] = std::move(body);
    }
    return {{"session", s->id},
            {"song", s->song_id},
            {"stage", to_string(s->state.stage())},
            {"reprompts", s->state.reprompts},
            {"files", std::move(files)}};
  }

  std::vector<std::string> session_ids() {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, s] : sessions_) out.push_back(id);
    return out;
  }

  std::filesystem::path dir(const std::string& id) const { return cfg_.sessions_dir / id; }

 private:
  struct Busy {
    Busy(Session& s, Stage st) : s_(s) {
      std::lock_guard d(s_.data);
      s_.status = std::string("running ") + std::string(to_string(st));
    }
    ~Busy() {
      std::lock_guard d(s_.data);
      s_.status = "idle";
    }
    Session& s_;
  };

  static std::string now_iso() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  std::string new_id() {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng_()));
    return buf;
  }

  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) fail(ErrorCode::SessionNotFound, "no session '" + id + "'");
    return it->second;
  }

  const BeatGrid& beats_for(const SongEntry& song) {
    std::lock_guard lock(beats_mu_);
    auto it = beat_cache_.find(song.id);
    if (it == beat_cache_.end()) it = beat_cache_.emplace(song.id, beats_from_file(song.path, cfg_.beats)).first;
    return it->second;
  }

  static std::vector<std::string> present_artifacts(const Session& s) {
    std::vector<std::string> out;
    for (const auto& n : artifact_names())
      if (artifact_stage(n) <= s.state.stage()) out.push_back(n);
    return out;
  }

  static void require_artifact(const Session& s, const std::string& name) {
    if (artifact_stage(name) > s.state.stage())
      fail(ErrorCode::StageOrderViolation, name + " needs stage " + std::string(to_string(artifact_stage(name))));
  }

  nlohmann::json view_of(const Session& s) const {
    const auto& st = s.state;
    nlohmann::json v = {{"id", s.id},
                        {"song", s.song_id},
                        {"n_drones", st.n_drones},
                        {"backend", to_string(st.backend.kind)},
                        {"seed", st.backend.seed},
                        {"style", to_string(st.backend.style)},
                        {"stage", to_string(st.stage())},
                        {"status", s.status},
                        {"created_at", s.created_at},
                        {"beats", st.beats.size()},
                        {"tempo_bpm", st.beats.tempo_bpm},
                        {"reprompts", st.reprompts}};
    nlohmann::json links = nlohmann::json::object();
    for (const auto& n : present_artifacts(s)) links[n] = "/sessions/" + s.id + "/artifacts/" + n;
    v["artifacts"] = std::move(links);
    if (st.gen) {
      v["prompt"] = prompt_transcript(st.gen->bundle);
      v["validation"] = report_to_json(st.gen->report);
    }
    if (st.filtered) v["certificate"] = certificate_to_json(st.filtered->certificate);
    if (st.sim) v["analytics"] = summary_to_json(st.sim->summary);
    return v;
  }

  /// Writes the artifacts of the reached stages, removes stale ones, then
  /// replaces session.json.
  void persist(const Session& s) {
    const auto d = dir(s.id);
    const auto files = artifact_files(s.state);
    for (const auto& n : artifact_names()) {
      const auto it = files.find(n);
      if (it != files.end()) {
        write_text_file(d / n, it->second);
      } else {
        std::error_code ec;
        std::filesystem::remove(d / n, ec);
      }
    }
    std::error_code ec;
    std::filesystem::remove_all(d / "export", ec);
    const auto& st = s.state;
    nlohmann::json m = {{"id", s.id},
                        {"song", s.song_id},
                        {"song_meta", {{"title", st.song.title}, {"mood", st.song.mood}, {"genre", st.song.genre}}},
                        {"n_drones", st.n_drones},
                        {"backend",
                         {{"kind", to_string(st.backend.kind)},
                          {"seed", st.backend.seed},
                          {"style", to_string(st.backend.style)}}},
                        {"stage", to_string(st.stage())},
                        {"created_at", s.created_at},
                        {"reprompts", st.reprompts},
                        {"responses", st.gen ? st.gen->bundle.response_history : std::vector<std::string>{}},
                        {"artifacts", artifact_hashes(files)}};
    write_text_file(d / "session.json", m.dump(2) + "\n");
  }

  /// Rebuilds a session from its directory. Stage outputs are restored from
  /// the stored answer and filtered trajectory; the simulation is rerun,
  /// which is deterministic.
  void load(const std::filesystem::path& d) {
    const auto m = detail::read_json_file(d / "session.json");
    auto s = std::make_shared<Session>();
    try {
      s->id = m.at("id").get<std::string>();
      s->song_id = m.at("song").get<std::string>();
      s->created_at = m.value("created_at", "");
      auto& st = s->state;
      const auto& meta = m.at("song_meta");
      st.song = {meta.value("title", ""), meta.value("mood", ""), meta.value("genre", "")};
      st.n_drones = m.at("n_drones").get<std::size_t>();
      st.backend = cfg_.backend;
      const auto& be = m.at("backend");
      st.backend.kind = backend_kind_from_string(be.at("kind").get<std::string>());
      st.backend.seed = be.at("seed").get<std::uint64_t>();
      st.backend.style = procedural_style_from_string(be.at("style").get<std::string>());
      st.reprompts = m.at("reprompts").get<std::vector<std::string>>();
      const auto beats_text = read_text_file(d / "beats.json");
      st.beats = parse_beat_json(beats_text);
      if (nlohmann::json::parse(beats_text).value("source", "") == "analyzed") st.beats.source = BeatSource::analyzed;
      const Stage stage = stage_from_string(m.at("stage").get<std::string>());
      if (stage >= Stage::generated) {
        auto responses = m.at("responses").get<std::vector<std::string>>();
        if (responses.empty()) fail(ErrorCode::ParseError, "generated session without a stored response");
        const auto last = responses.back();
        responses.pop_back();
        st.gen = generation_from_response(cfg_, make_bundle(cfg_, st, responses), last);
      }
      if (stage >= Stage::filtered) st.filtered = filtered_from_json(detail::read_json_file(d / "filtered.json"));
      if (stage >= Stage::simulated) st.sim = run_simulate(cfg_, st.gen->raw, *st.filtered);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, (d / "session.json").string() + ": " + e.what());
    }
    std::lock_guard lock(mu_);
    sessions_[s->id] = s;
  }

  AppConfig cfg_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex beats_mu_;
  std::map<std::string, BeatGrid> beat_cache_;
  std::mt19937_64 rng_{std::random_device{}()};
  std::vector<std::string> load_errors_;
};

}  // namespace swarmchor

#endif  // SWARMCHOR_SERVICE_ORCHESTRATOR_HPP
