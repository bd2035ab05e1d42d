#ifndef SWARMCHOR_SERVICE_SERVER_HPP
#define SWARMCHOR_SERVICE_SERVER_HPP

// HTTP+JSON front of the orchestrator. Errors are {code, message, stage}.

#include "swarmchor/service/orchestrator.hpp"

#include <httplib.h>

namespace swarmchor {

inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::SessionNotFound:
    case ErrorCode::UnknownSong: return 404;
    case ErrorCode::StageOrderViolation:
    case ErrorCode::Busy: return 409;
    case ErrorCode::NotImplemented: return 501;
    case ErrorCode::BackendUnavailable:
    case ErrorCode::BackendRefused: return 502;
    case ErrorCode::Io: return 500;
    case ErrorCode::InvalidArgument:
    case ErrorCode::TooManyDrones:
    case ErrorCode::EmptyReprompt:
    case ErrorCode::ParseError: return 400;
    default: return 422;
  }
}

/// Message without the "Code: " prefix that Error::what() carries.
inline std::string error_message(const Error& e) {
  std::string m = e.what();
  const std::string prefix = std::string(to_string(e.code())) + ": ";
  if (m.rfind(prefix, 0) == 0) m.erase(0, prefix.size());
  return m;
}

inline nlohmann::json error_json(const Error& e, const std::string& stage) {
  return {{"code", to_string(e.code())},
          {"message", error_message(e)},
          {"stage", stage.empty() ? nlohmann::json(nullptr) : nlohmann::json(stage)}};
}

class Server {
 public:
  explicit Server(Orchestrator& orch) : orch_(orch) { routes(); }

  httplib::Server& http() { return http_; }

  bool listen(const std::string& host, int port) { return http_.listen(host, port); }
  int bind_to_any_port(const std::string& host) { return http_.bind_to_any_port(host); }
  bool listen_after_bind() { return http_.listen_after_bind(); }
  void stop() { http_.stop(); }

 private:
  using Handler = std::function<nlohmann::json(const httplib::Request&)>;

  /// Runs a handler and maps library errors onto JSON error bodies.
  static void respond(httplib::Response& res, const std::string& stage, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const Error& e) {
      res.status = http_status(e.code());
      res.set_content(error_json(e, stage).dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(nlohmann::json{{"code", "Internal"}, {"message", e.what()}, {"stage", stage}}.dump(),
                      "application/json");
    }
  }

  static nlohmann::json body_json(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    try {
      return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, std::string("request body: ") + e.what());
    }
  }

  void json_route(const char* method, const std::string& pattern, const std::string& stage, Handler h) {
    auto fn = [h = std::move(h), stage](const httplib::Request& req, httplib::Response& res) {
      respond(res, stage, [&] { res.set_content(h(req).dump(), "application/json"); });
    };
    if (std::string(method) == "GET") http_.Get(pattern, fn);
    else http_.Post(pattern, fn);
  }

  void routes() {
    static const std::string id = "/sessions/([0-9A-Za-z_-]+)";

    json_route("GET", "/songs", "", [this](const httplib::Request&) { return orch_.list_songs(); });

    json_route("POST", "/sessions", "create", [this](const httplib::Request& req) {
      const auto b = body_json(req);
      SessionRequest r;
      try {
        r.song_id = b.at("song_id").get<std::string>();
        const auto n = b.at("n_drones").get<long long>();
        r.n_drones = n < 0 ? 0 : static_cast<std::size_t>(n);
        r.backend = b.value("backend", "");
        if (b.contains("seed")) r.seed = b["seed"].get<std::uint64_t>();
        if (b.contains("style")) r.style = b["style"].get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string("expected {song_id, n_drones}: ") + e.what());
      }
      const auto sid = orch_.create_session(r);
      return orch_.view(sid);
    });

    json_route("GET", id, "", [this](const httplib::Request& req) { return orch_.view(req.matches[1]); });

    const std::pair<const char*, Stage> stages[] = {
        {"generate", Stage::generated}, {"filter", Stage::filtered}, {"simulate", Stage::simulated}};
    for (const auto& [name, st] : stages) {
      const Stage stage = st;
      json_route("POST", id + "/" + name, name,
                 [this, stage](const httplib::Request& req) { return orch_.run_stage(req.matches[1], stage); });
    }

    json_route("POST", id + "/reprompt", "reprompt", [this](const httplib::Request& req) {
      const auto b = body_json(req);
      if (!b.contains("text") || !b["text"].is_string()) fail(ErrorCode::InvalidArgument, "expected {text}");
      return orch_.reprompt(req.matches[1], b["text"].get<std::string>());
    });

    json_route("POST", id + "/deploy", "deploy", [this](const httplib::Request& req) -> nlohmann::json {
      orch_.view(req.matches[1]);
      fail(ErrorCode::NotImplemented, "deployment to hardware is not available; use export");
    });

    json_route("GET", id + "/export", "export",
               [this](const httplib::Request& req) { return orch_.export_bundle(req.matches[1]); });

    http_.Get(id + "/artifacts/([A-Za-z0-9_.]+)", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, "artifacts", [&] {
        const std::string sid = req.matches[1];
        const std::string name = req.matches[2];
        if (name == "sim_log.json" || req.has_param("fps")) {
          double fps = 30.0;
          if (req.has_param("fps")) {
            try {
              fps = std::stod(req.get_param_value("fps"));
            } catch (const std::exception&) {
              fail(ErrorCode::InvalidArgument, "fps must be a number");
            }
          }
          if (name != "sim_log.json" && name != "sim_log.csv")
            fail(ErrorCode::InvalidArgument, "fps applies to the simulation log only");
          res.set_content(orch_.playback(sid, fps).dump(), "application/json");
          return;
        }
        const auto body = orch_.artifact(sid, name);
        const bool json = name.size() > 5 && name.substr(name.size() - 5) == ".json";
        const bool csv = name.size() > 4 && name.substr(name.size() - 4) == ".csv";
        res.set_content(body, json ? "application/json" : csv ? "text/csv" : "text/plain");
      });
    });
  }

  Orchestrator& orch_;
  httplib::Server http_;
};

}  // namespace swarmchor

#endif  // SWARMCHOR_SERVICE_SERVER_HPP
