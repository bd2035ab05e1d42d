#ifndef SWARMCHOR_BACKEND_HPP
#define SWARMCHOR_BACKEND_HPP

// Requires cpp-httplib on the include path. Define CPPHTTPLIB_OPENSSL_SUPPORT
// (and link OpenSSL) before including to reach https endpoints.

#include "swarmchor/choreography.hpp"

#include <httplib.h>

#include <cctype>
#include <cstdlib>

namespace swarmchor {

enum class BackendKind { procedural, http_chat };

struct GenBackendConfig {
  BackendKind kind = BackendKind::procedural;
  std::string base_url;
  std::string model_name;
  std::string api_key_env_var = "SWARMCHOR_API_KEY";
  double timeout_s = 60.0;
  double temperature = 0.7;

  // Procedural backend only.
  std::uint64_t seed = 0;
  ProceduralStyle style = ProceduralStyle::standard;
  FlightVolume volume;
  double min_separation = 0.5;

  void validate() const {
    if (kind == BackendKind::http_chat && (base_url.empty() || model_name.empty()))
      fail(ErrorCode::InvalidArgument, "http_chat backend needs base_url and model_name");
    if (!(timeout_s > 0.0)) fail(ErrorCode::InvalidArgument, "backend timeout must be positive");
  }
};

inline BackendKind backend_kind_from_string(std::string_view s) {
  if (s == "procedural") return BackendKind::procedural;
  if (s == "http" || s == "http_chat") return BackendKind::http_chat;
  fail(ErrorCode::InvalidArgument, "unknown backend '" + std::string(s) + "'");
}

inline std::string_view to_string(BackendKind k) {
  return k == BackendKind::procedural ? "procedural" : "http_chat";
}

namespace detail {

inline std::string lowercase(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::size_t count_occurrences(const std::string& hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + needle.size())) ++n;
  return n;
}

}  // namespace detail

/// Procedural options after applying the re-prompt history: "fast"/"faster"
/// selects the fast style, each "higher" raises the swarm by 0.3 m and each
/// "lower" drops it by 0.3 m.
inline ProceduralOptions procedural_options_for(const PromptBundle& bundle, const GenBackendConfig& backend) {
  ProceduralOptions opt;
  opt.style = backend.style;
  opt.volume = backend.volume;
  opt.min_separation = backend.min_separation;
  for (const auto& r : bundle.reprompt_history) {
    const auto text = detail::lowercase(r);
    if (text.find("fast") != std::string::npos && opt.style == ProceduralStyle::standard)
      opt.style = ProceduralStyle::fast;
    opt.altitude_offset += 0.3 * static_cast<double>(detail::count_occurrences(text, "higher"));
    opt.altitude_offset -= 0.3 * static_cast<double>(detail::count_occurrences(text, "lower"));
  }
  return opt;
}

inline std::string procedural_response(const PromptBundle& bundle, const GenBackendConfig& backend) {
  const auto opt = procedural_options_for(bundle, backend);
  const auto s = procedural_generate(bundle.beat_times, bundle.n_drones, backend.seed, opt, bundle.initial_positions);
  return procedural_response_text(s);
}

namespace detail {

struct SplitUrl {
  std::string scheme_host_port;
  std::string path;
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto path_start = url.find('/', host_start);
  SplitUrl out;
  out.scheme_host_port = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

}  // namespace detail

inline nlohmann::json chat_request_body(const PromptBundle& bundle, const GenBackendConfig& backend) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : chat_messages(bundle)) msgs.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", backend.model_name}, {"messages", std::move(msgs)}, {"temperature", backend.temperature}};
}

inline std::string http_chat_response(const PromptBundle& bundle, const GenBackendConfig& backend) {
  backend.validate();
  const auto url = detail::split_url(backend.base_url);
  httplib::Client cli(url.scheme_host_port);
  if (!cli.is_valid()) fail(ErrorCode::BackendUnavailable, "cannot use backend URL " + backend.base_url);
  const auto secs = static_cast<time_t>(backend.timeout_s);
  const auto usecs = static_cast<time_t>((backend.timeout_s - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (const char* key = std::getenv(backend.api_key_env_var.c_str()); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);

  const auto res = cli.Post(url.path + "/chat/completions", headers, chat_request_body(bundle, backend).dump(),
                            "application/json");
  if (!res) fail(ErrorCode::BackendUnavailable, "request failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    fail(ErrorCode::BackendRefused, "backend answered HTTP " + std::to_string(res->status));

  const auto j = nlohmann::json::parse(res->body, nullptr, false);
  if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
    fail(ErrorCode::MalformedResponse, "chat completion without choices");
  const auto& msg = j["choices"][0];
  if (!msg.contains("message") || !msg["message"].contains("content") || !msg["message"]["content"].is_string())
    fail(ErrorCode::MalformedResponse, "chat completion without message content");
  return msg["message"]["content"].get<std::string>();
}

/// Full text answer of the configured backend for the bundle.
inline std::string request_choreography(const PromptBundle& bundle, const GenBackendConfig& backend) {
  if (backend.kind == BackendKind::procedural) return procedural_response(bundle, backend);
  return http_chat_response(bundle, backend);
}

}  // namespace swarmchor

#endif  // SWARMCHOR_BACKEND_HPP
