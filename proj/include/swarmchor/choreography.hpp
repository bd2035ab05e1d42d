#ifndef SWARMCHOR_CHOREOGRAPHY_HPP
#define SWARMCHOR_CHOREOGRAPHY_HPP

#include "swarmchor/beat_analysis.hpp"
#include "swarmchor/script.hpp"

#include <cstdio>
#include <limits>
#include <optional>
#include <random>
#include <sstream>

namespace swarmchor {

/// Limits restated to the language model.
struct ConstraintsEcho {
  FlightVolume volume;
  double max_speed = 1.0;
  double max_accel = 14.7;
  double min_separation = 0.5;

  bool operator==(const ConstraintsEcho& o) const {
    return volume.lower == o.volume.lower && volume.upper == o.volume.upper && max_speed == o.max_speed &&
           max_accel == o.max_accel && min_separation == o.min_separation;
  }
};

struct SongMeta {
  std::string title;
  std::string mood;
  std::string genre;
};

struct PromptConfig {
  /// Beats listed in the prompt before decimation kicks in.
  std::size_t beat_budget = 64;
  /// Largest allowed decimation stride; beyond it the song is rejected.
  std::size_t max_stride = 32;
  /// Resend earlier model responses as assistant turns when re-prompting.
  bool resend_history = true;
};

struct PromptBundle {
  std::string system_text;
  std::string user_text;
  std::vector<std::string> reprompt_history;
  /// Model responses, one per generation, oldest first.
  std::vector<std::string> response_history;
  ConstraintsEcho constraints_echo;

  // Structured context the procedural backend and the parser rely on.
  std::vector<double> beat_times;
  std::size_t decimation_stride = 1;
  std::size_t n_drones = 0;
  std::vector<Vec3> initial_positions;
  bool resend_history = true;

  bool operator==(const PromptBundle& o) const {
    return system_text == o.system_text && user_text == o.user_text && reprompt_history == o.reprompt_history &&
           response_history == o.response_history && constraints_echo == o.constraints_echo &&
           beat_times == o.beat_times && decimation_stride == o.decimation_stride && n_drones == o.n_drones &&
           initial_positions == o.initial_positions && resend_history == o.resend_history;
  }
};

struct ChatMessage {
  std::string role;
  std::string content;
};

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string format_beat_time(double t) { return format_fixed(t, 3); }

namespace detail {

inline std::string format_vec(const Vec3& v) {
  return "(" + format_fixed(v.x(), 2) + ", " + format_fixed(v.y(), 2) + ", " + format_fixed(v.z(), 2) + ")";
}

}  // namespace detail

/// Keeps every stride-th beat when the song has more beats than the budget.
inline std::pair<std::vector<double>, std::size_t> decimate_beats(const std::vector<double>& beats,
                                                                  const PromptConfig& cfg) {
  if (cfg.beat_budget == 0) fail(ErrorCode::TooManyBeats, "beat budget is zero");
  std::size_t stride = 1;
  if (beats.size() > cfg.beat_budget) stride = (beats.size() + cfg.beat_budget - 1) / cfg.beat_budget;
  if (stride > cfg.max_stride)
    fail(ErrorCode::TooManyBeats, std::to_string(beats.size()) + " beats exceed the prompt budget");
  std::vector<double> kept;
  for (std::size_t i = 0; i < beats.size(); i += stride) kept.push_back(beats[i]);
  return {kept, stride};
}

inline PromptBundle build_initial_prompt(const BeatGrid& beats, std::size_t n_drones,
                                         const std::vector<Vec3>& initial_positions,
                                         const ConstraintsEcho& constraints, const SongMeta& song,
                                         const PromptConfig& cfg = {}) {
  if (n_drones < 1) fail(ErrorCode::InvalidArgument, "need at least one drone");
  if (!beats.usable()) fail(ErrorCode::InvalidArgument, "need at least two beats");
  if (initial_positions.size() != n_drones)
    fail(ErrorCode::InvalidArgument, "one initial position per drone required");
  for (const auto& p : initial_positions)
    if (!constraints.volume.contains(p)) fail(ErrorCode::InvalidArgument, "initial position outside flight volume");

  auto [kept, stride] = decimate_beats(beats.beat_times, cfg);

  PromptBundle b;
  b.constraints_echo = constraints;
  b.beat_times = kept;
  b.decimation_stride = stride;
  b.n_drones = n_drones;
  b.initial_positions = initial_positions;
  b.resend_history = cfg.resend_history;

  b.system_text =
      "You are an expert choreographer for a swarm of small drones. You design creative, harmonic, "
      "symmetric, artistic and synchronized drone dances set to music. You answer with waypoints only "
      "in the exact JSON format requested.";

  const auto& v = constraints.volume;
  std::ostringstream u;
  u << "Song: " << (song.title.empty() ? "untitled" : song.title) << "\n";
  if (!song.mood.empty() || !song.genre.empty())
    u << "Interpret the mood (" << (song.mood.empty() ? "unspecified" : song.mood) << ") and genre ("
      << (song.genre.empty() ? "unspecified" : song.genre) << ") of the song in your choreography.\n";
  u << "Tempo: " << format_fixed(beats.tempo_bpm, 1) << " BPM.\n";
  u << "Beat timestamps in seconds (" << kept.size() << "):";
  for (double t : kept) u << ' ' << format_beat_time(t);
  u << "\n";
  if (stride > 1)
    u << "Note: the song has " << beats.size() << " beats; only every " << stride
      << "th beat is listed to fit the prompt.\n";
  u << "Number of drones: " << n_drones << ". Initial positions (x, y, z) in meters:\n";
  for (std::size_t i = 0; i < n_drones; ++i) u << "  drone " << i << ": " << detail::format_vec(initial_positions[i]) << "\n";
  u << "Constraints:\n"
    << "  flight volume x in [" << format_fixed(v.lower.x(), 2) << ", " << format_fixed(v.upper.x(), 2) << "] m, y in ["
    << format_fixed(v.lower.y(), 2) << ", " << format_fixed(v.upper.y(), 2) << "] m, z in ["
    << format_fixed(v.lower.z(), 2) << ", " << format_fixed(v.upper.z(), 2) << "] m\n"
    << "  maximum drone velocity " << format_fixed(constraints.max_speed, 1) << " m/s\n"
    << "  maximum drone acceleration " << format_fixed(constraints.max_accel, 1) << " m/s^2\n"
    << "  never place two drones closer than " << format_fixed(constraints.min_separation, 2)
    << " m at the same timestamp\n";
  u << "Change the formation of the swarm at every beat by giving each drone a unique waypoint at each "
       "beat timestamp. Make the choreography harmonic, symmetric, artistic and synchronized with the "
       "music.\n";
  u << "Output format: a single JSON object and nothing else, exactly like\n"
    << R"({"drones":[{"id":0,"waypoints":[{"t":0.50,"x":0.00,"y":0.00,"z":1.00},...]},...]})" << "\n"
    << "with one entry per drone (ids 0 to " << n_drones - 1
    << ") and one waypoint per listed beat timestamp, t in seconds and x, y, z in meters.";
  b.user_text = u.str();
  return b;
}

inline PromptBundle build_reprompt(const PromptBundle& bundle, const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) fail(ErrorCode::EmptyReprompt, "re-prompt text is empty");
  const auto last = text.find_last_not_of(" \t\r\n");
  PromptBundle out = bundle;
  out.reprompt_history.push_back(text.substr(first, last - first + 1));
  return out;
}

/// Chat transcript sent to a chat-completions endpoint.
inline std::vector<ChatMessage> chat_messages(const PromptBundle& b) {
  std::vector<ChatMessage> msgs{{"system", b.system_text}};
  if (!b.resend_history) {
    std::string user = b.user_text;
    for (const auto& r : b.reprompt_history) user += "\n\n" + r;
    msgs.push_back({"user", user});
    return msgs;
  }
  msgs.push_back({"user", b.user_text});
  for (std::size_t i = 0; i < b.reprompt_history.size(); ++i) {
    if (i < b.response_history.size()) msgs.push_back({"assistant", b.response_history[i]});
    msgs.push_back({"user", b.reprompt_history[i]});
  }
  return msgs;
}

inline std::string prompt_transcript(const PromptBundle& b) {
  std::string out;
  for (const auto& m : chat_messages(b)) out += "[" + m.role + "]\n" + m.content + "\n\n";
  return out;
}

// ---------------------------------------------------------------------------
// Response parsing

/// Byte ranges of balanced {...} / [...] spans in order of their opening
/// character, skipping over string literals.
inline std::optional<std::string_view> balanced_span(std::string_view text, std::size_t start) {
  std::vector<char> stack;
  bool in_string = false, escaped = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{' || c == '[') {
      stack.push_back(c == '{' ? '}' : ']');
    } else if (c == '}' || c == ']') {
      if (stack.empty() || stack.back() != c) return std::nullopt;
      stack.pop_back();
      if (stack.empty()) return text.substr(start, i - start + 1);
    }
  }
  return std::nullopt;
}

/// First well-formed JSON object or array embedded in free text.
inline std::optional<nlohmann::json> extract_first_json(std::string_view text) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '{' && text[i] != '[') continue;
    const auto span = balanced_span(text, i);
    if (!span) continue;
    auto j = nlohmann::json::parse(span->begin(), span->end(), nullptr, false);
    if (!j.is_discarded()) return j;
  }
  return std::nullopt;
}

struct ExpectedShape {
  std::size_t n_drones = 0;
  std::vector<double> beat_times;
  std::vector<Vec3> initial_positions;
};

inline constexpr double kBeatMatchTolerance = 1e-3;

inline WaypointScript parse_waypoint_response(std::string_view text, const ExpectedShape& expected) {
  const auto j = extract_first_json(text);
  if (!j) fail(ErrorCode::MalformedResponse, "no JSON object found in response");

  WaypointScript s;
  s.drones = drones_from_json(*j);
  if (s.drones.size() != expected.n_drones)
    fail(ErrorCode::DroneCountMismatch, "expected " + std::to_string(expected.n_drones) + " drones, got " +
                                            std::to_string(s.drones.size()));
  for (auto& d : s.drones) {
    if (d.waypoints.size() != expected.beat_times.size())
      fail(ErrorCode::MissingBeats, "drone " + std::to_string(d.id) + " has " + std::to_string(d.waypoints.size()) +
                                        " waypoints for " + std::to_string(expected.beat_times.size()) + " beats");
    for (std::size_t b = 0; b < expected.beat_times.size(); ++b) {
      if (std::abs(d.waypoints[b].t - expected.beat_times[b]) > kBeatMatchTolerance)
        fail(ErrorCode::MissingBeats, "drone " + std::to_string(d.id) + " misses beat at t=" +
                                          format_beat_time(expected.beat_times[b]));
      d.waypoints[b].t = expected.beat_times[b];
    }
  }
  s.beat_times = expected.beat_times;
  s.initial_positions = expected.initial_positions.size() == s.drones.size()
                            ? expected.initial_positions
                            : std::vector<Vec3>(s.drones.size(), Vec3::Zero());
  if (expected.initial_positions.size() != s.drones.size())
    for (std::size_t i = 0; i < s.drones.size(); ++i) s.initial_positions[i] = s.drones[i].waypoints.front().position;
  return s;
}

inline ExpectedShape expected_shape(const PromptBundle& b) {
  return {b.n_drones, b.beat_times, b.initial_positions};
}

// ---------------------------------------------------------------------------
// Procedural choreography

enum class Formation { circle, grid, line, helix, vee };

inline constexpr Formation kFormationCycle[] = {Formation::circle, Formation::grid, Formation::line,
                                                Formation::helix, Formation::vee};

enum class ProceduralStyle { standard, fast, adversarial };

inline std::string_view to_string(ProceduralStyle s) {
  switch (s) {
    case ProceduralStyle::standard: return "standard";
    case ProceduralStyle::fast: return "fast";
    case ProceduralStyle::adversarial: return "adversarial";
  }
  return "standard";
}

inline ProceduralStyle procedural_style_from_string(std::string_view s) {
  if (s == "standard") return ProceduralStyle::standard;
  if (s == "fast") return ProceduralStyle::fast;
  if (s == "adversarial") return ProceduralStyle::adversarial;
  fail(ErrorCode::InvalidArgument, "unknown procedural style '" + std::string(s) + "'");
}

struct ProceduralOptions {
  ProceduralStyle style = ProceduralStyle::standard;
  /// Use only this formation instead of cycling through the library.
  std::optional<Formation> only;
  FlightVolume volume;
  double min_separation = 0.5;
  /// Extra altitude added to every formation (clamped to the volume).
  double altitude_offset = 0.0;
};

namespace detail {

/// Slot positions of a formation in a unit frame centred on the volume,
/// rotated by `phase` about z. `scale` in (0, 1] shrinks the footprint.
inline std::vector<Vec3> formation_slots(Formation f, std::size_t n, double phase, double scale,
                                         const FlightVolume& vol, double altitude_offset) {
  const Vec3 centre = 0.5 * (vol.lower + vol.upper);
  const double half_xy = 0.5 * std::min(vol.upper.x() - vol.lower.x(), vol.upper.y() - vol.lower.y()) - 0.15;
  const double z_lo = vol.lower.z() + 0.2, z_hi = vol.upper.z() - 0.2;
  const double z_mid = std::clamp(centre.z() + altitude_offset, z_lo, z_hi);
  const double radius = scale * half_xy;
  const double c = std::cos(phase), s = std::sin(phase);
  auto place = [&](double x, double y, double z) {
    const Vec3 p(centre.x() + c * x - s * y, centre.y() + s * x + c * y, std::clamp(z + altitude_offset, z_lo, z_hi));
    return vol.clamp(p);
  };

  std::vector<Vec3> out;
  out.reserve(n);
  const double dn = static_cast<double>(n);
  switch (f) {
    case Formation::circle:
      for (std::size_t i = 0; i < n; ++i) {
        const double a = 2.0 * M_PI * static_cast<double>(i) / dn;
        out.push_back(place(radius * std::cos(a), radius * std::sin(a), z_mid - altitude_offset));
      }
      break;
    case Formation::grid: {
      const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(dn)));
      const std::size_t rows = (n + cols - 1) / cols;
      const double pitch = cols > 1 ? std::min(0.8, 2.0 * radius / static_cast<double>(cols - 1)) : 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double x = (static_cast<double>(i % cols) - 0.5 * static_cast<double>(cols - 1)) * pitch;
        const double y = (static_cast<double>(i / cols) - 0.5 * static_cast<double>(rows - 1)) * pitch;
        out.push_back(place(x, y, z_mid - altitude_offset));
      }
      break;
    }
    case Formation::line:
      // Zig-zag in altitude keeps neighbours apart on a short line.
      for (std::size_t i = 0; i < n; ++i) {
        const double u = n > 1 ? static_cast<double>(i) / (dn - 1.0) : 0.5;
        const double z = z_mid - altitude_offset + ((i % 2) ? 0.3 : -0.3);
        out.push_back(place(-radius + 2.0 * radius * u, 0.0, z));
      }
      break;
    case Formation::helix:
      for (std::size_t i = 0; i < n; ++i) {
        const double u = n > 1 ? static_cast<double>(i) / (dn - 1.0) : 0.5;
        const double a = 1.5 * M_PI * u;
        out.push_back(place(0.8 * radius * std::cos(a), 0.8 * radius * std::sin(a), z_lo + u * (z_hi - z_lo)));
      }
      break;
    case Formation::vee: {
      const double arm = 35.0 * M_PI / 180.0;
      const double pitch = n > 1 ? std::min(0.6, 2.0 * radius / std::ceil(dn / 2.0)) : 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = pitch * std::ceil(static_cast<double>(i) / 2.0);
        const double side = (i % 2) ? -1.0 : 1.0;
        const double x = side * d * std::sin(arm);
        const double y = radius * 0.6 - d * std::cos(arm);
        out.push_back(place(x, y, z_mid - altitude_offset + 0.1 * d));
      }
      break;
    }
  }
  return out;
}

/// Greedy matching: repeatedly pairs the closest remaining drone and slot.
inline std::vector<std::size_t> nearest_assignment(const std::vector<Vec3>& from, const std::vector<Vec3>& slots) {
  const std::size_t n = from.size();
  std::vector<std::size_t> out(n, 0);
  std::vector<bool> drone_done(n, false), slot_done(n, false);
  for (std::size_t round = 0; round < n; ++round) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (drone_done[i]) continue;
      for (std::size_t k = 0; k < n; ++k) {
        if (slot_done[k]) continue;
        const double d = (from[i] - slots[k]).squaredNorm();
        if (d < best) best = d, bi = i, bs = k;
      }
    }
    out[bi] = bs;
    drone_done[bi] = slot_done[bs] = true;
  }
  return out;
}

inline std::vector<std::size_t> identity_assignment(std::size_t n) {
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

}  // namespace detail

/// Deterministic offline choreography. Formations cycle through the library
/// and rotate from beat to beat. The standard style holds each formation for
/// four beats; the fast style switches and spins on every beat and breathes
/// between a wide and a narrow footprint. The adversarial style also drops pairs of drones on top of each
/// other at random beats.
inline WaypointScript procedural_generate(const std::vector<double>& beat_times, std::size_t n_drones,
                                          std::uint64_t seed, const ProceduralOptions& opt,
                                          const std::vector<Vec3>& initial_positions = {}) {
  if (n_drones < 1) fail(ErrorCode::InvalidArgument, "need at least one drone");
  if (beat_times.size() < 2) fail(ErrorCode::InvalidArgument, "need at least two beats");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double phase0 = 2.0 * M_PI * unit(rng);

  const bool fast = opt.style == ProceduralStyle::fast;
  const double spin = fast ? M_PI / 3.0 : M_PI / 16.0;
  const std::size_t hold = fast ? 1 : 4;

  WaypointScript s;
  s.beat_times = beat_times;
  s.initial_positions = initial_positions.size() == n_drones ? initial_positions
                                                             : default_initial_positions(n_drones, opt.volume);
  s.drones.resize(n_drones);
  for (std::size_t i = 0; i < n_drones; ++i) s.drones[i].id = static_cast<int>(i);

  const auto n_forms = std::size(kFormationCycle);
  const auto start_form = static_cast<std::size_t>(unit(rng) * static_cast<double>(n_forms)) % n_forms;
  std::vector<Vec3> prev = s.initial_positions;
  for (std::size_t b = 0; b < beat_times.size(); ++b) {
    const std::size_t block = b / hold;
    const Formation f = opt.only ? *opt.only : kFormationCycle[(start_form + block) % n_forms];
    const double phase = phase0 + spin * static_cast<double>(b);
    const double scale = fast ? ((b % 2 == 0) ? 1.0 : 0.55) : ((block % 2 == 0) ? 0.75 : 0.65);
    const auto slots = detail::formation_slots(f, n_drones, phase, scale, opt.volume, opt.altitude_offset);
    // The fast style keeps slot i for drone i, so drones cross the formation;
    // otherwise each drone takes the nearest free slot.
    const auto assign = fast ? detail::identity_assignment(n_drones) : detail::nearest_assignment(prev, slots);
    for (std::size_t i = 0; i < n_drones; ++i) {
      s.drones[i].waypoints.push_back({beat_times[b], slots[assign[i]]});
      prev[i] = slots[assign[i]];
    }
  }

  if (opt.style == ProceduralStyle::adversarial && n_drones >= 2) {
    std::uniform_int_distribution<std::size_t> pick(0, n_drones - 1);
    std::uniform_int_distribution<std::size_t> beat_pick(0, beat_times.size() - 1);
    const std::size_t guaranteed = beat_pick(rng);
    for (std::size_t b = 0; b < beat_times.size(); ++b) {
      if (b != guaranteed && unit(rng) > 0.3) continue;
      const std::size_t i = pick(rng);
      std::size_t j = pick(rng);
      if (j == i) j = (i + 1) % n_drones;
      const double r = 0.2 * opt.min_separation * unit(rng);
      const double a = 2.0 * M_PI * unit(rng);
      const Vec3 offset(r * std::cos(a), r * std::sin(a), 0.0);
      s.drones[j].waypoints[b].position = opt.volume.clamp(s.drones[i].waypoints[b].position + offset);
    }
  }
  return s;
}

/// Text a model might answer with: prose around a fenced JSON block.
inline std::string procedural_response_text(const WaypointScript& s) {
  return "Here is a choreography synchronized to the beats:\n```json\n" + script_to_string(s) +
         "\n```\nEach drone changes position on every beat.";
}

}  // namespace swarmchor

#endif  // SWARMCHOR_CHOREOGRAPHY_HPP
