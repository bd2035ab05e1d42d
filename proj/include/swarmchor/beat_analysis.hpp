#ifndef SWARMCHOR_BEAT_ANALYSIS_HPP
#define SWARMCHOR_BEAT_ANALYSIS_HPP

#include "swarmchor/core.hpp"
#include "swarmchor/wav.hpp"

#include <nlohmann/json.hpp>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <complex>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

namespace swarmchor {

enum class BeatSource { analyzed, loaded };

inline std::string_view to_string(BeatSource s) { return s == BeatSource::analyzed ? "analyzed" : "loaded"; }

struct BeatGrid {
  std::vector<double> beat_times;
  double tempo_bpm = 120.0;
  BeatSource source = BeatSource::analyzed;

  std::size_t size() const { return beat_times.size(); }
  bool usable() const { return beat_times.size() >= 2; }
};

struct BeatAnalysisConfig {
  int frame = 2048;
  int hop = 512;
  double min_bpm = 30.0;
  double max_bpm = 300.0;
  double prior_bpm = 120.0;
  /// Standard deviation of the tempo prior, in octaves.
  double prior_octaves = 1.0;
  /// Weight of the squared-log interval penalty in beat tracking.
  double tightness = 100.0;
};

/// Onset strength per hop. Frame n spans samples [n*hop, n*hop + frame) and is
/// timestamped at the centre of its middle hop interval.
struct OnsetEnvelope {
  std::vector<double> strength;
  double hop_seconds = 0.0;
  double offset_seconds = 0.0;
  double duration = 0.0;

  double time_of(std::size_t n) const { return offset_seconds + static_cast<double>(n) * hop_seconds; }
};

/// Half-wave-rectified spectral flux of the Hann-windowed magnitude spectrum.
/// The spectrum preceding frame 0 is taken as all zeros.
inline OnsetEnvelope compute_onset_envelope(const AudioClip& clip, int frame, int hop) {
  if (hop <= 0 || frame < hop) fail(ErrorCode::InvalidArgument, "require frame >= hop > 0");
  clip.validate();
  if (clip.samples.size() < static_cast<std::size_t>(frame))
    fail(ErrorCode::EmptyAudio, "clip shorter than one analysis frame");

  const std::size_t n_samples = clip.samples.size();
  const std::size_t n_frames = (n_samples + hop - 1) / hop;
  const std::size_t n_bins = static_cast<std::size_t>(frame) / 2 + 1;

  std::vector<double> window(frame);
  for (int i = 0; i < frame; ++i) window[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / frame));

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(frame);
  std::vector<std::complex<double>> spectrum;
  std::vector<double> prev(n_bins, 0.0), mag(n_bins);

  OnsetEnvelope env;
  env.strength.resize(n_frames);
  env.hop_seconds = static_cast<double>(hop) / clip.sample_rate;
  env.offset_seconds = (frame / 2.0 + hop / 2.0) / clip.sample_rate;
  env.duration = clip.duration();

  for (std::size_t n = 0; n < n_frames; ++n) {
    const std::size_t start = n * hop;
    for (int i = 0; i < frame; ++i) {
      const std::size_t at = start + i;
      buf[i] = at < n_samples ? clip.samples[at] * window[i] : 0.0;
    }
    fft.fwd(spectrum, buf);
    double flux = 0.0;
    for (std::size_t b = 0; b < n_bins; ++b) {
      mag[b] = std::abs(spectrum[b]);
      flux += std::max(0.0, mag[b] - prev[b]);
    }
    env.strength[n] = flux;
    std::swap(prev, mag);
  }
  return env;
}

namespace detail {

inline double lerp_at(const std::vector<double>& x, double pos) {
  if (pos < 0.0) return 0.0;
  const auto i = static_cast<std::size_t>(pos);
  if (i + 1 >= x.size()) return i < x.size() && pos == static_cast<double>(i) ? x[i] : 0.0;
  const double f = pos - static_cast<double>(i);
  return (1.0 - f) * x[i] + f * x[i + 1];
}

inline std::vector<double> gaussian_smooth(const std::vector<double>& x, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double norm = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t n = 0; n < x.size(); ++n) {
    double acc = 0.0;
    for (int i = -radius; i <= radius; ++i) {
      const long long at = static_cast<long long>(n) + i;
      if (at >= 0 && at < static_cast<long long>(x.size())) acc += kernel[i + radius] * x[at];
    }
    out[n] = acc / norm;
  }
  return out;
}

}  // namespace detail

/// Tempo maximizing the prior-weighted onset autocorrelation over lags in
/// [min_bpm, max_bpm]. Periodicity also present at half the lag counts
/// against a candidate, which keeps fast click trains from folding onto
/// their half tempo. Ties resolve to the smaller BPM. The winning integer lag
/// is refined to a fractional period from the autocorrelation peaks at its
/// multiples.
inline double estimate_tempo(const OnsetEnvelope& env, const BeatAnalysisConfig& cfg = {}) {
  const auto& raw = env.strength;
  if (env.hop_seconds <= 0.0) fail(ErrorCode::InvalidArgument, "hop must be positive");
  if (static_cast<double>(raw.size()) * env.hop_seconds < 2.0)
    fail(ErrorCode::InsufficientAudio, "need at least 2 s of onset envelope");
  if (*std::max_element(raw.begin(), raw.end()) <= 0.0)
    fail(ErrorCode::InsufficientAudio, "onset envelope is identically zero");

  auto x = detail::gaussian_smooth(raw, 1.0);
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  for (double& v : x) v -= mean;

  const auto n = static_cast<long long>(x.size());
  const long long max_lag = n / 2;
  std::vector<double> ac(static_cast<std::size_t>(max_lag + 1), 0.0);
  for (long long lag = 0; lag <= max_lag; ++lag) {
    double acc = 0.0;
    for (long long i = 0; i + lag < n; ++i) acc += x[i] * x[i + lag];
    ac[lag] = acc / static_cast<double>(n - lag);
  }

  const auto lag_min = static_cast<long long>(std::ceil(60.0 / (cfg.max_bpm * env.hop_seconds)));
  const auto lag_max = std::min(static_cast<long long>(std::floor(60.0 / (cfg.min_bpm * env.hop_seconds))), max_lag);
  if (lag_max <= lag_min) fail(ErrorCode::InsufficientAudio, "envelope too short for tempo range");

  double best_score = 0.0;
  long long best_lag = -1;
  // Descending lag order means ascending BPM, so strict '>' keeps the smaller BPM on ties.
  for (long long lag = lag_max; lag >= lag_min; --lag) {
    const double bpm = 60.0 / (static_cast<double>(lag) * env.hop_seconds);
    const double z = std::log2(bpm / cfg.prior_bpm) / cfg.prior_octaves;
    const double prior = std::exp(-0.5 * z * z);
    const double salience = std::max(0.0, ac[lag] - 0.5 * detail::lerp_at(ac, lag / 2.0));
    const double score = prior * salience;
    if (score > best_score) {
      best_score = score;
      best_lag = lag;
    }
  }
  if (best_lag < 0) fail(ErrorCode::InsufficientAudio, "no periodicity found in onset envelope");

  // Least-squares period through the parabolic peaks near each multiple.
  double num = 0.0, den = 0.0;
  for (long long m = 1; m * best_lag + 1 < max_lag; ++m) {
    const long long centre = m * best_lag;
    const long long reach = m / 2 + 1;
    long long peak = centre;
    for (long long l = std::max<long long>(1, centre - reach); l <= std::min(max_lag - 1, centre + reach); ++l)
      if (ac[l] > ac[peak]) peak = l;
    if (peak <= 0 || peak >= max_lag || ac[peak] <= 0.0) break;
    const double a = ac[peak - 1], b = ac[peak], c = ac[peak + 1];
    const double curv = a - 2.0 * b + c;
    const double offset = curv < 0.0 ? std::clamp(0.5 * (a - c) / curv, -0.5, 0.5) : 0.0;
    const double pos = static_cast<double>(peak) + offset;
    num += static_cast<double>(m) * pos;
    den += static_cast<double>(m * m);
  }
  const double period = den > 0.0 ? num / den : static_cast<double>(best_lag);
  return std::clamp(60.0 / (period * env.hop_seconds), cfg.min_bpm, cfg.max_bpm);
}

/// Dynamic-programming beat tracker: maximizes summed onset strength at the
/// beats minus tightness * log(interval / period)^2 per interval.
inline BeatGrid track_beats(const OnsetEnvelope& env, double tempo_bpm, const BeatAnalysisConfig& cfg = {}) {
  if (!(tempo_bpm >= cfg.min_bpm && tempo_bpm <= cfg.max_bpm))
    fail(ErrorCode::InvalidArgument, "tempo outside the supported range");
  if (env.hop_seconds <= 0.0) fail(ErrorCode::InvalidArgument, "hop must be positive");

  BeatGrid grid;
  grid.tempo_bpm = tempo_bpm;
  grid.source = BeatSource::analyzed;

  const auto& raw = env.strength;
  const std::size_t n = raw.size();
  if (n == 0) fail(ErrorCode::InsufficientAudio, "empty onset envelope");

  const double mean = std::accumulate(raw.begin(), raw.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : raw) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));
  if (!(sd > 0.0) || *std::max_element(raw.begin(), raw.end()) <= 0.0) return grid;  // silence

  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) score[i] = raw[i] / sd;

  const double period = 60.0 / (tempo_bpm * env.hop_seconds);
  const auto lo = static_cast<long long>(std::round(period / 2.0));
  const auto hi = static_cast<long long>(std::round(2.0 * period));

  std::vector<double> cum(n);
  std::vector<long long> back(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    long long arg = -1;
    for (long long gap = std::max<long long>(lo, 1); gap <= hi; ++gap) {
      const long long j = static_cast<long long>(i) - gap;
      if (j < 0) break;
      const double l = std::log(static_cast<double>(gap) / period);
      const double cand = cum[j] - cfg.tightness * l * l;
      if (cand > best) {
        best = cand;
        arg = j;
      }
    }
    cum[i] = score[i] + (arg >= 0 ? std::max(best, 0.0) : 0.0);
    back[i] = (arg >= 0 && best > 0.0) ? arg : -1;
  }

  // Final beat: best cumulative score among local maxima in the last period.
  const auto tail = static_cast<std::size_t>(std::max<long long>(0, static_cast<long long>(n) - hi));
  std::size_t last = tail;
  for (std::size_t i = tail; i < n; ++i)
    if (cum[i] > cum[last]) last = i;

  std::vector<std::size_t> frames;
  for (long long i = static_cast<long long>(last); i >= 0; i = back[i]) frames.push_back(static_cast<std::size_t>(i));
  std::reverse(frames.begin(), frames.end());

  // Drop weak beats at either end (silent lead-in or tail).
  double rms = 0.0;
  for (auto f : frames) rms += score[f] * score[f];
  rms = std::sqrt(rms / static_cast<double>(frames.size()));
  const double keep = 0.5 * rms;
  std::size_t a = 0, b = frames.size();
  while (a < b && score[frames[a]] < keep) ++a;
  while (b > a && score[frames[b - 1]] < keep) --b;

  for (std::size_t k = a; k < b; ++k) {
    const double t = std::min(env.time_of(frames[k]), env.duration);
    if (grid.beat_times.empty() || t > grid.beat_times.back()) grid.beat_times.push_back(t);
  }
  return grid;
}

inline double median_interval(const std::vector<double>& times) {
  std::vector<double> d;
  for (std::size_t i = 1; i < times.size(); ++i) d.push_back(times[i] - times[i - 1]);
  if (d.empty()) return 0.0;
  std::nth_element(d.begin(), d.begin() + static_cast<long>(d.size() / 2), d.end());
  double m = d[d.size() / 2];
  if (d.size() % 2 == 0) {
    const double lower = *std::max_element(d.begin(), d.begin() + static_cast<long>(d.size() / 2));
    m = 0.5 * (m + lower);
  }
  return m;
}

/// Parses a beat file: either a JSON array of seconds or
/// {"beats": [...], "tempo_bpm": 120.0}. Tempo falls back to the median interval.
inline BeatGrid parse_beat_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("beat file: ") + e.what());
  }
  const nlohmann::json* arr = nullptr;
  std::optional<double> tempo;
  if (j.is_array()) {
    arr = &j;
  } else if (j.is_object() && j.contains("beats") && j["beats"].is_array()) {
    arr = &j["beats"];
    if (j.contains("tempo_bpm")) {
      if (!j["tempo_bpm"].is_number()) fail(ErrorCode::ParseError, "tempo_bpm must be a number");
      tempo = j["tempo_bpm"].get<double>();
    }
  } else {
    fail(ErrorCode::ParseError, "beat file must be an array or an object with a 'beats' array");
  }

  BeatGrid grid;
  grid.source = BeatSource::loaded;
  for (const auto& v : *arr) {
    if (!v.is_number()) fail(ErrorCode::ParseError, "beat times must be numbers");
    const double t = v.get<double>();
    if (!std::isfinite(t) || t < 0.0) fail(ErrorCode::ParseError, "beat times must be finite and non-negative");
    if (!grid.beat_times.empty() && !(t > grid.beat_times.back()))
      fail(ErrorCode::NonMonotonicBeats, "beat times must be strictly increasing");
    grid.beat_times.push_back(t);
  }
  if (tempo) {
    grid.tempo_bpm = *tempo;
  } else if (grid.beat_times.size() >= 2) {
    grid.tempo_bpm = 60.0 / median_interval(grid.beat_times);
  }
  if (!(grid.tempo_bpm >= 30.0 && grid.tempo_bpm <= 300.0))
    fail(ErrorCode::ParseError, "tempo outside [30, 300] BPM");
  return grid;
}

inline BeatGrid load_beat_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open beat file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_beat_json(ss.str());
}

inline std::string beat_grid_json(const BeatGrid& grid) {
  nlohmann::json j;
  j["beats"] = grid.beat_times;
  j["tempo_bpm"] = grid.tempo_bpm;
  j["source"] = std::string(to_string(grid.source));
  return j.dump();
}

/// Full audio path: onset envelope, tempo, then beat tracking.
inline BeatGrid analyze_audio(const AudioClip& clip, const BeatAnalysisConfig& cfg = {}) {
  const auto env = compute_onset_envelope(clip, cfg.frame, cfg.hop);
  const double tempo = estimate_tempo(env, cfg);
  return track_beats(env, tempo, cfg);
}

/// Loads beats from a WAV (analyzed) or a JSON beat file (loaded), by extension.
inline BeatGrid beats_from_file(const std::filesystem::path& path, const BeatAnalysisConfig& cfg = {}) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".wav") return analyze_audio(read_wav(path), cfg);
  return load_beat_file(path);
}

}  // namespace swarmchor

#endif  // SWARMCHOR_BEAT_ANALYSIS_HPP
