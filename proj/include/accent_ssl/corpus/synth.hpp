#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "accent_ssl/errors.hpp"
#include "accent_ssl/numerics/rng.hpp"

namespace accent_ssl::corpus {

inline constexpr int kSampleRate = 8000;
inline constexpr std::size_t kTokenSamples = 640;  // 80 ms at 8 kHz
inline constexpr int kUnknownAccent = -1;

// Sixteen letter symbols plus the word separator.
inline constexpr std::string_view kAlphabet = "abcdefghijklmnop";
inline constexpr char kSpace = ' ';
inline constexpr std::size_t kNumSymbols = kAlphabet.size() + 1;

inline bool is_symbol(char c) { return c == kSpace || kAlphabet.find(c) != std::string_view::npos; }

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;
};

// Token-to-sound mapping shared by all accents: symbol i sits on a 4x4 grid
// of two formants, each axis a geometric ladder with ratio kGridRatio.
inline constexpr double kGridRatio = 1.4;
inline constexpr double kFormant1Base = 250.0;
inline constexpr double kFormant2Base = 1100.0;

struct TokenFormants {
  double f1 = 0.0;
  double f2 = 0.0;
};

inline TokenFormants base_formants(char symbol) {
  const auto i = kAlphabet.find(symbol);
  if (i == std::string_view::npos)
    throw ValidationError(std::string("symbol '") + symbol + "' has no formants");
  return {kFormant1Base * std::pow(kGridRatio, static_cast<double>(i % 4)),
          kFormant2Base * std::pow(kGridRatio, static_cast<double>(i / 4))};
}

struct AccentProfile {
  int accent_id = 0;
  std::array<TokenFormants, 16> base{};  // per-token base frequencies
  double formant_shift = 1.0;            // multiplies every frequency
  double envelope_exponent = 1.0;        // burst window is sin(pi t)^exponent
  double noise_level = 0.0;              // stddev of additive Gaussian noise
};

// Position of accent a on the formant ladder, in grid steps. The sequence
// interleaves above/below the reference so consecutive ids stay distinct.
inline double accent_shift_steps(int accent_id) {
  static constexpr std::array<double, 8> kSteps{0.0, 0.5, -0.5, 0.25, -0.25, 0.75, -0.75, 0.125};
  if (accent_id < 0) throw ValidationError("accent profile needs a non-negative accent id");
  if (static_cast<std::size_t>(accent_id) < kSteps.size()) return kSteps[accent_id];
  return 0.0625 * static_cast<double>(accent_id - 7) * ((accent_id % 2) ? 1.0 : -1.0);
}

// profile_distance scales how far apart accents sit on the formant ladder.
inline AccentProfile make_profile(int accent_id, std::uint64_t global_seed, double profile_distance = 1.0) {
  static constexpr std::array<double, 5> kEnvelopes{1.0, 2.0, 0.6, 1.5, 0.8};
  Rng rng(derive_seed(global_seed, "accent_profile", static_cast<std::uint64_t>(accent_id)));
  AccentProfile p;
  p.accent_id = accent_id;
  for (std::size_t i = 0; i < p.base.size(); ++i) p.base[i] = base_formants(kAlphabet[i]);
  p.formant_shift = std::pow(kGridRatio, profile_distance * accent_shift_steps(accent_id));
  p.envelope_exponent = kEnvelopes[static_cast<std::size_t>(accent_id) % kEnvelopes.size()] + rng.uniform(-0.05, 0.05);
  p.noise_level = 0.01 + 0.01 * static_cast<double>(accent_id % 4) + rng.uniform(0.0, 0.004);
  return p;
}

struct SynthOptions {
  double speaker_jitter = 0.005;  // stddev of the per-utterance pitch factor
  bool random_phase = false;      // seeded start phase per burst component
};

using BurstPhases = std::array<double, 3>;

// Noise-free burst for one symbol at a given global pitch factor.
inline void render_clean_token(const AccentProfile& profile, char symbol, double pitch, double* out,
                               const BurstPhases& phase = {}) {
  if (symbol == kSpace) {
    for (std::size_t n = 0; n < kTokenSamples; ++n) out[n] = 0.0;
    return;
  }
  const auto idx = kAlphabet.find(symbol);
  const TokenFormants f = profile.base[idx];
  const double k = 2.0 * std::numbers::pi * profile.formant_shift * pitch / kSampleRate;
  for (std::size_t n = 0; n < kTokenSamples; ++n) {
    const double t = static_cast<double>(n);
    const double window =
        std::pow(std::sin(std::numbers::pi * (t + 0.5) / static_cast<double>(kTokenSamples)),
                 profile.envelope_exponent);
    out[n] = window * (0.45 * std::sin(k * f.f1 * t + phase[0]) + 0.3 * std::sin(k * f.f2 * t + phase[1]) +
                       0.15 * std::sin(k * 2.0 * f.f1 * t + phase[2]));
  }
}

// Each symbol becomes a fixed-duration harmonic burst; the utterance gets
// one seeded pitch factor and seeded additive noise. Draw order from the
// seed: pitch, then three phases per non-space symbol when random_phase is
// set, then noise. Samples are clipped to [-1, 1].
inline Waveform synth_utterance(std::string_view transcript, const AccentProfile& profile,
                                std::uint64_t seed, const SynthOptions& opts = {}) {
  for (char c : transcript)
    if (!is_symbol(c)) throw ValidationError(std::string("unknown token '") + c + "' in transcript");
  if (transcript.empty()) throw ValidationError("cannot synthesize an empty transcript");
  Rng rng(seed);
  const double pitch = opts.speaker_jitter > 0.0 ? 1.0 + rng.normal(0.0, opts.speaker_jitter) : 1.0;
  Waveform w;
  w.samples.resize(transcript.size() * kTokenSamples);
  for (std::size_t i = 0; i < transcript.size(); ++i) {
    BurstPhases phase{};
    if (opts.random_phase && transcript[i] != kSpace)
      for (auto& ph : phase) ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
    render_clean_token(profile, transcript[i], pitch, w.samples.data() + i * kTokenSamples, phase);
  }
  if (profile.noise_level > 0.0)
    for (auto& s : w.samples) s += rng.normal(0.0, profile.noise_level);
  for (auto& s : w.samples) s = std::clamp(s, -1.0, 1.0);
  return w;
}

}  // namespace accent_ssl::corpus
