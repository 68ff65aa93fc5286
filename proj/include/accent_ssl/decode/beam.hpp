#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "accent_ssl/config.hpp"
#include "accent_ssl/decode/ctc_prefix.hpp"
#include "accent_ssl/model/model.hpp"

namespace accent_ssl::decode {

struct DecodeConfig {
  std::size_t beam = 8;
  double ctc_weight = 0.3;       // lambda
  double max_len_ratio = 0.5;    // max output tokens per encoder frame
  std::size_t max_len = 0;       // explicit cap; 0 derives it from the ratio
  double length_penalty = 0.0;   // added per emitted token

  void validate() const {
    if (beam < 1) throw ConfigError("beam width must be >= 1");
    if (ctc_weight < 0.0 || ctc_weight > 1.0) throw ConfigError("decode ctc_weight must lie in [0,1]");
    if (max_len_ratio <= 0.0 && max_len == 0) throw ConfigError("max_len_ratio must be > 0");
  }

  std::size_t max_len_for(std::size_t frames) const {
    if (max_len > 0) return max_len;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(max_len_ratio * static_cast<double>(frames))));
  }

  static DecodeConfig from(const KeyValueConfig& c) {
    DecodeConfig d;
    d.beam = static_cast<std::size_t>(c.get_int("decode.beam", static_cast<long long>(d.beam)));
    d.ctc_weight = c.get_double("decode.ctc_weight", d.ctc_weight);
    d.max_len_ratio = c.get_double("decode.max_len_ratio", d.max_len_ratio);
    d.max_len = static_cast<std::size_t>(c.get_int("decode.max_len", 0));
    d.length_penalty = c.get_double("decode.length_penalty", d.length_penalty);
    d.validate();
    return d;
  }
};

// Everything the search needs from one accent's encoder pass.
struct AccentScorer {
  int accent = 0;
  Tensor<double> ctc_logprobs;  // T x K, blank at 0
  // Log-probabilities over K for the token after `prefix` (prefix starts with SOS).
  std::function<std::vector<double>(const std::vector<std::size_t>& prefix)> next_logprobs;
};

struct Hypothesis {
  std::vector<std::size_t> tokens;  // emitted tokens, without SOS/EOS
  int accent = 0;
  double att = 0.0;                 // cumulative attention log-probability
  CtcPrefixState ctc;
  double ctc_score = 0.0;           // prefix (or final, once ended) CTC log-probability
  double score = 0.0;
  bool ended = false;
};

struct DecodeResult {
  std::vector<std::size_t> tokens;
  int accent = 0;
  double score = -std::numeric_limits<double>::infinity();
  double ctc_score = 0.0;
  double att_score = 0.0;
  std::vector<std::string> warnings;
};

inline double combine_scores(double ctc, double att, double lambda) {
  if (lambda == 0.0) return att;
  if (lambda == 1.0) return ctc;
  return lambda * ctc + (1.0 - lambda) * att;
}

// Ranking: higher score, then lower accent, then lexicographic tokens.
inline bool ranks_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.accent != b.accent) return a.accent < b.accent;
  if (a.tokens != b.tokens) return a.tokens < b.tokens;
  return a.ended && !b.ended;
}

// Joint beam search over every scorer in one shared beam. Each hypothesis
// keeps the accent it started with. `eos` doubles as SOS.
inline DecodeResult beam_search(const std::vector<AccentScorer>& scorers, const DecodeConfig& cfg, std::size_t eos) {
  cfg.validate();
  if (scorers.empty()) throw ConfigError("beam search needs at least one accent");
  DecodeResult result;
  if (cfg.beam < scorers.size())
    result.warnings.push_back("beam width " + std::to_string(cfg.beam) + " is below the accent count " +
                              std::to_string(scorers.size()));
  const std::size_t K = scorers.front().ctc_logprobs.cols();
  const std::size_t max_len = cfg.max_len_for(scorers.front().ctc_logprobs.rows());
  std::vector<CtcPrefixScorer> ctc;
  for (const auto& s : scorers) ctc.emplace_back(s.ctc_logprobs);

  std::vector<Hypothesis> active;
  for (std::size_t i = 0; i < scorers.size(); ++i) {
    Hypothesis h;
    h.accent = scorers[i].accent;
    h.ctc = ctc[i].initial();
    active.push_back(std::move(h));
  }
  auto slot = [&](int accent) {
    for (std::size_t i = 0; i < scorers.size(); ++i)
      if (scorers[i].accent == accent) return i;
    throw ContractError("unknown accent in beam");
  };

  std::optional<Hypothesis> best;
  for (std::size_t step = 0; step <= max_len && !active.empty(); ++step) {
    std::vector<Hypothesis> cand;
    for (const auto& h : active) {
      const std::size_t si = slot(h.accent);
      std::vector<std::size_t> prefix{eos};
      prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
      const std::vector<double> att = scorers[si].next_logprobs(prefix);
      const double pen = cfg.length_penalty * static_cast<double>(h.tokens.size());
      {
        Hypothesis e = h;
        e.ended = true;
        e.att = h.att + att[eos];
        e.ctc_score = CtcPrefixScorer::final_score(h.ctc);
        e.score = combine_scores(e.ctc_score, e.att, cfg.ctc_weight) + pen;
        cand.push_back(std::move(e));
      }
      if (step == max_len) continue;
      for (std::size_t c = 1; c < K; ++c) {
        if (c == eos) continue;
        Hypothesis n;
        n.tokens = h.tokens;
        n.tokens.push_back(c);
        n.accent = h.accent;
        n.att = h.att + att[c];
        n.ctc = ctc[si].extend(h.ctc, c);
        n.ctc_score = n.ctc.psi;
        n.score = combine_scores(n.ctc_score, n.att, cfg.ctc_weight) + pen + cfg.length_penalty;
        cand.push_back(std::move(n));
      }
    }
    std::sort(cand.begin(), cand.end(), ranks_before);
    if (cand.size() > cfg.beam) cand.resize(cfg.beam);
    active.clear();
    for (auto& h : cand) {
      if (h.ended) {
        if (!best || ranks_before(h, *best)) best = std::move(h);
      } else {
        active.push_back(std::move(h));
      }
    }
    // Without a length bonus, extending a hypothesis never raises its score,
    // so nothing still active can overtake a strictly better finished one.
    if (best && cfg.length_penalty <= 0.0 && !active.empty() && best->score > active.front().score) break;
  }
  if (best) {
    result.tokens = best->tokens;
    result.accent = best->accent;
    result.score = best->score;
    result.ctc_score = best->ctc_score;
    result.att_score = best->att;
  } else {
    result.accent = scorers.front().accent;
  }
  return result;
}

// ---- model adapters ----

template <class S>
AccentScorer make_scorer(model::Model<S>& m, const Var<S>& frames, int accent) {
  Tape<S>& tape = *frames.tape;
  const auto enc = m.encode(tape, frames, accent);
  AccentScorer s;
  s.accent = accent;
  s.ctc_logprobs = ops::log_softmax_rows(m.ctc_logits(tape, enc.final)).value().template cast<double>();
  const Tensor<S> memory = enc.final.value();
  s.next_logprobs = [&m, memory](const std::vector<std::size_t>& prefix) {
    Tape<S> t(false);
    const Tensor<S> lp = ops::log_softmax_rows(m.decoder_logits(t, t.constant(memory), prefix)).value();
    auto row = lp.row(lp.rows() - 1);
    return std::vector<double>(row.begin(), row.end());
  };
  return s;
}

// Beam search restricted to the given accents (all seen accents for joint
// decoding, a singleton for oracle-accent decoding, a complement for
// withholding experiments).
template <class S>
DecodeResult decode_with_accents(model::Model<S>& m, const std::vector<double>& samples,
                                 const std::vector<int>& accents, const DecodeConfig& cfg) {
  if (accents.empty()) throw ConfigError("decode accent subset is empty");
  Tape<S> tape(false);
  const auto frames = m.conv_encode(tape, samples);
  std::vector<AccentScorer> scorers;
  // Without codebook layers every accent yields the same encoder output and
  // the lowest accent id would win every tie, so one pass suffices.
  if (m.config().codebook_layers.empty()) {
    scorers.push_back(make_scorer(m, frames, *std::min_element(accents.begin(), accents.end())));
  } else {
    for (int a : accents) scorers.push_back(make_scorer(m, frames, a));
  }
  return beam_search(scorers, cfg, model::vocab::kSosEos);
}

template <class S>
DecodeResult joint_beam_search(model::Model<S>& m, const std::vector<double>& samples, const DecodeConfig& cfg) {
  std::vector<int> all;
  for (std::size_t a = 0; a < m.config().E; ++a) all.push_back(static_cast<int>(a));
  return decode_with_accents(m, samples, all, cfg);
}

template <class S>
DecodeResult decode_with_accent(model::Model<S>& m, const std::vector<double>& samples, int accent,
                                const DecodeConfig& cfg) {
  return decode_with_accents(m, samples, std::vector<int>{accent}, cfg);
}

// All seen accents except `withheld`.
inline std::vector<int> accents_without(std::size_t E, int withheld) {
  std::vector<int> out;
  for (std::size_t a = 0; a < E; ++a)
    if (static_cast<int>(a) != withheld) out.push_back(static_cast<int>(a));
  return out;
}

}  // namespace accent_ssl::decode
