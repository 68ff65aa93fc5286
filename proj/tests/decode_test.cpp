#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>

#include "accent_ssl/decode/beam.hpp"
#include "accent_ssl/decode/wer.hpp"
#include "ctc_oracle.hpp"
#include "test_util.hpp"

using namespace accent_ssl;
using namespace accent_ssl::decode;
using accent_ssl::testing::ctc_brute_force_prob;
using accent_ssl::testing::random_logprobs;
using T64 = Tensor<double>;

// ---- CTC prefix scoring ----

TEST(CtcPrefix, FullSequenceMatchesCtcLoss) {
  Rng rng(1);
  double worst = 0;
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t K = 2 + rng.below(3), T = 1 + rng.below(6), L = 1 + rng.below(3);
    const T64 lp = random_logprobs(rng, T, K);
    std::vector<std::size_t> y(L);
    for (auto& v : y) v = 1 + rng.below(K - 1);
    const double nll = objectives::ctc_neg_log_likelihood(lp, y);
    const double seq = CtcPrefixScorer(lp).sequence_logprob(y);
    if (!std::isfinite(nll)) {
      EXPECT_EQ(seq, -std::numeric_limits<double>::infinity());
      continue;
    }
    worst = std::max(worst, std::abs(seq + nll));
    worst = std::max(worst, std::abs(std::exp(seq) - ctc_brute_force_prob(lp, y)));
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(CtcPrefix, PrefixProbabilitySumsOverContinuations) {
  // P(g is a prefix) = sum over all labellings starting with g.
  Rng rng(2);
  const std::size_t T = 4, K = 3;
  const T64 lp = random_logprobs(rng, T, K);
  const CtcPrefixScorer s(lp);
  for (const std::vector<std::size_t>& g : {std::vector<std::size_t>{1}, {2}, {1, 2}, {2, 2}}) {
    double total = 0;
    std::function<void(std::vector<std::size_t>)> walk = [&](std::vector<std::size_t> y) {
      total += ctc_brute_force_prob(lp, y);
      if (y.size() < T)
        for (std::size_t c = 1; c < K; ++c) {
          auto z = y;
          z.push_back(c);
          walk(z);
        }
    };
    walk(g);
    EXPECT_NEAR(std::exp(s.prefix_logprob(g)), total, 1e-12);
  }
}

TEST(CtcPrefix, EmptyPrefixIsAllBlank) {
  Rng rng(3);
  const T64 lp = random_logprobs(rng, 5, 3);
  double expect = 0;
  for (std::size_t t = 0; t < 5; ++t) expect += lp.at(t, 0);
  const CtcPrefixScorer s(lp);
  EXPECT_NEAR(CtcPrefixScorer::final_score(s.initial()), expect, 1e-15);
  EXPECT_EQ(s.initial().psi, 0.0);
}

TEST(CtcPrefix, ImpossibleTokenIsMinusInfinity) {
  Rng rng(4);
  T64 lp = random_logprobs(rng, 5, 3);
  for (std::size_t t = 0; t < 5; ++t) lp.at(t, 2) = -std::numeric_limits<double>::infinity();
  const CtcPrefixScorer s(lp);
  EXPECT_EQ(s.prefix_logprob({2}), -std::numeric_limits<double>::infinity());
  EXPECT_EQ(s.prefix_logprob({1, 2}), -std::numeric_limits<double>::infinity());
}

// ---- beam search on synthetic scorers ----

namespace {

// Attention distribution as a fixed pseudo-random function of (accent, prefix).
std::vector<double> table_logprobs(std::uint64_t seed, int accent, const std::vector<std::size_t>& prefix,
                                   std::size_t K) {
  std::uint64_t h = derive_seed(seed, "att", static_cast<std::uint64_t>(accent));
  for (auto t : prefix) h = derive_seed(h, "tok", t);
  Rng rng(h);
  std::vector<double> lp(K);
  double z = 0;
  for (auto& v : lp) z += std::exp(v = rng.normal(0.0, 2.0));
  for (auto& v : lp) v -= std::log(z);
  return lp;
}

std::vector<AccentScorer> synthetic_scorers(Rng& rng, std::uint64_t seed, std::size_t E, std::size_t T,
                                            std::size_t K) {
  std::vector<AccentScorer> out;
  for (std::size_t a = 0; a < E; ++a) {
    AccentScorer s;
    s.accent = static_cast<int>(a);
    s.ctc_logprobs = random_logprobs(rng, T, K);
    s.next_logprobs = [seed, a, K](const std::vector<std::size_t>& p) {
      return table_logprobs(seed, static_cast<int>(a), p, K);
    };
    out.push_back(std::move(s));
  }
  return out;
}

// Scores every (accent, string) pair up to max_len with the same arithmetic
// the search uses and returns the best under the tie rule.
DecodeResult exhaustive(const std::vector<AccentScorer>& scorers, const DecodeConfig& cfg, std::size_t eos) {
  const std::size_t K = scorers.front().ctc_logprobs.cols();
  const std::size_t max_len = cfg.max_len_for(scorers.front().ctc_logprobs.rows());
  std::optional<Hypothesis> best;
  for (const auto& s : scorers) {
    const CtcPrefixScorer ctc(s.ctc_logprobs);
    std::function<void(std::vector<std::size_t>, double)> walk = [&](std::vector<std::size_t> y, double att) {
      std::vector<std::size_t> prefix{eos};
      prefix.insert(prefix.end(), y.begin(), y.end());
      const auto next = s.next_logprobs(prefix);
      Hypothesis h;
      h.tokens = y;
      h.accent = s.accent;
      h.ended = true;
      h.score = combine_scores(ctc.sequence_logprob(y), att + next[eos], cfg.ctc_weight) +
                cfg.length_penalty * static_cast<double>(y.size());
      if (!best || ranks_before(h, *best)) best = h;
      if (y.size() == max_len) return;
      for (std::size_t c = 1; c < K; ++c) {
        if (c == eos) continue;
        auto z = y;
        z.push_back(c);
        walk(z, att + next[c]);
      }
    };
    walk({}, 0.0);
  }
  DecodeResult r;
  r.tokens = best->tokens;
  r.accent = best->accent;
  r.score = best->score;
  return r;
}

}  // namespace

TEST(BeamSearch, SaturatingBeamEqualsExhaustiveSearch) {
  Rng rng(5);
  for (std::size_t K : {3u, 4u}) {
    for (int trial = 0; trial < 60; ++trial) {
      const std::size_t eos = K - 1;
      auto scorers = synthetic_scorers(rng, 100 + trial, 2, 2 + rng.below(5), K);
      DecodeConfig cfg;
      cfg.beam = 1000;
      cfg.max_len = 3;
      cfg.ctc_weight = trial % 3 == 0 ? 0.0 : 0.3;
      const auto got = beam_search(scorers, cfg, eos);
      const auto want = exhaustive(scorers, cfg, eos);
      EXPECT_EQ(got.tokens, want.tokens) << "K=" << K << " trial " << trial;
      EXPECT_EQ(got.accent, want.accent);
      EXPECT_EQ(got.score, want.score);
    }
  }
}

TEST(BeamSearch, IdenticalAccentsTieBreakToLowestId) {
  Rng rng(6);
  auto scorers = synthetic_scorers(rng, 7, 1, 5, 4);
  AccentScorer twin = scorers[0];
  twin.accent = 1;
  scorers.push_back(twin);
  DecodeConfig cfg;
  cfg.beam = 4;
  cfg.max_len = 3;
  const auto joint = beam_search(scorers, cfg, 3);
  const auto single = beam_search({scorers[0]}, cfg, 3);
  EXPECT_EQ(joint.accent, 0);
  EXPECT_EQ(joint.tokens, single.tokens);
  EXPECT_EQ(joint.score, single.score);
}

TEST(BeamSearch, ZeroCtcWeightIgnoresCtc) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = synthetic_scorers(rng, 200 + trial, 2, 4, 4);
    auto b = a;
    for (auto& s : b) s.ctc_logprobs = random_logprobs(rng, 4, 4);
    DecodeConfig cfg;
    cfg.beam = 3;
    cfg.max_len = 3;
    cfg.ctc_weight = 0.0;
    const auto ra = beam_search(a, cfg, 3), rb = beam_search(b, cfg, 3);
    EXPECT_EQ(ra.tokens, rb.tokens);
    EXPECT_EQ(ra.accent, rb.accent);
    EXPECT_EQ(ra.score, rb.score);
  }
}

TEST(BeamSearch, InvalidConfigAndWarnings) {
  Rng rng(8);
  auto scorers = synthetic_scorers(rng, 9, 3, 4, 4);
  DecodeConfig cfg;
  cfg.beam = 0;
  EXPECT_THROW(beam_search(scorers, cfg, 3), ConfigError);
  cfg.beam = 2;
  cfg.max_len = 2;
  EXPECT_EQ(beam_search(scorers, cfg, 3).warnings.size(), 1u);
  EXPECT_THROW(beam_search({}, cfg, 3), ConfigError);
}

// A pruned beam is not monotone in B (a wider beam can displace the path a
// narrower one keeps), so the checked property is dominance by the saturating
// beam, which equals exhaustive search.
TEST(BeamSearch, SaturatingBeamDominatesNarrowerBeams) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    auto scorers = synthetic_scorers(rng, 300 + trial, 2, 3 + rng.below(4), 4);
    DecodeConfig cfg;
    cfg.max_len = 3;
    cfg.beam = 1000;
    const double full = beam_search(scorers, cfg, 3).score;
    for (std::size_t B = 1; B <= 12; ++B) {
      cfg.beam = B;
      EXPECT_LE(beam_search(scorers, cfg, 3).score, full) << "trial " << trial << " B=" << B;
    }
  }
}

// ---- model-backed decoding ----

namespace {

model::ModelConfig decode_config() {
  model::ModelConfig c;
  c.d = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.E = 2;
  c.M = 2;
  c.codebook_layers = {1};
  c.V = 4;
  c.conv = {{4, 8, 4}};
  c.decoder_layers = 1;
  return c;
}

}  // namespace

TEST(ModelDecode, IdenticalCodebooksMatchSingleAccentSearch) {
  model::Model<double> m(decode_config(), 11);
  m.param("codebook.1").value = m.param("codebook.0").value;
  Rng rng(12);
  std::vector<double> wave(120);
  for (auto& v : wave) v = rng.uniform(-1, 1);
  DecodeConfig cfg;
  cfg.beam = 4;
  cfg.max_len = 3;
  const auto joint = joint_beam_search(m, wave, cfg);
  const auto single = decode_with_accent(m, wave, 0, cfg);
  EXPECT_EQ(joint.accent, 0);
  EXPECT_EQ(joint.tokens, single.tokens);
  EXPECT_EQ(joint.score, single.score);
}

TEST(ModelDecode, SubsetOfAllEqualsJointAndEmptyIsError) {
  model::Model<double> m(decode_config(), 13);
  Rng rng(14);
  std::vector<double> wave(120);
  for (auto& v : wave) v = rng.uniform(-1, 1);
  DecodeConfig cfg;
  cfg.beam = 4;
  cfg.max_len = 3;
  const auto joint = joint_beam_search(m, wave, cfg);
  const auto all = decode_with_accents(m, wave, {0, 1}, cfg);
  EXPECT_EQ(joint.tokens, all.tokens);
  EXPECT_EQ(joint.score, all.score);
  EXPECT_THROW(decode_with_accents(m, wave, {}, cfg), ConfigError);
  EXPECT_EQ(accents_without(3, 1), (std::vector<int>{0, 2}));
}

// ---- WER ----

TEST(Wer, Examples) {
  EXPECT_EQ(wer("a b c", "a b c").wer, 0.0);
  const auto ins = wer("a b", "a x b");
  EXPECT_EQ(ins.insertions, 1u);
  EXPECT_EQ(ins.edits(), 1u);
  EXPECT_EQ(ins.wer, 0.5);
  const auto del = wer("a", "");
  EXPECT_EQ(del.deletions, 1u);
  EXPECT_EQ(del.wer, 1.0);
  const auto deg = wer("", "a b");
  EXPECT_TRUE(deg.degenerate);
  EXPECT_EQ(deg.wer, 2.0);
}

TEST(Wer, BacktracePrefersSubstitutionThenDeletion) {
  // "a b" -> "c": one substitution plus one deletion, never two deletions and an insertion.
  const auto r = wer("a b", "c");
  EXPECT_EQ(r.substitutions, 1u);
  EXPECT_EQ(r.deletions, 1u);
  EXPECT_EQ(r.insertions, 0u);
}

namespace {

std::size_t recursive_edit(const std::string& a, const std::string& b) {
  if (a.empty()) return b.size();
  if (b.empty()) return a.size();
  const std::size_t sub = recursive_edit(a.substr(1), b.substr(1)) + (a[0] != b[0]);
  return std::min({sub, recursive_edit(a.substr(1), b) + 1, recursive_edit(a, b.substr(1)) + 1});
}

}  // namespace

TEST(Wer, MatchesRecursiveOracleAndIsSymmetric) {
  Rng rng(15);
  for (int trial = 0; trial < 300; ++trial) {
    std::string a, b;
    for (std::size_t i = 0, n = rng.below(7); i < n; ++i) a.push_back(static_cast<char>('a' + rng.below(3)));
    for (std::size_t i = 0, n = rng.below(7); i < n; ++i) b.push_back(static_cast<char>('a' + rng.below(3)));
    const auto ab = edit_alignment(a, b), ba = edit_alignment(b, a);
    EXPECT_EQ(ab.edits(), recursive_edit(a, b)) << a << " vs " << b;
    EXPECT_EQ(ab.edits(), ba.edits());
    EXPECT_EQ(edit_alignment(a, a).edits(), 0u);
  }
}
