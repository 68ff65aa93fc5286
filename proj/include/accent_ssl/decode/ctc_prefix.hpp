#pragma once

#include <limits>
#include <vector>

#include "accent_ssl/objectives/losses.hpp"

namespace accent_ssl::decode {

// Forward variables of one CTC prefix g over all frames: r_n[t] (paths ending
// in the last label of g) and r_b[t] (paths ending in blank), plus the prefix
// probability psi = log P(g is a prefix of the labelling).
struct CtcPrefixState {
  std::vector<double> r_n;
  std::vector<double> r_b;
  std::size_t last = 0;  // last label of g, 0 when g is empty
  bool empty = true;
  double psi = 0.0;
};

class CtcPrefixScorer {
 public:
  CtcPrefixScorer(Tensor<double> logprobs, std::size_t blank = 0) : lp_(std::move(logprobs)), blank_(blank) {}

  std::size_t frames() const { return lp_.rows(); }

  CtcPrefixState initial() const {
    const std::size_t T = frames();
    CtcPrefixState s;
    s.r_n.assign(T, kNegInf);
    s.r_b.assign(T, kNegInf);
    double acc = 0.0;
    for (std::size_t t = 0; t < T; ++t) s.r_b[t] = acc += lp_.at(t, blank_);
    return s;
  }

  // State and prefix log-probability of g + c.
  CtcPrefixState extend(const CtcPrefixState& g, std::size_t c) const {
    using objectives::log_add;
    const std::size_t T = frames();
    CtcPrefixState h;
    h.r_n.assign(T, kNegInf);
    h.r_b.assign(T, kNegInf);
    h.last = c;
    h.empty = false;
    if (T == 0) {
      h.psi = kNegInf;
      return h;
    }
    h.r_n[0] = g.empty ? lp_.at(0, c) : kNegInf;
    double psi = h.r_n[0];
    for (std::size_t t = 1; t < T; ++t) {
      const double phi = g.empty ? g.r_b[t - 1]
                                 : (c == g.last ? g.r_b[t - 1] : log_add(g.r_b[t - 1], g.r_n[t - 1]));
      h.r_n[t] = log_add(h.r_n[t - 1], phi) + lp_.at(t, c);
      h.r_b[t] = log_add(h.r_b[t - 1], h.r_n[t - 1]) + lp_.at(t, blank_);
      psi = log_add(psi, phi + lp_.at(t, c));
    }
    h.psi = psi;
    return h;
  }

  // log P(labelling == g): the end-of-sentence score.
  static double final_score(const CtcPrefixState& g) {
    if (g.r_n.empty()) return kNegInf;
    return objectives::log_add(g.r_n.back(), g.r_b.back());
  }

  // Prefix probability of a whole token sequence, by repeated extension.
  double prefix_logprob(const std::vector<std::size_t>& y) const {
    CtcPrefixState s = initial();
    for (auto c : y) s = extend(s, c);
    return s.psi;
  }
  double sequence_logprob(const std::vector<std::size_t>& y) const {
    CtcPrefixState s = initial();
    for (auto c : y) s = extend(s, c);
    return final_score(s);
  }

 private:
  static constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  Tensor<double> lp_;
  std::size_t blank_;
};

}  // namespace accent_ssl::decode
