#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "accent_ssl/aud/kmeans.hpp"
#include "accent_ssl/model/config.hpp"
#include "accent_ssl/numerics/ops.hpp"
#include "accent_ssl/numerics/rng.hpp"

namespace accent_ssl::objectives {

// ---- masking ----

struct MaskPolicy {
  double mask_prob = 0.065;  // probability that an index starts a span
  std::size_t span_len = 10;

  void validate() const {
    if (!(mask_prob > 0.0) || !(mask_prob < 1.0))
      throw ConfigError("mask_prob must lie in (0,1), got " + std::to_string(mask_prob));
    if (span_len < 1) throw ConfigError("span_len must be >= 1");
  }

  // Expected masked fraction far from the sequence end.
  double expected_fraction() const { return 1.0 - std::pow(1.0 - mask_prob, static_cast<double>(span_len)); }
};

// Union of spans [s, s + span_len) clipped at T, sorted.
inline std::vector<std::size_t> spans_to_mask(std::size_t T, const std::vector<std::size_t>& starts,
                                              std::size_t span_len) {
  std::vector<bool> on(T, false);
  for (auto s : starts)
    for (std::size_t t = s; t < std::min(T, s + span_len); ++t) on[t] = true;
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < T; ++t)
    if (on[t]) out.push_back(t);
  return out;
}

// Span starts drawn i.i.d. Bernoulli(p) for every index.
inline std::vector<std::size_t> draw_mask(std::size_t T, const MaskPolicy& policy, Rng& rng) {
  policy.validate();
  std::vector<std::size_t> starts;
  for (std::size_t t = 0; t < T; ++t)
    if (rng.bernoulli(policy.mask_prob)) starts.push_back(t);
  return spans_to_mask(T, starts, policy.span_len);
}

template <class S>
Var<S> apply_mask(Var<S> frames, const std::vector<std::size_t>& mask_set, Var<S> mask_embedding) {
  std::vector<bool> flags(frames.rows(), false);
  for (auto t : mask_set) {
    if (t >= flags.size()) throw DimensionError("mask index " + std::to_string(t) + " beyond T");
    flags[t] = true;
  }
  return ops::replace_rows(frames, flags, mask_embedding);
}

template <class S>
struct MaskedFrames {
  Var<S> frames;
  std::vector<std::size_t> mask_set;
};

template <class S>
MaskedFrames<S> mask_frames(Var<S> frames, Var<S> mask_embedding, const MaskPolicy& policy, Rng& rng) {
  auto set = draw_mask(frames.rows(), policy, rng);
  return {apply_mask(frames, set, mask_embedding), std::move(set)};
}

// ---- masked prediction ----

// alpha * mean over masked frames + (1 - alpha) * mean over the rest of the
// per-frame cross-entropy against the pseudo-labels.
template <class S>
Var<S> masked_prediction_loss(Var<S> logits, const aud::PseudoLabelSequence& z,
                              const std::vector<std::size_t>& mask_set, double alpha = 1.0) {
  const std::size_t T = logits.rows();
  if (z.size() != T)
    throw DimensionError("masked_prediction_loss: " + std::to_string(T) + " logit rows vs " +
                         std::to_string(z.size()) + " labels");
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0,1]");
  std::vector<bool> masked(T, false);
  for (auto t : mask_set) masked.at(t) = true;
  const std::size_t n_mask = static_cast<std::size_t>(std::count(masked.begin(), masked.end(), true));
  const std::size_t n_rest = T - n_mask;
  if (n_mask == 0 && alpha == 1.0) throw ContractError("masked_prediction_loss: empty mask gives no loss signal");
  double wm = alpha, wr = 1.0 - alpha;
  if (n_mask == 0) wm = 0.0, wr = 1.0;
  if (n_rest == 0) wm = 1.0, wr = 0.0;
  Tensor<S> w = Tensor<S>::matrix(T, 1);
  for (std::size_t t = 0; t < T; ++t)
    w[t] = static_cast<S>(masked[t] ? -wm / static_cast<double>(n_mask) : -wr / static_cast<double>(n_rest));
  std::vector<std::size_t> cols(z.begin(), z.end());
  auto picked = ops::pick(ops::log_softmax_rows(logits), cols);
  return ops::sum_all(ops::mul(picked, logits.tape->constant(std::move(w))));
}

// Fraction of masked frames whose argmax logit equals the pseudo-label.
template <class S>
double masked_accuracy(const Tensor<S>& logits, const aud::PseudoLabelSequence& z,
                       const std::vector<std::size_t>& mask_set) {
  if (mask_set.empty()) return 0.0;
  std::size_t hit = 0;
  for (auto t : mask_set) {
    auto row = logits.row(t);
    hit += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == z[t];
  }
  return static_cast<double>(hit) / static_cast<double>(mask_set.size());
}

// ---- CTC ----

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Minimum frames to emit y under CTC: one per label plus a blank between repeats.
inline std::size_t ctc_min_frames(const std::vector<std::size_t>& y) {
  std::size_t n = y.size();
  for (std::size_t i = 1; i < y.size(); ++i) n += y[i] == y[i - 1];
  return n;
}

struct CtcLattice {
  double neg_log_likelihood = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> ext;           // blank-augmented labels
  std::vector<std::vector<double>> alpha; // T x |ext|, includes emission at t
  std::vector<std::vector<double>> beta;  // T x |ext|, excludes emission at t
};

// Log-space forward-backward over logprobs [T x K] with blank index 0.
// Infeasible inputs return neg_log_likelihood = +inf.
template <class S>
CtcLattice ctc_lattice(const Tensor<S>& logprobs, const std::vector<std::size_t>& y, bool with_beta = true) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const std::size_t T = logprobs.rows(), K = logprobs.cols();
  for (auto t : y)
    if (t == model::vocab::kBlank || t >= K)
      throw ValidationError("ctc: label " + std::to_string(t) + " is blank or outside the vocabulary");
  CtcLattice L;
  if (T < ctc_min_frames(y) || T == 0) return L;
  L.ext.assign(2 * y.size() + 1, model::vocab::kBlank);
  for (std::size_t i = 0; i < y.size(); ++i) L.ext[2 * i + 1] = y[i];
  const std::size_t S_ = L.ext.size();
  auto lp = [&](std::size_t t, std::size_t s) { return static_cast<double>(logprobs.at(t, L.ext[s])); };
  auto skip_ok = [&](std::size_t s) { return s >= 2 && L.ext[s] != model::vocab::kBlank && L.ext[s] != L.ext[s - 2]; };

  L.alpha.assign(T, std::vector<double>(S_, kNegInf));
  L.alpha[0][0] = lp(0, 0);
  if (S_ > 1) L.alpha[0][1] = lp(0, 1);
  for (std::size_t t = 1; t < T; ++t)
    for (std::size_t s = 0; s < S_; ++s) {
      double a = L.alpha[t - 1][s];
      if (s >= 1) a = log_add(a, L.alpha[t - 1][s - 1]);
      if (skip_ok(s)) a = log_add(a, L.alpha[t - 1][s - 2]);
      L.alpha[t][s] = a == kNegInf ? kNegInf : a + lp(t, s);
    }
  double ll = L.alpha[T - 1][S_ - 1];
  if (S_ > 1) ll = log_add(ll, L.alpha[T - 1][S_ - 2]);
  L.neg_log_likelihood = -ll;
  if (!with_beta || !std::isfinite(ll)) return L;

  L.beta.assign(T, std::vector<double>(S_, kNegInf));
  L.beta[T - 1][S_ - 1] = 0.0;
  if (S_ > 1) L.beta[T - 1][S_ - 2] = 0.0;
  for (std::size_t t = T - 1; t-- > 0;)
    for (std::size_t s = 0; s < S_; ++s) {
      double b = L.beta[t + 1][s] + lp(t + 1, s);
      if (s + 1 < S_) b = log_add(b, L.beta[t + 1][s + 1] + lp(t + 1, s + 1));
      if (s + 2 < S_ && skip_ok(s + 2)) b = log_add(b, L.beta[t + 1][s + 2] + lp(t + 1, s + 2));
      L.beta[t][s] = b;
    }
  return L;
}

// -log p(y | logprobs), or +inf when no alignment exists.
template <class S>
double ctc_neg_log_likelihood(const Tensor<S>& logprobs, const std::vector<std::size_t>& y) {
  return ctc_lattice(logprobs, y, false).neg_log_likelihood;
}

// Differentiable CTC loss on log-probabilities [T x K]. Throws
// InfeasibleAlignmentError when T is too short for y.
template <class S>
Var<S> ctc_loss(Var<S> logprobs, const std::vector<std::size_t>& y) {
  if (y.empty()) throw ValidationError("ctc: empty transcript");
  CtcLattice L = ctc_lattice(logprobs.value(), y, logprobs.requires_grad());
  if (!std::isfinite(L.neg_log_likelihood))
    throw InfeasibleAlignmentError("ctc: " + std::to_string(logprobs.rows()) + " frames cannot align " +
                                   std::to_string(y.size()) + " labels (need " + std::to_string(ctc_min_frames(y)) +
                                   ")");
  const double nll = L.neg_log_likelihood;
  return logprobs.tape->push(
      Tensor<S>({1, 1}, static_cast<S>(nll)), logprobs.requires_grad(),
      [logprobs, L = std::move(L), nll](Tape<S>& t, std::size_t self) {
        const S g = (*t.grad(self))[0];
        Tensor<S>& gx = t.grad_buffer(logprobs.id);
        const std::size_t T = L.alpha.size(), K = gx.cols();
        for (std::size_t f = 0; f < T; ++f) {
          std::vector<double> occ(K, -std::numeric_limits<double>::infinity());
          for (std::size_t s = 0; s < L.ext.size(); ++s)
            occ[L.ext[s]] = log_add(occ[L.ext[s]], L.alpha[f][s] + L.beta[f][s]);
          for (std::size_t k = 0; k < K; ++k)
            if (occ[k] != -std::numeric_limits<double>::infinity())
              gx.at(f, k) -= g * static_cast<S>(std::exp(occ[k] + nll));
        }
      });
}

// ---- attention cross-entropy ----

// Teacher-forced decoder targets: y followed by EOS.
inline std::vector<std::size_t> with_eos(std::vector<std::size_t> y) {
  y.push_back(model::vocab::kSosEos);
  return y;
}
inline std::vector<std::size_t> with_sos(const std::vector<std::size_t>& y) {
  std::vector<std::size_t> out{model::vocab::kSosEos};
  out.insert(out.end(), y.begin(), y.end());
  return out;
}

// Mean over steps of (1 - eps) * NLL(target) + eps * mean over classes of NLL.
template <class S>
Var<S> attention_ce_loss(Var<S> logits, const std::vector<std::size_t>& targets, double eps) {
  if (targets.empty() || targets.back() != model::vocab::kSosEos)
    throw ContractError("attention_ce_loss: targets must end with EOS");
  if (targets.size() != logits.rows())
    throw DimensionError("attention_ce_loss: " + std::to_string(logits.rows()) + " steps vs " +
                         std::to_string(targets.size()) + " targets");
  if (eps < 0.0 || eps >= 1.0) throw ConfigError("label smoothing must lie in [0,1)");
  auto lp = ops::log_softmax_rows(logits);
  auto nll = ops::pick(lp, targets);
  Var<S> per_step = ops::scale(nll, static_cast<S>(1.0 - eps));
  if (eps > 0.0) per_step = ops::add(per_step, ops::scale(ops::row_mean(lp), static_cast<S>(eps)));
  return ops::scale(ops::mean_all(per_step), S{-1});
}

// ---- joint objective ----

struct JointLossConfig {
  double eta = 0.3;
  double label_smoothing = 0.1;
  void validate() const {
    if (eta < 0.0 || eta > 1.0) throw ConfigError("eta must lie in [0,1]");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("label smoothing must lie in [0,1)");
  }
};

inline double joint_loss(double l_ctc, double l_att, double eta) {
  if (eta == 0.0) return l_att;
  if (eta == 1.0) return l_ctc;
  return eta * l_ctc + (1.0 - eta) * l_att;
}

template <class S>
Var<S> joint_loss(Var<S> l_ctc, Var<S> l_att, double eta) {
  if (eta == 0.0) return l_att;
  if (eta == 1.0) return l_ctc;
  return ops::add(ops::scale(l_ctc, static_cast<S>(eta)), ops::scale(l_att, static_cast<S>(1.0 - eta)));
}

}  // namespace accent_ssl::objectives
