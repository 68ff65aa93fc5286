#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "accent_ssl/numerics/ops.hpp"
#include "accent_ssl/numerics/rng.hpp"

namespace accent_ssl::model {

// Named parameters in insertion order; addresses are stable.
template <class S>
class ParameterStore {
 public:
  Parameter<S>& add(const std::string& name, Tensor<S> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
    list_.push_back(std::make_unique<Parameter<S>>(Parameter<S>{name, std::move(value), true}));
    index_[name] = list_.back().get();
    return *list_.back();
  }
  Parameter<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named " + name);
    return *it->second;
  }
  const Parameter<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named " + name);
    return *it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return list_.size(); }
  Parameter<S>& operator[](std::size_t i) { return *list_[i]; }
  const Parameter<S>& operator[](std::size_t i) const { return *list_[i]; }

  template <class F>
  void for_each(F&& f) {
    for (auto& p : list_) f(*p);
  }
  template <class F>
  void for_each(F&& f) const {
    for (const auto& p : list_) f(static_cast<const Parameter<S>&>(*p));
  }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& p : list_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<S>>> list_;
  std::map<std::string, Parameter<S>*> index_;
};

// Dropout configuration for one forward pass. rng == nullptr disables it.
struct ForwardOptions {
  double dropout = 0.0;
  Rng* rng = nullptr;
};

template <class S>
Var<S> maybe_dropout(Var<S> x, const ForwardOptions& opt) {
  if (!opt.rng || opt.dropout <= 0.0) return x;
  return ops::dropout(x, static_cast<S>(opt.dropout), *opt.rng);
}

template <class S>
Tensor<S> sinusoidal_table(std::size_t T, std::size_t d) {
  auto pe = Tensor<S>::matrix(T, d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pe.at(t, i) = static_cast<S>(std::sin(static_cast<double>(t) * freq));
      if (i + 1 < d) pe.at(t, i + 1) = static_cast<S>(std::cos(static_cast<double>(t) * freq));
    }
  return pe;
}

template <class S>
Tensor<S> causal_mask(std::size_t L) {
  auto m = Tensor<S>::matrix(L, L);
  for (std::size_t r = 0; r < L; ++r)
    for (std::size_t c = r + 1; c < L; ++c) m.at(r, c) = -std::numeric_limits<S>::infinity();
  return m;
}

// Scaled dot-product attention over head slices of already-projected q, k, v.
// Optional weights_out receives one (rows x keys) probability matrix per head.
template <class S>
Var<S> split_head_attention(Var<S> q, Var<S> k, Var<S> v, std::size_t heads, const Tensor<S>* mask,
                            std::vector<Tensor<S>>* weights_out = nullptr) {
  const std::size_t d = q.cols();
  if (k.cols() != d || v.cols() != d) throw DimensionError("attention: q/k/v widths differ");
  if (d % heads != 0) throw DimensionError("attention: width not divisible by head count");
  const std::size_t dh = d / heads;
  const S scale = S{1} / std::sqrt(static_cast<S>(dh));
  std::vector<Var<S>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = heads == 1 ? q : ops::slice_cols(q, h * dh, dh);
    auto kh = heads == 1 ? k : ops::slice_cols(k, h * dh, dh);
    auto vh = heads == 1 ? v : ops::slice_cols(v, h * dh, dh);
    auto scores = ops::scale(ops::matmul_nt(qh, kh), scale);
    if (mask) scores = ops::add_constant(scores, *mask);
    auto p = ops::softmax_rows(scores);
    if (weights_out) weights_out->push_back(p.value());
    outs.push_back(ops::matmul(p, vh));
  }
  return heads == 1 ? outs[0] : ops::concat_cols(outs);
}

// Codebook cross-attention for frames A [T x d] against one accent codebook
// C [M x d]: beta = softmax((A Wq)(C Wk)^T / sqrt(d_head)) and each output row
// is sum_k beta_k (C_k Wv). Heads share the codebook entries.
template <class S>
Var<S> codebook_cross_attention(Var<S> A, Var<S> C, Var<S> Wq, Var<S> Wk, Var<S> Wv, std::size_t heads,
                                std::vector<Tensor<S>>* weights_out = nullptr) {
  if (A.cols() != C.cols())
    throw DimensionError("codebook cross-attention: frame width " + std::to_string(A.cols()) +
                         " vs codebook width " + std::to_string(C.cols()));
  auto q = ops::matmul(A, Wq);
  auto k = ops::matmul(C, Wk);
  auto v = ops::matmul(C, Wv);
  return split_head_attention<S>(q, k, v, heads, nullptr, weights_out);
}

}  // namespace accent_ssl::model
