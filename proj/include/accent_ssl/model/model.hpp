#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "accent_ssl/model/config.hpp"
#include "accent_ssl/model/layers.hpp"

namespace accent_ssl::model {

template <class S>
struct EncoderOutput {
  std::vector<Var<S>> layers;  // residual stream after each encoder layer
  Var<S> final;                // final layer norm of the last layer
  // Cross-attention probabilities per codebook layer (only when requested).
  std::vector<std::vector<Tensor<S>>> cross_weights;
};

// Channel pairs share a centre frequency (cos and sin phase); centres are
// log-spaced between 0.02 and 0.475 cycles per sample. Each channel has
// energy 2.
template <class S>
void filterbank_init(Tensor<S>& w) {
  const std::size_t k = w.rows(), c = w.cols();
  const std::size_t bands = std::max<std::size_t>(1, (c + 1) / 2);
  constexpr double lo = 0.02, hi = 0.475;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const std::size_t band = ch / 2;
    const double f = bands == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(band) / static_cast<double>(bands - 1));
    const double phase = (ch % 2) ? -std::numbers::pi / 2 : 0.0;
    std::vector<double> tap(k);
    double energy = 0.0;
    for (std::size_t n = 0; n < k; ++n) {
      const double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(n) + 0.5) / static_cast<double>(k));
      tap[n] = hann * std::cos(2.0 * std::numbers::pi * f * static_cast<double>(n) + phase);
      energy += tap[n] * tap[n];
    }
    const double scale = energy > 0.0 ? std::sqrt(2.0 / energy) : 0.0;
    for (std::size_t n = 0; n < k; ++n) w.row(n)[ch] = static_cast<S>(tap[n] * scale);
  }
}

// Convolutional waveform encoder, transformer encoder with optional accent
// codebook cross-attention per layer, masked-prediction projection head, CTC
// head and an attention decoder.
template <class S>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    cfg_.validate();
    build();
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  std::uint64_t seed() const noexcept { return seed_; }
  ParameterStore<S>& params() noexcept { return store_; }
  const ParameterStore<S>& params() const noexcept { return store_; }
  Parameter<S>& param(const std::string& name) { return store_.at(name); }

  template <class U>
  Model<U> cast() const {
    Model<U> out(cfg_, seed_);
    for (std::size_t i = 0; i < store_.size(); ++i) {
      out.params()[i].value = store_[i].value.template cast<U>();
      out.params()[i].trainable = store_[i].trainable;
    }
    return out;
  }

  static std::string codebook_name(std::size_t accent) { return "codebook." + std::to_string(accent); }

  // The codebook of one seen accent. The returned parameter is the live
  // storage, so optimizer updates are visible through it.
  Parameter<S>& select_codebook(int accent_id) {
    if (accent_id < 0 || static_cast<std::size_t>(accent_id) >= cfg_.E)
      throw ValidationError("accent " + std::to_string(accent_id) + " has no codebook (E=" +
                            std::to_string(cfg_.E) + ")");
    return store_.at(codebook_name(static_cast<std::size_t>(accent_id)));
  }

  // Re-draws every codebook from the given seed (random_fixed mode).
  void randomize_codebooks(std::uint64_t seed) {
    for (std::size_t a = 0; a < cfg_.E; ++a) {
      Parameter<S>& p = store_.at(codebook_name(a));
      Rng rng(derive_seed(seed, "codebook_random", a));
      for (auto& v : p.value.values()) v = static_cast<S>(rng.normal());
    }
  }

  // ---- forward pieces ----

  // Waveform [L] -> frames [T x d]. Throws if L is below the receptive field.
  Var<S> conv_encode(Tape<S>& tape, const std::vector<double>& samples) {
    const std::size_t rf = cfg_.receptive_field();
    if (samples.size() < rf)
      throw DimensionError("waveform of " + std::to_string(samples.size()) + " samples is shorter than the " +
                           std::to_string(rf) + "-sample receptive field");
    Tensor<S> x({samples.size(), 1});
    for (std::size_t i = 0; i < samples.size(); ++i) x[i] = static_cast<S>(samples[i]);
    Var<S> h = tape.constant(std::move(x));
    for (std::size_t i = 0; i < cfg_.conv.size(); ++i) {
      const auto& c = cfg_.conv[i];
      const std::string n = "conv." + std::to_string(i);
      auto cols = ops::im2col(h, c.kernel, c.stride);
      h = ops::gelu(ops::linear(cols, p(tape, n + ".weight"), p(tape, n + ".bias")));
    }
    h = ops::layer_norm(h, p(tape, "feat.ln.gain"), p(tape, "feat.ln.bias"), eps());
    return ops::linear(h, p(tape, "feat.proj.weight"), p(tape, "feat.proj.bias"));
  }

  Var<S> mask_embedding(Tape<S>& tape) { return p(tape, "mask_embedding"); }

  // accent == nullopt bypasses every cross-attention block.
  EncoderOutput<S> encode(Tape<S>& tape, Var<S> frames, std::optional<int> accent, const ForwardOptions& opt = {},
                          bool keep_cross_weights = false) {
    if (frames.cols() != cfg_.d)
      throw DimensionError("encoder input width " + std::to_string(frames.cols()) + " != d=" +
                           std::to_string(cfg_.d));
    Var<S> codebook{};
    if (accent) codebook = tape.param(select_codebook(*accent));
    Var<S> h = frames;
    if (cfg_.positional_encoding) h = ops::add_constant(h, sinusoidal_table<S>(frames.rows(), cfg_.d));
    EncoderOutput<S> out;
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string n = "enc." + std::to_string(l);
      // self-attention
      auto x = ops::layer_norm(h, p(tape, n + ".sa_ln.gain"), p(tape, n + ".sa_ln.bias"), eps());
      auto sa = self_attention(tape, n + ".sa", x, x, nullptr);
      h = ops::add(h, maybe_dropout(sa, opt));
      // codebook cross-attention
      if (accent && cfg_.has_codebook(l + 1)) {
        auto xc = ops::layer_norm(h, p(tape, n + ".ca_ln.gain"), p(tape, n + ".ca_ln.bias"), eps());
        std::vector<Tensor<S>> weights;
        auto ca = codebook_cross_attention<S>(xc, codebook, p(tape, n + ".ca.wq"), p(tape, n + ".ca.wk"),
                                              p(tape, n + ".ca.wv"), cfg_.n_heads,
                                              keep_cross_weights ? &weights : nullptr);
        if (keep_cross_weights) out.cross_weights.push_back(std::move(weights));
        h = ops::add(h, maybe_dropout(ca, opt));
      }
      // feed-forward
      auto xf = ops::layer_norm(h, p(tape, n + ".ff_ln.gain"), p(tape, n + ".ff_ln.bias"), eps());
      h = ops::add(h, maybe_dropout(feed_forward(tape, n + ".ff", xf), opt));
      out.layers.push_back(h);
    }
    out.final = ops::layer_norm(h, p(tape, "enc.final_ln.gain"), p(tape, "enc.final_ln.bias"), eps());
    return out;
  }

  // Masked-prediction head: [T x d] -> [T x V].
  Var<S> project_tokens(Tape<S>& tape, Var<S> H) {
    return ops::linear(H, p(tape, "proj.weight"), p(tape, "proj.bias"));
  }

  // CTC head: [T x d] -> [T x asr_vocab] logits (blank at index 0).
  Var<S> ctc_logits(Tape<S>& tape, Var<S> H) { return ops::linear(H, p(tape, "ctc.weight"), p(tape, "ctc.bias")); }

  // Teacher-forced decoder: prefix tokens (starting with SOS) -> one row of
  // next-token logits per prefix position.
  Var<S> decoder_logits(Tape<S>& tape, Var<S> memory, const std::vector<std::size_t>& prefix,
                        const ForwardOptions& opt = {}) {
    if (prefix.empty()) throw ContractError("decoder prefix must start with SOS");
    if (prefix.front() != vocab::kSosEos) throw ContractError("decoder prefix must start with SOS");
    const std::size_t L = prefix.size();
    Var<S> h = ops::scale(ops::gather_rows(p(tape, "dec.embed"), prefix), std::sqrt(static_cast<S>(cfg_.d)));
    if (cfg_.positional_encoding) h = ops::add_constant(h, sinusoidal_table<S>(L, cfg_.d));
    const Tensor<S> mask = causal_mask<S>(L);
    for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
      const std::string n = "dec." + std::to_string(l);
      auto x = ops::layer_norm(h, p(tape, n + ".sa_ln.gain"), p(tape, n + ".sa_ln.bias"), eps());
      h = ops::add(h, maybe_dropout(self_attention(tape, n + ".sa", x, x, &mask), opt));
      auto xc = ops::layer_norm(h, p(tape, n + ".ca_ln.gain"), p(tape, n + ".ca_ln.bias"), eps());
      h = ops::add(h, maybe_dropout(self_attention(tape, n + ".ca", xc, memory, nullptr), opt));
      auto xf = ops::layer_norm(h, p(tape, n + ".ff_ln.gain"), p(tape, n + ".ff_ln.bias"), eps());
      h = ops::add(h, maybe_dropout(feed_forward(tape, n + ".ff", xf), opt));
    }
    h = ops::layer_norm(h, p(tape, "dec.final_ln.gain"), p(tape, "dec.final_ln.bias"), eps());
    return ops::linear(h, p(tape, "dec.out.weight"), p(tape, "dec.out.bias"));
  }

  // Parameter-name predicates used by freeze specs.
  static bool is_conv_frontend(const std::string& name) {
    return name.rfind("conv.", 0) == 0 || name.rfind("feat.", 0) == 0;
  }
  static bool is_codebook(const std::string& name) { return name.rfind("codebook.", 0) == 0; }
  static bool is_finetune_head(const std::string& name) {
    return name.rfind("dec.", 0) == 0 || name.rfind("ctc.", 0) == 0;
  }
  // 0-based encoder layer of a parameter, or -1.
  static int encoder_layer_of(const std::string& name) {
    if (name.rfind("enc.", 0) != 0) return -1;
    const auto dot = name.find('.', 4);
    const std::string idx = name.substr(4, dot - 4);
    if (idx.empty() || !std::isdigit(static_cast<unsigned char>(idx[0]))) return -1;
    return std::stoi(idx);
  }

  // Re-initializes the decoder and CTC head from a fresh stream.
  void reinit_finetune_heads(std::uint64_t seed) {
    Model<S> fresh(cfg_, seed);
    for (std::size_t i = 0; i < store_.size(); ++i)
      if (is_finetune_head(store_[i].name)) store_[i].value = fresh.params()[i].value;
  }

 private:
  S eps() const { return static_cast<S>(cfg_.ln_eps); }
  Var<S> p(Tape<S>& tape, const std::string& name) { return tape.param(store_.at(name)); }

  Var<S> self_attention(Tape<S>& tape, const std::string& n, Var<S> q_in, Var<S> kv_in, const Tensor<S>* mask) {
    auto q = ops::linear(q_in, p(tape, n + ".wq"), p(tape, n + ".bq"));
    auto k = ops::linear(kv_in, p(tape, n + ".wk"), p(tape, n + ".bk"));
    auto v = ops::linear(kv_in, p(tape, n + ".wv"), p(tape, n + ".bv"));
    auto o = split_head_attention<S>(q, k, v, cfg_.n_heads, mask);
    return ops::linear(o, p(tape, n + ".wo"), p(tape, n + ".bo"));
  }

  Var<S> feed_forward(Tape<S>& tape, const std::string& n, Var<S> x) {
    auto h = ops::gelu(ops::linear(x, p(tape, n + ".w1"), p(tape, n + ".b1")));
    return ops::linear(h, p(tape, n + ".w2"), p(tape, n + ".b2"));
  }

  // Each parameter draws from its own named stream, so adding or removing
  // parameters never shifts the initialization of the others.
  Tensor<S> normal(const std::string& name, Shape shape, double stddev) {
    Rng rng(derive_seed(seed_, "init:" + name));
    Tensor<S> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<S>(rng.normal(0.0, stddev));
    return t;
  }
  void add_linear(const std::string& w, const std::string& b, std::size_t in, std::size_t out) {
    store_.add(w, normal(w, {in, out}, 1.0 / std::sqrt(static_cast<double>(in))));
    store_.add(b, Tensor<S>({out}));
  }
  void add_ln(const std::string& n, std::size_t d) {
    store_.add(n + ".gain", Tensor<S>({d}, S{1}));
    store_.add(n + ".bias", Tensor<S>({d}));
  }
  void add_attention(const std::string& n, std::size_t d) {
    add_linear(n + ".wq", n + ".bq", d, d);
    add_linear(n + ".wk", n + ".bk", d, d);
    add_linear(n + ".wv", n + ".bv", d, d);
    add_linear(n + ".wo", n + ".bo", d, d);
  }
  void add_ffn(const std::string& n, std::size_t d, std::size_t dff) {
    add_linear(n + ".w1", n + ".b1", d, dff);
    add_linear(n + ".w2", n + ".b2", dff, d);
  }

  void build() {
    const std::size_t d = cfg_.d;
    std::size_t cin = 1;
    for (std::size_t i = 0; i < cfg_.conv.size(); ++i) {
      const std::string n = "conv." + std::to_string(i);
      add_linear(n + ".weight", n + ".bias", cfg_.conv[i].kernel * cin, cfg_.conv[i].channels);
      cin = cfg_.conv[i].channels;
    }
    if (cfg_.conv_init == ConvInit::Filterbank) filterbank_init(store_.at("conv.0.weight").value);
    add_ln("feat.ln", cin);
    add_linear("feat.proj.weight", "feat.proj.bias", cin, d);
    store_.add("mask_embedding", normal("mask_embedding", {1, d}, 1.0));
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string n = "enc." + std::to_string(l);
      add_ln(n + ".sa_ln", d);
      add_attention(n + ".sa", d);
      if (cfg_.has_codebook(l + 1)) {
        add_ln(n + ".ca_ln", d);
        const double s = 1.0 / std::sqrt(static_cast<double>(d));
        store_.add(n + ".ca.wq", normal(n + ".ca.wq", {d, d}, s));
        store_.add(n + ".ca.wk", normal(n + ".ca.wk", {d, d}, s));
        store_.add(n + ".ca.wv", normal(n + ".ca.wv", {d, d}, s));
      }
      add_ln(n + ".ff_ln", d);
      add_ffn(n + ".ff", d, cfg_.d_ff);
    }
    add_ln("enc.final_ln", d);
    for (std::size_t a = 0; a < cfg_.E; ++a) store_.add(codebook_name(a), normal(codebook_name(a), {cfg_.M, d}, 1.0));
    add_linear("proj.weight", "proj.bias", d, cfg_.V);
    add_linear("ctc.weight", "ctc.bias", d, cfg_.asr_vocab);
    store_.add("dec.embed", normal("dec.embed", {cfg_.asr_vocab, d}, 1.0 / std::sqrt(static_cast<double>(d))));
    for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
      const std::string n = "dec." + std::to_string(l);
      add_ln(n + ".sa_ln", d);
      add_attention(n + ".sa", d);
      add_ln(n + ".ca_ln", d);
      add_attention(n + ".ca", d);
      add_ln(n + ".ff_ln", d);
      add_ffn(n + ".ff", d, cfg_.d_ff);
    }
    add_ln("dec.final_ln", d);
    add_linear("dec.out.weight", "dec.out.bias", d, cfg_.asr_vocab);
  }

  ModelConfig cfg_;
  std::uint64_t seed_;
  ParameterStore<S> store_;
};

}  // namespace accent_ssl::model
