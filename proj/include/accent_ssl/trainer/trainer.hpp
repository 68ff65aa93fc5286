#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "accent_ssl/aud/kmeans.hpp"
#include "accent_ssl/config.hpp"
#include "accent_ssl/corpus/corpus.hpp"
#include "accent_ssl/model/checkpoint.hpp"
#include "accent_ssl/objectives/losses.hpp"
#include "accent_ssl/trainer/optim.hpp"

namespace accent_ssl::trainer {

namespace fs = std::filesystem;
using model::CodebookTrainability;

enum class Stage { PretrainIter1, PretrainIter2, Finetune };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::PretrainIter1: return "pretrain_iter1";
    case Stage::PretrainIter2: return "pretrain_iter2";
    case Stage::Finetune: return "finetune";
  }
  return "?";
}

struct FreezeSpec {
  bool conv_frontend = false;
  std::size_t encoder_layers_frozen = 0;
  CodebookTrainability codebooks = CodebookTrainability::Both;
  bool codebooks_frozen = false;
  // Extra name prefixes to freeze; "*" freezes everything.
  std::vector<std::string> prefixes;

  bool frozen(const std::string& name) const {
    for (const auto& p : prefixes)
      if (p == "*" || name.rfind(p, 0) == 0) return true;
    if (conv_frontend && model::Model<double>::is_conv_frontend(name)) return true;
    const int layer = model::Model<double>::encoder_layer_of(name);
    if (layer >= 0 && static_cast<std::size_t>(layer) < encoder_layers_frozen) return true;
    if (codebooks_frozen && model::Model<double>::is_codebook(name)) return true;
    return false;
  }
};

template <class S>
void apply_freeze(model::Model<S>& m, const FreezeSpec& spec) {
  for (std::size_t i = 0; i < m.params().size(); ++i) m.params()[i].trainable = !spec.frozen(m.params()[i].name);
}

struct TrainConfig {
  Stage stage = Stage::PretrainIter1;
  double lr = 1e-3;
  std::size_t warmup = 200;
  std::size_t max_steps = 2000;
  std::size_t batch = 8;       // utterances per micro-batch
  std::size_t grad_accum = 1;  // micro-batches per update
  AdamConfig adam;
  std::uint64_t seed = 1;
  std::size_t log_every = 10;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  double dropout = 0.0;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 disables
  FreezeSpec freeze;
  objectives::MaskPolicy mask;
  double alpha = 1.0;
  objectives::JointLossConfig joint;
  std::optional<objectives::MaskPolicy> finetune_mask;  // input masking while fine-tuning

  void validate() const {
    if (lr <= 0.0) throw ConfigError("lr must be > 0");
    if (max_steps < 1) throw ConfigError("steps must be >= 1");
    if (warmup > max_steps) throw ConfigError("warmup steps exceed max steps");
    if (batch < 1 || grad_accum < 1) throw ConfigError("batch and grad_accum must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0,1)");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0,1]");
    mask.validate();
    joint.validate();
    if (finetune_mask) finetune_mask->validate();
  }

  // Keys are read as `<section>.<key>`, falling back to `train.<key>`, where
  // section is "pretrain" or "finetune".
  static TrainConfig from(const KeyValueConfig& c, Stage stage, std::size_t n_layers) {
    const std::string section = stage == Stage::Finetune ? "finetune" : "pretrain";
    auto key = [&](const std::string& k) {
      const std::string specific = section + "." + k;
      return c.has(specific) ? specific : "train." + k;
    };
    TrainConfig t;
    t.stage = stage;
    t.max_steps = 300;
    t.warmup = 50;
    if (stage == Stage::Finetune) {
      t.max_steps = 800;
      t.warmup = 100;
      t.dropout = 0.1;
      t.freeze.conv_frontend = true;
      t.freeze.encoder_layers_frozen = n_layers / 4;
    }
    t.lr = c.get_double(key("lr"), t.lr);
    t.warmup = static_cast<std::size_t>(c.get_int(key("warmup"), static_cast<long long>(t.warmup)));
    t.max_steps = static_cast<std::size_t>(c.get_int(key("steps"), static_cast<long long>(t.max_steps)));
    t.batch = static_cast<std::size_t>(c.get_int(key("batch"), static_cast<long long>(t.batch)));
    t.grad_accum = static_cast<std::size_t>(c.get_int(key("grad_accum"), static_cast<long long>(t.grad_accum)));
    t.adam.beta1 = c.get_double(key("adam_beta1"), t.adam.beta1);
    t.adam.beta2 = c.get_double(key("adam_beta2"), t.adam.beta2);
    t.adam.eps = c.get_double(key("adam_eps"), t.adam.eps);
    t.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(t.seed)));
    t.log_every = static_cast<std::size_t>(c.get_int(key("log_every"), static_cast<long long>(t.log_every)));
    t.checkpoint_every = static_cast<std::size_t>(c.get_int(key("checkpoint_every"), 0));
    t.dropout = c.get_double(key("dropout"), t.dropout);
    t.clip_norm = c.get_double(key("clip_norm"), t.clip_norm);
    t.freeze.conv_frontend = c.get_bool(key("freeze_conv"), t.freeze.conv_frontend);
    t.freeze.encoder_layers_frozen = static_cast<std::size_t>(
        c.get_int(key("freeze_layers"), static_cast<long long>(t.freeze.encoder_layers_frozen)));
    if (c.has(key("freeze_prefixes"))) {
      std::stringstream ss(c.get_string(key("freeze_prefixes")));
      std::string item;
      while (std::getline(ss, item, ','))
        if (!KeyValueConfig::trim(item).empty()) t.freeze.prefixes.push_back(KeyValueConfig::trim(item));
    }
    t.freeze.codebooks = model::parse_trainability(c.get_string("model.codebook_trainability", "both"));
    t.freeze.codebooks_frozen = stage == Stage::Finetune && t.freeze.codebooks != CodebookTrainability::Both;
    t.mask.mask_prob = c.get_double("mask.prob", t.mask.mask_prob);
    t.mask.span_len = static_cast<std::size_t>(c.get_int("mask.span", static_cast<long long>(t.mask.span_len)));
    t.alpha = c.get_double("mask.alpha", t.alpha);
    t.joint.eta = c.get_double("loss.eta", t.joint.eta);
    t.joint.label_smoothing = c.get_double("loss.label_smoothing", t.joint.label_smoothing);
    if (stage == Stage::Finetune && c.get_double("finetune.mask_prob", 0.0) > 0.0) {
      objectives::MaskPolicy fm;
      fm.mask_prob = c.get_double("finetune.mask_prob");
      fm.span_len = static_cast<std::size_t>(c.get_int("finetune.mask_span", static_cast<long long>(t.mask.span_len)));
      t.finetune_mask = fm;
    }
    t.validate();
    return t;
  }

  std::size_t utts_per_step() const { return batch * grad_accum; }
};

// ---- data ----

struct Example {
  std::string utt_id;
  int accent = corpus::kUnknownAccent;
  std::vector<double> samples;
  std::vector<std::size_t> tokens;  // transcript tokens, may be empty
  aud::PseudoLabelSequence labels;  // pretraining targets, may be empty
};

inline std::vector<Example> load_examples(const fs::path& corpus_dir, const std::vector<corpus::Utterance>& rows,
                                          corpus::Split split) {
  std::vector<Example> out;
  for (const auto& u : rows) {
    if (u.split != split) continue;
    Example e;
    e.utt_id = u.utt_id;
    e.accent = u.accent_id;
    e.samples = corpus::load_audio(corpus_dir, u).samples;
    e.tokens = model::vocab::encode(u.transcript);
    out.push_back(std::move(e));
  }
  return out;
}

inline void attach_labels(std::vector<Example>& examples, const std::map<std::string, aud::PseudoLabelSequence>& labels) {
  for (auto& e : examples) {
    auto it = labels.find(e.utt_id);
    if (it == labels.end()) throw DataError("no pseudo-labels for utterance " + e.utt_id);
    e.labels = it->second;
  }
}

// Deterministic utterance order: a fresh permutation per epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {
    if (n == 0) throw DataError("no training utterances");
  }
  std::size_t next() {
    if (pos_ == order_.size()) reshuffle();
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    Rng rng(derive_seed(seed_, "batch_order", epoch_++));
    for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
    pos_ = 0;
  }
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

// ---- per-utterance losses ----

struct UttLoss {
  double loss = 0.0;
  double accuracy = 0.0;  // masked accuracy (pretraining only)
};

template <class S>
std::optional<int> accent_for(const model::Model<S>& m, const Example& e) {
  if (m.config().codebook_layers.empty()) return std::nullopt;
  if (e.accent == corpus::kUnknownAccent)
    throw ConfigError("utterance " + e.utt_id + " has no accent label but the model uses codebooks");
  return e.accent;
}

// Redraws until at least one frame is masked; a single uniform span is the
// fallback for very short sequences.
inline std::vector<std::size_t> draw_nonempty_mask(std::size_t T, const objectives::MaskPolicy& policy, Rng& rng) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    auto set = objectives::draw_mask(T, policy, rng);
    if (!set.empty()) return set;
  }
  return objectives::spans_to_mask(T, {static_cast<std::size_t>(rng.below(T))}, policy.span_len);
}

template <class S>
Var<S> pretrain_loss(model::Model<S>& m, Tape<S>& tape, const Example& e, const TrainConfig& cfg, Rng& rng,
                     UttLoss& stats) {
  auto frames = m.conv_encode(tape, e.samples);
  if (frames.rows() != e.labels.size())
    throw DataError("utterance " + e.utt_id + ": " + std::to_string(frames.rows()) + " frames but " +
                    std::to_string(e.labels.size()) + " pseudo-labels");
  const auto set = cfg.alpha > 0.0 ? draw_nonempty_mask(frames.rows(), cfg.mask, rng)
                                   : objectives::draw_mask(frames.rows(), cfg.mask, rng);
  auto masked = objectives::apply_mask(frames, set, m.mask_embedding(tape));
  const model::ForwardOptions opt{cfg.dropout, &rng};
  auto enc = m.encode(tape, masked, accent_for(m, e), opt);
  auto logits = m.project_tokens(tape, enc.final);
  auto loss = objectives::masked_prediction_loss(logits, e.labels, set, cfg.alpha);
  stats.loss = static_cast<double>(loss.item());
  stats.accuracy = objectives::masked_accuracy(logits.value(), e.labels, set);
  return loss;
}

template <class S>
Var<S> finetune_loss(model::Model<S>& m, Tape<S>& tape, const Example& e, const TrainConfig& cfg, Rng& rng,
                     UttLoss& stats) {
  if (e.tokens.empty()) throw DataError("utterance " + e.utt_id + " has an empty transcript");
  auto frames = m.conv_encode(tape, e.samples);
  if (cfg.finetune_mask)
    frames = objectives::apply_mask(frames, objectives::draw_mask(frames.rows(), *cfg.finetune_mask, rng),
                                    m.mask_embedding(tape));
  const model::ForwardOptions opt{cfg.dropout, &rng};
  auto enc = m.encode(tape, frames, accent_for(m, e), opt);
  auto l_ctc = objectives::ctc_loss(ops::log_softmax_rows(m.ctc_logits(tape, enc.final)), e.tokens);
  auto dec = m.decoder_logits(tape, enc.final, objectives::with_sos(e.tokens), opt);
  auto l_att = objectives::attention_ce_loss(dec, objectives::with_eos(e.tokens), cfg.joint.label_smoothing);
  auto loss = objectives::joint_loss(l_ctc, l_att, cfg.joint.eta);
  stats.loss = static_cast<double>(loss.item());
  return loss;
}

// Mean joint loss over examples without dropout or gradients.
template <class S>
double evaluate_finetune_loss(model::Model<S>& m, const std::vector<Example>& examples, const TrainConfig& cfg) {
  TrainConfig eval = cfg;
  eval.dropout = 0.0;
  eval.finetune_mask.reset();
  Rng rng(0);
  double total = 0.0;
  for (const auto& e : examples) {
    Tape<S> tape(false);
    UttLoss s;
    finetune_loss(m, tape, e, eval, rng, s);
    total += s.loss;
  }
  return examples.empty() ? 0.0 : total / static_cast<double>(examples.size());
}

// ---- metrics ----

// Append-only NDJSON log; each record is written and flushed as one line.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const fs::path& path) : out_(std::make_unique<std::ofstream>(path, std::ios::app)) {
    if (!*out_) throw IoError("cannot open metrics file " + path.string());
  }
  void write(const nlohmann::ordered_json& record) {
    if (!out_) return;
    *out_ << record.dump() << '\n';
    out_->flush();
  }

 private:
  std::unique_ptr<std::ofstream> out_;
};

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> trace;
  std::vector<double> epoch_dev_loss;  // filled when dev examples are supplied
};

struct TrainHooks {
  MetricsLog* metrics = nullptr;
  const std::vector<Example>* dev = nullptr;  // evaluated every `dev_every` steps
  std::size_t dev_every = 0;
  std::function<void(std::size_t step)> checkpoint;  // called every checkpoint_every steps
};

// Shared optimization loop. Each update sums per-utterance gradients over
// batch * grad_accum utterances in sampler order and divides by that count,
// so the split into micro-batches never changes the update.
template <class S>
TrainResult train_loop(model::Model<S>& m, const std::vector<Example>& examples, const TrainConfig& cfg,
                       const TrainHooks& hooks = {}) {
  cfg.validate();
  const bool pretraining = cfg.stage != Stage::Finetune;
  Adam<S> adam(cfg.adam);
  BatchSampler sampler(examples.size(), derive_seed(cfg.seed, stage_name(cfg.stage)));
  const std::uint64_t noise_seed = derive_seed(cfg.seed, std::string(stage_name(cfg.stage)) + ":noise");
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result;
  std::uint64_t utt_counter = 0;
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    std::map<std::string, Tensor<S>> grads;
    double loss_sum = 0.0, acc_sum = 0.0;
    const std::size_t n = cfg.utts_per_step();
    for (std::size_t micro = 0; micro < cfg.grad_accum; ++micro) {
      for (std::size_t b = 0; b < cfg.batch; ++b) {
        const Example& e = examples[sampler.next()];
        Rng rng(derive_seed(noise_seed, "utt", utt_counter++));
        Tape<S> tape(true);
        UttLoss stats;
        Var<S> loss = pretraining ? pretrain_loss(m, tape, e, cfg, rng, stats) : finetune_loss(m, tape, e, cfg, rng, stats);
        tape.backward(loss);
        tape.for_each_param_grad([&](const Parameter<S>& p, const Tensor<S>& g) {
          auto it = grads.find(p.name);
          if (it == grads.end()) grads.emplace(p.name, g);
          else it->second += g;
        });
        loss_sum += stats.loss;
        acc_sum += stats.accuracy;
      }
    }
    const S inv = static_cast<S>(1.0 / static_cast<double>(n));
    for (auto& [name, g] : grads)
      for (auto& v : g.values()) v *= inv;
    if (cfg.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& [name, g] : grads)
        for (S v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
      const double norm = std::sqrt(sq);
      if (norm > cfg.clip_norm) {
        const S f = static_cast<S>(cfg.clip_norm / norm);
        for (auto& [name, g] : grads)
          for (auto& v : g.values()) v *= f;
      }
    }
    const double lr = learning_rate(step, cfg.lr, cfg.warmup);
    adam.step(m.params(), grads, lr);

    StepRecord rec{step, lr, loss_sum / static_cast<double>(n), acc_sum / static_cast<double>(n)};
    result.trace.push_back(rec);
    if (hooks.metrics && (step % std::max<std::size_t>(cfg.log_every, 1) == 0 || step == cfg.max_steps)) {
      nlohmann::ordered_json j;
      j["stage"] = stage_name(cfg.stage);
      j["step"] = step;
      j["lr"] = lr;
      j["loss"] = rec.loss;
      if (pretraining) j["masked_accuracy"] = rec.accuracy;
      j["seed"] = cfg.seed;
      j["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      hooks.metrics->write(j);
    }
    if (hooks.dev && hooks.dev_every > 0 && step % hooks.dev_every == 0) {
      const double dev = evaluate_finetune_loss(m, *hooks.dev, cfg);
      result.epoch_dev_loss.push_back(dev);
      if (hooks.metrics) hooks.metrics->write({{"stage", stage_name(cfg.stage)}, {"step", step}, {"dev_loss", dev}});
    }
    if (hooks.checkpoint && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) hooks.checkpoint(step);
  }
  return result;
}

// ---- stages ----

// Pretraining on examples that carry pseudo-labels. Every parameter starts
// trainable unless the freeze spec says otherwise.
template <class S>
TrainResult pretrain(model::Model<S>& m, const std::vector<Example>& examples, const TrainConfig& cfg,
                     const TrainHooks& hooks = {}) {
  if (cfg.stage == Stage::Finetune) throw ConfigError("pretrain() called with a finetune config");
  FreezeSpec spec = cfg.freeze;
  spec.codebooks_frozen = false;
  apply_freeze(m, spec);
  return train_loop(m, examples, cfg, hooks);
}

// Fields of the model shape that a fine-tuning run must share with its
// pretrained checkpoint.
inline std::vector<std::string> incompatible_fields(const model::ModelConfig& ckpt, const model::ModelConfig& want) {
  std::vector<std::string> out;
  auto check = [&](const char* name, std::size_t a, std::size_t b) {
    if (a != b) out.push_back(std::string(name) + " (checkpoint " + std::to_string(a) + ", config " + std::to_string(b) + ")");
  };
  check("d", ckpt.d, want.d);
  check("N_layers", ckpt.n_layers, want.n_layers);
  check("E", ckpt.E, want.E);
  check("M", ckpt.M, want.M);
  if (ckpt.codebook_layers != want.codebook_layers) out.push_back("codebook_layers");
  return out;
}

inline void require_compatible(const model::ModelConfig& ckpt, const model::ModelConfig& want) {
  const auto bad = incompatible_fields(ckpt, want);
  if (bad.empty()) return;
  std::string msg = "checkpoint is incompatible with the configured model:";
  for (const auto& f : bad) msg += " " + f + ";";
  throw ConfigError(msg);
}

// Prepares a pretrained model for fine-tuning: fresh decoder and CTC head,
// codebooks per trainability mode, freeze spec applied.
template <class S>
void prepare_finetune(model::Model<S>& m, const TrainConfig& cfg) {
  m.reinit_finetune_heads(derive_seed(cfg.seed, "finetune_heads"));
  if (cfg.freeze.codebooks == CodebookTrainability::RandomFixed)
    m.randomize_codebooks(derive_seed(cfg.seed, "finetune_codebooks"));
  FreezeSpec spec = cfg.freeze;
  spec.codebooks_frozen = cfg.freeze.codebooks != CodebookTrainability::Both;
  apply_freeze(m, spec);
}

template <class S>
TrainResult finetune(model::Model<S>& m, const std::vector<Example>& examples, const TrainConfig& cfg,
                     const TrainHooks& hooks = {}) {
  if (cfg.stage != Stage::Finetune) throw ConfigError("finetune() called with a pretraining config");
  prepare_finetune(m, cfg);
  return train_loop(m, examples, cfg, hooks);
}

}  // namespace accent_ssl::trainer
