#pragma once

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "accent_ssl/aud/features.hpp"
#include "accent_ssl/decode/beam.hpp"
#include "accent_ssl/decode/report.hpp"
#include "accent_ssl/trainer/trainer.hpp"

// Directory-level stages shared by the command-line tool and the
// end-to-end acceptance run. A run directory holds one subdirectory per
// stage; each stage persists the effective config it ran with.
namespace accent_ssl::pipeline {

namespace fs = std::filesystem;
using Net = model::Model<float>;

struct RunPaths {
  fs::path run;
  fs::path corpus;

  fs::path aud(int iter) const { return run / ("aud_iter" + std::to_string(iter)); }
  fs::path pretrain(int iter) const { return run / ("pretrain_iter" + std::to_string(iter)); }
  fs::path finetune() const { return run / "finetune"; }
  fs::path decode() const { return run / "decode"; }
  fs::path eval() const { return run / "eval"; }
  fs::path manifest() const { return corpus / "manifest.tsv"; }
  static fs::path checkpoint(const fs::path& stage_dir) { return stage_dir / "checkpoint"; }
  static fs::path centroids(const fs::path& aud_dir) { return aud_dir / "centroids.json"; }
  static fs::path labels(const fs::path& aud_dir) { return aud_dir / "labels.bin"; }
};

// `corpus_dir` overrides the default <run>/corpus location.
inline RunPaths run_paths(const KeyValueConfig& kv, const fs::path& run_dir) {
  RunPaths p;
  p.run = run_dir;
  p.corpus = kv.has("corpus_dir") ? fs::path(kv.get_string("corpus_dir")) : run_dir / "corpus";
  return p;
}

inline void require(const fs::path& p) {
  if (!fs::exists(p)) throw MissingArtifactError(p.string());
}

inline std::uint64_t run_seed(const KeyValueConfig& kv) { return static_cast<std::uint64_t>(kv.get_int("seed", 1)); }

// The model has one codebook per seen accent unless model.E says otherwise.
inline model::ModelConfig model_config(const KeyValueConfig& kv, const corpus::CorpusConfig& cc) {
  KeyValueConfig c = kv;
  c.set_default("model.E", cc.e_seen);
  return model::ModelConfig::from(c);
}

struct Corpus {
  corpus::CorpusConfig config;
  std::vector<corpus::Utterance> rows;
};

inline Corpus load_corpus(const RunPaths& p) {
  require(p.manifest());
  Corpus c;
  c.config = corpus::load_corpus_config(p.corpus);
  c.rows = corpus::load_manifest(p.manifest(), c.config.num_accents());
  return c;
}

inline nlohmann::json with_step(nlohmann::json meta, std::size_t step) {
  meta["step"] = step;
  return meta;
}

inline void persist_config(const fs::path& dir, const KeyValueConfig& kv) {
  fs::create_directories(dir);
  kv.save(dir / "effective.cfg");
}

inline void reset_dir(const fs::path& dir) {
  if (fs::exists(dir)) fs::remove_all(dir);
  fs::create_directories(dir);
}

// ---- clustering ----

// Iteration 1 clusters conv-frontend features of the freshly initialized
// model; iteration 2 clusters an encoder layer of the iteration-1 model.
inline aud::Centroids stage_kmeans(const KeyValueConfig& kv, const RunPaths& p, int iter) {
  if (iter != 1 && iter != 2) throw ConfigError("iteration must be 1 or 2");
  const Corpus c = load_corpus(p);
  const auto mc = model_config(kv, c.config);
  const std::uint64_t seed = run_seed(kv);
  aud::FeatureSource src = aud::FeatureSource::input_features();
  std::optional<Net> net;
  if (iter == 1) {
    net.emplace(mc, seed);
  } else {
    const fs::path ck = RunPaths::checkpoint(p.pretrain(1));
    require(ck);
    net.emplace(std::move(model::load_checkpoint<float>(ck).model));
    const long long layer = kv.get_int("aud.layer", static_cast<long long>(std::max<std::size_t>(1, mc.n_layers / 2)));
    src = aud::FeatureSource::encoder_layer(static_cast<std::size_t>(layer));
  }
  const auto feats = aud::extract_clustering_features(*net, p.corpus, c.rows, src);
  aud::KMeansOptions opt;
  opt.max_iters = static_cast<std::size_t>(kv.get_int("aud.max_iters", static_cast<long long>(opt.max_iters)));
  // Optional stride subsample for the fit; every frame is still labelled.
  const auto max_fit = static_cast<std::size_t>(kv.get_int("aud.max_fit_frames", 0));
  Tensor<double> fit = feats.features;
  if (max_fit > 0 && fit.rows() > max_fit) {
    const std::size_t stride = (fit.rows() + max_fit - 1) / max_fit;
    const std::size_t n = (fit.rows() + stride - 1) / stride;
    fit = Tensor<double>::matrix(n, feats.features.cols());
    for (std::size_t i = 0; i < n; ++i) {
      auto src_row = feats.features.row(i * stride);
      std::copy(src_row.begin(), src_row.end(), fit.row(i).begin());
    }
  }
  const auto cent = aud::kmeans_fit(fit, mc.V, derive_seed(seed, "kmeans", static_cast<std::uint64_t>(iter)), opt,
                                    src.name());
  const fs::path dir = p.aud(iter);
  reset_dir(dir);
  aud::save_centroids(RunPaths::centroids(dir), cent);
  aud::save_labels(RunPaths::labels(dir), aud::label_utterances(feats, cent));
  persist_config(dir, kv);
  return cent;
}

// ---- pretraining ----

inline void stage_pretrain(const KeyValueConfig& kv, const RunPaths& p, int iter) {
  if (iter != 1 && iter != 2) throw ConfigError("iteration must be 1 or 2");
  const Corpus c = load_corpus(p);
  const auto mc = model_config(kv, c.config);
  const std::uint64_t seed = run_seed(kv);
  const fs::path labels = RunPaths::labels(p.aud(iter));
  require(labels);
  std::optional<Net> net;
  if (iter == 1) {
    net.emplace(mc, seed);
  } else {
    const fs::path ck = RunPaths::checkpoint(p.pretrain(1));
    require(ck);
    net.emplace(std::move(model::load_checkpoint<float>(ck).model));
  }
  const auto stage = iter == 1 ? trainer::Stage::PretrainIter1 : trainer::Stage::PretrainIter2;
  auto tc = trainer::TrainConfig::from(kv, stage, mc.n_layers);
  tc.seed = derive_seed(seed, trainer::stage_name(stage));
  auto examples = trainer::load_examples(p.corpus, c.rows, corpus::Split::Pretrain);
  trainer::attach_labels(examples, aud::load_labels(labels));

  const fs::path dir = p.pretrain(iter);
  reset_dir(dir);
  persist_config(dir, kv);
  trainer::MetricsLog log(dir / "metrics.ndjson");
  trainer::TrainHooks hooks;
  hooks.metrics = &log;
  const nlohmann::json meta{{"stage", trainer::stage_name(stage)}, {"seed", seed}, {"config_hash", kv.hash()}};
  hooks.checkpoint = [&](std::size_t step) {
    model::save_checkpoint(dir / "checkpoints" / ("step_" + std::to_string(step)), *net,
                           tc.freeze.codebooks, with_step(meta, step));
  };
  trainer::pretrain(*net, examples, tc, hooks);
  model::save_checkpoint(RunPaths::checkpoint(dir), *net, tc.freeze.codebooks, with_step(meta, tc.max_steps));
}

inline void run_two_iteration_pretraining(const KeyValueConfig& kv, const RunPaths& p) {
  stage_kmeans(kv, p, 1);
  stage_pretrain(kv, p, 1);
  stage_kmeans(kv, p, 2);
  stage_pretrain(kv, p, 2);
}

// ---- fine-tuning ----

// `finetune.init` points at a pretrained checkpoint directory; by default
// the run's iteration-2 checkpoint is used.
inline void stage_finetune(const KeyValueConfig& kv, const RunPaths& p) {
  const Corpus c = load_corpus(p);
  const auto mc = model_config(kv, c.config);
  const std::uint64_t seed = run_seed(kv);
  const fs::path init = kv.has("finetune.init") ? fs::path(kv.get_string("finetune.init"))
                                                : RunPaths::checkpoint(p.pretrain(2));
  require(init);
  Net net = std::move(model::load_checkpoint<float>(init).model);
  trainer::require_compatible(net.config(), mc);
  auto tc = trainer::TrainConfig::from(kv, trainer::Stage::Finetune, mc.n_layers);
  tc.seed = derive_seed(seed, "finetune");
  const auto examples = trainer::load_examples(p.corpus, c.rows, corpus::Split::Finetune);
  const auto dev = trainer::load_examples(p.corpus, c.rows, corpus::Split::Dev);
  std::vector<trainer::Example> dev_seen;
  for (const auto& e : dev)
    if (e.accent >= 0 && static_cast<std::size_t>(e.accent) < mc.E) dev_seen.push_back(e);

  const fs::path dir = p.finetune();
  reset_dir(dir);
  persist_config(dir, kv);
  trainer::MetricsLog log(dir / "metrics.ndjson");
  trainer::TrainHooks hooks;
  hooks.metrics = &log;
  hooks.dev = &dev_seen;
  hooks.dev_every = static_cast<std::size_t>(kv.get_int("finetune.dev_every", 0));
  const nlohmann::json meta{{"stage", "finetune"}, {"seed", seed}, {"config_hash", kv.hash()},
                            {"init", init.string()}};
  hooks.checkpoint = [&](std::size_t step) {
    model::save_checkpoint(dir / "checkpoints" / ("step_" + std::to_string(step)), net, tc.freeze.codebooks,
                           with_step(meta, step));
  };
  trainer::finetune(net, examples, tc, hooks);
  model::save_checkpoint(RunPaths::checkpoint(dir), net, tc.freeze.codebooks, with_step(meta, tc.max_steps));
}

// ---- decoding ----

inline Net load_finetuned(const RunPaths& p) {
  const fs::path ck = RunPaths::checkpoint(p.finetune());
  require(ck);
  return std::move(model::load_checkpoint<float>(ck).model);
}

inline decode::DecodeRecord decode_one(Net& net, const trainer::Example& e, const std::string& ref,
                                       const std::vector<int>& accents, const decode::DecodeConfig& cfg) {
  const auto res = decode::decode_with_accents(net, e.samples, accents, cfg);
  decode::DecodeRecord r;
  r.utt_id = e.utt_id;
  r.hyp = model::vocab::decode(res.tokens);
  r.ref = ref;
  r.accent_true = e.accent;
  r.accent_chosen = res.accent;
  r.score = res.score;
  r.wer = decode::wer(r.ref, r.hyp);
  return r;
}

inline std::vector<int> all_accents(const Net& net) { return decode::accents_without(net.config().E, -1); }

// Runs f(0..n-1) on up to `workers` threads. Results must be written by
// index so the output order never depends on scheduling.
template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& f) {
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::size_t workers(const KeyValueConfig& kv) {
  return static_cast<std::size_t>(std::max<long long>(1, kv.get_int("workers", 1)));
}

inline std::vector<decode::DecodeRecord> decode_examples(Net& net, const std::vector<trainer::Example>& examples,
                                                         const std::vector<int>& accents,
                                                         const decode::DecodeConfig& cfg, std::size_t threads) {
  std::vector<decode::DecodeRecord> out(examples.size());
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    out[i] = decode_one(net, examples[i], model::vocab::decode(examples[i].tokens), accents, cfg);
  });
  return out;
}

// Joint decoding of every test utterance (no accent label consumed).
inline decode::WerTable stage_decode(const KeyValueConfig& kv, const RunPaths& p) {
  Net net = load_finetuned(p);
  const Corpus c = load_corpus(p);
  const auto cfg = decode::DecodeConfig::from(kv);
  const auto records =
      decode_examples(net, trainer::load_examples(p.corpus, c.rows, corpus::Split::Test), all_accents(net), cfg,
                      workers(kv));
  const fs::path dir = p.decode();
  reset_dir(dir);
  persist_config(dir, kv);
  decode::write_records(dir / "decode.ndjson", records);
  const auto table = decode::wer_table(records, c.config.e_seen, c.config.e_unseen);
  std::ofstream(dir / "wer_table.json") << decode::to_json(table).dump(2) << '\n';
  std::ofstream(dir / "wer_table.txt") << decode::format_table(table);
  return table;
}

// Paired comparison on accent-a test utterances: all codebooks versus all
// but codebook a.
struct WithholdReport {
  int accent = 0;
  decode::WerRow all, withheld;
  std::vector<decode::DecodeRecord> all_records, withheld_records;
};

inline nlohmann::ordered_json to_json(const WithholdReport& r) {
  return {{"accent", r.accent}, {"all_codebooks", decode::to_json(r.all)},
          {"withheld", decode::to_json(r.withheld)}};
}

inline WithholdReport withhold_accent(Net& net, const std::vector<trainer::Example>& test, int accent,
                                      const decode::DecodeConfig& cfg, std::size_t threads = 1) {
  if (accent < 0 || static_cast<std::size_t>(accent) >= net.config().E)
    throw ConfigError("withheld accent " + std::to_string(accent) + " is not a seen accent");
  if (net.config().E < 2) throw ConfigError("withholding needs at least two seen accents");
  WithholdReport r;
  r.accent = accent;
  r.all.label = "all codebooks";
  r.withheld.label = "codebook " + std::to_string(accent) + " withheld";
  std::vector<trainer::Example> mine;
  for (const auto& e : test)
    if (e.accent == accent) mine.push_back(e);
  r.all_records = decode_examples(net, mine, all_accents(net), cfg, threads);
  r.withheld_records = decode_examples(net, mine, decode::accents_without(net.config().E, accent), cfg, threads);
  auto pool = [](decode::WerRow& row, const std::vector<decode::DecodeRecord>& recs) {
    for (const auto& rec : recs) {
      ++row.utterances;
      row.words += rec.wer.ref_len;
      row.edits += rec.wer.edits();
    }
  };
  pool(r.all, r.all_records);
  pool(r.withheld, r.withheld_records);
  return r;
}

// WER table from the decode stage, plus an optional withholding report.
inline decode::WerTable stage_eval(const KeyValueConfig& kv, const RunPaths& p, std::optional<int> withhold) {
  const fs::path records_path = p.decode() / "decode.ndjson";
  require(records_path);
  const Corpus c = load_corpus(p);
  const auto table = decode::wer_table(decode::read_records(records_path), c.config.e_seen, c.config.e_unseen);
  const fs::path dir = p.eval();
  reset_dir(dir);
  persist_config(dir, kv);
  std::ofstream(dir / "wer_table.json") << decode::to_json(table).dump(2) << '\n';
  std::ofstream(dir / "wer_table.txt") << decode::format_table(table);
  if (withhold) {
    Net net = load_finetuned(p);
    const auto test = trainer::load_examples(p.corpus, c.rows, corpus::Split::Test);
    const auto rep = withhold_accent(net, test, *withhold, decode::DecodeConfig::from(kv), workers(kv));
    const std::string stem = "withhold_" + std::to_string(*withhold);
    std::ofstream(dir / (stem + ".json")) << to_json(rep).dump(2) << '\n';
    decode::write_records(dir / (stem + ".all.ndjson"), rep.all_records);
    decode::write_records(dir / (stem + ".withheld.ndjson"), rep.withheld_records);
  }
  return table;
}

// ---- ablation sweep ----

// Named codebook placements: "mid" (layer N/2), "lower_half" (1..N/2), "all".
inline std::vector<std::size_t> codebook_placement(const std::string& name, std::size_t n_layers) {
  const std::size_t half = std::max<std::size_t>(1, n_layers / 2);
  std::vector<std::size_t> out;
  if (name == "mid") {
    out.push_back(half);
  } else if (name == "lower_half") {
    for (std::size_t l = 1; l <= half; ++l) out.push_back(l);
  } else if (name == "all") {
    for (std::size_t l = 1; l <= n_layers; ++l) out.push_back(l);
  } else {
    throw ConfigError("unknown codebook placement '" + name + "' (expected mid, lower_half or all)");
  }
  return out;
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!KeyValueConfig::trim(item).empty()) out.push_back(KeyValueConfig::trim(item));
  return out;
}

// Hash of the effective config with location-dependent keys removed, so a
// cell's identity does not depend on where the sweep was written.
inline std::uint64_t portable_hash(const KeyValueConfig& kv) {
  KeyValueConfig c;
  for (const auto& [k, v] : kv.entries())
    if (k != "corpus_dir" && k != "finetune.init" && k != "workers") c.set(k, v);
  return c.hash();
}

struct AblationRow {
  std::string placement;
  std::size_t M = 0;
  std::string trainability;
  std::uint64_t config_hash = 0;
  decode::WerTable table;
};

inline std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// Sweeps placement x M x trainability. Pretraining is shared by the three
// trainability modes of a (placement, M) cell: random_fixed reuses only its
// non-codebook weights.
inline std::vector<AblationRow> run_ablation(const KeyValueConfig& kv, const fs::path& out_dir) {
  const RunPaths base = run_paths(kv, out_dir);
  const Corpus c = load_corpus(base);
  const auto mc = model_config(kv, c.config);
  const auto placements = split_list(kv.get_string("ablate.layers", "mid,lower_half,all"));
  const auto sizes = kv.get_int_list("ablate.M", {4, 8, 16});
  const auto modes = split_list(kv.get_string("ablate.trainability", "both,frozen_after_pretrain,random_fixed"));
  if (placements.empty() || sizes.empty() || modes.empty()) throw ConfigError("ablation sweep is empty");
  for (const auto& m : modes) model::parse_trainability(m);
  for (auto m : sizes)
    if (m < 1) throw ConfigError("ablation codebook sizes must be >= 1");

  std::vector<AblationRow> rows;
  for (const auto& placement : placements) {
    std::string layers;
    for (auto l : codebook_placement(placement, mc.n_layers)) layers += (layers.empty() ? "" : ",") + std::to_string(l);
    for (auto M : sizes) {
      KeyValueConfig cell = kv;
      cell.set("model.codebook_layers", layers);
      cell.set("model.M", std::to_string(M));
      cell.set("model.codebook_trainability", "both");
      cell.set("corpus_dir", base.corpus.string());
      const RunPaths pre = run_paths(cell, out_dir / (placement + "_M" + std::to_string(M)));
      run_two_iteration_pretraining(cell, pre);
      for (const auto& mode : modes) {
        KeyValueConfig t = cell;
        t.set("model.codebook_trainability", mode);
        t.set("finetune.init", RunPaths::checkpoint(pre.pretrain(2)).string());
        const RunPaths ft = run_paths(t, pre.run / mode);
        stage_finetune(t, ft);
        AblationRow row;
        row.placement = placement;
        row.M = static_cast<std::size_t>(M);
        row.trainability = mode;
        row.config_hash = portable_hash(t);
        row.table = stage_decode(t, ft);
        rows.push_back(std::move(row));
      }
    }
  }
  std::ofstream tsv(out_dir / "summary.tsv", std::ios::binary | std::ios::trunc);
  tsv << "placement\tM\ttrainability\tconfig_hash\tseen_wer\tunseen_wer\toverall_wer\n";
  nlohmann::ordered_json js = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    tsv << r.placement << '\t' << r.M << '\t' << r.trainability << '\t' << hex(r.config_hash) << '\t'
        << r.table.seen.wer() << '\t' << r.table.unseen.wer() << '\t' << r.table.overall.wer() << '\n';
    js.push_back({{"placement", r.placement}, {"M", r.M}, {"trainability", r.trainability},
                  {"config_hash", hex(r.config_hash)}, {"wer", decode::to_json(r.table)}});
  }
  std::ofstream(out_dir / "summary.json", std::ios::binary | std::ios::trunc) << js.dump(2) << '\n';
  return rows;
}

}  // namespace accent_ssl::pipeline
