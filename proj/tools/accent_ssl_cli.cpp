#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "accent_ssl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace accent_ssl;

namespace {

enum Exit { kOk = 0, kIo = 1, kConfig = 2, kMissing = 3 };

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<long long> seed;
  std::vector<std::string> overrides;
  std::string corpus;
  bool force = false;
  std::size_t workers = 1;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool with_corpus) {
  cmd->add_option("--config", a.config, "Run config file (key = value lines, `include = file` supported)");
  cmd->add_option("--out", a.out, "Output directory")->required();
  cmd->add_option("--seed", a.seed, "Global seed; overrides the `seed` key");
  cmd->add_option("--set", a.overrides, "Override a config key, key=value (repeatable)");
  cmd->add_flag("--force", a.force, "Reuse an existing output directory");
  cmd->add_option("--workers", a.workers, "Worker threads for decoding")->check(CLI::PositiveNumber);
  if (with_corpus) cmd->add_option("--corpus", a.corpus, "Corpus directory (default <out>/corpus)");
}

// Config file, then --seed, then --set overrides in order.
KeyValueConfig effective_config(const CommonArgs& a) {
  KeyValueConfig kv = a.config.empty() ? KeyValueConfig() : KeyValueConfig::from_file(a.config);
  if (a.seed) kv.set("seed", std::to_string(*a.seed));
  for (const auto& o : a.overrides) kv.apply_override(o);
  if (!a.corpus.empty()) kv.set("corpus_dir", a.corpus);
  kv.set("workers", std::to_string(a.workers));
  return kv;
}

// Refuses to overwrite a stage directory unless --force was given.
void guard(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw IoError("output directory " + dir.string() + " exists; pass --force to overwrite");
}

int report(const std::exception& e, int code) {
  std::cerr << "error: " << e.what() << '\n';
  return code;
}

template <class F>
int guarded(F&& f) {
  try {
    f();
    return kOk;
  } catch (const MissingArtifactError& e) {
    return report(e, kMissing);
  } catch (const ConfigError& e) {
    return report(e, kConfig);
  } catch (const ValidationError& e) {
    return report(e, kConfig);
  } catch (const ParseError& e) {
    return report(e, kConfig);
  } catch (const IoError& e) {
    return report(e, kIo);
  } catch (const std::filesystem::filesystem_error& e) {
    return report(e, kIo);
  } catch (const std::exception& e) {
    return report(e, kIo);
  }
}

int cmd_corpus(const CommonArgs& a) {
  return guarded([&] {
    const auto kv = effective_config(a);
    const auto cc = corpus::CorpusConfig::from(kv);
    const auto summary = corpus::build_corpus(cc, a.out, a.force);
    kv.save(fs::path(a.out) / "effective.cfg");
    std::cout << "wrote " << summary.rows << " utterances to " << summary.manifest.string() << '\n';
  });
}

int cmd_kmeans(const CommonArgs& a, int iter) {
  return guarded([&] {
    const auto kv = effective_config(a);
    const auto p = pipeline::run_paths(kv, a.out);
    guard(p.aud(iter), a.force);
    const auto c = pipeline::stage_kmeans(kv, p, iter);
    std::cout << "k=" << c.k << " feature_space=" << c.feature_space << " -> " << p.aud(iter).string() << '\n';
  });
}

int cmd_pretrain(const CommonArgs& a, int iter) {
  return guarded([&] {
    const auto kv = effective_config(a);
    const auto p = pipeline::run_paths(kv, a.out);
    if (iter == 0) {
      for (int i : {1, 2}) {
        guard(p.aud(i), a.force);
        guard(p.pretrain(i), a.force);
      }
      pipeline::run_two_iteration_pretraining(kv, p);
      std::cout << "pretrained -> " << pipeline::RunPaths::checkpoint(p.pretrain(2)).string() << '\n';
    } else {
      guard(p.pretrain(iter), a.force);
      pipeline::stage_pretrain(kv, p, iter);
      std::cout << "pretrained -> " << pipeline::RunPaths::checkpoint(p.pretrain(iter)).string() << '\n';
    }
  });
}

int cmd_finetune(const CommonArgs& a) {
  return guarded([&] {
    const auto kv = effective_config(a);
    const auto p = pipeline::run_paths(kv, a.out);
    guard(p.finetune(), a.force);
    pipeline::stage_finetune(kv, p);
    std::cout << "finetuned -> " << pipeline::RunPaths::checkpoint(p.finetune()).string() << '\n';
  });
}

int cmd_decode(const CommonArgs& a) {
  return guarded([&] {
    const auto kv = effective_config(a);
    const auto p = pipeline::run_paths(kv, a.out);
    guard(p.decode(), a.force);
    std::cout << decode::format_table(pipeline::stage_decode(kv, p));
  });
}

int cmd_eval(const CommonArgs& a, std::optional<int> withhold) {
  return guarded([&] {
    const auto kv = effective_config(a);
    const auto p = pipeline::run_paths(kv, a.out);
    guard(p.eval(), a.force);
    std::cout << decode::format_table(pipeline::stage_eval(kv, p, withhold));
    if (withhold) {
      std::ifstream in(p.eval() / ("withhold_" + std::to_string(*withhold) + ".json"));
      const auto j = nlohmann::json::parse(in);
      std::cout << "accent " << *withhold << " test utterances: all codebooks WER "
                << 100.0 * j["all_codebooks"]["wer"].get<double>() << "%, codebook withheld WER "
                << 100.0 * j["withheld"]["wer"].get<double>() << "%\n";
    }
  });
}

int cmd_run(const CommonArgs& a) {
  return guarded([&] {
    const auto kv = effective_config(a);
    const auto p = pipeline::run_paths(kv, a.out);
    guard(p.aud(1), a.force);
    if (!fs::exists(p.manifest())) corpus::build_corpus(corpus::CorpusConfig::from(kv), p.corpus, a.force);
    pipeline::run_two_iteration_pretraining(kv, p);
    pipeline::stage_finetune(kv, p);
    pipeline::stage_decode(kv, p);
    std::cout << decode::format_table(pipeline::stage_eval(kv, p, std::nullopt));
  });
}

int cmd_ablate(const CommonArgs& a) {
  return guarded([&] {
    const auto kv = effective_config(a);
    guard(fs::path(a.out) / "summary.tsv", a.force);
    const auto rows = pipeline::run_ablation(kv, a.out);
    std::cout << rows.size() << " ablation rows -> " << (fs::path(a.out) / "summary.tsv").string() << '\n';
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Accent-codebook self-supervised ASR: corpus synthesis, clustering, training, decoding"};
  app.require_subcommand(1);
  std::vector<CommonArgs> args(9);
  int kmeans_iter = 1;
  int pretrain_iter = 0;
  std::optional<int> withhold;

  auto* corpus_cmd = app.add_subcommand("corpus", "Generate the synthetic accented corpus");
  add_common(corpus_cmd, args[0], false);

  auto* kmeans_cmd = app.add_subcommand("kmeans", "Cluster features into pseudo-labels for one pretraining iteration");
  add_common(kmeans_cmd, args[1], true);
  kmeans_cmd->add_option("--iter", kmeans_iter, "1: conv-frontend features, 2: encoder layer of the iteration-1 model")
      ->check(CLI::IsMember({1, 2}));

  auto* pretrain_cmd = app.add_subcommand("pretrain", "Masked-prediction pretraining");
  add_common(pretrain_cmd, args[2], true);
  pretrain_cmd
      ->add_option("--iter", pretrain_iter,
                   "1 or 2 trains one iteration on existing labels; 0 (default) runs clustering and both iterations")
      ->check(CLI::IsMember({0, 1, 2}));

  auto* finetune_cmd = app.add_subcommand("finetune", "Joint CTC-attention fine-tuning of the pretrained encoder");
  add_common(finetune_cmd, args[3], true);

  auto* decode_cmd = app.add_subcommand("decode", "Accent-agnostic joint beam search over the test split");
  add_common(decode_cmd, args[4], true);

  auto* eval_cmd = app.add_subcommand("eval", "Per-accent WER table from the decode output");
  add_common(eval_cmd, args[5], true);
  eval_cmd->add_option("--withhold-accent", withhold,
                       "Also decode this seen accent's test utterances without its codebook");

  auto* run_cmd = app.add_subcommand("run", "Corpus (if missing), pretraining, fine-tuning, decoding and evaluation");
  add_common(run_cmd, args[6], true);

  auto* ablate_cmd = app.add_subcommand("ablate", "Sweep codebook placement, size and trainability");
  add_common(ablate_cmd, args[7], true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  if (*corpus_cmd) return cmd_corpus(args[0]);
  if (*kmeans_cmd) return cmd_kmeans(args[1], kmeans_iter);
  if (*pretrain_cmd) return cmd_pretrain(args[2], pretrain_iter);
  if (*finetune_cmd) return cmd_finetune(args[3]);
  if (*decode_cmd) return cmd_decode(args[4]);
  if (*eval_cmd) return cmd_eval(args[5], withhold);
  if (*run_cmd) return cmd_run(args[6]);
  if (*ablate_cmd) return cmd_ablate(args[7]);
  return kConfig;
}
