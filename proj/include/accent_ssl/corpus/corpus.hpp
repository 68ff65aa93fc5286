#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "accent_ssl/config.hpp"
#include "accent_ssl/corpus/synth.hpp"

namespace accent_ssl::corpus {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

enum class Split { Pretrain, Finetune, Dev, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Pretrain: return "pretrain";
    case Split::Finetune: return "finetune";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "?";
}

inline bool parse_split(const std::string& s, Split& out) {
  if (s == "pretrain") out = Split::Pretrain;
  else if (s == "finetune") out = Split::Finetune;
  else if (s == "dev") out = Split::Dev;
  else if (s == "test") out = Split::Test;
  else return false;
  return true;
}

// One manifest row. Audio is loaded on demand through load_audio().
struct Utterance {
  std::string utt_id;
  std::string audio_path;  // relative to the manifest directory
  std::string transcript;
  int accent_id = kUnknownAccent;
  Split split = Split::Pretrain;
};

// ---- raw audio: "ACW1", u32 sample count, float32 LE samples ----

inline constexpr std::array<char, 4> kAudioMagic{'A', 'C', 'W', '1'};

inline void write_audio(const fs::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write audio file " + path.string());
  out.write(kAudioMagic.data(), 4);
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  out.write(reinterpret_cast<const char*>(&n), 4);
  std::vector<float> buf(w.samples.begin(), w.samples.end());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (!out) throw IoError("short write to " + path.string());
}

inline Waveform read_audio(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open audio file " + path.string());
  std::array<char, 4> magic{};
  std::uint32_t n = 0;
  in.read(magic.data(), 4);
  in.read(reinterpret_cast<char*>(&n), 4);
  if (!in || magic != kAudioMagic) throw IoError("bad audio header in " + path.string());
  std::vector<float> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n) * 4);
  if (!in) throw IoError("truncated audio file " + path.string());
  Waveform w;
  w.samples.assign(buf.begin(), buf.end());
  for (double s : w.samples)
    if (!std::isfinite(s)) throw IoError("non-finite sample in " + path.string());
  return w;
}

// ---- manifest: utt_id \t audio \t transcript \t accent|- \t split ----

inline std::string manifest_line(const Utterance& u) {
  std::ostringstream os;
  os << u.utt_id << '\t' << u.audio_path << '\t' << u.transcript << '\t';
  if (u.accent_id == kUnknownAccent) os << '-';
  else os << u.accent_id;
  os << '\t' << split_name(u.split) << '\n';
  return os.str();
}

// num_accents bounds the accent column; rows with a "-" accent or without the
// accent column load as kUnknownAccent.
inline std::vector<Utterance> load_manifest(const fs::path& path, int num_accents) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<Utterance> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 4 && cols.size() != 5)
      throw ParseError("manifest row has " + std::to_string(cols.size()) + " columns, expected 4 or 5", lineno);
    Utterance u;
    u.utt_id = cols[0];
    u.audio_path = cols[1];
    u.transcript = cols[2];
    if (u.utt_id.empty() || u.audio_path.empty()) throw ParseError("empty utt_id or audio path", lineno);
    if (!parse_split(cols.back(), u.split)) throw ParseError("unknown split '" + cols.back() + "'", lineno);
    if (cols.size() == 5 && cols[3] != "-") {
      std::size_t used = 0;
      long long a = 0;
      try {
        a = std::stoll(cols[3], &used);
      } catch (const std::exception&) {
        throw ParseError("accent column '" + cols[3] + "' is not an integer", lineno);
      }
      if (used != cols[3].size()) throw ParseError("accent column '" + cols[3] + "' is not an integer", lineno);
      if (a < 0 || a >= num_accents)
        throw ValidationError("line " + std::to_string(lineno) + ": accent_id " + cols[3] + " out of range [0," +
                              std::to_string(num_accents) + ")");
      u.accent_id = static_cast<int>(a);
    }
    for (char c : u.transcript)
      if (!is_symbol(c)) throw ValidationError("line " + std::to_string(lineno) + ": transcript has unknown token");
    if (u.transcript.empty() && u.split != Split::Pretrain)
      throw ValidationError("line " + std::to_string(lineno) + ": empty transcript in a labeled split");
    rows.push_back(std::move(u));
  }
  return rows;
}

inline Waveform load_audio(const fs::path& manifest_dir, const Utterance& u) {
  return read_audio(manifest_dir / u.audio_path);
}

// ---- corpus generation ----

struct CorpusConfig {
  int e_seen = 3;
  int e_unseen = 2;
  int utts_per_accent = 100;
  std::array<double, 4> split_fractions{0.6, 0.2, 0.1, 0.1};  // pretrain, finetune, dev, test
  std::uint64_t global_seed = 1;
  double profile_distance = 1.0;
  double speaker_jitter = 0.005;
  bool random_phase = false;
  int lexicon_size = 24;
  int max_word_len = 3;
  int max_words = 3;

  int num_accents() const { return e_seen + e_unseen; }

  static CorpusConfig from(const KeyValueConfig& c) {
    CorpusConfig cc;
    cc.e_seen = static_cast<int>(c.get_int("e_seen", cc.e_seen));
    cc.e_unseen = static_cast<int>(c.get_int("e_unseen", cc.e_unseen));
    cc.utts_per_accent = static_cast<int>(c.get_int("utts_per_accent", cc.utts_per_accent));
    const auto fr = c.get_double_list("split_fractions", {0.6, 0.2, 0.1, 0.1});
    if (fr.size() != 4) throw ConfigError("split_fractions needs four values");
    for (int i = 0; i < 4; ++i) cc.split_fractions[i] = fr[i];
    cc.global_seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(cc.global_seed)));
    cc.profile_distance = c.get_double("profile_distance", cc.profile_distance);
    cc.speaker_jitter = c.get_double("speaker_jitter", cc.speaker_jitter);
    cc.random_phase = c.get_bool("random_phase", cc.random_phase);
    cc.lexicon_size = static_cast<int>(c.get_int("lexicon_size", cc.lexicon_size));
    cc.max_word_len = static_cast<int>(c.get_int("max_word_len", cc.max_word_len));
    cc.max_words = static_cast<int>(c.get_int("max_words", cc.max_words));
    return cc;
  }

  void store(KeyValueConfig& c) const {
    c.set("e_seen", std::to_string(e_seen));
    c.set("e_unseen", std::to_string(e_unseen));
    c.set("utts_per_accent", std::to_string(utts_per_accent));
    std::ostringstream fr;
    for (int i = 0; i < 4; ++i) fr << (i ? "," : "") << KeyValueConfig::to_text(split_fractions[i]);
    c.set("split_fractions", fr.str());
    c.set("seed", std::to_string(global_seed));
    c.set("profile_distance", KeyValueConfig::to_text(profile_distance));
    c.set("speaker_jitter", KeyValueConfig::to_text(speaker_jitter));
    c.set("random_phase", random_phase ? "true" : "false");
    c.set("lexicon_size", std::to_string(lexicon_size));
    c.set("max_word_len", std::to_string(max_word_len));
    c.set("max_words", std::to_string(max_words));
  }

  void validate() const {
    if (e_seen < 1) throw ConfigError("e_seen must be >= 1");
    if (e_unseen < 0) throw ConfigError("e_unseen must be >= 0");
    if (utts_per_accent < 1) throw ConfigError("utts_per_accent must be >= 1");
    double sum = 0;
    for (double f : split_fractions) {
      if (f < 0) throw ConfigError("split fractions must be non-negative");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
    if (e_unseen > 0 && split_fractions[2] + split_fractions[3] <= 0)
      throw ConfigError("unseen accents need a non-zero dev or test fraction");
    if (lexicon_size < 1 || max_word_len < 1 || max_words < 1) throw ConfigError("lexicon settings must be >= 1");
  }
};

inline std::vector<std::string> make_lexicon(const CorpusConfig& cfg) {
  Rng rng(cfg.global_seed, "lexicon");
  std::vector<std::string> words;
  while (static_cast<int>(words.size()) < cfg.lexicon_size) {
    const auto len = 1 + rng.below(static_cast<std::uint64_t>(cfg.max_word_len));
    std::string w;
    for (std::uint64_t i = 0; i < len; ++i) w.push_back(kAlphabet[rng.below(kAlphabet.size())]);
    if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(std::move(w));
  }
  return words;
}

// Per-split utterance counts for one accent. Seen accents follow the four
// fractions; unseen accents only populate dev/test, with the dev:test ratio
// preserved.
inline std::array<int, 4> split_counts(const CorpusConfig& cfg, bool seen) {
  const int n = cfg.utts_per_accent;
  std::array<int, 4> c{0, 0, 0, 0};
  if (seen) {
    int used = 0;
    for (int i = 0; i < 3; ++i) {
      c[i] = static_cast<int>(std::floor(cfg.split_fractions[i] * n + 0.5));
      c[i] = std::min(c[i], n - used);
      used += c[i];
    }
    c[3] = n - used;
  } else {
    const double dev = cfg.split_fractions[2], test = cfg.split_fractions[3];
    c[2] = static_cast<int>(std::floor(dev / (dev + test) * n + 0.5));
    c[3] = n - c[2];
  }
  return c;
}

struct CorpusSummary {
  std::size_t rows = 0;
  fs::path manifest;
};

// Writes <out>/audio/*.acw, <out>/manifest.tsv and <out>/corpus.cfg.
inline CorpusSummary build_corpus(const CorpusConfig& cfg, const fs::path& out_dir, bool force) {
  cfg.validate();
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!force) throw IoError("output directory " + out_dir.string() + " exists; pass --force to overwrite");
    fs::remove_all(out_dir / "audio");
  }
  fs::create_directories(out_dir / "audio");
  const auto lexicon = make_lexicon(cfg);
  const SynthOptions synth_opts{cfg.speaker_jitter, cfg.random_phase};

  std::ostringstream manifest;
  CorpusSummary summary;
  std::uint64_t utt_index = 0;
  for (int accent = 0; accent < cfg.num_accents(); ++accent) {
    const AccentProfile profile = make_profile(accent, cfg.global_seed, cfg.profile_distance);
    const auto counts = split_counts(cfg, accent < cfg.e_seen);
    int k = 0;
    for (int s = 0; s < 4; ++s) {
      for (int j = 0; j < counts[s]; ++j, ++k, ++utt_index) {
        Rng text_rng(derive_seed(cfg.global_seed, "transcript", utt_index));
        const auto nwords = 1 + text_rng.below(static_cast<std::uint64_t>(cfg.max_words));
        Utterance u;
        for (std::uint64_t w = 0; w < nwords; ++w) {
          if (w) u.transcript.push_back(kSpace);
          u.transcript += lexicon[text_rng.below(lexicon.size())];
        }
        std::ostringstream id;
        id << "a" << accent << "_" << std::setw(4) << std::setfill('0') << k;
        u.utt_id = id.str();
        u.audio_path = "audio/" + u.utt_id + ".acw";
        u.accent_id = accent;
        u.split = static_cast<Split>(s);
        const Waveform w = synth_utterance(u.transcript, profile, derive_seed(cfg.global_seed, "audio", utt_index),
                                           synth_opts);
        write_audio(out_dir / u.audio_path, w);
        manifest << manifest_line(u);
        ++summary.rows;
      }
    }
  }
  summary.manifest = out_dir / "manifest.tsv";
  {
    std::ofstream out(summary.manifest, std::ios::binary);
    if (!out) throw IoError("cannot write " + summary.manifest.string());
    out << manifest.str();
  }
  KeyValueConfig meta;
  cfg.store(meta);
  meta.save(out_dir / "corpus.cfg");
  return summary;
}

// Reads back the generation config stored next to a manifest.
inline CorpusConfig load_corpus_config(const fs::path& corpus_dir) {
  const fs::path p = corpus_dir / "corpus.cfg";
  if (!fs::exists(p)) throw MissingArtifactError(p.string());
  return CorpusConfig::from(KeyValueConfig::from_file(p));
}

}  // namespace accent_ssl::corpus
