#pragma once

#include <algorithm>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "accent_ssl/config.hpp"
#include "accent_ssl/corpus/synth.hpp"
#include "accent_ssl/errors.hpp"

namespace accent_ssl::model {

// ASR token ids: 0 is the CTC blank, 1..16 the letters, 17 the word
// separator, 18 doubles as SOS and EOS for the decoder.
namespace vocab {
inline constexpr std::size_t kBlank = 0;
inline constexpr std::size_t kSpace = corpus::kAlphabet.size() + 1;
inline constexpr std::size_t kSosEos = kSpace + 1;
inline constexpr std::size_t kSize = kSosEos + 1;

inline std::size_t token_of(char c) {
  if (c == corpus::kSpace) return kSpace;
  const auto i = corpus::kAlphabet.find(c);
  if (i == std::string_view::npos) throw ValidationError(std::string("no token for '") + c + "'");
  return i + 1;
}

inline char symbol_of(std::size_t t) {
  if (t == kSpace) return corpus::kSpace;
  if (t >= 1 && t <= corpus::kAlphabet.size()) return corpus::kAlphabet[t - 1];
  throw ValidationError("token " + std::to_string(t) + " has no symbol");
}

inline std::vector<std::size_t> encode(const std::string& text) {
  std::vector<std::size_t> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(token_of(c));
  return out;
}

inline std::string decode(const std::vector<std::size_t>& tokens) {
  std::string out;
  for (auto t : tokens)
    if (t != kBlank && t != kSosEos) out.push_back(symbol_of(t));
  return out;
}
}  // namespace vocab

struct ConvSpec {
  std::size_t channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 0;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

enum class CodebookTrainability { Both, FrozenAfterPretrain, RandomFixed };

inline const char* trainability_name(CodebookTrainability t) {
  switch (t) {
    case CodebookTrainability::Both: return "both";
    case CodebookTrainability::FrozenAfterPretrain: return "frozen_after_pretrain";
    case CodebookTrainability::RandomFixed: return "random_fixed";
  }
  return "?";
}

inline CodebookTrainability parse_trainability(const std::string& s) {
  if (s == "both") return CodebookTrainability::Both;
  if (s == "frozen_after_pretrain" || s == "frozen") return CodebookTrainability::FrozenAfterPretrain;
  if (s == "random_fixed" || s == "random") return CodebookTrainability::RandomFixed;
  throw ConfigError("unknown codebook trainability '" + s + "'");
}

// First conv layer initialization. Filterbank makes each channel a
// Hann-windowed cosine at log-spaced frequencies with alternating phase.
enum class ConvInit { Random, Filterbank };

inline std::string conv_init_name(ConvInit c) { return c == ConvInit::Random ? "random" : "filterbank"; }

inline ConvInit parse_conv_init(const std::string& s) {
  if (s == "random") return ConvInit::Random;
  if (s == "filterbank") return ConvInit::Filterbank;
  throw ConfigError("unknown conv init '" + s + "' (expected random or filterbank)");
}

struct ModelConfig {
  std::size_t d = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t E = 3;                            // seen accents, one codebook each
  std::size_t M = 8;                            // entries per codebook
  std::vector<std::size_t> codebook_layers{1, 2, 3, 4};  // 1-based
  std::size_t V = 32;                           // pseudo-label vocabulary
  std::size_t asr_vocab = vocab::kSize;
  std::vector<ConvSpec> conv{{64, 64, 8}, {64, 8, 4}, {64, 4, 2}};
  ConvInit conv_init = ConvInit::Filterbank;
  std::size_t decoder_layers = 2;
  bool positional_encoding = true;
  double ln_eps = 1e-5;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

  bool has_codebook(std::size_t layer1) const {
    return std::find(codebook_layers.begin(), codebook_layers.end(), layer1) != codebook_layers.end();
  }

  std::size_t total_stride() const {
    std::size_t s = 1;
    for (const auto& c : conv) s *= c.stride;
    return s;
  }

  std::size_t receptive_field() const {
    std::size_t rf = 0, jump = 1;
    for (std::size_t i = 0; i < conv.size(); ++i) {
      rf = (i == 0) ? conv[0].kernel : rf + (conv[i].kernel - 1) * jump;
      jump *= conv[i].stride;
    }
    return rf;
  }

  // Frame count after the conv stack: T_i = floor((T_{i-1} - k_i) / s_i) + 1.
  std::size_t frames_for(std::size_t samples) const {
    std::size_t t = samples;
    for (const auto& c : conv) {
      if (t < c.kernel) return 0;
      t = (t - c.kernel) / c.stride + 1;
    }
    return t;
  }

  void validate() const {
    if (d == 0 || n_heads == 0 || d % n_heads != 0) throw ConfigError("d must be a positive multiple of n_heads");
    if (n_layers == 0) throw ConfigError("n_layers must be >= 1");
    if (E < 1) throw ConfigError("E must be >= 1");
    if (M < 1) throw ConfigError("M must be >= 1");
    if (V < 2) throw ConfigError("V must be >= 2");
    if (conv.empty()) throw ConfigError("conv stack must have at least one layer");
    for (const auto& c : conv)
      if (c.channels == 0 || c.kernel == 0 || c.stride == 0) throw ConfigError("conv layer fields must be >= 1");
    std::set<std::size_t> seen;
    for (auto l : codebook_layers) {
      if (l < 1 || l > n_layers)
        throw ConfigError("codebook layer " + std::to_string(l) + " outside [1," + std::to_string(n_layers) + "]");
      if (!seen.insert(l).second) throw ConfigError("codebook layer " + std::to_string(l) + " listed twice");
    }
    if (asr_vocab < vocab::kSize) throw ConfigError("asr_vocab too small for the corpus alphabet");
  }

  static std::string conv_text(const std::vector<ConvSpec>& conv) {
    std::ostringstream os;
    for (std::size_t i = 0; i < conv.size(); ++i)
      os << (i ? ";" : "") << conv[i].channels << ":" << conv[i].kernel << ":" << conv[i].stride;
    return os.str();
  }

  static std::vector<ConvSpec> parse_conv(const std::string& text) {
    std::vector<ConvSpec> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ';')) {
      ConvSpec c;
      char s1 = 0, s2 = 0;
      std::istringstream is(item);
      if (!(is >> c.channels >> s1 >> c.kernel >> s2 >> c.stride) || s1 != ':' || s2 != ':')
        throw ConfigError("conv spec '" + item + "' is not channels:kernel:stride");
      out.push_back(c);
    }
    return out;
  }

  // Keys prefixed "model." in the flat run config.
  static ModelConfig from(const KeyValueConfig& c) {
    ModelConfig m;
    m.d = static_cast<std::size_t>(c.get_int("model.d", static_cast<long long>(m.d)));
    m.n_layers = static_cast<std::size_t>(c.get_int("model.n_layers", static_cast<long long>(m.n_layers)));
    m.n_heads = static_cast<std::size_t>(c.get_int("model.n_heads", static_cast<long long>(m.n_heads)));
    m.d_ff = static_cast<std::size_t>(c.get_int("model.d_ff", static_cast<long long>(m.d_ff)));
    m.E = static_cast<std::size_t>(c.get_int("model.E", static_cast<long long>(m.E)));
    m.M = static_cast<std::size_t>(c.get_int("model.M", static_cast<long long>(m.M)));
    m.V = static_cast<std::size_t>(c.get_int("model.V", static_cast<long long>(m.V)));
    m.decoder_layers =
        static_cast<std::size_t>(c.get_int("model.decoder_layers", static_cast<long long>(m.decoder_layers)));
    m.positional_encoding = c.get_bool("model.positional_encoding", m.positional_encoding);
    if (c.has("model.conv")) m.conv = parse_conv(c.get_string("model.conv"));
    if (c.has("model.conv_init")) m.conv_init = parse_conv_init(c.get_string("model.conv_init"));
    if (c.has("model.codebook_layers")) {
      const std::string v = c.get_string("model.codebook_layers");
      m.codebook_layers.clear();
      if (v == "all") {
        for (std::size_t l = 1; l <= m.n_layers; ++l) m.codebook_layers.push_back(l);
      } else {
        for (auto l : c.get_int_list("model.codebook_layers", {})) {
          if (l < 1) throw ConfigError("codebook layers are 1-based");
          m.codebook_layers.push_back(static_cast<std::size_t>(l));
        }
      }
    } else {
      m.codebook_layers.clear();
      for (std::size_t l = 1; l <= m.n_layers; ++l) m.codebook_layers.push_back(l);
    }
    m.validate();
    return m;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["d"] = d;
    j["n_layers"] = n_layers;
    j["n_heads"] = n_heads;
    j["d_ff"] = d_ff;
    j["E"] = E;
    j["M"] = M;
    j["codebook_layers"] = codebook_layers;
    j["V"] = V;
    j["asr_vocab"] = asr_vocab;
    j["conv"] = conv_text(conv);
    j["conv_init"] = conv_init_name(conv_init);
    j["decoder_layers"] = decoder_layers;
    j["positional_encoding"] = positional_encoding;
    j["ln_eps"] = ln_eps;
    return j;
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig m;
    m.d = j.at("d");
    m.n_layers = j.at("n_layers");
    m.n_heads = j.at("n_heads");
    m.d_ff = j.at("d_ff");
    m.E = j.at("E");
    m.M = j.at("M");
    m.codebook_layers = j.at("codebook_layers").get<std::vector<std::size_t>>();
    m.V = j.at("V");
    m.asr_vocab = j.at("asr_vocab");
    m.conv = parse_conv(j.at("conv").get<std::string>());
    m.conv_init = parse_conv_init(j.at("conv_init").get<std::string>());
    m.decoder_layers = j.at("decoder_layers");
    m.positional_encoding = j.at("positional_encoding");
    m.ln_eps = j.at("ln_eps");
    m.validate();
    return m;
  }
};

}  // namespace accent_ssl::model
