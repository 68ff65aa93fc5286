#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "accent_ssl/decode/wer.hpp"
#include "accent_ssl/errors.hpp"

namespace accent_ssl::decode {

namespace fs = std::filesystem;

// One decoded utterance. accent_true is -1 when the manifest has no label.
struct DecodeRecord {
  std::string utt_id;
  std::string hyp;
  std::string ref;
  int accent_true = -1;
  int accent_chosen = 0;
  double score = 0.0;
  WerResult wer;
};

inline nlohmann::ordered_json to_json(const DecodeRecord& r) {
  nlohmann::ordered_json j;
  j["utt_id"] = r.utt_id;
  j["hyp"] = r.hyp;
  j["ref"] = r.ref;
  j["accent_true"] = r.accent_true < 0 ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.accent_true);
  j["accent_chosen"] = r.accent_chosen;
  j["score"] = r.score;
  j["wer"] = r.wer.wer;
  j["edits"] = {{"sub", r.wer.substitutions}, {"ins", r.wer.insertions}, {"del", r.wer.deletions}};
  j["ref_words"] = r.wer.ref_len;
  return j;
}

inline DecodeRecord record_from_json(const nlohmann::json& j) {
  DecodeRecord r;
  r.utt_id = j.at("utt_id");
  r.hyp = j.at("hyp");
  r.ref = j.at("ref");
  r.accent_true = j.at("accent_true").is_null() ? -1 : j.at("accent_true").get<int>();
  r.accent_chosen = j.at("accent_chosen");
  r.score = j.at("score").is_null() ? -std::numeric_limits<double>::infinity() : j.at("score").get<double>();
  r.wer = wer(r.ref, r.hyp);
  return r;
}

inline void write_records(const fs::path& path, const std::vector<DecodeRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<DecodeRecord> read_records(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string());
  std::vector<DecodeRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad decode record: ") + e.what(), lineno);
    }
  }
  return out;
}

// Pooled WER over a group: total edits / total reference words.
struct WerRow {
  std::string label;
  std::size_t utterances = 0;
  std::size_t words = 0;
  std::size_t edits = 0;
  double wer() const { return words == 0 ? 0.0 : static_cast<double>(edits) / static_cast<double>(words); }
};

struct WerTable {
  std::vector<WerRow> accents;  // one row per accent id in [0, seen + unseen)
  WerRow seen, unseen, overall;
};

// Accents below `e_seen` are seen; the rest up to e_seen + e_unseen unseen.
inline WerTable wer_table(const std::vector<DecodeRecord>& records, int e_seen, int e_unseen) {
  WerTable t;
  for (int a = 0; a < e_seen + e_unseen; ++a)
    t.accents.push_back({"accent " + std::to_string(a) + (a < e_seen ? " (seen)" : " (unseen)")});
  t.seen.label = "seen";
  t.unseen.label = "unseen";
  t.overall.label = "overall";
  auto add = [](WerRow& row, const DecodeRecord& r) {
    ++row.utterances;
    row.words += r.wer.ref_len;
    row.edits += r.wer.edits();
  };
  for (const auto& r : records) {
    add(t.overall, r);
    if (r.accent_true < 0 || r.accent_true >= e_seen + e_unseen) continue;
    add(t.accents[static_cast<std::size_t>(r.accent_true)], r);
    add(r.accent_true < e_seen ? t.seen : t.unseen, r);
  }
  return t;
}

inline nlohmann::ordered_json to_json(const WerRow& r) {
  return {{"group", r.label}, {"utterances", r.utterances}, {"words", r.words}, {"edits", r.edits}, {"wer", r.wer()}};
}

inline nlohmann::ordered_json to_json(const WerTable& t) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : t.accents) rows.push_back(to_json(r));
  return {{"accents", rows}, {"seen", to_json(t.seen)}, {"unseen", to_json(t.unseen)}, {"overall", to_json(t.overall)}};
}

inline std::string format_table(const WerTable& t) {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-20s %6s %6s %8s\n", "group", "utts", "words", "WER(%)");
  os << buf;
  auto line = [&](const WerRow& r) {
    std::snprintf(buf, sizeof buf, "%-20s %6zu %6zu %8.2f\n", r.label.c_str(), r.utterances, r.words, 100.0 * r.wer());
    os << buf;
  };
  for (const auto& r : t.accents) line(r);
  line(t.seen);
  line(t.unseen);
  line(t.overall);
  return os.str();
}

}  // namespace accent_ssl::decode
