#pragma once

#include <sstream>
#include <string>
#include <vector>

namespace accent_ssl::decode {

struct WerResult {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t ref_len = 0;
  double wer = 0.0;
  bool degenerate = false;  // empty reference: wer holds the hypothesis length

  std::size_t edits() const { return substitutions + insertions + deletions; }
};

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

// Unit-cost Levenshtein alignment. The backtrace prefers substitution (or
// match), then deletion, then insertion among equally cheap moves.
template <class Seq>
WerResult edit_alignment(const Seq& ref, const Seq& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      d[i][j] = std::min({d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0u : 1u), d[i - 1][j] + 1, d[i][j - 1] + 1});
  WerResult r;
  r.ref_len = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0u : 1u)) {
      r.substitutions += ref[i - 1] != hyp[j - 1];
      --i, --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++r.deletions;
      --i;
    } else {
      ++r.insertions;
      --j;
    }
  }
  if (n == 0) {
    r.degenerate = true;
    r.wer = static_cast<double>(m);
  } else {
    r.wer = static_cast<double>(r.edits()) / static_cast<double>(n);
  }
  return r;
}

// Word error rate between two space-separated transcripts.
inline WerResult wer(const std::string& ref, const std::string& hyp) {
  return edit_alignment(split_words(ref), split_words(hyp));
}

}  // namespace accent_ssl::decode
