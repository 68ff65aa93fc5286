#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "accent_ssl/errors.hpp"
#include "accent_ssl/numerics/rng.hpp"
#include "accent_ssl/numerics/tensor.hpp"

namespace accent_ssl::aud {

namespace fs = std::filesystem;

struct Centroids {
  std::size_t k = 0;
  std::size_t d_feat = 0;
  Tensor<double> vectors;  // k x d_feat
  std::string feature_space = "input_features";
  std::uint64_t seed = 0;
  std::vector<double> objective_trace;  // objective after each assignment pass
};

using PseudoLabelSequence = std::vector<std::uint16_t>;

inline std::string encoder_layer_space(std::size_t layer) {
  return "encoder_layer(" + std::to_string(layer) + ")";
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Nearest centroid under squared Euclidean distance; ties go to the lowest index.
inline std::size_t nearest(std::span<const double> x, const Tensor<double>& centroids, double* dist = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double d = squared_distance(x, centroids.row(c));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

inline PseudoLabelSequence assign(const Tensor<double>& features, const Centroids& c) {
  if (features.cols() != c.d_feat)
    throw DimensionError("assign: feature dim " + std::to_string(features.cols()) + " vs centroid dim " +
                         std::to_string(c.d_feat));
  PseudoLabelSequence labels(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i)
    labels[i] = static_cast<std::uint16_t>(nearest(features.row(i), c.vectors));
  return labels;
}

struct KMeansOptions {
  std::size_t max_iters = 100;
  double tol = 1e-6;
};

namespace detail {

// Lloyd iterations from the given starting centroids.
inline void lloyd(const Tensor<double>& x, Centroids& c, const KMeansOptions& opt) {
  const std::size_t n = x.rows(), d = x.cols(), k = c.k;
  std::vector<std::size_t> label(n);
  std::vector<double> dist(n);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < opt.max_iters; ++it) {
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      label[i] = nearest(x.row(i), c.vectors, &dist[i]);
      objective += dist[i];
    }
    if (!c.objective_trace.empty() && objective > prev * (1.0 + 1e-12) + 1e-300)
      throw NumericDomainError("kmeans objective increased from " + std::to_string(prev) + " to " +
                               std::to_string(objective));
    c.objective_trace.push_back(objective);
    const bool converged = std::isfinite(prev) && (prev - objective) <= opt.tol * std::max(prev, 1e-300);
    prev = objective;
    if (converged) break;

    Tensor<double> sums = Tensor<double>::matrix(k, d);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = x.row(i);
      auto s = sums.row(label[i]);
      for (std::size_t j = 0; j < d; ++j) s[j] += row[j];
      count[label[i]]++;
    }
    std::vector<bool> taken(n, false);
    for (std::size_t ci = 0; ci < k; ++ci) {
      auto dst = c.vectors.row(ci);
      if (count[ci] > 0) {
        auto s = sums.row(ci);
        for (std::size_t j = 0; j < d; ++j) dst[j] = s[j] / static_cast<double>(count[ci]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its own centroid.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i)
        if (!taken[i] && dist[i] > far_d) far_d = dist[i], far = i;
      taken[far] = true;
      dist[far] = 0.0;
      auto src = x.row(far);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding.
inline Centroids kmeans_fit(const Tensor<double>& features, std::size_t k, std::uint64_t seed,
                            const KMeansOptions& opt = {}, std::string feature_space = "input_features") {
  const std::size_t n = features.rows(), d = features.cols();
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (n < k)
    throw DataError("kmeans: insufficient data, " + std::to_string(n) + " points for " + std::to_string(k) +
                    " clusters");
  if (!features.all_finite()) throw NumericDomainError("kmeans: non-finite features");
  Rng rng(seed, "kmeans++");
  Centroids c;
  c.k = k;
  c.d_feat = d;
  c.seed = seed;
  c.feature_space = std::move(feature_space);
  c.vectors = Tensor<double>::matrix(k, d);

  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = rng.below(n);
  std::copy(features.row(first).begin(), features.row(first).end(), c.vectors.row(0).begin());
  for (std::size_t ci = 1; ci < k; ++ci) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(features.row(i), c.vectors.row(ci - 1)));
      total += d2[i];
    }
    std::size_t pick = n - 1;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        r -= d2[i];
        if (r < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.below(n);
    }
    std::copy(features.row(pick).begin(), features.row(pick).end(), c.vectors.row(ci).begin());
  }
  detail::lloyd(features, c, opt);
  return c;
}

// Continues Lloyd iterations from existing centroids.
inline Centroids kmeans_refine(const Tensor<double>& features, Centroids start, const KMeansOptions& opt = {}) {
  if (features.cols() != start.d_feat) throw DimensionError("kmeans_refine: feature dim mismatch");
  start.objective_trace.clear();
  detail::lloyd(features, start, opt);
  return start;
}

inline double kmeans_objective(const Tensor<double>& features, const Centroids& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    double d;
    nearest(features.row(i), c.vectors, &d);
    s += d;
  }
  return s;
}

// ---- persistence ----
// Centroid file: one JSON header line, then k*d_feat float32 LE values.

inline void save_centroids(const fs::path& path, const Centroids& c) {
  nlohmann::ordered_json h;
  h["k"] = c.k;
  h["d_feat"] = c.d_feat;
  h["feature_space"] = c.feature_space;
  h["seed"] = c.seed;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write centroids " + path.string());
  out << h.dump() << '\n';
  std::vector<float> buf(c.vectors.values().begin(), c.vectors.values().end());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (!out) throw IoError("short write to " + path.string());
}

inline Centroids load_centroids(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string());
  std::string header;
  std::getline(in, header);
  Centroids c;
  try {
    const auto h = nlohmann::json::parse(header);
    c.k = h.at("k").get<std::size_t>();
    c.d_feat = h.at("d_feat").get<std::size_t>();
    c.feature_space = h.at("feature_space").get<std::string>();
    c.seed = h.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad centroid header in " + path.string() + ": " + e.what());
  }
  std::vector<float> buf(c.k * c.d_feat);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (!in) throw IoError("truncated centroid file " + path.string());
  c.vectors = Tensor<double>({c.k, c.d_feat}, std::vector<double>(buf.begin(), buf.end()));
  return c;
}

// Label file: "PLB1", u32 count, then per utterance
// u16 id length, id bytes, u32 T, T x u16 labels.
inline void save_labels(const fs::path& path, const std::map<std::string, PseudoLabelSequence>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write labels " + path.string());
  out.write("PLB1", 4);
  const auto count = static_cast<std::uint32_t>(labels.size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& [id, seq] : labels) {
    const auto len = static_cast<std::uint16_t>(id.size());
    out.write(reinterpret_cast<const char*>(&len), 2);
    out.write(id.data(), len);
    const auto t = static_cast<std::uint32_t>(seq.size());
    out.write(reinterpret_cast<const char*>(&t), 4);
    out.write(reinterpret_cast<const char*>(seq.data()), static_cast<std::streamsize>(seq.size() * 2));
  }
  if (!out) throw IoError("short write to " + path.string());
}

inline std::map<std::string, PseudoLabelSequence> load_labels(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string());
  char magic[4];
  std::uint32_t count = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in || std::string(magic, 4) != "PLB1") throw IoError("bad label file header in " + path.string());
  std::map<std::string, PseudoLabelSequence> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 2);
    std::string id(len, '\0');
    in.read(id.data(), len);
    std::uint32_t t = 0;
    in.read(reinterpret_cast<char*>(&t), 4);
    PseudoLabelSequence seq(t);
    in.read(reinterpret_cast<char*>(seq.data()), static_cast<std::streamsize>(t) * 2);
    if (!in) throw IoError("truncated label file " + path.string());
    out.emplace(std::move(id), std::move(seq));
  }
  return out;
}

}  // namespace accent_ssl::aud
