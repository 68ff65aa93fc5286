#pragma once

#include <map>
#include <string>
#include <vector>

#include "accent_ssl/aud/kmeans.hpp"
#include "accent_ssl/corpus/corpus.hpp"
#include "accent_ssl/model/model.hpp"

namespace accent_ssl::aud {

struct FeatureSource {
  // 0 selects the conv-frontend output, j >= 1 the j-th encoder layer.
  std::size_t layer = 0;

  static FeatureSource input_features() { return {0}; }
  static FeatureSource encoder_layer(std::size_t j) { return {j}; }
  std::string name() const { return layer == 0 ? "input_features" : encoder_layer_space(layer); }
};

struct ClusteringFeatures {
  Tensor<double> features;             // N x d_feat, utterances concatenated
  std::vector<std::size_t> offsets;    // first row of each utterance
  std::vector<std::size_t> lengths;    // frames per utterance
  std::vector<std::string> utt_ids;
};

// Per-row standardization without affine parameters.
inline void standardize_rows(Tensor<double>& x, double eps = 1e-5) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    double mu = 0, var = 0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(row.size());
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(row.size());
    const double inv = 1.0 / std::sqrt(var + eps);
    for (double& v : row) v = (v - mu) * inv;
  }
}

// Frames of one waveform in the requested space. Codebooks are bypassed.
template <class S>
Tensor<double> utterance_features(model::Model<S>& m, const std::vector<double>& samples, const FeatureSource& src) {
  if (src.layer > m.config().n_layers)
    throw ConfigError("feature layer " + std::to_string(src.layer) + " outside [1," +
                      std::to_string(m.config().n_layers) + "]");
  Tape<S> tape(false);
  auto frames = m.conv_encode(tape, samples);
  if (src.layer == 0) return frames.value().template cast<double>();
  const auto out = m.encode(tape, frames, std::nullopt);
  Tensor<double> h = out.layers[src.layer - 1].value().template cast<double>();
  standardize_rows(h);
  return h;
}

// Features for every utterance of the given split, in manifest order.
template <class S>
ClusteringFeatures extract_clustering_features(model::Model<S>& m, const fs::path& corpus_dir,
                                               const std::vector<corpus::Utterance>& rows, const FeatureSource& src,
                                               corpus::Split split = corpus::Split::Pretrain) {
  if (src.layer > m.config().n_layers)
    throw ConfigError("feature layer " + std::to_string(src.layer) + " outside [1," +
                      std::to_string(m.config().n_layers) + "]");
  ClusteringFeatures out;
  std::vector<Tensor<double>> parts;
  std::size_t total = 0;
  for (const auto& u : rows) {
    if (u.split != split) continue;
    parts.push_back(utterance_features(m, corpus::load_audio(corpus_dir, u).samples, src));
    out.offsets.push_back(total);
    out.lengths.push_back(parts.back().rows());
    out.utt_ids.push_back(u.utt_id);
    total += parts.back().rows();
  }
  const std::size_t d = parts.empty() ? 0 : parts.front().cols();
  out.features = Tensor<double>::matrix(total, d);
  for (std::size_t i = 0; i < parts.size(); ++i)
    std::copy(parts[i].values().begin(), parts[i].values().end(), out.features.data() + out.offsets[i] * d);
  return out;
}

// Slices the concatenated assignment back into per-utterance sequences.
inline std::map<std::string, PseudoLabelSequence> label_utterances(const ClusteringFeatures& f, const Centroids& c) {
  const PseudoLabelSequence all = assign(f.features, c);
  std::map<std::string, PseudoLabelSequence> out;
  for (std::size_t i = 0; i < f.utt_ids.size(); ++i)
    out.emplace(f.utt_ids[i], PseudoLabelSequence(all.begin() + static_cast<std::ptrdiff_t>(f.offsets[i]),
                                                  all.begin() + static_cast<std::ptrdiff_t>(f.offsets[i] + f.lengths[i])));
  return out;
}

}  // namespace accent_ssl::aud
