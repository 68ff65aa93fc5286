#pragma once

#include <cmath>
#include <map>
#include <string>

#include "accent_ssl/model/layers.hpp"

namespace accent_ssl::trainer {

// Linear warmup to `peak`, then inverse square-root decay. Steps are 1-based.
inline double learning_rate(std::size_t step, double peak, std::size_t warmup) {
  if (warmup == 0) return peak;
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double w = static_cast<double>(warmup);
  return peak * std::min(s / w, std::sqrt(w / s));
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

// Adam that only touches parameters present in the gradient map. Moments and
// bias-correction counts are kept per parameter, so a parameter that receives
// no gradient in a step is left bitwise unchanged.
template <class S>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(model::ParameterStore<S>& params, const std::map<std::string, Tensor<S>>& grads, double lr) {
    for (const auto& [name, g] : grads) {
      Parameter<S>& p = params.at(name);
      if (!p.trainable) continue;
      State& st = state_[name];
      if (st.m.empty()) {
        st.m = Tensor<S>(p.value.shape());
        st.v = Tensor<S>(p.value.shape());
      }
      ++st.t;
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double m = cfg_.beta1 * static_cast<double>(st.m[i]) + (1.0 - cfg_.beta1) * gi;
        const double v = cfg_.beta2 * static_cast<double>(st.v[i]) + (1.0 - cfg_.beta2) * gi * gi;
        st.m[i] = static_cast<S>(m);
        st.v[i] = static_cast<S>(v);
        p.value[i] -= static_cast<S>(lr * (m / c1) / (std::sqrt(v / c2) + cfg_.eps));
      }
    }
  }

  std::size_t updates(const std::string& name) const {
    auto it = state_.find(name);
    return it == state_.end() ? 0 : it->second.t;
  }

 private:
  struct State {
    Tensor<S> m, v;
    std::size_t t = 0;
  };
  AdamConfig cfg_;
  std::map<std::string, State> state_;
};

}  // namespace accent_ssl::trainer
