#pragma once

#include <cmath>
#include <vector>

#include "saic/nn.hpp"

namespace saic {

// Adam with bias correction. State is keyed by registry order and can be
// serialized for bit-compatible resume.
class Adam {
 public:
  struct Config {
    float lr = 1e-5f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
  };

  Adam() = default;
  explicit Adam(Config cfg) : cfg_(cfg) {}

  const Config& config() const { return cfg_; }
  void set_lr(float lr) { cfg_.lr = lr; }
  std::int64_t step_count() const { return t_; }

  void step(ParamStore& params) {
    if (m_.empty()) init_state(params);
    check_contract(m_.size() == params.entries().size(),
                   "Adam: parameter set changed under the optimizer");
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), t_);
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), t_);
    for (std::size_t i = 0; i < params.entries().size(); ++i) {
      Var& p = params.entries()[i].var;
      if (!p.requires_grad() || !p.has_grad()) continue;
      const float* g = p.grad().data();
      float* w = p.value().data();
      float* m = m_[i].data();
      float* v = v_[i].data();
      const std::size_t n = p.value().numel();
      for (std::size_t j = 0; j < n; ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0f - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0f - cfg_.beta2) * g[j] * g[j];
        const float mhat = static_cast<float>(m[j] / bc1);
        const float vhat = static_cast<float>(v[j] / bc2);
        w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  // State access for checkpointing.
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  void set_step_count(std::int64_t t) { t_ = t; }

  void init_state(const ParamStore& params) {
    m_.clear();
    v_.clear();
    for (const auto& e : params.entries()) {
      m_.emplace_back(e.var.value().dims());
      v_.emplace_back(e.var.value().dims());
    }
  }

 private:
  Config cfg_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace saic
