#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "csgru/errors.hpp"
#include "csgru/tensor.hpp"

namespace csgru {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction over an ordered list of parameter tensors.
// Moments are kept per coordinate; updates are deterministic.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return t_; }

  // params[k] is replaced by its updated value; grads must be aligned.
  void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size())
      throw shape_error("adam: " + std::to_string(params.size()) + " params vs " +
                        std::to_string(grads.size()) + " grads");
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (std::size_t k = 0; k < params.size(); ++k) {
        m_[k].assign(static_cast<std::size_t>(params[k]->size()), 0.0);
        v_[k].assign(static_cast<std::size_t>(params[k]->size()), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      const Tensor& g = grads[k];
      if (!g.same_shape(*params[k]))
        throw shape_error("adam: grad shape " + shape_str(g.shape()) +
                          " does not match param " + shape_str(params[k]->shape()));
      auto gd = g.data();
      auto pd = params[k]->data();
      std::vector<double> out(pd.begin(), pd.end());
      for (std::size_t i = 0; i < out.size(); ++i) {
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * gd[i];
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * gd[i] * gd[i];
        const double m_hat = m_[k][i] / bc1;
        const double v_hat = v_[k][i] / bc2;
        out[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
      *params[k] = Tensor(params[k]->shape(), std::move(out));
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace csgru
