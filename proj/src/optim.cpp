#include "qdt/optim.hpp"

#include <cmath>

#include "qdt/errors.hpp"

namespace qdt::nn {

Adam::Adam(ParameterStore& params, AdamConfig cfg)
    : params_(&params), cfg_(cfg) {
  m_.resize(params.size());
  v_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i].assign(params.at(i).value.numel(), 0.0);
    v_[i].assign(params.at(i).value.numel(), 0.0);
  }
}

void Adam::step() {
  for (std::size_t i = 0; i < params_->size(); ++i) {
    for (double g : params_->at(i).grad.v) {
      if (!std::isfinite(g)) {
        throw DivergenceError("adam: non-finite gradient in parameter '" +
                              params_->at(i).name + "'");
      }
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_->size(); ++i) {
    Parameter& p = params_->at(i);
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    const double decay =
        p.decay && cfg_.weight_decay > 0.0 ? cfg_.lr * cfg_.weight_decay : 0.0;
    for (std::size_t j = 0; j < p.value.v.size(); ++j) {
      const double g = p.grad.v[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value.v[j] -=
          cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps) + decay * p.value.v[j];
    }
  }
}

}  // namespace qdt::nn
