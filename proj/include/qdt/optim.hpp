#pragma once

#include <cstdint>
#include <vector>

#include "qdt/graph.hpp"

namespace qdt::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied to opted-in parameters
};

// Adam with bias correction. Moment buffers follow the store's insertion
// order, so two runs with identically-built stores update identically.
class Adam {
 public:
  Adam(ParameterStore& params, AdamConfig cfg);

  // Applies one update from the accumulated gradients, then leaves the
  // gradients untouched (callers zero them when building the next step).
  // A non-finite gradient aborts before touching any parameter.
  void step();

  // For schedules; takes effect from the next step().
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }

  std::uint64_t step_count() const { return t_; }

 private:
  ParameterStore* params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t t_ = 0;
};

}  // namespace qdt::nn
