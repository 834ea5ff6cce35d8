#pragma once

#include <span>
#include <vector>

#include "tobac/tensor.hpp"

namespace tobac {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled (AdamW-style) weight decay; 0 gives plain Adam.
  double weight_decay = 0.0;
};

/// First/second moment buffers mirroring the parameter list.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;

  static AdamState for_params(std::span<const Tensor* const> params);
};

/// One bias-corrected Adam update of every parameter. Throws StructuralError
/// when the parameter, gradient and state shapes disagree.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state, double lr, const AdamHyper& hyper = {});

}  // namespace tobac
