#pragma once

#include "cs3d/tensor.hpp"

namespace cs3d {

/// Soft spiking neuron: passes x through above the threshold, zero at or
/// below it. Backward substitutes the logistic surrogate sigma(beta*(x-theta)).
struct SsnParams {
  double theta = 0.0;
  double beta = 2.0;

  void validate() const;
};

/// Recorded op; its tape gradient is the surrogate, not the true derivative.
Tensor ssn(const Tensor& x, const SsnParams& p);

// Raw forward/backward, usable without the tape.
Tensor ssn_forward(const Tensor& x, const SsnParams& p);
Tensor ssn_backward(const Tensor& x, const SsnParams& p, const Tensor& upstream);

}  // namespace cs3d
