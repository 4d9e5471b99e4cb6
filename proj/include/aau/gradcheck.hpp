#pragma once

#include <functional>
#include <vector>

#include "aau/rng.hpp"
#include "aau/tape.hpp"

namespace aau {

// Scalar objective built from leaves of the given inputs; called once per
// evaluation with a fresh tape.
using Objective = std::function<Value(Tape&, const std::vector<Value>&)>;

// Compares tape gradients of `fn` against central finite differences at
// sampled coordinates of `inputs`. Returns the max of
// |analytic - numeric| / max(1, |analytic|, |numeric|).
// max_coords_per_input < 0 checks every coordinate.
double grad_check(const Objective& fn, const std::vector<TensorF>& inputs, double epsilon,
                  int max_coords_per_input = -1, std::uint64_t seed = 0);

// Same idea in parameter space: `fn` rebuilds the forward pass (it reads the
// current values of whatever Parameters it leafs), and `params` are perturbed
// coordinate-wise. n_samples coordinates are drawn across all of them.
double grad_check_params(const std::function<Value(Tape&)>& fn, const std::vector<Parameter*>& params,
                         double epsilon, int n_samples, std::uint64_t seed = 0);

} // namespace aau
