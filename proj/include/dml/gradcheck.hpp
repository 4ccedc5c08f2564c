#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dml/tensor.hpp"

namespace dml {

// Scalar-valued function of a single tensor, built on a fresh graph per call.
using TensorFn = std::function<Tensor(Graph&, const Tensor&)>;

// Relative error of the whole gradient: ||analytic - numeric|| / max of norms.
double grad_check(const TensorFn& f, const Tensor& x, double h = 1e-2);

struct GradCheckItem {
    std::string name;
    double max_rel_error;
};

// The full differentiable-surface suite used by `dml gradcheck`. The corrupted
// item is a fixture with a deliberately wrong backward, for harness sanity.
std::vector<GradCheckItem> run_gradcheck_suite(uint64_t seed = 7, bool include_corrupted = false,
                                               double h_override = 0.0);

}  // namespace dml
