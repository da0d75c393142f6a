#pragma once

// Finite-difference verification of hand-written gradients.
//
// The numeric derivative is the fourth-order central stencil
//   (8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h,
// evaluated at h and 2h. A coordinate whose two estimates disagree sits on a
// non-differentiable point of this instance (a ReLU hinge, a pixel boundary,
// a change of assignment) and is counted as skipped rather than compared.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ocbev/autodiff.hpp"

namespace ocbev {

struct GradCheckOptions {
    double step = 1e-4;
    double tolerance = 1e-6;  // relative error bound
    double floor = 1e-4;      // denominator floor for near-zero derivatives
    std::size_t max_coords_per_tensor = 4;
    std::uint64_t seed = 0;
};

struct GradTarget {
    std::string name;
    nn::Var var;  // leaf requiring gradients
};

struct GradCheckOutcome {
    std::size_t checked = 0;
    std::size_t skipped = 0;
    double max_rel_error = 0.0;
    std::string worst;  // "name[index]"
};

/// `loss` must rebuild the graph from the current target values and return a scalar.
GradCheckOutcome check_gradients(const std::function<nn::Var()>& loss, const std::vector<GradTarget>& targets,
                                 const GradCheckOptions& opts);

struct GradCheckCase {
    std::function<nn::Var()> loss;
    std::vector<GradTarget> targets;
};

/// Random instance `instance` of a named operation.
using CaseBuilder = std::function<GradCheckCase(std::uint64_t instance)>;

struct GradCheckReport {
    std::string op;
    std::size_t instances = 0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
    double max_rel_error = 0.0;
    std::string worst;
    bool pass = false;
};

/// Every operation covered by the suite, in a fixed order.
std::vector<std::string> gradcheck_ops();
CaseBuilder gradcheck_case(const std::string& op);

/// Runs `trials` instances. Fails when any coordinate exceeds the tolerance or
/// more than a quarter of the coordinates had to be skipped.
GradCheckReport run_gradcheck(const std::string& op, std::size_t trials, const GradCheckOptions& opts = {});

}  // namespace ocbev
