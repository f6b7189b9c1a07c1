#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "das/tensor.hpp"

namespace das {

/// |a - n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

struct GradCheckOptions {
    double step = 1e-5;
    /// Entries probed per input; a deterministic random subset when smaller
    /// than the input.
    std::size_t max_entries = std::numeric_limits<std::size_t>::max();
    std::uint64_t seed = 0;
    /// Negates the analytic gradient; negative control for the checker itself.
    bool flip_sign = false;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t entries = 0;
};

/// Compares reverse-mode gradients of a scalar-valued `loss` against central
/// finite differences with respect to every listed leaf.
GradCheckResult gradcheck(const std::function<Tensor()>& loss, std::vector<Tensor> leaves,
                          const GradCheckOptions& options = {});

}  // namespace das
