#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "das/gradcheck.hpp"

namespace das::checks {

/// One finite-difference check: `op` names it, `group` is the module it
/// belongs to (tensor, ssm, sampler, scan, model).
struct GradCase {
    std::string op;
    std::string group;
    double threshold;
    std::function<GradCheckResult(const GradCheckOptions&)> run;
};

struct GradCaseResult {
    std::string op, group;
    double max_rel_error = 0.0;
    double threshold = 0.0;
    std::size_t entries = 0;
    bool passed = false;
};

std::vector<GradCase> gradcheck_cases();

/// Runs every case whose op or group equals `filter` (all when empty).
/// ConfigError when the filter matches nothing.
std::vector<GradCaseResult> run_gradcheck_suite(const std::string& filter = "", bool flip_sign = false,
                                                std::uint64_t seed = 0);

}  // namespace das::checks
