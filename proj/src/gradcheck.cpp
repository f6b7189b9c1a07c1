#include "das/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "das/random.hpp"

namespace das {

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

GradCheckResult gradcheck(const std::function<Tensor()>& loss, std::vector<Tensor> leaves,
                          const GradCheckOptions& options) {
    for (auto& t : leaves) {
        if (!t.is_leaf()) throw ContractError("gradcheck: inputs must be leaves");
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor out = loss();
    out.backward();
    std::vector<std::vector<double>> analytic;
    for (auto& t : leaves) {
        if (t.has_grad())
            analytic.emplace_back(t.grad().begin(), t.grad().end());
        else
            analytic.emplace_back(t.numel(), 0.0);
    }

    auto evaluate = [&] {
        NoGradGuard guard;
        return loss().item();
    };

    GradCheckResult result;
    Rng rng(options.seed);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        std::vector<std::size_t> idx(leaf.numel());
        std::iota(idx.begin(), idx.end(), 0);
        if (idx.size() > options.max_entries) {
            for (std::size_t i = 0; i < options.max_entries; ++i)
                std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
            idx.resize(options.max_entries);
        }
        auto data = leaf.mutable_data();
        for (auto i : idx) {
            const double orig = data[i];
            data[i] = orig + options.step;
            const double up = evaluate();
            data[i] = orig - options.step;
            const double down = evaluate();
            data[i] = orig;
            const double numeric = (up - down) / (2.0 * options.step);
            double a = analytic[li][i];
            if (options.flip_sign) a = -a;
            result.max_rel_error = std::max(result.max_rel_error, relative_error(a, numeric));
            ++result.entries;
        }
    }
    return result;
}

}  // namespace das
