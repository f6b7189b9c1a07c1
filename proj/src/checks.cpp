#include "das/checks.hpp"

#include <cmath>

#include "das/config.hpp"
#include "das/model.hpp"
#include "das/ops.hpp"
#include "das/random.hpp"
#include "das/sampler.hpp"
#include "das/scan.hpp"
#include "das/ssm.hpp"

namespace das::checks {

namespace {

Tensor rand(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

// Fixed random projection to a scalar so every output entry carries gradient.
Tensor project(const Tensor& t) {
    Rng rng(99);
    return sum(mul(t, rand(t.shape(), rng)));
}

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

GradCase make_case(std::string op, std::string group, double threshold, std::vector<Tensor> leaves, Fn f,
                   std::size_t max_entries = 64) {
    auto run = [leaves, f, max_entries](const GradCheckOptions& base) {
        GradCheckOptions o = base;
        o.max_entries = max_entries;
        return gradcheck([&] { return project(f(leaves)); }, leaves, o);
    };
    return {std::move(op), std::move(group), threshold, run};
}

// Pixel coordinate at least 0.05 away from every lattice line, spanning the
// map plus a one-pixel zero-padding margin.
double off_lattice(Rng& rng, std::size_t extent) {
    for (;;) {
        const double u = rng.uniform(-1.0, static_cast<double>(extent));
        if (std::abs(u - std::round(u)) >= 0.05) return u;
    }
}

scan::Opn random_opn(std::size_t channels, Rng& rng) {
    return {rand({channels, 1, 3, 3}, rng, -0.5, 0.5), rand({channels}, rng, -0.1, 0.1),
            rand({channels}, rng, 0.5, 1.5),           rand({channels}, rng, -0.1, 0.1),
            rand({channels, 2}, rng, -0.5, 0.5),       rand({2}, rng, -0.2, 0.2)};
}

}  // namespace

std::vector<GradCase> gradcheck_cases() {
    std::vector<GradCase> cases;
    Rng rng(2024);
    auto unary = [&](const char* name, Tensor (*fn)(const Tensor&), double lo, double hi) {
        cases.push_back(make_case(name, "tensor", 1e-5, {rand({3, 4}, rng, lo, hi)},
                                  [fn](const std::vector<Tensor>& v) { return fn(v[0]); }));
    };
    unary("exp", das::exp, -1.0, 1.0);
    unary("log", das::log, 0.5, 2.0);
    unary("tanh", das::tanh, -2.0, 2.0);
    unary("sigmoid", das::sigmoid, -3.0, 3.0);
    unary("softplus", das::softplus, -3.0, 3.0);
    unary("gelu", das::gelu, -3.0, 3.0);
    unary("silu", das::silu, -3.0, 3.0);
    unary("sqrt", das::sqrt, 0.5, 2.0);

    cases.push_back(make_case("add", "tensor", 1e-5, {rand({3, 4}, rng), rand({4}, rng)},
                              [](const std::vector<Tensor>& v) { return add(v[0], v[1]); }));
    cases.push_back(make_case("mul", "tensor", 1e-5, {rand({3, 4}, rng), rand({3, 1}, rng)},
                              [](const std::vector<Tensor>& v) { return mul(v[0], v[1]); }));
    cases.push_back(make_case("div", "tensor", 1e-5, {rand({3, 4}, rng), rand({4}, rng, 0.5, 2.0)},
                              [](const std::vector<Tensor>& v) { return div(v[0], v[1]); }));
    cases.push_back(make_case("matmul", "tensor", 1e-5, {rand({6, 4}, rng), rand({4, 5}, rng)},
                              [](const std::vector<Tensor>& v) { return matmul(v[0], v[1]); }));
    cases.push_back(make_case("linear", "tensor", 1e-5, {rand({5, 4}, rng), rand({4, 3}, rng), rand({3}, rng)},
                              [](const std::vector<Tensor>& v) { return linear(v[0], v[1], v[2]); }));
    cases.push_back(make_case("conv2d", "tensor", 1e-5,
                              {rand({2, 4, 6, 6}, rng), rand({4, 2, 3, 3}, rng), rand({4}, rng)},
                              [](const std::vector<Tensor>& v) { return conv2d(v[0], v[1], v[2], 2, 1, 2); }));
    cases.push_back(make_case("layernorm", "tensor", 1e-4, {rand({3, 5}, rng), rand({5}, rng), rand({5}, rng)},
                              [](const std::vector<Tensor>& v) { return layernorm(v[0], 1, v[1], v[2]); }));
    cases.push_back(make_case("batchnorm", "tensor", 1e-4, {rand({4, 3}, rng), rand({3}, rng), rand({3}, rng)},
                              [](const std::vector<Tensor>& v) { return batchnorm_train(v[0], v[1], v[2], nullptr); }));
    cases.push_back(make_case("global_avg_pool", "tensor", 1e-5, {rand({2, 3, 3, 4}, rng)},
                              [](const std::vector<Tensor>& v) { return global_avg_pool(v[0]); }));
    cases.push_back(make_case("permute", "tensor", 1e-5, {rand({2, 3, 4}, rng)},
                              [](const std::vector<Tensor>& v) { return permute(v[0], {2, 0, 1}); }));
    cases.push_back(make_case("cross_entropy", "tensor", 1e-5, {rand({3, 4}, rng, -2.0, 2.0)},
                              [](const std::vector<Tensor>& v) {
                                  const int labels[] = {0, 3, 1};
                                  return cross_entropy(v[0], labels, 0.1);
                              }));

    // Fused discretize-and-scan in every input.
    {
        const std::size_t L = 6, D = 3, N = 2;
        cases.push_back(make_case(
            "selective_scan", "ssm", 1e-4,
            {rand({L, D}, rng), rand({L, D}, rng, 0.05, 0.8), rand({D, N}, rng, -2.0, -0.2), rand({L, N}, rng),
             rand({L, N}, rng)},
            [](const std::vector<Tensor>& v) { return ssm::selective_scan(v[0], v[1], v[2], v[3], v[4]); }));
        ssm::SsmParams p{rand({D, N}, rng, 0.0, 1.0), rand({D, 1}, rng, -0.5, 0.5), rand({1, D}, rng, -0.5, 0.5),
                         rand({D}, rng, -1.0, 0.0),   rand({D, N}, rng, -0.5, 0.5), rand({D, N}, rng, -0.5, 0.5)};
        cases.push_back(make_case("selective_params", "ssm", 1e-4,
                                  {rand({L, D}, rng), p.a_log, p.delta_down, p.delta_up, p.b_proj},
                                  [p](const std::vector<Tensor>& v) {
                                      ssm::SsmParams q = p;
                                      q.a_log = v[1];
                                      q.delta_down = v[2];
                                      q.delta_up = v[3];
                                      q.b_proj = v[4];
                                      auto sp = ssm::selective_params(v[0], q);
                                      return ssm::selective_scan(v[0], sp.delta, q.a(), sp.b, sp.c);
                                  }));
    }

    // Bilinear sampler at 1000 off-lattice coordinates.
    {
        const std::size_t H = 6, W = 7;
        std::vector<double> c;
        for (std::size_t i = 0; i < 1000; ++i) {
            c.push_back(2.0 * off_lattice(rng, W) / static_cast<double>(W - 1) - 1.0);
            c.push_back(2.0 * off_lattice(rng, H) / static_cast<double>(H - 1) - 1.0);
        }
        cases.push_back(make_case("sampler", "sampler", 1e-4, {Tensor({20, 50, 2}, c), rand({H, W, 2}, rng)},
                                  [](const std::vector<Tensor>& v) { return sampler::sample(v[0], v[1]); },
                                  2000));
    }

    {
        const std::size_t C = 3;
        scan::Opn o = random_opn(C, rng);
        auto with = [](const scan::Opn& base, const std::vector<Tensor>& v) {
            scan::Opn q = base;
            q.dw_weight = v[1];
            q.norm_gamma = v[2];
            q.head_weight = v[3];
            q.head_bias = v[4];
            return q;
        };
        std::vector<Tensor> leaves{rand({4, 5, C}, rng), o.dw_weight, o.norm_gamma, o.head_weight, o.head_bias};
        cases.push_back(make_case("opn", "scan", 1e-4, leaves, [o, with](const std::vector<Tensor>& v) {
            return scan::opn_forward(v[0], with(o, v), 0.5);
        }));
        std::vector<Tensor> leaves2{rand({4, 5, C}, rng), o.dw_weight.detach(), o.norm_gamma.detach(),
                                    o.head_weight.detach(), o.head_bias.detach()};
        cases.push_back(make_case("das", "scan", 1e-4, leaves2, [o, with](const std::vector<Tensor>& v) {
            return scan::dynamic_adaptive_scan(v[0], with(o, v), 0.5).resampled;
        }));
    }

    // One full block of a narrow model with a live offset head.
    {
        model::ModelConfig cfg = model::ModelConfig::preset("micro");
        cfg.channels = {4, 4, 6, 6};
        cfg.blocks = {1, 1, 1, 1};
        cfg.state_size = 3;
        auto m = std::make_shared<model::Model>(model::init_model(cfg, 3));
        for (auto& w : m->params.at("stages.0.blocks.0.opn.head.weight").mutable_data()) w = rng.uniform(-0.3, 0.3);
        const std::string p = model::block_prefix(0, 0);
        std::vector<Tensor> leaves{rand({1, 4, 4, 4}, rng)};
        for (const char* n : {"opn.head.weight", "mixer.in_proj.weight", "mixer.a_log", "mixer.delta_up",
                              "mixer.c_proj", "ffn.fc1.weight", "convpos.weight"})
            leaves.push_back(m->param(p + n));
        cases.push_back(make_case(
            "block", "model", 1e-3, leaves,
            [m](const std::vector<Tensor>& v) { return model::block_forward(*m, 0, 0, v[0]); }, 12));
    }
    return cases;
}

std::vector<GradCaseResult> run_gradcheck_suite(const std::string& filter, bool flip_sign, std::uint64_t seed) {
    std::vector<GradCaseResult> out;
    for (const auto& c : gradcheck_cases()) {
        if (!filter.empty() && filter != c.op && filter != c.group) continue;
        GradCheckOptions o;
        o.flip_sign = flip_sign;
        o.seed = seed;
        const GradCheckResult r = c.run(o);
        out.push_back({c.op, c.group, r.max_rel_error, c.threshold, r.entries, r.max_rel_error < c.threshold});
    }
    if (out.empty()) throw ConfigError("grad-check: no check named '" + filter + "'");
    return out;
}

}  // namespace das::checks
