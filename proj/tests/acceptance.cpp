// Acceptance gate: one PASS/FAIL line per criterion. Tolerances are fixed here.
//   das_acceptance [--only name,name] [--out DIR]
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <tuple>

#include "das/checks.hpp"
#include "das/harness.hpp"
#include "das/sampler.hpp"
#include "das/scaling.hpp"
#include "das/scan.hpp"
#include "das/ssm.hpp"

namespace fs = std::filesystem;
using namespace das;

namespace {

constexpr double kKernelTol = 1e-10;
constexpr double kKernelSeconds = 5.0;
constexpr double kZohTol = 1e-12;
constexpr double kZohSmallATol = 1e-10;
constexpr double kUnityTol = 1e-12;
constexpr double kSamplerGradTol = 1e-4;
constexpr double kParamTol = 0.10;
constexpr double kFlopTol = 0.15;
constexpr double kAblationMargin = 0.01;
constexpr double kScanExpLo = 0.8, kScanExpHi = 1.3;
constexpr double kAttnExpLo = 1.7, kAttnExpHi = 2.3;

struct Verdict {
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

fs::path out_dir;

Verdict kernel_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(101);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t L = 1 + rng.below(64), N = 1 + rng.below(8);
        std::vector<double> a_bar(N), b_bar(N);
        for (std::size_t n = 0; n < N; ++n) {
            auto z = ssm::discretize_zoh(-std::exp(rng.uniform(-3, 2)), rng.uniform(-2, 2), std::exp(rng.uniform(-4, 1)));
            a_bar[n] = z.a_bar;
            b_bar[n] = z.b_bar;
        }
        auto disc = ssm::make_static(L, 1, N, a_bar, b_bar);
        Tensor crow = uniform({1, N}, rng, -1, 1);
        Tensor c = concat(std::vector<Tensor>(L, crow), 0);
        Tensor x = uniform({L, 1}, rng, -2, 2);
        Tensor y1 = ssm::selective_scan(x, disc, c);
        Tensor y2 = ssm::ssm_kernel_apply(x, ssm::ssm_kernel(disc, crow, L));
        for (std::size_t i = 0; i < y1.numel(); ++i) worst = std::max(worst, std::abs(y1.data()[i] - y2.data()[i]));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {worst < kKernelTol && secs < kKernelSeconds,
            fmt("max |recurrence - kernel| = %.2e (< %.0e), %.3f s (< %.0f s)", worst, kKernelTol, secs, kKernelSeconds)};
}

Verdict zoh() {
    auto r = ssm::discretize_zoh(-1.0, 1.0, std::log(2.0));
    const double e1 = std::max(std::abs(r.a_bar - 0.5), std::abs(r.b_bar - 0.5));
    double e2 = 0.0;
    for (double a : {0.0, -1e-15, -1e-12, -1e-10}) {
        for (double delta : {0.01, 0.1, 1.0}) {
            const double b = 1.7;
            e2 = std::max(e2, std::abs(ssm::discretize_zoh(a, b, delta).b_bar - delta * b));
        }
    }
    return {e1 <= kZohTol && e2 <= kZohSmallATol,
            fmt("A=-1, delta=ln2: max err %.1e (<= %.0e); A->0 vs delta*B: %.1e (<= %.0e)", e1, kZohTol, e2,
                kZohSmallATol)};
}

Verdict sampler_suite() {
    Rng rng(202);
    bool exact = true;
    for (auto [H, W] : {std::pair<std::size_t, std::size_t>{1, 1}, {2, 3}, {5, 4}, {7, 7}}) {
        Tensor X = uniform({H, W, 3}, rng, -3, 3);
        Tensor Y = sampler::sample(sampler::identity_grid(H, W).to_tensor(), X);
        for (std::size_t i = 0; i < X.numel(); ++i) exact = exact && Y.data()[i] == X.data()[i];
    }
    double unity = 0.0;
    const std::size_t H = 6, W = 5;
    Tensor ones = Tensor::ones({H, W, 1});
    std::vector<double> c;
    for (int i = 0; i < 2000; ++i) c.push_back(rng.uniform(-1.0, 1.0));
    Tensor y = sampler::sample(Tensor({1000, 1, 2}, c), ones);
    for (double v : y.data()) unity = std::max(unity, std::abs(v - 1.0));
    const auto g = checks::run_gradcheck_suite("sampler");
    const double grad = g.at(0).max_rel_error;
    return {exact && unity <= kUnityTol && grad < kSamplerGradTol,
            std::string(exact ? "lattice bit-exact" : "lattice NOT exact") +
                fmt("; partition of unity err %.1e (<= %.0e); gradcheck on 1000 off-lattice coords %.2e (< %.0e)",
                    unity, kUnityTol, grad, kSamplerGradTol)};
}

Verdict zero_offset_equivalence() {
    auto cfg = model::ModelConfig::preset("micro");
    auto off = cfg;
    off.use_das = false;
    auto with = model::init_model(cfg, 31), without = model::init_model(off, 31);
    Rng rng(303);
    NoGradGuard guard;
    std::size_t mismatched = 0;
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = uniform({1, 16, 16, 16}, rng, -2, 2);
        Tensor a = model::block_forward(with, 0, 0, x), b = model::block_forward(without, 0, 0, x);
        for (std::size_t i = 0; i < a.numel(); ++i) mismatched += a.data()[i] != b.data()[i];
    }
    return {mismatched == 0, fmt("%.0f differing entries over 10 inputs (bit-exact required)", double(mismatched))};
}

using Order = std::vector<std::size_t>;

template <class Key>
Order sorted_by(std::size_t H, std::size_t W, Key key) {
    Order o(H * W);
    std::iota(o.begin(), o.end(), 0);
    std::stable_sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) { return key(a / W, a % W) < key(b / W, b % W); });
    return o;
}

Verdict scan_permutations() {
    std::size_t grids = 0, bad = 0;
    for (std::size_t H = 1; H <= 5; ++H)
        for (std::size_t W = 1; W <= 5; ++W) {
            ++grids;
            auto sw = scan::sweeping_scan(H, W);
            auto sn = scan::continuous_scan(H, W);
            bad += sw.order != sorted_by(H, W, [](std::size_t h, std::size_t w) { return std::make_tuple(h, w); });
            bad += sn.order != sorted_by(H, W, [](std::size_t h, std::size_t w) {
                       return std::make_tuple(h, h % 2 ? -static_cast<long>(w) : static_cast<long>(w));
                   });
            bad += !scan::is_bijection(sw.order) || !scan::is_bijection(sn.order);
            for (std::size_t k = 1; k <= std::max(H, W); ++k) {
                auto lo = scan::local_scan(H, W, k);
                bad += lo.order != sorted_by(H, W, [k](std::size_t h, std::size_t w) { return std::make_tuple(h / k, w / k, h, w); });
                bad += !scan::is_bijection(lo.order);
            }
        }
    // Written-out tables.
    bad += scan::continuous_scan(3, 3).order != Order{0, 1, 2, 5, 4, 3, 6, 7, 8};
    bad += scan::local_scan(4, 4, 2).order != Order{0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15};
    bad += scan::local_scan(3, 3, 2).order != Order{0, 1, 3, 4, 2, 5, 6, 7, 8};
    return {bad == 0, fmt("%.0f grids (H,W <= 5) x {sweeping, continuous, local k=1..max}; %.0f mismatches", double(grids),
                          double(bad))};
}

Verdict counts() {
    bool ok = true;
    std::string detail;
    const std::pair<const char*, double> targets[] = {{"T", 26e6}, {"S", 45e6}, {"B", 86e6}};
    for (auto [name, target] : targets) {
        const double n = static_cast<double>(model::count_params(model::ModelConfig::preset(name)));
        const double rel = std::abs(n - target) / target;
        ok = ok && rel <= kParamTol;
        detail += std::string(name) + fmt(" %.2fM (%+.1f%%); ", n / 1e6, 100.0 * (n - target) / target);
    }
    const double f = static_cast<double>(model::count_flops(model::ModelConfig::preset("T"), 224, 224));
    ok = ok && std::abs(f - 4.8e9) / 4.8e9 <= kFlopTol;
    detail += fmt("T FLOPs at 224: %.2fG (%+.1f%%, tol +-%.0f%%)", f / 1e9, 100.0 * (f - 4.8e9) / 4.8e9, 100 * kFlopTol);
    return {ok, detail};
}

Verdict ablation() {
    harness::DatasetSpec spec;
    spec.num_classes = 4;
    spec.num_samples = 4000;
    const auto data = harness::generate_dataset(spec, 7);
    harness::TrainConfig hyper;
    hyper.lr = 2e-3;
    harness::AblationBudget budget;  // 300 s CPU per arm and seed, seeds 1..3
    auto arms = harness::ablation_run(data, model::ModelConfig::preset("micro"), hyper, budget, &std::cout);
    harness::write_ablation_table(std::cout, arms);
    fs::create_directories(out_dir);
    std::ofstream csv(out_dir / "ablation.csv");
    harness::write_ablation_csv(csv, arms);
    std::ofstream txt(out_dir / "ablation.txt");
    harness::write_ablation_table(txt, arms);
    const double base = arms[0].median(), das = arms[1].median(), full = arms[3].median();
    const bool ok = das >= base && full >= base + kAblationMargin;
    return {ok, fmt("median val acc: Baseline %.4f, +DAScan %.4f, full %.4f (need +DAScan >= Baseline, full >= "
                    "Baseline + %.2f)",
                    base, das, full, kAblationMargin)};
}

Verdict scaling_bench() {
    scaling::BenchOptions o;
    const auto rows = scaling::run_scaling_bench(o);
    const auto fits = scaling::fit_exponents(rows);
    fs::create_directories(out_dir);
    std::ofstream b(out_dir / "bench.csv");
    scaling::write_bench_csv(b, rows);
    std::ofstream f(out_dir / "bench_fit.csv");
    scaling::write_fit_csv(f, fits);
    double scan_e = 0, attn_e = 0;
    for (const auto& fit : fits) (fit.kernel == "attention" ? attn_e : scan_e) = fit.exponent;
    return {scan_e >= kScanExpLo && scan_e <= kScanExpHi && attn_e >= kAttnExpLo && attn_e <= kAttnExpHi,
            fmt("selective_scan exponent %.3f in [%.1f, %.1f]; attention exponent %.3f", scan_e, kScanExpLo, kScanExpHi,
                attn_e) +
                fmt(" in [%.1f, %.1f]", kAttnExpLo, kAttnExpHi)};
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

Verdict determinism() {
    harness::DatasetSpec spec;
    spec.num_samples = 1000;
    const auto data = harness::generate_dataset(spec, 11);
    harness::TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 5;
    auto mc = model::ModelConfig::preset("micro");
    mc.drop_path = 0.1;
    std::string bytes[2];
    std::size_t steps = 0;
    for (int run = 0; run < 2; ++run) {
        harness::TrainOptions o;
        o.out_dir = (out_dir / ("determinism_" + std::to_string(run))).string();
        fs::remove_all(o.out_dir);
        steps = harness::train(mc, data, cfg, o).step;
        bytes[run] = slurp(fs::path(o.out_dir) / "last.dckp");
    }
    const bool same = !bytes[0].empty() && bytes[0] == bytes[1];
    return {same, fmt("two %.0f-step micro runs (1000 samples, 3 epochs, drop_path 0.1): checkpoints of %.0f bytes ",
                      double(steps), double(bytes[0].size())) +
                      (same ? "identical" : "DIFFER")};
}

int shell(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Verdict visualizer() {
    const fs::path dir = out_dir / "viz";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "zero.cfg") << "model=micro\nsamples=40\nimage_size=64\nmax_steps=1\nlr=0\n";
    const std::string cli = DAS_CLI;
    const std::string q = " > " + (dir / "log.txt").string() + " 2>&1";
    if (shell(cli + " train --config " + (dir / "zero.cfg").string() + " --out " + dir.string() + q) != 0 ||
        shell(cli + " sample --config " + (dir / "zero.cfg").string() + " --index 0 --out " + dir.string() + q) != 0 ||
        shell(cli + " scan-viz --checkpoint " + (dir / "last.dckp").string() + " --image " +
              (dir / "sample_0.ppm").string() + " --stage 3 --svg " + (dir / "path.svg").string() + " --out " +
              dir.string() + q) != 0)
        return {false, "CLI run failed, see " + (dir / "log.txt").string()};
    // Strict XML parse, marker counts and raster order of the drawn points.
    const std::string py =
        "import sys, xml.etree.ElementTree as ET\n"
        "root = ET.parse(sys.argv[1]).getroot()\n"
        "ns = '{http://www.w3.org/2000/svg}'\n"
        "cls = lambda e: e.get('class', '').split()\n"
        "pts = [e for e in root.iter(ns + 'circle') if 'pt' in cls(e)]\n"
        "segs = [e for e in root.iter(ns + 'line') if 'seg' in cls(e)]\n"
        "xy = [(float(p.get('cx')), float(p.get('cy'))) for p in pts]\n"
        "raster = xy == sorted(xy, key=lambda t: (t[1], t[0])) and len(set(xy)) == len(xy)\n"
        "print(len(pts), len(segs), int(raster))\n";
    std::ofstream(dir / "check.py") << py;
    const std::string res = (dir / "check.txt").string();
    if (shell("python3 " + (dir / "check.py").string() + " " + (dir / "path.svg").string() + " > " + res + " 2>&1") != 0)
        return {false, "SVG failed strict XML parse: " + slurp(res)};
    std::istringstream is(slurp(res));
    std::size_t n = 0, segs = 0, raster = 0;
    is >> n >> segs >> raster;
    const std::size_t expected = 4 * 4;  // stage 3 of a 64x64 input
    return {n == expected && segs + 1 == n && raster == 1,
            fmt("stage-3 grid: %.0f point markers (expect %.0f), %.0f segments, ", double(n), double(expected),
                double(segs)) +
                (raster ? "raster order" : "NOT raster") + ", well-formed XML"};
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> only;
    out_dir = fs::temp_directory_path() / "das_acceptance";
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            for (std::string s; std::getline(ss, s, ',');) only.push_back(s);
        } else if (a == "--out" && i + 1 < argc) {
            out_dir = argv[++i];
        } else {
            std::cerr << "usage: das_acceptance [--only name,...] [--out DIR]\n";
            return 2;
        }
    }
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"kernel-oracle", kernel_oracle},
        {"zoh", zoh},
        {"sampler", sampler_suite},
        {"zero-offset-equivalence", zero_offset_equivalence},
        {"scan-permutations", scan_permutations},
        {"param-count", counts},
        {"scaling-bench", scaling_bench},
        {"determinism", determinism},
        {"visualizer", visualizer},
        {"desk-ablation", ablation},
    };
    int failed = 0, ran = 0;
    for (const auto& [name, fn] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        ++ran;
        failed += !v.pass;
        std::cout << (v.pass ? "[PASS] " : "[FAIL] ") << name << ": " << v.detail << std::endl;
    }
    std::cout << ran - failed << "/" << ran << " criteria passed" << std::endl;
    return failed ? 1 : 0;
}
