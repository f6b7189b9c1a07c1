#include <omp.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "das/checks.hpp"
#include "das/harness.hpp"
#include "das/scaling.hpp"
#include "das/tensor_io.hpp"
#include "das/viz.hpp"

namespace fs = std::filesystem;
using namespace das;

namespace {

constexpr int kExitFailed = 1;
constexpr int kExitBadInput = 2;
constexpr int kExitNumerics = 3;

// Everything a run depends on, resolved from defaults, the config file and flags.
struct RunConfig {
    model::ModelConfig model = model::ModelConfig::preset("micro");
    harness::TrainConfig train;
    harness::DatasetSpec data;
    std::uint64_t data_seed = 0;

    KeyValues data_key_values() const {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", data.val_fraction);
        return {{"samples", std::to_string(data.num_samples)},
                {"image_size", std::to_string(data.image_size)},
                {"val_fraction", buf},
                {"data_seed", std::to_string(data_seed)}};
    }

    bool apply_data_key(const std::string& k, const std::string& v) {
        if (k == "samples") data.num_samples = parse_u64(k, v);
        else if (k == "image_size") data.image_size = parse_u64(k, v);
        else if (k == "val_fraction") data.val_fraction = parse_double(k, v);
        else if (k == "data_seed") data_seed = parse_u64(k, v);
        else return false;
        return true;
    }

    void apply_all(const KeyValues& kv, bool model_keys) {
        // "model" selects a preset, so it goes first and the rest refine it.
        for (const auto& [k, v] : kv)
            if (k == "model" && model_keys) model.apply(k, v);
        for (const auto& [k, v] : kv) {
            if (k == "model") {
                if (!model_keys) throw ConfigError("key 'model' is fixed by the checkpoint");
                continue;
            }
            if (apply_data_key(k, v) || train.apply(k, v)) continue;
            if (model_keys && model.apply(k, v)) continue;
            throw ConfigError("unknown config key '" + k + "'");
        }
    }

    harness::DatasetSpec dataset_spec() const {
        harness::DatasetSpec s = data;
        s.num_classes = model.num_classes;
        return s;
    }

    KeyValues resolved() const {
        KeyValues kv = model.to_key_values();
        for (auto& p : train.to_key_values()) kv.push_back(p);
        for (auto& p : data_key_values()) kv.push_back(p);
        return kv;
    }
};

struct Common {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string out_dir;
    int threads = 0;
};

std::string timestamp() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void write_manifest(const std::string& dir, const std::string& subcommand, const KeyValues& resolved, int threads) {
    fs::create_directories(dir);
    std::ofstream os(fs::path(dir) / "manifest.txt");
    KeyValues head{{"subcommand", subcommand}, {"created", timestamp()}, {"threads", std::to_string(threads)}};
    os << format_key_values(head) << format_key_values(resolved);
}

void set_threads(int requested, int fallback) {
    const int n = requested > 0 ? requested : fallback;
    if (n > 0) omp_set_num_threads(n);
}

int current_threads() { return omp_get_max_threads(); }

RunConfig load_config(const Common& c, bool required) {
    RunConfig rc;
    if (c.config_path.empty()) {
        if (required) throw ConfigError("missing --config PATH");
    } else {
        if (!fs::exists(c.config_path)) throw ConfigError("config file '" + c.config_path + "' not found");
        rc.apply_all(read_key_values(c.config_path), true);
    }
    if (c.seed_given) rc.train.seed = c.seed;
    rc.model.validate();
    rc.train.validate();
    return rc;
}

void add_common(CLI::App* app, Common& c, bool with_config = true) {
    if (with_config) app->add_option("--config", c.config_path, "key=value config file");
    app->add_option_function<std::uint64_t>(
        "--seed", [&c](const std::uint64_t& s) { c.seed = s, c.seed_given = true; }, "random seed");
    app->add_option("--out", c.out_dir, "output directory");
    app->add_option("--threads", c.threads, "OpenMP threads")->check(CLI::PositiveNumber);
}

int cmd_train(const Common& c, const std::string& resume_path, std::size_t stop_at) {
    set_threads(c.threads, 0);
    const std::string out = c.out_dir.empty() ? "runs/train" : c.out_dir;
    harness::TrainOptions opt;
    opt.out_dir = out;
    opt.log = &std::cout;
    opt.stop_at_step = stop_at;
    harness::TrainState st;
    RunConfig rc;
    if (!resume_path.empty()) {
        const model::Checkpoint ck = model::load_checkpoint(resume_path);
        rc.model = ck.config;
        for (const auto& [k, v] : ck.extra_config)
            if (!rc.apply_data_key(k, v)) rc.train.apply(k, v);
        const auto data = harness::generate_dataset(rc.dataset_spec(), rc.data_seed);
        opt.extra_config = rc.data_key_values();
        write_manifest(out, "train", rc.resolved(), current_threads());
        st = harness::resume(ck, data, opt);
    } else {
        rc = load_config(c, true);
        const auto data = harness::generate_dataset(rc.dataset_spec(), rc.data_seed);
        opt.extra_config = rc.data_key_values();
        write_manifest(out, "train", rc.resolved(), current_threads());
        st = harness::train(rc.model, data, rc.train, opt);
    }
    std::cout << "steps=" << st.step << " best_val_accuracy=" << st.best_val_accuracy
              << " cpu_seconds=" << st.cpu_seconds << (st.stopped_by_budget ? " (cpu budget reached)" : "")
              << "\ncheckpoints in " << out << "\n";
    return 0;
}

int cmd_eval(const Common& c, const std::string& ckpt_path, const std::string& split) {
    set_threads(c.threads, 0);
    const model::Checkpoint ck = model::load_checkpoint(ckpt_path);
    RunConfig rc;
    rc.model = ck.config;
    for (const auto& [k, v] : ck.extra_config) rc.apply_data_key(k, v);
    if (!c.config_path.empty()) {
        KeyValues kv = read_key_values(c.config_path);
        for (const auto& [k, v] : kv)
            if (!rc.apply_data_key(k, v)) throw ConfigError("eval: only dataset keys may be overridden, not '" + k + "'");
    }
    const model::Model m = model::model_from_checkpoint(ck);
    const auto data = harness::generate_dataset(rc.dataset_spec(), rc.data_seed);
    std::vector<std::size_t> idx;
    if (split == "val") idx = data.val_index;
    else if (split == "train") idx = data.train_index;
    else throw ConfigError("--split must be train or val");
    const harness::EvalResult r = harness::evaluate(m, data, idx);
    std::cout << std::setprecision(17) << "split=" << split << " loss=" << r.loss << " accuracy=" << r.accuracy
              << " count=" << r.count << "\n";
    if (!c.out_dir.empty()) {
        KeyValues resolved = rc.model.to_key_values();
        for (auto& p : rc.data_key_values()) resolved.push_back(p);
        resolved.emplace_back("checkpoint", ckpt_path);
        resolved.emplace_back("split", split);
        write_manifest(c.out_dir, "eval", resolved, current_threads());
        std::ofstream os(fs::path(c.out_dir) / "eval.csv");
        os << std::setprecision(17) << "split,loss,accuracy,count\n" << split << ',' << r.loss << ',' << r.accuracy << ','
           << r.count << '\n';
    }
    return 0;
}

int cmd_grad_check(const Common& c, const std::string& op, bool negative_control) {
    set_threads(c.threads, 0);
    const auto results = checks::run_gradcheck_suite(op, negative_control, c.seed);
    std::ostringstream csv;
    csv << "op,group,max_rel_error,threshold,entries,status\n";
    std::vector<std::string> failed;
    std::printf("%-18s %-8s %14s %10s  %s\n", "op", "group", "max_rel_err", "threshold", "status");
    for (const auto& r : results) {
        const char* status = r.passed ? "PASS" : "FAIL";
        std::printf("%-18s %-8s %14.3e %10.0e  %s\n", r.op.c_str(), r.group.c_str(), r.max_rel_error, r.threshold, status);
        csv << r.op << ',' << r.group << ',' << std::setprecision(6) << r.max_rel_error << ',' << r.threshold << ','
            << r.entries << ',' << status << '\n';
        if (!r.passed) failed.push_back(r.op);
    }
    if (!c.out_dir.empty()) {
        write_manifest(c.out_dir, "grad-check",
                       {{"op", op.empty() ? "all" : op},
                        {"negative_control", negative_control ? "true" : "false"},
                        {"seed", std::to_string(c.seed)}},
                       current_threads());
        std::ofstream(fs::path(c.out_dir) / "gradcheck.csv") << csv.str();
    }
    if (!failed.empty()) {
        std::cout << "FAILED:";
        for (const auto& f : failed) std::cout << ' ' << f;
        std::cout << "\n";
        return kExitFailed;
    }
    std::cout << "all " << results.size() << " checks passed\n";
    return 0;
}

int cmd_bench(const Common& c, scaling::BenchOptions o) {
    set_threads(c.threads, 1);
    o.seed = c.seed;
    if (o.reps < 5) throw ConfigError("--reps must be at least 5");
    const auto rows = scaling::run_scaling_bench(o);
    const auto fits = scaling::fit_exponents(rows);
    scaling::write_bench_csv(std::cout, rows);
    scaling::write_fit_csv(std::cout, fits);
    if (!c.out_dir.empty()) {
        std::string lengths;
        for (auto L : o.lengths) lengths += (lengths.empty() ? "" : ",") + std::to_string(L);
        write_manifest(c.out_dir, "bench",
                       {{"lengths", lengths},
                        {"reps", std::to_string(o.reps)},
                        {"channels", std::to_string(o.channels)},
                        {"state", std::to_string(o.state)},
                        {"seed", std::to_string(o.seed)}},
                       current_threads());
        std::ofstream b(fs::path(c.out_dir) / "bench.csv");
        scaling::write_bench_csv(b, rows);
        std::ofstream f(fs::path(c.out_dir) / "bench_fit.csv");
        scaling::write_fit_csv(f, fits);
    }
    return 0;
}

int cmd_scan_viz(const Common& c, const std::string& ckpt_path, const std::string& image_path, std::size_t stage,
                 std::string svg_path) {
    set_threads(c.threads, 0);
    const model::Checkpoint ck = model::load_checkpoint(ckpt_path);
    const model::Model m = model::model_from_checkpoint(ck);
    const viz::Image img = viz::read_pnm(image_path);
    if (stage < 1 || stage > 4) throw ConfigError("--stage must be 1..4");
    const Tensor x = reshape(viz::image_to_tensor(img), {1, 3, img.height, img.width});
    const viz::ScanPath path = viz::model_scan_path(m, x, stage - 1);
    const std::string out = c.out_dir.empty() ? "runs/scan-viz" : c.out_dir;
    if (svg_path.empty()) svg_path = (fs::path(out) / "scan_path.svg").string();
    KeyValues resolved = m.config.to_key_values();
    resolved.emplace_back("checkpoint", ckpt_path);
    resolved.emplace_back("image", image_path);
    resolved.emplace_back("stage", std::to_string(stage));
    resolved.emplace_back("svg", svg_path);
    write_manifest(out, "scan-viz", resolved, current_threads());
    if (fs::path(svg_path).has_parent_path()) fs::create_directories(fs::path(svg_path).parent_path());
    std::ofstream os(svg_path);
    if (!os) throw FormatError("cannot write '" + svg_path + "'");
    viz::write_svg(os, img, path);
    std::ofstream csv(fs::path(out) / "scan_path.csv");
    csv << "slot,px,py,patch_x,patch_y,out_of_grid\n";
    for (std::size_t i = 0; i < path.points.size(); ++i) {
        const auto& p = path.points[i];
        csv << i << ',' << std::setprecision(10) << p.x << ',' << p.y << ',' << p.patch_x << ',' << p.patch_y << ','
            << p.out_of_grid << '\n';
    }
    std::cout << "grid " << path.grid_height << "x" << path.grid_width << ", " << path.points.size()
              << " points -> " << svg_path << "\n";
    return 0;
}

int cmd_sample(const Common& c, std::size_t index) {
    const RunConfig rc = load_config(c, false);
    const auto data = harness::generate_dataset(rc.dataset_spec(), rc.data_seed);
    if (index >= data.size()) throw ConfigError("--index out of range");
    const std::string out = c.out_dir.empty() ? "runs/sample" : c.out_dir;
    fs::create_directories(out);
    const Tensor x = data.batch({index});
    const Tensor chw = reshape(x, {3, data.spec.image_size, data.spec.image_size});
    const std::string path = (fs::path(out) / ("sample_" + std::to_string(index) + ".ppm")).string();
    viz::write_pnm(path, viz::tensor_to_image(chw));
    std::cout << path << " label=" << data.labels[index] << " ("
              << harness::glyph_name(static_cast<harness::Glyph>(data.labels[index])) << ")\n";
    return 0;
}

int cmd_ablate(const Common& c, harness::AblationBudget budget) {
    set_threads(c.threads, 0);
    const RunConfig rc = load_config(c, true);
    const auto data = harness::generate_dataset(rc.dataset_spec(), rc.data_seed);
    const std::string out = c.out_dir.empty() ? "runs/ablate" : c.out_dir;
    KeyValues resolved = rc.resolved();
    std::string seeds;
    for (auto s : budget.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
    resolved.emplace_back("ablation_steps", std::to_string(budget.steps));
    resolved.emplace_back("ablation_cpu_seconds", std::to_string(budget.max_cpu_seconds));
    resolved.emplace_back("ablation_seeds", seeds);
    write_manifest(out, "ablate", resolved, current_threads());
    const auto arms = harness::ablation_run(data, rc.model, rc.train, budget, &std::cout);
    harness::write_ablation_table(std::cout, arms);
    std::ofstream t(fs::path(out) / "ablation.txt");
    harness::write_ablation_table(t, arms);
    std::ofstream csv(fs::path(out) / "ablation.csv");
    harness::write_ablation_csv(csv, arms);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dynamic adaptive scan state-space models: training, checks, benchmarks and visualization"};
    app.require_subcommand(1);
    Common common;

    auto* train = app.add_subcommand("train", "train a model from a config file");
    add_common(train, common);
    std::string resume_path;
    train->add_option("--resume", resume_path, "continue from a checkpoint written by train");
    std::size_t stop_at = 0;
    train->add_option("--stop-at", stop_at, "stop after this step as if interrupted (last.dckp is written)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the dataset it was trained on");
    add_common(eval, common);
    std::string ckpt_path, split = "val";
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("--split", split, "train or val");

    auto* grad = app.add_subcommand("grad-check", "finite-difference gradient suite");
    add_common(grad, common, false);
    std::string op;
    bool negative = false;
    grad->add_option("--op", op, "restrict to one op or group");
    grad->add_flag("--negative-control", negative, "negate analytic gradients; every check must fail");

    auto* bench = app.add_subcommand("bench", "scan vs quadratic attention scaling");
    add_common(bench, common, false);
    scaling::BenchOptions bopt;
    bench->add_option("--reps", bopt.reps, "timed repetitions per length (>= 5)");
    bench->add_option("--lengths", bopt.lengths, "sequence lengths")->delimiter(',');
    bench->add_option("--channels", bopt.channels, "channels / head dimension");

    auto* viz_cmd = app.add_subcommand("scan-viz", "draw the learned scan path over an image");
    add_common(viz_cmd, common, false);
    std::string image_path, svg_path;
    std::size_t stage = 4;
    viz_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    viz_cmd->add_option("--image", image_path, "binary PPM (P6) or PGM (P5)")->required();
    viz_cmd->add_option("--stage", stage, "stage 1..4");
    viz_cmd->add_option("--svg", svg_path, "output SVG (default <out>/scan_path.svg)");

    auto* sample = app.add_subcommand("sample", "write one dataset image as PPM");
    add_common(sample, common);
    std::size_t index = 0;
    sample->add_option("--index", index, "sample index");

    auto* ablate = app.add_subcommand("ablate", "Baseline / +DAScan / +Convpos / +ConvFFN comparison");
    add_common(ablate, common);
    harness::AblationBudget budget;
    ablate->add_option("--steps", budget.steps, "steps per arm (default: as many as the CPU budget allows)");
    ablate->add_option("--cpu-seconds", budget.max_cpu_seconds, "CPU budget per arm and seed");
    ablate->add_option("--seeds", budget.seeds, "training seeds")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitBadInput;
    }

    try {
        if (*train) return cmd_train(common, resume_path, stop_at);
        if (*eval) return cmd_eval(common, ckpt_path, split);
        if (*grad) return cmd_grad_check(common, op, negative);
        if (*bench) return cmd_bench(common, bopt);
        if (*viz_cmd) return cmd_scan_viz(common, ckpt_path, image_path, stage, svg_path);
        if (*sample) return cmd_sample(common, index);
        if (*ablate) return cmd_ablate(common, budget);
    } catch (const NumericsError& e) {
        std::cerr << "numerics error: " << e.what() << "\n";
        return kExitNumerics;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const FormatError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const DomainError& e) {
        std::cerr << "invalid value: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "file error: " << e.what() << "\n";
        return kExitBadInput;
    }
    return kExitFailed;
}
