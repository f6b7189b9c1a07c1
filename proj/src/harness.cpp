#include "das/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "das/random.hpp"

namespace das::harness {

const char* glyph_name(Glyph g) {
    switch (g) {
        case Glyph::hbar: return "hbar";
        case Glyph::vbar: return "vbar";
        case Glyph::cross: return "cross";
        case Glyph::blob: return "blob";
        case Glyph::diagonal: return "diagonal";
        case Glyph::ring: return "ring";
        case Glyph::corner: return "corner";
        case Glyph::square: return "square";
    }
    return "?";
}

namespace {

// Glyph mask relative to its centre; `len` is the nominal extent in pixels.
bool glyph_covers(Glyph g, double dx, double dy, double len, double thick) {
    const double half = len / 2.0, t = thick / 2.0;
    const double r = std::sqrt(dx * dx + dy * dy);
    switch (g) {
        case Glyph::hbar: return std::abs(dy) <= t && std::abs(dx) <= half;
        case Glyph::vbar: return std::abs(dx) <= t && std::abs(dy) <= half;
        case Glyph::cross:
            return (std::abs(dy) <= t && std::abs(dx) <= half) || (std::abs(dx) <= t && std::abs(dy) <= half);
        case Glyph::blob: return r <= 0.35 * len;
        case Glyph::diagonal: return std::abs(dx - dy) <= thick * 0.75 && std::abs(dx) <= half;
        case Glyph::ring: return r <= 0.45 * len && r >= 0.45 * len - thick;
        case Glyph::corner:
            return (std::abs(dy + half - t) <= t && std::abs(dx) <= half) ||
                   (std::abs(dx + half - t) <= t && std::abs(dy) <= half);
        case Glyph::square:
            return std::max(std::abs(dx), std::abs(dy)) <= half && std::max(std::abs(dx), std::abs(dy)) >= half - thick;
    }
    return false;
}

void render_sample(const DatasetSpec& spec, std::uint64_t sample_seed, int label, float* out, std::size_t& pixels) {
    const std::size_t S = spec.image_size;
    const double s = static_cast<double>(S);
    Rng rng(sample_seed);
    // Background: three random plane waves per channel plus pixel noise.
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::array<std::array<Wave, 3>, 3> waves;
    for (auto& ch : waves)
        for (auto& w : ch) {
            w.fx = rng.uniform(-4.0, 4.0);
            w.fy = rng.uniform(-4.0, 4.0);
            w.phase = rng.uniform(0.0, 6.283185307179586);
            w.amp = rng.uniform(0.1, 0.25);
        }
    const double len = rng.uniform(18.0, 24.0) * s / 64.0;
    const double thick = rng.uniform(3.0, 4.0) * s / 64.0;
    const double margin = len / 2.0 + 2.0;
    double cx, cy;
    do {  // keep the glyph away from the image centre
        cx = rng.uniform(margin, s - 1.0 - margin);
        cy = rng.uniform(margin, s - 1.0 - margin);
    } while (std::abs(cx - s / 2.0) < s / 8.0 && std::abs(cy - s / 2.0) < s / 8.0);
    std::array<double, 3> colour;
    for (auto& c : colour) c = rng.uniform(1.0, 1.8);
    const Glyph glyph = static_cast<Glyph>(label);
    pixels = 0;
    for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x) {
            const bool on = glyph_covers(glyph, static_cast<double>(x) - cx, static_cast<double>(y) - cy, len, thick);
            pixels += on;
            for (std::size_t c = 0; c < 3; ++c) {
                double v = 0.0;
                for (const auto& w : waves[c])
                    v += w.amp * std::sin(6.283185307179586 * (w.fx * static_cast<double>(x) + w.fy * static_cast<double>(y)) / s + w.phase);
                v += 0.1 * rng.normal();
                if (on) v += colour[c];
                out[(c * S + y) * S + x] = static_cast<float>(v);
            }
        }
}

}  // namespace

SyntheticDataset generate_dataset(const DatasetSpec& spec, std::uint64_t seed) {
    if (spec.num_classes < 2) throw DomainError("generate_dataset: need at least 2 classes");
    if (spec.num_classes > kMaxClasses)
        throw DomainError("generate_dataset: at most " + std::to_string(kMaxClasses) + " glyph classes");
    if (spec.image_size < 16) throw DomainError("generate_dataset: image_size must be >= 16");
    if (spec.num_samples < spec.num_classes) throw DomainError("generate_dataset: fewer samples than classes");
    if (!(spec.val_fraction > 0.0 && spec.val_fraction < 1.0))
        throw DomainError("generate_dataset: val_fraction must lie in (0, 1)");
    SyntheticDataset d;
    d.spec = spec;
    d.seed = seed;
    const std::size_t N = spec.num_samples;
    d.labels.resize(N);
    for (std::size_t i = 0; i < N; ++i) d.labels[i] = static_cast<int>(i % spec.num_classes);
    Rng shuffle(mix_seed(seed, 0x6c6162656c73ULL));
    for (std::size_t i = N - 1; i > 0; --i) std::swap(d.labels[i], d.labels[shuffle.below(i + 1)]);

    d.images.resize(N * d.image_numel());
    d.glyph_pixels.resize(N);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(N); ++i) {
        const auto k = static_cast<std::size_t>(i);
        render_sample(spec, mix_seed(seed, k), d.labels[k], &d.images[k * d.image_numel()], d.glyph_pixels[k]);
    }

    // Stratified split: the first val_fraction of each class (in index order) is held out.
    std::vector<std::size_t> per_class(spec.num_classes, 0), class_total(spec.num_classes, 0);
    for (int l : d.labels) ++class_total[static_cast<std::size_t>(l)];
    for (std::size_t i = 0; i < N; ++i) {
        const auto l = static_cast<std::size_t>(d.labels[i]);
        const auto quota = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(class_total[l])));
        (per_class[l]++ < quota ? d.val_index : d.train_index).push_back(i);
    }
    return d;
}

Tensor SyntheticDataset::batch(const std::vector<std::size_t>& indices) const {
    const std::size_t n = image_numel();
    std::vector<double> v(indices.size() * n);
    for (std::size_t b = 0; b < indices.size(); ++b) {
        if (indices[b] >= size()) throw ShapeError("dataset batch: index out of range");
        const float* src = &images[indices[b] * n];
        std::copy(src, src + n, v.begin() + static_cast<long>(b * n));
    }
    return Tensor({indices.size(), channels, spec.image_size, spec.image_size}, std::move(v));
}

std::vector<int> SyntheticDataset::batch_labels(const std::vector<std::size_t>& indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels.at(i));
    return out;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

const char* const kTrainKeys[] = {"epochs",   "batch_size",      "lr",        "beta1",          "beta2",
                                  "adam_eps", "weight_decay",    "warmup_fraction", "label_smoothing",
                                  "max_steps", "max_cpu_seconds", "seed"};

}  // namespace

KeyValues TrainConfig::to_key_values() const {
    return {{"epochs", std::to_string(epochs)},
            {"batch_size", std::to_string(batch_size)},
            {"lr", fmt(lr)},
            {"beta1", fmt(beta1)},
            {"beta2", fmt(beta2)},
            {"adam_eps", fmt(adam_eps)},
            {"weight_decay", fmt(weight_decay)},
            {"warmup_fraction", fmt(warmup_fraction)},
            {"label_smoothing", fmt(label_smoothing)},
            {"max_steps", std::to_string(max_steps)},
            {"max_cpu_seconds", fmt(max_cpu_seconds)},
            {"seed", std::to_string(seed)}};
}

bool is_train_key(const std::string& key) {
    return std::find(std::begin(kTrainKeys), std::end(kTrainKeys), key) != std::end(kTrainKeys);
}

bool TrainConfig::apply(const std::string& key, const std::string& value) {
    if (key == "epochs") epochs = parse_u64(key, value);
    else if (key == "batch_size") batch_size = parse_u64(key, value);
    else if (key == "lr") lr = parse_double(key, value);
    else if (key == "beta1") beta1 = parse_double(key, value);
    else if (key == "beta2") beta2 = parse_double(key, value);
    else if (key == "adam_eps") adam_eps = parse_double(key, value);
    else if (key == "weight_decay") weight_decay = parse_double(key, value);
    else if (key == "warmup_fraction") warmup_fraction = parse_double(key, value);
    else if (key == "label_smoothing") label_smoothing = parse_double(key, value);
    else if (key == "max_steps") max_steps = parse_u64(key, value);
    else if (key == "max_cpu_seconds") max_cpu_seconds = parse_double(key, value);
    else if (key == "seed") seed = parse_u64(key, value);
    else return false;
    return true;
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (epochs == 0 && max_steps == 0) throw ConfigError("need epochs > 0 or max_steps > 0");
    if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction must lie in [0, 1)");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must lie in [0, 1)");
    if (!(max_cpu_seconds >= 0.0)) throw ConfigError("max_cpu_seconds must be >= 0");
}

double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t total) {
    if (total == 0) return 0.0;
    const auto warm = static_cast<std::size_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(total)));
    if (step < warm) return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
    if (total <= warm) return cfg.lr;
    const double progress = static_cast<double>(step - warm) / static_cast<double>(total - warm);
    return cfg.lr * 0.5 * (1.0 + std::cos(3.141592653589793 * std::min(progress, 1.0)));
}

AdamW::AdamW(double lr, double b1, double b2, double e, double wd)
    : base_lr(lr), beta1(b1), beta2(b2), eps(e), weight_decay(wd) {}

void AdamW::step(std::vector<std::pair<std::string, Tensor>>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        if (!p.has_grad()) continue;
        auto g = p.grad();
        auto w = p.mutable_data();
        auto& m = m_[name];
        auto& v = v_[name];
        if (m.empty()) {
            m.assign(w.size(), 0.0);
            v.assign(w.size(), 0.0);
        }
        const double decay = p.rank() >= 2 ? lr * weight_decay : 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1, vhat = v[i] / bc2;
            w[i] -= decay * w[i];
            w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

void AdamW::export_state(std::map<std::string, Tensor>& out) const {
    for (const auto& [name, m] : m_) out.emplace("opt.m." + name, Tensor({m.size()}, m));
    for (const auto& [name, v] : v_) out.emplace("opt.v." + name, Tensor({v.size()}, v));
}

void AdamW::import_state(const std::map<std::string, Tensor>& in, std::size_t steps) {
    m_.clear();
    v_.clear();
    for (const auto& [key, t] : in) {
        auto d = t.data();
        if (key.rfind("opt.m.", 0) == 0) m_[key.substr(6)].assign(d.begin(), d.end());
        else if (key.rfind("opt.v.", 0) == 0) v_[key.substr(6)].assign(d.begin(), d.end());
    }
    t_ = steps;
}

EvalResult evaluate(const model::Model& m, const SyntheticDataset& data, const std::vector<std::size_t>& indices,
                    std::size_t batch_size, double label_smoothing) {
    NoGradGuard guard;
    EvalResult r;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        std::vector<std::size_t> idx(indices.begin() + static_cast<long>(start),
                                     indices.begin() + static_cast<long>(std::min(indices.size(), start + batch_size)));
        Tensor logits = model::backbone_forward(m, data.batch(idx));
        auto labels = data.batch_labels(idx);
        loss_sum += cross_entropy(logits, labels, label_smoothing).item() * static_cast<double>(idx.size());
        const std::size_t K = logits.dim(1);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            auto row = logits.data().subspan(b * K, K);
            correct += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) ==
                       static_cast<std::size_t>(labels[b]);
        }
    }
    r.count = indices.size();
    if (r.count) {
        r.loss = loss_sum / static_cast<double>(r.count);
        r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
    }
    return r;
}

std::size_t steps_per_epoch(const SyntheticDataset& data, const TrainConfig& cfg) {
    return std::max<std::size_t>(1, data.train_index.size() / cfg.batch_size);
}

std::size_t total_steps(const SyntheticDataset& data, const TrainConfig& cfg) {
    return cfg.max_steps ? cfg.max_steps : cfg.epochs * steps_per_epoch(data, cfg);
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
    os << "step,split,loss,accuracy,lr\n";
    for (const auto& r : rows) os << r.step << ',' << r.split << ',' << fmt(r.loss) << ',' << fmt(r.accuracy) << ',' << fmt(r.lr) << '\n';
}

namespace {

constexpr char kStatePrefix[] = "state.";

struct RunContext {
    const SyntheticDataset& data;
    TrainConfig cfg;
    const TrainOptions& options;
    // Running sums of the epoch in progress.
    double epoch_loss = 0.0;
    std::size_t epoch_correct = 0, epoch_seen = 0;
};

model::Checkpoint snapshot(const TrainState& st, const RunContext& ctx) {
    model::Checkpoint ck = checkpoint_of(st, ctx.cfg);
    ck.extra_config.emplace_back("state.epoch_loss", fmt(ctx.epoch_loss));
    ck.extra_config.emplace_back("state.epoch_correct", std::to_string(ctx.epoch_correct));
    ck.extra_config.emplace_back("state.epoch_seen", std::to_string(ctx.epoch_seen));
    return ck;
}

void save_outputs(const TrainState& st, const RunContext& ctx, const char* file) {
    if (ctx.options.out_dir.empty()) return;
    model::Checkpoint ck = snapshot(st, ctx);
    for (const auto& kv : ctx.options.extra_config) ck.extra_config.push_back(kv);
    model::save_checkpoint((std::filesystem::path(ctx.options.out_dir) / file).string(), ck);
}

void write_nan_dump(const TrainState& st, const RunContext& ctx, const std::vector<std::size_t>& idx, double lr,
                    const std::string& what) {
    if (ctx.options.out_dir.empty()) return;
    std::ofstream os(std::filesystem::path(ctx.options.out_dir) / "nan_dump.txt");
    os << "step=" << st.step << "\nlr=" << fmt(lr) << "\nerror=" << what << "\nbatch=";
    for (std::size_t i = 0; i < idx.size(); ++i) os << (i ? "," : "") << idx[i];
    os << "\n";
    for (const auto& [name, t] : st.model.params) {
        double sq = 0.0;
        bool finite = true;
        for (double v : t.data()) {
            sq += v * v;
            finite = finite && std::isfinite(v);
        }
        os << "param " << name << " norm=" << fmt(std::sqrt(sq)) << (finite ? "" : " NON-FINITE") << "\n";
    }
}

std::vector<std::size_t> epoch_order(const SyntheticDataset& data, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order = data.train_index;
    Rng rng(mix_seed(seed, 0x65706f6368ULL + epoch));
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);
    return order;
}

void run(TrainState& st, RunContext& ctx) {
    const auto& data = ctx.data;
    const auto& cfg = ctx.cfg;
    const std::size_t spe = steps_per_epoch(data, cfg);
    const std::size_t B = std::min(cfg.batch_size, data.train_index.size());
    auto params = model::named_parameters(st.model);
    std::vector<std::size_t> order;
    std::size_t order_epoch = SIZE_MAX;
    if (!ctx.options.out_dir.empty()) std::filesystem::create_directories(ctx.options.out_dir);

    while (st.step < st.total_steps) {
        if (cfg.max_cpu_seconds > 0.0 && st.cpu_seconds >= cfg.max_cpu_seconds) {
            st.stopped_by_budget = true;
            break;
        }
        const std::clock_t c0 = std::clock();
        const std::size_t epoch = st.step / spe, b = st.step % spe;
        if (epoch != order_epoch) {
            order = epoch_order(data, cfg.seed, epoch);
            order_epoch = epoch;
        }
        std::vector<std::size_t> idx(order.begin() + static_cast<long>(b * B), order.begin() + static_cast<long>((b + 1) * B));
        const double lr = learning_rate(cfg, st.step, st.total_steps);
        Rng drop_rng(mix_seed(cfg.seed, 0x64726f70ULL + st.step));
        BatchStats stats;
        model::ForwardOptions fo;
        fo.training = true;
        fo.rng = &drop_rng;
        fo.head_stats = &stats;
        auto labels = data.batch_labels(idx);
        Tensor logits, loss;
        try {
            for (auto& [_, p] : params) p.zero_grad();
            logits = model::backbone_forward(st.model, data.batch(idx), fo);
            loss = cross_entropy(logits, labels, cfg.label_smoothing);
            if (!std::isfinite(loss.item())) throw NumericsError("non-finite loss");
            loss.backward();
            for (auto& [name, p] : params)
                if (p.has_grad())
                    for (double g : p.grad())
                        if (!std::isfinite(g)) throw NumericsError("non-finite gradient in '" + name + "'");
        } catch (const NumericsError& e) {
            write_nan_dump(st, ctx, idx, lr, e.what());
            throw NumericsError("training diverged at step " + std::to_string(st.step) + ": " + e.what());
        }
        st.optimizer.step(params, lr);
        model::update_running_stats(st.model, stats);

        const std::size_t K = logits.dim(1);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto row = logits.data().subspan(i * K, K);
            ctx.epoch_correct += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == labels[i];
        }
        ctx.epoch_loss += loss.item() * static_cast<double>(idx.size());
        ctx.epoch_seen += idx.size();
        ++st.step;
        st.cpu_seconds += static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC;

        const bool budget_hit = cfg.max_cpu_seconds > 0.0 && st.cpu_seconds >= cfg.max_cpu_seconds;
        const bool halt = ctx.options.stop_at_step && st.step >= ctx.options.stop_at_step;
        if (st.step % spe == 0 || st.step == st.total_steps || budget_hit) {
            const double n = static_cast<double>(std::max<std::size_t>(1, ctx.epoch_seen));
            st.metrics.push_back({st.step, "train", ctx.epoch_loss / n, static_cast<double>(ctx.epoch_correct) / n, lr});
            ctx.epoch_loss = 0.0;
            ctx.epoch_correct = ctx.epoch_seen = 0;
            const EvalResult val = evaluate(st.model, data, data.val_index);
            st.metrics.push_back({st.step, "val", val.loss, val.accuracy, lr});
            if (ctx.options.log)
                *ctx.options.log << "step " << st.step << "/" << st.total_steps << " train_loss "
                                 << st.metrics[st.metrics.size() - 2].loss << " val_acc " << val.accuracy << std::endl;
            if (val.accuracy > st.best_val_accuracy) {
                st.best_val_accuracy = val.accuracy;
                save_outputs(st, ctx, "best.dckp");
            }
        }
        if (halt) break;
    }
    save_outputs(st, ctx, "last.dckp");
    if (!ctx.options.out_dir.empty()) {
        std::ofstream os(std::filesystem::path(ctx.options.out_dir) / "metrics.csv");
        write_metrics_csv(os, st.metrics);
    }
}

}  // namespace

model::Checkpoint checkpoint_of(const TrainState& st, const TrainConfig& cfg) {
    model::Checkpoint ck = model::make_checkpoint(st.model, st.step, cfg.seed);
    ck.extra_config = cfg.to_key_values();
    ck.extra_config.emplace_back("state.best_val_accuracy", fmt(st.best_val_accuracy));
    st.optimizer.export_state(ck.tensors);
    return ck;
}

TrainState train(const model::ModelConfig& mcfg, const SyntheticDataset& data, const TrainConfig& cfg,
                 const TrainOptions& options) {
    cfg.validate();
    if (mcfg.num_classes != data.spec.num_classes)
        throw ConfigError("model num_classes differs from the dataset's class count");
    if (data.train_index.empty()) throw ConfigError("empty training split");
    TrainState st;
    st.model = model::init_model(mcfg, cfg.seed);
    st.optimizer = AdamW(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    st.total_steps = total_steps(data, cfg);
    RunContext ctx{data, cfg, options};
    run(st, ctx);
    return st;
}

TrainState resume(const model::Checkpoint& ckpt, const SyntheticDataset& data, const TrainOptions& options) {
    TrainConfig cfg;
    TrainState st;
    RunContext ctx{data, cfg, options};
    for (const auto& [k, v] : ckpt.extra_config) {
        if (cfg.apply(k, v)) continue;
        if (k == "state.best_val_accuracy") st.best_val_accuracy = parse_double(k, v);
        else if (k == "state.epoch_loss") ctx.epoch_loss = parse_double(k, v);
        else if (k == "state.epoch_correct") ctx.epoch_correct = parse_u64(k, v);
        else if (k == "state.epoch_seen") ctx.epoch_seen = parse_u64(k, v);
        // other keys belong to the caller (dataset settings etc.)
    }
    cfg.validate();
    if (cfg.seed != ckpt.seed) throw FormatError("checkpoint seed does not match its training config");
    ctx.cfg = cfg;
    st.model = model::model_from_checkpoint(ckpt);
    st.optimizer = AdamW(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    st.optimizer.import_state(ckpt.tensors, ckpt.step);
    st.step = ckpt.step;
    st.total_steps = total_steps(data, cfg);
    run(st, ctx);
    return st;
}

double AblationArm::median() const {
    if (val_accuracy.empty()) return 0.0;
    std::vector<double> v = val_accuracy;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<AblationArm> ablation_arms(const model::ModelConfig& base) {
    std::vector<AblationArm> arms(4);
    const char* names[] = {"Baseline", "+DAScan", "+Convpos", "+ConvFFN"};
    for (std::size_t i = 0; i < 4; ++i) {
        arms[i].name = names[i];
        arms[i].config = base;
        arms[i].config.use_das = i >= 1;
        arms[i].config.use_convpos = i >= 2;
        arms[i].config.use_convffn = i >= 3;
        arms[i].config_hash = arms[i].config.hash();
    }
    return arms;
}

std::vector<AblationArm> ablation_run(const SyntheticDataset& data, const model::ModelConfig& base,
                                      const TrainConfig& hyper, const AblationBudget& budget, std::ostream* log) {
    auto arms = ablation_arms(base);
    for (auto& arm : arms) {
        std::size_t steps = budget.steps;
        if (steps == 0) {
            if (!(budget.max_cpu_seconds > 0.0) || budget.probe_steps == 0)
                throw ConfigError("ablation: need a step count or a CPU budget");
            TrainConfig probe = hyper;
            probe.seed = budget.seeds.empty() ? 0 : budget.seeds.front();
            probe.max_steps = budget.probe_steps;
            probe.max_cpu_seconds = 0.0;
            const TrainState st = train(arm.config, data, probe);
            const double per_step = st.cpu_seconds / static_cast<double>(st.step);
            // Step times vary by ~10% between runs; size the schedule so it finishes inside the budget.
            steps = std::max<std::size_t>(1, static_cast<std::size_t>(0.9 * budget.max_cpu_seconds / per_step));
            if (log) *log << arm.name << ": " << per_step << " s/step, " << steps << " steps in budget" << std::endl;
        }
        for (auto seed : budget.seeds) {
            TrainConfig cfg = hyper;
            cfg.seed = seed;
            cfg.max_steps = steps;
            cfg.max_cpu_seconds = budget.max_cpu_seconds;
            TrainOptions opt;
            TrainState st = train(arm.config, data, cfg, opt);
            const EvalResult val = evaluate(st.model, data, data.val_index);
            arm.val_accuracy.push_back(val.accuracy);
            arm.steps.push_back(st.step);
            arm.cpu_seconds.push_back(st.cpu_seconds);
            if (log)
                *log << arm.name << " seed " << seed << ": val_acc " << val.accuracy << " after " << st.step
                     << " steps, " << st.cpu_seconds << " s CPU" << std::endl;
        }
    }
    return arms;
}

namespace {
std::string hex(std::uint64_t h) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}
}  // namespace

void write_ablation_table(std::ostream& os, const std::vector<AblationArm>& arms) {
    char line[256];
    std::snprintf(line, sizeof line, "%-10s %-16s %-24s %8s %8s\n", "arm", "config_hash", "val_acc per seed", "median",
                  "delta");
    os << line;
    const double base = arms.empty() ? 0.0 : arms.front().median();
    for (const auto& a : arms) {
        std::string per;
        for (std::size_t i = 0; i < a.val_accuracy.size(); ++i) {
            char b[16];
            std::snprintf(b, sizeof b, "%s%.1f", i ? " " : "", 100.0 * a.val_accuracy[i]);
            per += b;
        }
        std::snprintf(line, sizeof line, "%-10s %-16s %-24s %8.2f %+8.2f\n", a.name.c_str(), hex(a.config_hash).c_str(),
                      per.c_str(), 100.0 * a.median(), 100.0 * (a.median() - base));
        os << line;
    }
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationArm>& arms) {
    os << "arm,config_hash,seed_index,steps,cpu_seconds,val_accuracy,median_val_accuracy\n";
    for (const auto& a : arms)
        for (std::size_t i = 0; i < a.val_accuracy.size(); ++i)
            os << a.name << ',' << hex(a.config_hash) << ',' << i << ',' << a.steps[i] << ',' << fmt(a.cpu_seconds[i])
               << ',' << fmt(a.val_accuracy[i]) << ',' << fmt(a.median()) << '\n';
}

}  // namespace das::harness
