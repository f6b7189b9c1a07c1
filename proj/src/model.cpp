#include "das/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "das/sampler.hpp"
#include "das/ssm.hpp"
#include "das/tensor_io.hpp"

namespace das::model {

namespace {

std::string join(const std::array<std::size_t, 4>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

const char* const kModelKeys[] = {"model",     "channels",    "blocks",      "in_channels",  "num_classes",
                                  "state_size", "expand",     "ffn_ratio",   "use_das",      "use_convpos",
                                  "use_convffn", "offset_range", "drop_path"};

}  // namespace

ModelConfig ModelConfig::preset(const std::string& name) {
    ModelConfig c;
    c.name = name;
    if (name == "micro") return c;
    // Full-size variants: 1000 classes, single expansion in the mixer and a
    // 3x ConvFFN, which is what lands the parameter counts on 26/45/86M.
    c.num_classes = 1000;
    c.expand = 1;
    c.ffn_ratio = 3;
    c.offset_range = scan::kDefaultOffsetRange;
    if (name == "T") {
        c.channels = {80, 160, 320, 512};
        c.blocks = {3, 4, 12, 5};
    } else if (name == "S") {
        c.channels = {96, 192, 384, 512};
        c.blocks = {4, 8, 20, 6};
    } else if (name == "B") {
        c.channels = {112, 224, 448, 640};
        c.blocks = {4, 8, 25, 8};
    } else {
        throw ConfigError("unknown model preset '" + name + "' (expected micro, T, S or B)");
    }
    return c;
}

KeyValues ModelConfig::to_key_values() const {
    return {{"model", name},
            {"channels", join(channels)},
            {"blocks", join(blocks)},
            {"in_channels", std::to_string(in_channels)},
            {"num_classes", std::to_string(num_classes)},
            {"state_size", std::to_string(state_size)},
            {"expand", std::to_string(expand)},
            {"ffn_ratio", std::to_string(ffn_ratio)},
            {"use_das", use_das ? "true" : "false"},
            {"use_convpos", use_convpos ? "true" : "false"},
            {"use_convffn", use_convffn ? "true" : "false"},
            {"offset_range", fmt_double(offset_range)},
            {"drop_path", fmt_double(drop_path)}};
}

bool is_model_key(const std::string& key) {
    return std::find(std::begin(kModelKeys), std::end(kModelKeys), key) != std::end(kModelKeys);
}

bool ModelConfig::apply(const std::string& key, const std::string& value) {
    auto four = [&](std::array<std::size_t, 4>& out) {
        auto v = parse_size_list(key, value);
        if (v.size() != 4) throw ConfigError(key + ": expected 4 comma-separated values");
        std::copy(v.begin(), v.end(), out.begin());
    };
    if (key == "model") {
        // A preset name resets every architecture field; later keys refine it.
        *this = preset(value);
    } else if (key == "channels") {
        four(channels);
    } else if (key == "blocks") {
        four(blocks);
    } else if (key == "in_channels") {
        in_channels = parse_u64(key, value);
    } else if (key == "num_classes") {
        num_classes = parse_u64(key, value);
    } else if (key == "state_size") {
        state_size = parse_u64(key, value);
    } else if (key == "expand") {
        expand = parse_u64(key, value);
    } else if (key == "ffn_ratio") {
        ffn_ratio = parse_u64(key, value);
    } else if (key == "use_das") {
        use_das = parse_bool(key, value);
    } else if (key == "use_convpos") {
        use_convpos = parse_bool(key, value);
    } else if (key == "use_convffn") {
        use_convffn = parse_bool(key, value);
    } else if (key == "offset_range") {
        offset_range = parse_double(key, value);
    } else if (key == "drop_path") {
        drop_path = parse_double(key, value);
    } else {
        return false;
    }
    return true;
}

void ModelConfig::validate() const {
    for (auto c : channels)
        if (c < 2) throw ConfigError("channels must be >= 2");
    if (channels[0] % 2 != 0) throw ConfigError("first stage width must be even");
    if (in_channels == 0 || num_classes < 2 || state_size == 0 || expand == 0 || ffn_ratio == 0)
        throw ConfigError("in_channels, state_size, expand, ffn_ratio must be positive and num_classes >= 2");
    if (!(offset_range > 0.0)) throw ConfigError("offset_range must be positive");
    if (!(drop_path >= 0.0 && drop_path < 1.0)) throw ConfigError("drop_path must lie in [0, 1)");
}

std::string block_prefix(std::size_t stage, std::size_t block) {
    return "stages." + std::to_string(stage) + ".blocks." + std::to_string(block) + ".";
}

std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg) {
    std::vector<ParamSpec> specs;
    auto add = [&](std::string name, Shape shape, Init init) { specs.push_back({std::move(name), std::move(shape), init}); };
    auto conv = [&](const std::string& p, std::size_t out, std::size_t in_per_group) {
        add(p + ".weight", {out, in_per_group, 3, 3}, Init::conv_fan_out);
        add(p + ".bias", {out}, Init::zeros);
    };
    auto dwconv = [&](const std::string& p, std::size_t channels) {
        add(p + ".weight", {channels, 1, 3, 3}, Init::dw_conv_fan_out);
        add(p + ".bias", {channels}, Init::zeros);
    };
    auto norm = [&](const std::string& p, std::size_t c) {
        add(p + ".weight", {c}, Init::ones);
        add(p + ".bias", {c}, Init::zeros);
    };

    const std::size_t c1 = cfg.channels[0], half = c1 / 2;
    conv("stem.conv0", half, cfg.in_channels);
    norm("stem.norm0", half);
    conv("stem.conv1", half, half);
    norm("stem.norm1", half);
    conv("stem.conv2", c1, half);
    norm("stem.norm2", c1);
    conv("stem.conv3", c1, c1);
    norm("stem.norm3", c1);

    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t C = cfg.channels[s], E = cfg.expand * C, F = cfg.ffn_ratio * C, N = cfg.state_size;
        if (s > 0) {
            const std::string p = "stages." + std::to_string(s) + ".down";
            conv(p + ".conv", C, cfg.channels[s - 1]);
            norm(p + ".norm", C);
        }
        for (std::size_t b = 0; b < cfg.blocks[s]; ++b) {
            const std::string p = block_prefix(s, b);
            if (cfg.use_convpos) dwconv(p + "convpos", C);
            norm(p + "norm1", C);
            if (cfg.use_das) {
                dwconv(p + "opn.dw", C);
                norm(p + "opn.norm", C);
                add(p + "opn.head.weight", {C, 2}, Init::zeros);
                add(p + "opn.head.bias", {2}, Init::zeros);
            }
            add(p + "mixer.in_proj.weight", {C, 2 * E}, Init::normal_002);
            add(p + "mixer.a_log", {E, N}, Init::a_log);
            add(p + "mixer.delta_down", {E, 1}, Init::normal_002);
            add(p + "mixer.delta_up", {1, E}, Init::uniform_pm1);
            add(p + "mixer.delta_bias", {E}, Init::delta_bias);
            add(p + "mixer.b_proj", {E, N}, Init::normal_002);
            add(p + "mixer.c_proj", {E, N}, Init::normal_002);
            add(p + "mixer.out_proj.weight", {E, C}, Init::normal_002);
            norm(p + "norm2", C);
            add(p + "ffn.fc1.weight", {C, F}, Init::normal_002);
            add(p + "ffn.fc1.bias", {F}, Init::zeros);
            if (cfg.use_convffn) dwconv(p + "ffn.dw", F);
            add(p + "ffn.fc2.weight", {F, C}, Init::normal_002);
            add(p + "ffn.fc2.bias", {C}, Init::zeros);
        }
    }
    norm("head.norm", cfg.channels[3]);
    add("head.fc.weight", {cfg.channels[3], cfg.num_classes}, Init::normal_002);
    add("head.fc.bias", {cfg.num_classes}, Init::zeros);
    return specs;
}

std::size_t count_params(const ModelConfig& config) {
    std::size_t n = 0;
    for (const auto& s : parameter_specs(config)) n += shape_numel(s.shape);
    return n;
}

std::uint64_t count_flops(const ModelConfig& cfg, std::size_t height, std::size_t width) {
    auto conv = [](std::uint64_t ho, std::uint64_t wo, std::uint64_t cout, std::uint64_t cin_per_group) {
        return ho * wo * cout * cin_per_group * 9;
    };
    auto down = [](std::size_t s) { return (s + 2 - 3) / 2 + 1; };
    const std::uint64_t c1 = cfg.channels[0], half = c1 / 2;
    std::size_t h = down(height), w = down(width);
    std::uint64_t f = conv(h, w, half, cfg.in_channels) + conv(h, w, half, half);
    h = down(h);
    w = down(w);
    f += conv(h, w, c1, half) + conv(h, w, c1, c1);
    for (std::size_t s = 0; s < 4; ++s) {
        const std::uint64_t C = cfg.channels[s], E = cfg.expand * C, F = cfg.ffn_ratio * C, N = cfg.state_size;
        if (s > 0) {
            h = down(h);
            w = down(w);
            f += conv(h, w, C, cfg.channels[s - 1]);
        }
        const std::uint64_t L = h * w;
        std::uint64_t blk = 0;
        if (cfg.use_convpos) blk += conv(h, w, C, 1);
        if (cfg.use_das) blk += conv(h, w, C, 1) + L * C * 2 + 4 * L * C;
        blk += L * C * 2 * E;             // in_proj
        blk += L * 2 * E + 2 * L * E * N;  // delta (rank 1), B, C projections
        blk += 9 * L * E * N;             // discretize + recurrence + readout
        blk += L * E * C;                 // out_proj
        blk += 2 * L * C * F;             // fc1, fc2
        if (cfg.use_convffn) blk += conv(h, w, F, 1);
        f += cfg.blocks[s] * blk;
    }
    f += static_cast<std::uint64_t>(cfg.channels[3]) * cfg.num_classes;
    return f;
}

const Tensor& Model::param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("model has no parameter '" + name + "'");
    return it->second;
}

std::size_t Model::num_params() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params) n += t.numel();
    return n;
}

namespace {

std::vector<double> init_values(const ParamSpec& spec, Rng& rng) {
    const std::size_t n = shape_numel(spec.shape);
    std::vector<double> v(n, 0.0);
    switch (spec.init) {
        case Init::zeros:
            break;
        case Init::ones:
            std::fill(v.begin(), v.end(), 1.0);
            break;
        case Init::normal_002:
            for (auto& x : v) {
                double z = rng.normal();
                while (std::abs(z) > 2.0) z = rng.normal();
                x = 0.02 * z;
            }
            break;
        case Init::conv_fan_out:
        case Init::dw_conv_fan_out: {
            // fan_out = out_channels * k * k / groups
            double fan_out = static_cast<double>(spec.shape[2] * spec.shape[3]);
            if (spec.init == Init::conv_fan_out) fan_out *= static_cast<double>(spec.shape[0]);
            const double std = std::sqrt(2.0 / fan_out);
            for (auto& x : v) x = std * rng.normal();
            break;
        }
        case Init::a_log:
            for (std::size_t i = 0; i < n; ++i) v[i] = std::log(static_cast<double>(i % spec.shape[1] + 1));
            break;
        case Init::delta_bias:
            for (auto& x : v) {
                const double dt = std::max(1e-4, std::exp(rng.uniform(std::log(1e-3), std::log(0.1))));
                x = dt + std::log(-std::expm1(-dt));  // inverse softplus
            }
            break;
        case Init::uniform_pm1:
            for (auto& x : v) x = rng.uniform(-1.0, 1.0);
            break;
    }
    return v;
}

}  // namespace

Model init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    for (const auto& spec : parameter_specs(config)) {
        Rng rng(mix_seed(seed, fnv1a(spec.name)));
        m.params.emplace(spec.name, Tensor(spec.shape, init_values(spec, rng), true));
    }
    m.buffers[kRunningMean].assign(config.channels[3], 0.0);
    m.buffers[kRunningVar].assign(config.channels[3], 1.0);
    return m;
}

std::vector<std::pair<std::string, Tensor>> named_parameters(const Model& m) {
    return {m.params.begin(), m.params.end()};
}

namespace {

// x: B x H x W x C
Tensor conv_nhwc(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t groups) {
    Tensor y = conv2d(permute(x, {0, 3, 1, 2}), w, b, stride, 1, groups);
    return permute(y, {0, 2, 3, 1});
}

Tensor drop_path(const Tensor& branch, const ModelConfig& cfg, const ForwardOptions& opt) {
    if (!opt.training || cfg.drop_path <= 0.0) return branch;
    if (!opt.rng) throw ContractError("drop path in training mode needs an rng");
    const std::size_t B = branch.dim(0);
    const double keep = 1.0 - cfg.drop_path;
    std::vector<double> mask(B);
    for (auto& v : mask) v = opt.rng->uniform() < keep ? 1.0 / keep : 0.0;
    Shape ms(branch.rank(), 1);
    ms[0] = B;
    return mul(branch, Tensor(ms, mask));
}

}  // namespace

Tensor stem_forward(const Model& m, const Tensor& images, bool check_divisible) {
    const auto& cfg = m.config;
    Tensor x = images;
    if (x.rank() == 3) x = reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
    if (x.rank() != 4 || x.dim(1) != cfg.in_channels)
        throw ShapeError("stem: expected [B,] " + std::to_string(cfg.in_channels) + " x H x W, got " +
                         shape_str(images.shape()));
    if (check_divisible && (x.dim(2) % 32 != 0 || x.dim(3) % 32 != 0 || x.dim(2) == 0 || x.dim(3) == 0))
        throw ShapeError("stem: spatial size must be divisible by 32, got " + shape_str(images.shape()));
    auto layer = [&](const Tensor& in, int i, std::size_t stride, bool act) {
        const std::string c = "stem.conv" + std::to_string(i), n = "stem.norm" + std::to_string(i);
        Tensor y = conv2d(in, m.param(c + ".weight"), m.param(c + ".bias"), stride, 1, 1);
        y = layernorm(y, 1, m.param(n + ".weight"), m.param(n + ".bias"));
        return act ? gelu(y) : y;
    };
    x = layer(x, 0, 2, true);
    x = layer(x, 1, 1, true);
    x = layer(x, 2, 2, true);
    x = layer(x, 3, 1, false);
    return permute(x, {0, 2, 3, 1});
}

Tensor block_forward(const Model& m, std::size_t stage, std::size_t block, const Tensor& input,
                     const ForwardOptions& opt) {
    const auto& cfg = m.config;
    const std::string p = block_prefix(stage, block);
    if (input.rank() != 4 || input.dim(3) != cfg.channels.at(stage))
        throw ShapeError("block: expected B x H x W x " + std::to_string(cfg.channels[stage]) + ", got " +
                         shape_str(input.shape()));
    const std::size_t C = input.dim(3), E = cfg.expand * C, H = input.dim(1), W = input.dim(2);
    auto P = [&](const char* name) -> const Tensor& { return m.param(p + name); };

    Tensor x = input;
    if (cfg.use_convpos) x = add(x, conv_nhwc(x, P("convpos.weight"), P("convpos.bias"), 1, C));

    // Token mixer: norm -> (resample) -> raster scan -> gated selective SSM -> scatter back.
    Tensor h = layernorm(x, 3, P("norm1.weight"), P("norm1.bias"));
    Tensor src = h;
    if (cfg.use_das) {
        scan::Opn opn{P("opn.dw.weight"),   P("opn.dw.bias"),     P("opn.norm.weight"),
                      P("opn.norm.bias"),   P("opn.head.weight"), P("opn.head.bias")};
        scan::DasResult das = scan::dynamic_adaptive_scan(h, opn, cfg.offset_range);
        src = das.resampled;
        if (opt.trace) opt.trace->blocks.push_back({stage, block, das});
    } else if (opt.trace) {
        opt.trace->blocks.push_back({stage, block, {}});
    }
    const scan::ScanPlan plan = scan::sweeping_scan(H, W);
    Tensor seq = scan::apply_plan(src, plan);
    Tensor xz = linear(seq, P("mixer.in_proj.weight"));
    Tensor xs = silu(narrow(xz, 2, 0, E));
    Tensor z = narrow(xz, 2, E, E);
    ssm::SsmParams sp{P("mixer.a_log"),      P("mixer.delta_down"), P("mixer.delta_up"),
                      P("mixer.delta_bias"), P("mixer.b_proj"),     P("mixer.c_proj")};
    ssm::SelectiveParams sel = ssm::selective_params(xs, sp);
    Tensor y = ssm::selective_scan(xs, sel.delta, sp.a(), sel.b, sel.c);
    y = mul(y, silu(z));
    Tensor mixed = scan::unapply_plan(linear(y, P("mixer.out_proj.weight")), plan);
    x = add(x, drop_path(mixed, cfg, opt));

    Tensor f = linear(layernorm(x, 3, P("norm2.weight"), P("norm2.bias")), P("ffn.fc1.weight"), P("ffn.fc1.bias"));
    if (cfg.use_convffn) f = conv_nhwc(f, P("ffn.dw.weight"), P("ffn.dw.bias"), 1, f.dim(3));
    f = linear(gelu(f), P("ffn.fc2.weight"), P("ffn.fc2.bias"));
    return add(x, drop_path(f, cfg, opt));
}

Tensor backbone_forward(const Model& m, const Tensor& images, const ForwardOptions& opt) {
    const auto& cfg = m.config;
    Tensor x = stem_forward(m, images, true);
    for (std::size_t s = 0; s < 4; ++s) {
        if (s > 0) {
            const std::string p = "stages." + std::to_string(s) + ".down";
            x = conv_nhwc(x, m.param(p + ".conv.weight"), m.param(p + ".conv.bias"), 2, 1);
            x = layernorm(x, 3, m.param(p + ".norm.weight"), m.param(p + ".norm.bias"));
        }
        for (std::size_t b = 0; b < cfg.blocks[s]; ++b) x = block_forward(m, s, b, x, opt);
        if (opt.trace) opt.trace->stage_shapes.push_back(x.shape());
    }
    Tensor n;
    if (opt.training) {
        n = batchnorm_train(x, m.param("head.norm.weight"), m.param("head.norm.bias"), opt.head_stats);
    } else {
        n = batchnorm_infer(x, m.buffers.at(kRunningMean), m.buffers.at(kRunningVar), m.param("head.norm.weight"),
                            m.param("head.norm.bias"));
    }
    return linear(global_avg_pool(n), m.param("head.fc.weight"), m.param("head.fc.bias"));
}

void update_running_stats(Model& m, const BatchStats& stats) {
    auto& mean = m.buffers.at(kRunningMean);
    auto& var = m.buffers.at(kRunningVar);
    if (stats.mean.size() != mean.size() || stats.var.size() != var.size())
        throw ShapeError("update_running_stats: channel count mismatch");
    for (std::size_t i = 0; i < mean.size(); ++i) {
        mean[i] = (1.0 - kBatchNormMomentum) * mean[i] + kBatchNormMomentum * stats.mean[i];
        var[i] = (1.0 - kBatchNormMomentum) * var[i] + kBatchNormMomentum * stats.var[i];
    }
}

Checkpoint make_checkpoint(const Model& m, std::uint64_t step, std::uint64_t seed) {
    Checkpoint c;
    c.config = m.config;
    c.step = step;
    c.seed = seed;
    for (const auto& [name, t] : m.params) c.tensors.emplace(name, t.detach());
    for (const auto& [name, v] : m.buffers) c.tensors.emplace(name, Tensor({v.size()}, v));
    return c;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
    ckpt.config.validate();
    Model m;
    m.config = ckpt.config;
    for (const auto& spec : parameter_specs(ckpt.config)) {
        auto it = ckpt.tensors.find(spec.name);
        if (it == ckpt.tensors.end()) throw FormatError("checkpoint is missing tensor '" + spec.name + "'");
        if (it->second.shape() != spec.shape)
            throw FormatError("checkpoint tensor '" + spec.name + "' has shape " + shape_str(it->second.shape()) +
                              ", expected " + shape_str(spec.shape));
        auto d = it->second.data();
        m.params.emplace(spec.name, Tensor(spec.shape, std::vector<double>(d.begin(), d.end()), true));
    }
    for (const char* name : {kRunningMean, kRunningVar}) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end() || it->second.numel() != ckpt.config.channels[3])
            throw FormatError(std::string("checkpoint is missing buffer '") + name + "'");
        m.buffers[name].assign(it->second.data().begin(), it->second.data().end());
    }
    return m;
}

namespace {
constexpr char kMagic[4] = {'D', 'C', 'K', 'P'};
constexpr std::uint8_t kVersion = 1;
}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
    KeyValues kv = ckpt.config.to_key_values();
    for (const auto& e : ckpt.extra_config) {
        if (is_model_key(e.first)) throw ContractError("extra config key '" + e.first + "' shadows a model key");
        kv.push_back(e);
    }
    const std::string text = format_key_values(kv);
    os.write(kMagic, 4);
    io::write_u8(os, kVersion);
    io::write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    io::write_u64(os, ckpt.step);
    io::write_u64(os, ckpt.seed);
    io::write_u64(os, ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
        io::write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor(os, t);
    }
    if (!os) throw FormatError("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) throw FormatError("checkpoint: bad magic");
    if (io::read_u8(is) != kVersion) throw FormatError("checkpoint: unsupported version");
    const std::uint64_t len = io::read_u64(is);
    if (len > (1u << 20)) throw FormatError("checkpoint: implausible config block");
    std::string text(len, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint: truncated config");
    Checkpoint c;
    try {
        for (const auto& [k, v] : parse_key_values(text))
            if (!c.config.apply(k, v)) c.extra_config.emplace_back(k, v);
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint config: ") + e.what());
    }
    c.step = io::read_u64(is);
    c.seed = io::read_u64(is);
    const std::uint64_t count = io::read_u64(is);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t n = io::read_u32(is);
        if (n > 4096) throw FormatError("checkpoint: implausible tensor name length");
        std::string name(n, '\0');
        if (!is.read(name.data(), n)) throw FormatError("checkpoint: truncated tensor name");
        c.tensors.emplace(std::move(name), read_tensor(is));
    }
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    write_checkpoint(os, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint '" + path + "'");
    return read_checkpoint(is);
}

}  // namespace das::model
