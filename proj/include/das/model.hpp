#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "das/config.hpp"
#include "das/ops.hpp"
#include "das/random.hpp"
#include "das/scan.hpp"
#include "das/tensor_io.hpp"
#include "das/tensor.hpp"

namespace das::model {

struct ModelConfig {
    std::string name = "micro";
    std::array<std::size_t, 4> channels{16, 32, 64, 64};
    std::array<std::size_t, 4> blocks{1, 1, 2, 1};
    std::size_t in_channels = 3;
    std::size_t num_classes = 4;
    std::size_t state_size = 16;
    std::size_t expand = 2;
    std::size_t ffn_ratio = 4;
    bool use_das = true;
    bool use_convpos = true;
    bool use_convffn = true;
    double offset_range = scan::kDefaultOffsetRange;
    double drop_path = 0.0;

    static ModelConfig preset(const std::string& name);

    /// Canonical key=value form; `apply` accepts the same keys and returns
    /// false for a key it does not know.
    KeyValues to_key_values() const;
    bool apply(const std::string& key, const std::string& value);
    std::string text() const { return format_key_values(to_key_values()); }
    std::uint64_t hash() const { return fnv1a(text()); }
    void validate() const;
};

bool is_model_key(const std::string& key);

enum class Init { zeros, ones, normal_002, conv_fan_out, dw_conv_fan_out, a_log, delta_bias, uniform_pm1 };

struct ParamSpec {
    std::string name;
    Shape shape;
    Init init;
};

/// Every learnable tensor of the architecture in a fixed order.
std::vector<ParamSpec> parameter_specs(const ModelConfig& config);

std::size_t count_params(const ModelConfig& config);

/// Multiply-accumulate count of one forward pass at H x W input for convs,
/// linear layers, the selective scan (9 L D N), its projections and the
/// bilinear resampling. Norms and pointwise activations are not counted.
std::uint64_t count_flops(const ModelConfig& config, std::size_t height, std::size_t width);

struct Model {
    ModelConfig config;
    std::map<std::string, Tensor> params;
    /// Non-learned state: head batch-norm running statistics.
    std::map<std::string, std::vector<double>> buffers;

    const Tensor& param(const std::string& name) const;
    std::size_t num_params() const;
};

inline constexpr char kRunningMean[] = "head.norm.running_mean";
inline constexpr char kRunningVar[] = "head.norm.running_var";
inline constexpr double kBatchNormMomentum = 0.1;

/// Each tensor draws from a stream keyed on (seed, name), so configurations
/// that share a parameter name start from identical values.
Model init_model(const ModelConfig& config, std::uint64_t seed);

std::string block_prefix(std::size_t stage, std::size_t block);

struct BlockTrace {
    std::size_t stage = 0, block = 0;
    scan::DasResult das;  // empty tensors when DAS is off
};

struct ForwardTrace {
    std::vector<Shape> stage_shapes;  // B x H x W x C after each stage
    std::vector<BlockTrace> blocks;
};

struct ForwardOptions {
    bool training = false;
    Rng* rng = nullptr;                   // drop path; required when training with drop_path > 0
    BatchStats* head_stats = nullptr;     // filled with batch statistics in training mode
    ForwardTrace* trace = nullptr;
};

/// images: [B,] C x H x W -> B x H/4 x W/4 x C1 (channels last).
Tensor stem_forward(const Model& m, const Tensor& images, bool check_divisible = true);

/// x: B x H x W x C -> same shape.
Tensor block_forward(const Model& m, std::size_t stage, std::size_t block, const Tensor& x,
                     const ForwardOptions& options = {});

/// images: [B,] C x H x W with H, W divisible by 32 -> logits B x K.
Tensor backbone_forward(const Model& m, const Tensor& images, const ForwardOptions& options = {});

/// Blends batch statistics into the running ones.
void update_running_stats(Model& m, const BatchStats& stats);

/// Learned tensors of a model keyed by name (handles share storage).
std::vector<std::pair<std::string, Tensor>> named_parameters(const Model& m);

struct Checkpoint {
    ModelConfig config;
    KeyValues extra_config;  // non-model settings echoed for resume
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    std::map<std::string, Tensor> tensors;
};

Checkpoint make_checkpoint(const Model& m, std::uint64_t step, std::uint64_t seed);
Model model_from_checkpoint(const Checkpoint& ckpt);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);

}  // namespace das::model
