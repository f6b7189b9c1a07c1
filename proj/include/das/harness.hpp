#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "das/config.hpp"
#include "das/model.hpp"

namespace das::harness {

enum class Glyph { hbar, vbar, cross, blob, diagonal, ring, corner, square };
inline constexpr std::size_t kMaxClasses = 8;
const char* glyph_name(Glyph g);

struct DatasetSpec {
    std::size_t num_classes = 4;
    std::size_t num_samples = 4000;
    std::size_t image_size = 64;
    double val_fraction = 0.1;
};

/// Images are stored as float, C x H x W each, roughly zero mean.
struct SyntheticDataset {
    DatasetSpec spec;
    std::uint64_t seed = 0;
    std::size_t channels = 3;
    std::vector<float> images;             // N x 3 x S x S
    std::vector<int> labels;               // N
    std::vector<std::size_t> glyph_pixels; // label-determining pixels per sample
    std::vector<std::size_t> train_index, val_index;

    std::size_t size() const { return labels.size(); }
    std::size_t image_numel() const { return channels * spec.image_size * spec.image_size; }
    /// Batch tensor B x 3 x S x S for the given sample indices.
    Tensor batch(const std::vector<std::size_t>& indices) const;
    std::vector<int> batch_labels(const std::vector<std::size_t>& indices) const;
};

/// Class c draws glyph c at a random off-centre position over low-frequency
/// coloured noise. Labels are balanced (class = rank % K after a seeded
/// shuffle) and the split is stratified. Deterministic in (spec, seed).
SyntheticDataset generate_dataset(const DatasetSpec& spec, std::uint64_t seed);

struct TrainConfig {
    std::size_t epochs = 5;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.05;
    double warmup_fraction = 0.05;
    double label_smoothing = 0.1;
    std::size_t max_steps = 0;        // 0: epochs * steps_per_epoch
    double max_cpu_seconds = 0.0;     // 0: unlimited; stops early, schedule unchanged
    std::uint64_t seed = 0;

    KeyValues to_key_values() const;
    bool apply(const std::string& key, const std::string& value);
    void validate() const;
};

bool is_train_key(const std::string& key);

/// Linear warm-up over the first warmup_fraction of `total` steps, then
/// cosine decay to zero.
double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t total);

/// Decoupled-weight-decay Adam; decay applies to tensors of rank >= 2 only.
class AdamW {
public:
    AdamW(double lr, double beta1, double beta2, double eps, double weight_decay);

    void step(std::vector<std::pair<std::string, Tensor>>& params, double lr);
    std::size_t steps() const { return t_; }

    /// Moments keyed "opt.m.<name>" / "opt.v.<name>", plus the step count.
    void export_state(std::map<std::string, Tensor>& out) const;
    void import_state(const std::map<std::string, Tensor>& in, std::size_t steps);

    double base_lr, beta1, beta2, eps, weight_decay;

private:
    std::size_t t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    std::size_t count = 0;
};

/// Eval-mode forward (running batch-norm statistics) over the given samples.
EvalResult evaluate(const model::Model& m, const SyntheticDataset& data, const std::vector<std::size_t>& indices,
                    std::size_t batch_size = 64, double label_smoothing = 0.0);

struct MetricRow {
    std::size_t step;
    std::string split;
    double loss, accuracy, lr;
};

struct TrainState {
    model::Model model;
    AdamW optimizer{1e-3, 0.9, 0.999, 1e-8, 0.05};
    std::size_t step = 0;
    std::vector<MetricRow> metrics;
    double best_val_accuracy = -1.0;
    std::size_t total_steps = 0;
    double cpu_seconds = 0.0;
    bool stopped_by_budget = false;
};

struct TrainOptions {
    std::string out_dir;  // empty: no files written
    bool verbose = false;
    std::ostream* log = nullptr;
    KeyValues extra_config;  // appended to every checkpoint written
    std::size_t stop_at_step = 0;  // halt (as if interrupted) once this step is reached
};

std::size_t steps_per_epoch(const SyntheticDataset& data, const TrainConfig& cfg);
std::size_t total_steps(const SyntheticDataset& data, const TrainConfig& cfg);

/// Fresh run. Writes metrics.csv, best.dckp and last.dckp to out_dir when
/// given. A non-finite loss raises NumericsError after writing
/// nan_dump.txt.
TrainState train(const model::ModelConfig& mcfg, const SyntheticDataset& data, const TrainConfig& cfg,
                 const TrainOptions& options = {});

/// Continues from a checkpoint written by train(); the batch order, drop-path
/// draws and optimizer state depend only on the step, so the continuation
/// matches an uninterrupted run.
TrainState resume(const model::Checkpoint& ckpt, const SyntheticDataset& data, const TrainOptions& options = {});

model::Checkpoint checkpoint_of(const TrainState& state, const TrainConfig& cfg);

void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows);

struct AblationArm {
    std::string name;
    model::ModelConfig config;
    std::uint64_t config_hash = 0;
    std::vector<double> val_accuracy;  // per seed
    std::vector<std::size_t> steps;    // per seed
    std::vector<double> cpu_seconds;   // per seed
    double median() const;
};

/// Every arm and seed gets the same CPU budget. With steps == 0 the step
/// count (and so the length of the lr schedule) is set per arm to fill 90%
/// of the budget at the rate of a short timed probe; the budget still caps
/// the run.
struct AblationBudget {
    std::size_t steps = 0;
    std::size_t probe_steps = 12;
    double max_cpu_seconds = 300.0;
    std::vector<std::uint64_t> seeds{1, 2, 3};
};

/// The four cumulative arms: Baseline, +DAScan, +Convpos, +ConvFFN.
std::vector<AblationArm> ablation_arms(const model::ModelConfig& base);

std::vector<AblationArm> ablation_run(const SyntheticDataset& data, const model::ModelConfig& base,
                                      const TrainConfig& hyper, const AblationBudget& budget,
                                      std::ostream* log = nullptr);

void write_ablation_table(std::ostream& os, const std::vector<AblationArm>& arms);
void write_ablation_csv(std::ostream& os, const std::vector<AblationArm>& arms);

}  // namespace das::harness
