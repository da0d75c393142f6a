#pragma once

// Deterministic training: AdamW with decoupled weight decay, linear warmup then
// cosine decay, global gradient-norm clipping, JSON-lines logging, checkpoints
// and the ablation grid.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ocbev/eval.hpp"
#include "ocbev/losses.hpp"
#include "ocbev/network.hpp"
#include "ocbev/simulator.hpp"
#include "ocbev/tensor_io.hpp"

namespace ocbev {

struct ScheduleConfig {
    double lr = 2e-4;
    std::size_t warmup_steps = 500;
    double warmup_ratio = 1.0 / 3.0;
    double min_lr_ratio = 1e-3;
};

/// Learning rate at `step` of a run with `total` steps; step == total gives the final value.
double learning_rate(const ScheduleConfig& s, std::size_t step, std::size_t total);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

class AdamW {
public:
    AdamW() = default;
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    /// One update of every parameter that has a gradient.
    void step(nn::ParameterStore& store, double lr);
    std::size_t steps() const { return t_; }
    void set_config(const AdamWConfig& cfg) { cfg_ = cfg; }

    std::vector<NamedTensor> state() const;
    void load_state(const std::vector<NamedTensor>& tensors);

private:
    AdamWConfig cfg_;
    std::size_t t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

/// Global L2 norm of all gradients, before clipping. Gradients are scaled so
/// the post-clip norm does not exceed max_norm.
double clip_grad_norm(nn::ParameterStore& store, double max_norm);
double grad_norm(const nn::ParameterStore& store);

enum class VelocitySource { Oracle, Predicted };

struct TrainConfig {
    std::uint64_t seed = 0;
    std::size_t iterations = 100;
    ScheduleConfig schedule;
    AdamWConfig optimizer;
    double clip = 35.0;
    LossWeights loss_weights;
    /// Weight of the velocity components in the box loss and matching cost.
    double velocity_code_weight = 0.2;
    NetworkConfig network;
    VelocitySource velocity_source = VelocitySource::Oracle;
    std::size_t eval_every = 200;
    /// Stop after this many iterations (0: run all). The schedule still spans `iterations`.
    std::size_t stop_at = 0;
    /// Detections kept for evaluation (highest scores first).
    std::size_t eval_top_k = 30;
    /// Score threshold for predicted motion records (VelocitySource::Predicted).
    double motion_score = 0.3;

    void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = {});

/// "ego_fusion=off,object_fusion=on" or "all=off" applied on top of `flags`.
ModuleFlags parse_ablation(const std::string& spec, ModuleFlags flags);
std::string flags_to_string(const ModuleFlags& f);

struct SampleRef {
    std::size_t scene = 0;
    std::size_t frame = 1;  // current frame; frame - 1 provides the temporal context
};

std::vector<SampleRef> enumerate_samples(const std::vector<Scene>& scenes);
/// Pure function of (seed, iteration).
std::size_t sample_index(std::uint64_t seed, std::size_t iteration, std::size_t count);

struct StepResult {
    LossBreakdown loss;
    std::size_t matches = 0;
};

/// Previous-frame BEV (computed without gradients) and the motion record used for fusion.
struct TemporalContext {
    nn::Tensor prev_bev;
    ObjectMotionRecord motion;
};

TemporalContext temporal_context(const OCBEVNet& net, const Scene& scene, std::size_t frame, const TrainConfig& cfg);

/// Weighted training loss of one sample for a fixed temporal context.
nn::Var sample_objective(const OCBEVNet& net, const Scene& scene, std::size_t frame, const TemporalContext& ctx,
                         const TrainConfig& cfg, std::uint64_t dropout_seed = 0, StepResult* info = nullptr);

/// Forward, loss and backward for one sample; gradients accumulate into the store.
StepResult train_step(const OCBEVNet& net, const Scene& scene, std::size_t frame, const TrainConfig& cfg,
                      std::uint64_t dropout_seed);

/// Losses of one sample without gradients.
StepResult sample_loss(const OCBEVNet& net, const Scene& scene, std::size_t frame, const TrainConfig& cfg);

/// Rolling inference on frames 1.. of every scene.
MetricReport evaluate_model(const OCBEVNet& net, const std::vector<Scene>& scenes, const TrainConfig& cfg,
                            const EvalConfig& eval = {});

struct LogRecord {
    std::size_t iteration = 0;
    double lr = 0.0;
    LossBreakdown loss;
    double grad_norm = 0.0;
    std::size_t matches = 0;
    std::optional<MetricReport> eval;
};

nlohmann::json log_record_to_json(const LogRecord& r);

struct TrainLog {
    std::vector<LogRecord> records;

    /// First evaluated iteration whose mean AP reaches `target`.
    std::optional<std::size_t> iterations_to(double target) const;
    std::string to_jsonl() const;
};

struct TrainState {
    std::size_t next_iteration = 0;
    AdamW optimizer;
};

struct TrainCallbacks {
    /// Called after every record is appended (e.g. to stream the log).
    std::function<void(const LogRecord&)> on_record;
};

/// Trains `net` in place from `state` up to cfg.iterations. Throws ocbev::Error
/// on a non-finite loss, naming the scene and frame.
TrainLog train(OCBEVNet& net, TrainState& state, const std::vector<Scene>& scenes,
               const std::vector<Scene>& eval_scenes, const TrainConfig& cfg, const TrainCallbacks& cb = {});

std::vector<NamedTensor> checkpoint_tensors(const OCBEVNet& net, const TrainState& state);
void save_checkpoint(const std::filesystem::path& path, const OCBEVNet& net, const TrainState& state);
/// Restores parameters (and optimizer state when present).
void load_checkpoint(const std::filesystem::path& path, OCBEVNet& net, TrainState& state);

struct AblationRow {
    ModuleFlags flags;
    std::string label;
    std::vector<MetricReport> finals;  // one per seed
    std::vector<TrainLog> logs;
    double mean_map = 0.0, spread_map = 0.0;
    double mean_ate = 0.0, mean_aoe = 0.0, mean_ave = 0.0, mean_fast_ave = 0.0;
};

struct AblationResult {
    std::vector<AblationRow> rows;
    std::string table() const;
};

/// Trains every flag set with every seed (network initialization and sample
/// order follow the seed) and summarizes the final reports.
AblationResult run_ablation_grid(const TrainConfig& base, const std::vector<std::pair<std::string, ModuleFlags>>& flag_sets,
                                 const std::vector<std::uint64_t>& seeds, const std::vector<Scene>& scenes,
                                 const std::vector<Scene>& eval_scenes,
                                 const std::function<void(const std::string&)>& progress = {});

}  // namespace ocbev
