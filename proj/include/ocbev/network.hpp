#pragma once

// The object-centric BEV mini-transformer: encoder layers of
// (fusion -> temporal attention -> object focused spatial attention -> FFN),
// a centerness heatmap head, query enhancement, a deformable decoder and the
// detection heads. Every BEV tensor inside the network is cell-major [cells, C].

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ocbev/attention.hpp"
#include "ocbev/autodiff.hpp"
#include "ocbev/boxes.hpp"
#include "ocbev/geometry.hpp"
#include "ocbev/parameters.hpp"
#include "ocbev/query_enhancement.hpp"
#include "ocbev/spatial_sampling.hpp"
#include "ocbev/temporal_fusion.hpp"

namespace ocbev {

/// Per-camera channel-major [C_f, H_f, W_f] feature maps.
struct ImageFeatureSet {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::vector<double>> maps;

    ImageFeatureSet() = default;
    ImageFeatureSet(std::size_t cameras, std::size_t c, std::size_t h, std::size_t w);

    std::size_t cameras() const { return maps.size(); }
    double& at(std::size_t cam, std::size_t c, std::size_t y, std::size_t x) {
        return maps[cam][(c * height + y) * width + x];
    }
    double at(std::size_t cam, std::size_t c, std::size_t y, std::size_t x) const {
        return maps[cam][(c * height + y) * width + x];
    }
    /// Throws ocbev::Error on inconsistent sizes or non-finite values.
    void validate() const;
    /// [H_f * W_f, C_f] copy of one camera, as consumed by deformable attention.
    nn::Tensor pixel_major(std::size_t cam) const;
};

struct ModuleFlags {
    bool ego_fusion = true;
    bool object_fusion = true;
    bool local_sampling = true;
    bool adaptive_offset = true;
    bool query_enhancement = true;

    static ModuleFlags all(bool on) { return {on, on, on, on, on}; }
    friend bool operator==(const ModuleFlags&, const ModuleFlags&) = default;
};

struct NetworkConfig {
    BEVGrid grid = BEVGrid::square(20, 10.0);
    std::size_t embed = 32;
    std::size_t heads = 4;
    std::size_t encoder_layers = 2;
    std::size_t decoder_layers = 2;
    std::size_t ffn_hidden = 128;
    double dropout = 0.0;
    std::size_t points = 2;
    std::size_t queries = 60;
    std::size_t classes = 3;
    std::size_t image_channels = 8;
    std::size_t pillar_points = SamplingDefaults::kPillarPoints;
    HeightRange global_range = SamplingDefaults::global_range();
    HeightRange local_range = SamplingDefaults::local_range();
    double max_height_offset = SamplingDefaults::kMaxHeightOffset;
    std::size_t max_aligned_objects = 30;
    EnhancementConfig enhancement;
    ModuleFlags flags;

    /// Throws ocbev::Error when a count is zero or embed is not divisible by heads.
    void validate() const;
};

/// Everything one forward pass needs besides the parameters.
struct FrameInput {
    const ImageFeatureSet* features = nullptr;
    /// Encoder output of the previous frame (cell-major), or null at sequence start.
    const nn::Tensor* prev_bev = nullptr;
    PlanarPose prev_to_cur;
    double dt = 0.5;
    /// Objects of the previous frame with their velocities (frame t').
    ObjectMotionRecord motion;
    std::uint64_t dropout_seed = 0;
};

struct NetworkOutput {
    nn::Var bev;          // [cells, C]
    nn::Var heatmap;      // [cells, 1], probabilities
    nn::Var cls_logits;   // [N, K]
    nn::Var box_code;     // [N, 10] encoded boxes
    QuerySet queries;
    std::vector<Peak> peaks;
    std::vector<double> height_offsets;  // per encoder layer
};

// ---- building blocks -------------------------------------------------------

void add_linear(nn::ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                std::uint64_t seed, double bias = 0.0);
void add_layer_norm(nn::ParameterStore& store, const std::string& name, std::size_t dim);
nn::Var apply_linear(const nn::ParameterStore& store, const std::string& name, const nn::Var& x);
nn::Var apply_layer_norm(const nn::ParameterStore& store, const std::string& name, const nn::Var& x);

/// Fusion recipe applied inside the graph. `prev` is a constant; the gradient
/// with respect to `cur` is cut at overridden cells.
nn::Var fuse_bev(const FusionPlan& plan, const nn::Tensor* prev, const nn::Var& cur);

/// log(x / (1 - x)) with x clamped to [eps, 1 - eps].
nn::Var inverse_sigmoid(const nn::Var& x, double eps = 1e-5);

/// Normalized cell centers [cells, 2].
nn::Tensor cell_reference_points(const BEVGrid& grid);

/// Temporal self attention: queries q_aligned, value maps {q_aligned, prev}
/// (q_aligned twice when prev is undefined), references at each cell's own
/// center; residual + layer norm.
class TemporalAttention {
public:
    TemporalAttention() = default;
    TemporalAttention(nn::ParameterStore& store, std::string prefix, std::size_t embed, std::size_t heads,
                      std::size_t points, std::uint64_t seed);

    nn::Var forward(const nn::ParameterStore& store, const nn::Var& q_aligned, const nn::Var& prev,
                    const BEVGrid& grid) const;

private:
    std::string prefix_;
    nn::DeformableAttention attn_;
};

/// Multi-camera sampling layout of a reference set: one query per cell, one
/// slot per visible (camera, pillar point) hit, scaled by 1 / visible hits.
nn::SamplingLayout spatial_layout(const ReferencePointSet& refs);

/// Spatial cross attention onto image features (attention term only, zero at
/// cells without any visible hit).
class SpatialAttention {
public:
    SpatialAttention() = default;
    SpatialAttention(nn::ParameterStore& store, std::string prefix, std::size_t value_in, std::size_t embed,
                     std::size_t heads, std::size_t points, std::uint64_t seed);

    nn::Var attend(const nn::ParameterStore& store, const nn::Var& q, const std::vector<nn::Var>& images,
                   const nn::MapSize& image_size, const ReferencePointSet& refs,
                   const nn::Var* height_offset = nullptr) const;

    const std::string& prefix() const { return prefix_; }

private:
    std::string prefix_;
    nn::DeformableAttention attn_;
};

/// LN(q + SpaA(q)) with its own layer norm under `ln`.
nn::Var spatial_attention(const nn::ParameterStore& store, const SpatialAttention& spa, const std::string& ln,
                          const nn::Var& q, const std::vector<nn::Var>& images, const nn::MapSize& image_size,
                          const ReferencePointSet& refs);

/// LN(q + SpaA_g(q; global refs) + SpaA_l(q; local refs)). `local` may be null
/// to drop the local branch.
nn::Var object_focused_spatial_attention(const nn::ParameterStore& store, const SpatialAttention& global,
                                         const SpatialAttention* local, const std::string& ln, const nn::Var& q,
                                         const std::vector<nn::Var>& images, const nn::MapSize& image_size,
                                         const ReferencePointSet& global_refs, const ReferencePointSet* local_refs,
                                         const nn::Var* height_offset);

/// Two-stage per-cell channel reduction C -> C/2 -> 1 with a logistic output: [cells, 1].
nn::Var heatmap_head(const nn::ParameterStore& store, const std::string& prefix, const nn::Var& bev);

struct DetectionHeadOutput {
    nn::Var cls_logits;  // [N, K]
    nn::Var box_code;    // [N, 10]
};

/// Class logits and encoded boxes. The planar center is
/// sigmoid(raw + inverse_sigmoid(reference)).
DetectionHeadOutput detection_head(const nn::ParameterStore& store, const std::string& prefix,
                                   const nn::Var& embeddings, const nn::Var& reference);

// ---- the network -----------------------------------------------------------

class OCBEVNet {
public:
    OCBEVNet(NetworkConfig cfg, std::vector<CameraModel> cameras, std::uint64_t seed);

    const NetworkConfig& config() const { return cfg_; }
    const std::vector<CameraModel>& cameras() const { return cameras_; }
    nn::ParameterStore& params() { return store_; }
    const nn::ParameterStore& params() const { return store_; }

    /// Encoder only; returns the final BEV [cells, C]. `offsets` receives per-layer height offsets.
    nn::Var encode(const FrameInput& in, std::vector<double>* offsets = nullptr) const;
    nn::Var decode(const QuerySet& queries, const nn::Var& bev, std::uint64_t dropout_seed = 0) const;
    QuerySet base_queries() const;

    NetworkOutput forward(const FrameInput& in) const;

    /// Scored boxes in meters: class = argmax, score = max sigmoid probability.
    std::vector<DetectionBox> detections(const NetworkOutput& out) const;

    const ReferencePointSet& global_refs() const { return global_refs_; }

private:
    nn::Var spatial_block(std::size_t layer, const nn::Var& x, const std::vector<nn::Var>& images,
                          const nn::MapSize& image_size, std::vector<double>* offsets) const;

    NetworkConfig cfg_;
    std::vector<CameraModel> cameras_;
    nn::ParameterStore store_;
    std::vector<TemporalAttention> temporal_;
    std::vector<SpatialAttention> spatial_global_;
    std::vector<SpatialAttention> spatial_local_;
    std::vector<HeightOffsetHead> offset_heads_;
    std::vector<nn::DeformableAttention> cross_;
    ReferencePointSet global_refs_;
    ReferencePointSet local_base_refs_;
};

}  // namespace ocbev
