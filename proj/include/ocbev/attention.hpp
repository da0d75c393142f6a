#pragma once

// Bilinear sampling and the deformable attention core used by the temporal,
// spatial and decoder cross attention layers.
//
// Value maps are pixel-major tensors of shape [H*W, C]. Sampling locations are
// normalized (u, v) in [0,1)^2 with u along the width; the pixel grid uses the
// half-pixel convention x = u * W - 0.5, and taps outside the map read zero.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ocbev/autodiff.hpp"
#include "ocbev/parameters.hpp"

namespace ocbev::nn {

struct MapSize {
    std::size_t height = 0;
    std::size_t width = 0;
};

/// Bilinear interpolation of a channel-major [C, H, W] map at normalized `loc` ([2]).
/// Differentiable with respect to both the map and the location.
Var bilinear_sample(const Var& map, const Var& loc);

struct SamplingSlot {
    std::uint32_t map = 0;    // value map to read
    std::uint32_t group = 0;  // offset / weight group inside the query
    std::uint32_t loc = 0;    // row of the reference-location tensor
};

/// Which (map, group, reference) triples each query samples from. Slots are
/// stored CSR-style: query n owns slots[slot_begin[n] .. slot_begin[n+1]).
struct SamplingLayout {
    std::size_t queries = 0;
    std::size_t groups = 1;
    std::vector<std::size_t> slot_begin{0};
    std::vector<SamplingSlot> slots;
    /// Multiplies every sample of a query (1 / visible hits for spatial attention).
    std::vector<double> query_scale;

    void add_query(std::span<const SamplingSlot> query_slots, double scale = 1.0);
    std::size_t slot_count(std::size_t n) const { return slot_begin[n + 1] - slot_begin[n]; }
};

/// out[n, head h] = scale_n * sum_{slot, p} w[n,h,g,p] * sample(map, loc + offset[n,h,g,p] / (W, H)).
/// `offsets` is [N, heads*groups*points*2] in value-map pixels, `weights` is
/// [N, heads*groups*points] already normalized, `locations` is [L, 2].
Var deform_core(const std::vector<Var>& values, std::span<const MapSize> sizes, const Var& locations,
                const Var& offsets, const Var& weights, const SamplingLayout& layout, std::size_t heads,
                std::size_t points);

struct DeformableAttentionShape {
    std::size_t embed = 32;
    std::size_t value_in = 32;
    std::size_t heads = 4;
    std::size_t groups = 1;
    std::size_t points = 2;
};

/// Parameter block for one deformable attention layer:
///   value (in -> embed), offsets (embed -> heads*groups*points*2, zero-init),
///   weights (embed -> heads*groups*points, zero-init), out (embed -> embed).
class DeformableAttention {
public:
    DeformableAttention() = default;
    DeformableAttention(ParameterStore& store, std::string prefix, DeformableAttentionShape shape,
                        std::uint64_t seed);

    const DeformableAttentionShape& shape() const { return shape_; }
    const std::string& prefix() const { return prefix_; }

    /// Full attention: value projection, offset/weight prediction, core, output projection.
    Var forward(const ParameterStore& store, const Var& query, const std::vector<Var>& raw_values,
                std::span<const MapSize> sizes, const Var& locations, const SamplingLayout& layout) const;

private:
    std::string prefix_;
    DeformableAttentionShape shape_;
};

}  // namespace ocbev::nn
