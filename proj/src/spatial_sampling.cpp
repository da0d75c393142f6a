#include "ocbev/spatial_sampling.hpp"

#include <Eigen/Core>

#include "ocbev/error.hpp"
#include "ocbev/ops.hpp"

namespace ocbev {

std::vector<double> pillar_heights(const HeightRange& range, std::size_t n) {
    if (n == 0) throw Error("pillar_heights: need at least one point");
    std::vector<double> z(n);
    const double step = range.span() / static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) z[k] = range.z_min + (static_cast<double>(k) + 0.5) * step;
    return z;
}

ReferencePointSet::ReferencePointSet(BEVGrid grid, HeightRange range, std::vector<double> heights)
    : grid_(grid), range_(range), heights_(std::move(heights)) {}

std::span<const CameraHit> ReferencePointSet::hits(std::size_t cell, std::size_t k) const {
    const std::size_t slot = cell * heights_.size() + k;
    if (slot + 1 >= offsets_.size()) throw Error("ReferencePointSet: slot out of range");
    return std::span<const CameraHit>(hits_).subspan(offsets_[slot], offsets_[slot + 1] - offsets_[slot]);
}

std::size_t ReferencePointSet::hit_count(std::size_t cell) const {
    const std::size_t first = cell * heights_.size();
    return offsets_.at(first + heights_.size()) - offsets_.at(first);
}

void ReferencePointSet::push_slot(std::span<const CameraHit> slot_hits) {
    hits_.insert(hits_.end(), slot_hits.begin(), slot_hits.end());
    offsets_.push_back(hits_.size());
}

ReferencePointSet build_reference_points(const BEVGrid& grid, std::span<const CameraModel> cams,
                                         const HeightRange& range, std::size_t n) {
    if (cams.empty()) throw Error("build_reference_points: at least one camera is required");
    ReferencePointSet refs(grid, range, pillar_heights(range, n));
    std::vector<CameraHit> slot;
    for (std::size_t cell = 0; cell < grid.cell_count(); ++cell) {
        const Vec2 c = grid.index_to_coord(cell);
        for (double z : refs.heights()) {
            slot.clear();
            const Eigen::Vector3d p(c.x, c.y, z);
            for (std::size_t cam = 0; cam < cams.size(); ++cam) {
                const auto proj = cams[cam].project(p);
                if (!proj) continue;
                const double w = cams[cam].width();
                const double h = cams[cam].height();
                const Vec2 d = cams[cam].pixel_derivative_z(p);
                slot.push_back({static_cast<std::uint32_t>(cam), {proj->pixel.x / w, proj->pixel.y / h},
                                {d.x / w, d.y / h}});
            }
            refs.push_slot(slot);
        }
    }
    return refs;
}

// ---------------------------------------------------------------------------

HeightOffsetHead::HeightOffsetHead(nn::ParameterStore& store, std::string prefix, std::size_t channels,
                                   double max_offset)
    : prefix_(std::move(prefix)), max_offset_(max_offset) {
    store.add(prefix_ + ".w", nn::Tensor({channels, 1}));
    store.add(prefix_ + ".b", nn::Tensor({1}));
}

nn::Var HeightOffsetHead::forward(const nn::ParameterStore& store, const nn::Var& bev) const {
    nn::Var pooled = nn::mean_rows(bev);
    nn::Var s = nn::linear(pooled, store.get(prefix_ + ".w"), store.get(prefix_ + ".b"));
    return nn::scale(nn::tanh(s), max_offset_);
}

nn::Var reference_locations(const ReferencePointSet& refs, const nn::Var* height_offset) {
    const std::size_t count = refs.total_hits();
    nn::Tensor locs({count, 2});
    std::vector<double> dz(count * 2);
    std::size_t row = 0;
    for (std::size_t cell = 0; cell < refs.grid().cell_count(); ++cell) {
        for (std::size_t k = 0; k < refs.points_per_cell(); ++k) {
            for (const auto& h : refs.hits(cell, k)) {
                locs.at(row, 0) = h.uv.x;
                locs.at(row, 1) = h.uv.y;
                dz[2 * row] = h.duv_dz.x;
                dz[2 * row + 1] = h.duv_dz.y;
                ++row;
            }
        }
    }
    if (height_offset == nullptr) return nn::Var::constant(std::move(locs));
    return nn::record(std::move(locs), {*height_offset}, [dz = std::move(dz)](nn::Node& self) {
        double* g = nn::input_grad(self, 0);
        if (!g) return;
        double acc = 0.0;
        for (std::size_t i = 0; i < dz.size(); ++i) acc += self.grad[i] * dz[i];
        g[0] += acc;
    });
}

}  // namespace ocbev
