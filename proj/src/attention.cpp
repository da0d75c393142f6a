#include "ocbev/attention.hpp"

#include <cmath>

#include "ocbev/error.hpp"
#include "ocbev/kernels.hpp"
#include "ocbev/ops.hpp"

namespace ocbev::nn {

namespace {

// Up to four in-bounds corner taps of a bilinear read at pixel (x, y).
struct BilinearTaps {
    int count = 0;
    std::size_t pixel[4];
    double w[4];
    double dwdx[4];
    double dwdy[4];
};

BilinearTaps taps_at(double x, double y, std::size_t height, std::size_t width) {
    BilinearTaps t;
    const double x0 = std::floor(x);
    const double y0 = std::floor(y);
    const double fx = x - x0;
    const double fy = y - y0;
    const long ix = static_cast<long>(x0);
    const long iy = static_cast<long>(y0);
    const long W = static_cast<long>(width);
    const long H = static_cast<long>(height);
    const struct {
        long dx, dy;
        double w, wx, wy;
    } corners[4] = {
        {0, 0, (1 - fx) * (1 - fy), -(1 - fy), -(1 - fx)},
        {1, 0, fx * (1 - fy), (1 - fy), -fx},
        {0, 1, (1 - fx) * fy, -fy, (1 - fx)},
        {1, 1, fx * fy, fy, fx},
    };
    for (const auto& c : corners) {
        const long px = ix + c.dx;
        const long py = iy + c.dy;
        if (px < 0 || py < 0 || px >= W || py >= H) continue;
        t.pixel[t.count] = static_cast<std::size_t>(py * W + px);
        t.w[t.count] = c.w;
        t.dwdx[t.count] = c.wx;
        t.dwdy[t.count] = c.wy;
        ++t.count;
    }
    return t;
}

bool finite_loc(double u, double v) { return std::isfinite(u) && std::isfinite(v); }

}  // namespace

Var bilinear_sample(const Var& map, const Var& loc) {
    if (map.shape().size() != 3 || loc.size() != 2) throw ShapeError("bilinear_sample: expects [C,H,W] and [2]");
    const std::size_t C = map.shape()[0], H = map.shape()[1], W = map.shape()[2];
    const double u = loc.value()[0], v = loc.value()[1];
    if (!finite_loc(u, v)) throw Error("bilinear_sample: non-finite location");
    const BilinearTaps taps = taps_at(u * W - 0.5, v * H - 0.5, H, W);
    Tensor out({C});
    const auto& M = map.value();
    for (std::size_t c = 0; c < C; ++c)
        for (int k = 0; k < taps.count; ++k) out[c] += taps.w[k] * M[c * H * W + taps.pixel[k]];
    return record(std::move(out), {map, loc}, [taps, C, H, W](Node& self) {
        const auto& M = self.inputs[0]->value;
        if (double* gm = input_grad(self, 0)) {
            for (std::size_t c = 0; c < C; ++c)
                for (int k = 0; k < taps.count; ++k) gm[c * H * W + taps.pixel[k]] += taps.w[k] * self.grad[c];
        }
        if (double* gl = input_grad(self, 1)) {
            double du = 0.0, dv = 0.0;
            for (std::size_t c = 0; c < C; ++c)
                for (int k = 0; k < taps.count; ++k) {
                    const double val = M[c * H * W + taps.pixel[k]] * self.grad[c];
                    du += taps.dwdx[k] * val;
                    dv += taps.dwdy[k] * val;
                }
            gl[0] += du * static_cast<double>(W);
            gl[1] += dv * static_cast<double>(H);
        }
    });
}

// ---------------------------------------------------------------------------

void SamplingLayout::add_query(std::span<const SamplingSlot> query_slots, double scale) {
    slots.insert(slots.end(), query_slots.begin(), query_slots.end());
    slot_begin.push_back(slots.size());
    query_scale.push_back(scale);
    ++queries;
}

Var deform_core(const std::vector<Var>& values, std::span<const MapSize> sizes, const Var& locations,
                const Var& offsets, const Var& weights, const SamplingLayout& layout, std::size_t heads,
                std::size_t points) {
    if (values.size() != sizes.size() || values.empty()) throw ShapeError("deform_core: maps and sizes differ");
    const std::size_t C = values[0].shape().at(1);
    if (heads == 0 || C % heads != 0) throw ShapeError("deform_core: channels not divisible by heads");
    for (std::size_t m = 0; m < values.size(); ++m) {
        if (values[m].shape() != Shape{sizes[m].height * sizes[m].width, C}) {
            throw ShapeError("deform_core: value map " + std::to_string(m) + " has shape " +
                             shape_string(values[m].shape()));
        }
    }
    const std::size_t N = layout.queries;
    const std::size_t G = layout.groups;
    const std::size_t per_query = heads * G * points;
    if (offsets.shape() != Shape{N, per_query * 2} || weights.shape() != Shape{N, per_query} ||
        locations.shape().size() != 2 || locations.shape()[1] != 2) {
        throw ShapeError("deform_core: offsets " + shape_string(offsets.shape()) + ", weights " +
                         shape_string(weights.shape()) + ", locations " + shape_string(locations.shape()));
    }
    for (const auto& s : layout.slots) {
        if (s.map >= values.size() || s.group >= G || s.loc >= locations.shape()[0]) {
            throw ShapeError("deform_core: slot references out of range");
        }
    }
    const std::size_t dh = C / heads;

    Tensor out({N, C});
    const auto& L = locations.value();
    const auto& O = offsets.value();
    const auto& A = weights.value();
    for (std::size_t n = 0; n < N; ++n) {
        const double qs = layout.query_scale[n];
        for (std::size_t s = layout.slot_begin[n]; s < layout.slot_begin[n + 1]; ++s) {
            const SamplingSlot& slot = layout.slots[s];
            const MapSize ms = sizes[slot.map];
            const double* V = values[slot.map].value().data().data();
            for (std::size_t h = 0; h < heads; ++h) {
                double* dst = out.data().data() + n * C + h * dh;
                for (std::size_t p = 0; p < points; ++p) {
                    const std::size_t a = (h * G + slot.group) * points + p;
                    const double w = qs * A.at(n, a);
                    if (w == 0.0) continue;
                    const double x = (L.at(slot.loc, 0) * ms.width + O.at(n, 2 * a)) - 0.5;
                    const double y = (L.at(slot.loc, 1) * ms.height + O.at(n, 2 * a + 1)) - 0.5;
                    if (!finite_loc(x, y)) throw Error("deform_core: non-finite sampling location");
                    const BilinearTaps t = taps_at(x, y, ms.height, ms.width);
                    for (int k = 0; k < t.count; ++k) kernels::axpy(w * t.w[k], V + t.pixel[k] * C + h * dh, dst, dh);
                }
            }
        }
    }

    std::vector<Var> inputs = values;
    inputs.push_back(locations);
    inputs.push_back(offsets);
    inputs.push_back(weights);
    std::vector<MapSize> size_copy(sizes.begin(), sizes.end());
    return record(std::move(out), std::move(inputs),
                  [layout, size_copy, heads, points, C, dh, G, N](Node& self) {
        const std::size_t M = size_copy.size();
        const auto& L = self.inputs[M]->value;
        const auto& O = self.inputs[M + 1]->value;
        const auto& A = self.inputs[M + 2]->value;
        double* gL = input_grad(self, M);
        double* gO = input_grad(self, M + 1);
        double* gA = input_grad(self, M + 2);
        std::vector<double*> gV(M);
        for (std::size_t m = 0; m < M; ++m) gV[m] = input_grad(self, m);
        const std::size_t locs = L.rows();
        const std::size_t per_query = heads * G * points;
        (void)locs;

        for (std::size_t n = 0; n < N; ++n) {
            const double qs = layout.query_scale[n];
            const double* gout = self.grad.data() + n * C;
            for (std::size_t s = layout.slot_begin[n]; s < layout.slot_begin[n + 1]; ++s) {
                const SamplingSlot& slot = layout.slots[s];
                const MapSize ms = size_copy[slot.map];
                const double* V = self.inputs[slot.map]->value.data().data();
                for (std::size_t h = 0; h < heads; ++h) {
                    const double* g = gout + h * dh;
                    for (std::size_t p = 0; p < points; ++p) {
                        const std::size_t a = (h * G + slot.group) * points + p;
                        const double aw = A.at(n, a);
                        const double x = (L.at(slot.loc, 0) * ms.width + O.at(n, 2 * a)) - 0.5;
                        const double y = (L.at(slot.loc, 1) * ms.height + O.at(n, 2 * a + 1)) - 0.5;
                        const BilinearTaps t = taps_at(x, y, ms.height, ms.width);
                        double gs = 0.0, gx = 0.0, gy = 0.0;
                        for (int k = 0; k < t.count; ++k) {
                            const double d = kernels::dot(g, V + t.pixel[k] * C + h * dh, dh);
                            gs += t.w[k] * d;
                            gx += t.dwdx[k] * d;
                            gy += t.dwdy[k] * d;
                            if (gV[slot.map] && aw != 0.0)
                                kernels::axpy(qs * aw * t.w[k], g, gV[slot.map] + t.pixel[k] * C + h * dh, dh);
                        }
                        if (gA) gA[n * per_query + a] += qs * gs;
                        const double sx = qs * aw * gx;
                        const double sy = qs * aw * gy;
                        if (gO) {
                            gO[n * per_query * 2 + 2 * a] += sx;
                            gO[n * per_query * 2 + 2 * a + 1] += sy;
                        }
                        if (gL) {
                            gL[slot.loc * 2] += sx * static_cast<double>(ms.width);
                            gL[slot.loc * 2 + 1] += sy * static_cast<double>(ms.height);
                        }
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------

DeformableAttention::DeformableAttention(ParameterStore& store, std::string prefix, DeformableAttentionShape shape,
                                         std::uint64_t seed)
    : prefix_(std::move(prefix)), shape_(shape) {
    const std::size_t per_query = shape.heads * shape.groups * shape.points;
    store.add(prefix_ + ".value.w", xavier(shape.value_in, shape.embed, seed + 1));
    store.add(prefix_ + ".value.b", Tensor({shape.embed}));
    store.add(prefix_ + ".offset.w", Tensor({shape.embed, per_query * 2}));
    store.add(prefix_ + ".offset.b", Tensor({per_query * 2}));
    store.add(prefix_ + ".weight.w", Tensor({shape.embed, per_query}));
    store.add(prefix_ + ".weight.b", Tensor({per_query}));
    store.add(prefix_ + ".out.w", xavier(shape.embed, shape.embed, seed + 2));
    store.add(prefix_ + ".out.b", Tensor({shape.embed}));
}

Var DeformableAttention::forward(const ParameterStore& store, const Var& query, const std::vector<Var>& raw_values,
                                 std::span<const MapSize> sizes, const Var& locations,
                                 const SamplingLayout& layout) const {
    if (layout.groups != shape_.groups) throw ShapeError("DeformableAttention: layout group count differs");
    if (query.shape() != Shape{layout.queries, shape_.embed}) {
        throw ShapeError("DeformableAttention: query shape " + shape_string(query.shape()));
    }
    const auto& p = [&](const char* name) -> const Var& { return store.get(prefix_ + name); };
    std::vector<Var> values;
    values.reserve(raw_values.size());
    for (const auto& v : raw_values) values.push_back(linear(v, p(".value.w"), p(".value.b")));
    Var offsets = linear(query, p(".offset.w"), p(".offset.b"));
    Var weights = softmax_groups(linear(query, p(".weight.w"), p(".weight.b")), shape_.groups * shape_.points);
    Var core = deform_core(values, sizes, locations, offsets, weights, layout, shape_.heads, shape_.points);
    return linear(core, p(".out.w"), p(".out.b"));
}

}  // namespace ocbev::nn
