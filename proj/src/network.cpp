#include "ocbev/network.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ocbev/error.hpp"
#include "ocbev/ops.hpp"

namespace ocbev {

using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t k) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (k + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Var ffn(const nn::ParameterStore& store, const std::string& prefix, const Var& x, double p, std::uint64_t seed) {
    Var h = nn::relu(apply_linear(store, prefix + ".0", x));
    if (p > 0.0) h = nn::dropout(h, p, seed);
    return apply_linear(store, prefix + ".1", h);
}

}  // namespace

// ---------------------------------------------------------------------------

ImageFeatureSet::ImageFeatureSet(std::size_t cameras, std::size_t c, std::size_t h, std::size_t w)
    : channels(c), height(h), width(w), maps(cameras, std::vector<double>(c * h * w, 0.0)) {}

void ImageFeatureSet::validate() const {
    if (maps.empty()) throw Error("ImageFeatureSet: no cameras");
    for (const auto& m : maps) {
        if (m.size() != channels * height * width) throw ShapeError("ImageFeatureSet: camera map size mismatch");
        for (double v : m) {
            if (!std::isfinite(v)) throw Error("ImageFeatureSet: non-finite feature value");
        }
    }
}

Tensor ImageFeatureSet::pixel_major(std::size_t cam) const {
    const std::size_t hw = height * width;
    Tensor t({hw, channels});
    const auto& m = maps.at(cam);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t p = 0; p < hw; ++p) t.at(p, c) = m[c * hw + p];
    return t;
}

void NetworkConfig::validate() const {
    if (embed == 0 || heads == 0 || encoder_layers == 0 || decoder_layers == 0 || ffn_hidden == 0 || points == 0 ||
        queries == 0 || classes == 0 || image_channels == 0 || pillar_points == 0) {
        throw Error("NetworkConfig: all counts must be at least 1");
    }
    if (embed % heads != 0) {
        throw Error("NetworkConfig: embed " + std::to_string(embed) + " not divisible by heads " +
                    std::to_string(heads));
    }
    if (embed < 2) throw Error("NetworkConfig: embed must be at least 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("NetworkConfig: dropout must lie in [0,1)");
    if (enhancement.replace_count > queries) throw Error("NetworkConfig: replace count exceeds decoder queries");
}

// ---------------------------------------------------------------------------

void add_linear(nn::ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                std::uint64_t seed, double bias) {
    store.add(name + ".w", nn::xavier(in, out, seed));
    store.add(name + ".b", Tensor({out}, bias));
}

void add_layer_norm(nn::ParameterStore& store, const std::string& name, std::size_t dim) {
    store.add(name + ".g", Tensor({dim}, 1.0));
    store.add(name + ".b", Tensor({dim}, 0.0));
}

Var apply_linear(const nn::ParameterStore& store, const std::string& name, const Var& x) {
    return nn::linear(x, store.get(name + ".w"), store.get(name + ".b"));
}

Var apply_layer_norm(const nn::ParameterStore& store, const std::string& name, const Var& x) {
    return nn::layer_norm(x, store.get(name + ".g"), store.get(name + ".b"));
}

Var fuse_bev(const FusionPlan& plan, const Tensor* prev, const Var& cur) {
    if (!plan.has_prev) return cur;
    if (prev == nullptr || prev->shape() != cur.shape()) throw ShapeError("fuse_bev: previous BEV shape mismatch");
    const std::size_t cells = cur.shape()[0], channels = cur.shape()[1];
    Tensor out(cur.shape());
    apply_fusion_cell_major(plan, prev->data(), cur.value().data(), channels, out.data());
    std::vector<char> cut = plan.overridden(cells);
    return nn::record(std::move(out), {cur}, [cut = std::move(cut), channels](nn::Node& self) {
        double* g = nn::input_grad(self, 0);
        if (!g) return;
        for (std::size_t cell = 0; cell < cut.size(); ++cell) {
            if (cut[cell]) continue;
            for (std::size_t c = 0; c < channels; ++c) g[cell * channels + c] += self.grad[cell * channels + c];
        }
    });
}

Var inverse_sigmoid(const Var& x, double eps) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = std::clamp(x.value()[i], eps, 1.0 - eps);
        out[i] = std::log(v / (1.0 - v));
    }
    return nn::record(std::move(out), {x}, [eps](nn::Node& self) {
        double* g = nn::input_grad(self, 0);
        if (!g) return;
        const auto& X = self.inputs[0]->value;
        for (std::size_t i = 0; i < X.size(); ++i) {
            const double v = X[i];
            if (v < eps || v > 1.0 - eps) continue;
            g[i] += self.grad[i] / (v * (1.0 - v));
        }
    });
}

Tensor cell_reference_points(const BEVGrid& grid) {
    Tensor t({grid.cell_count(), 2});
    for (std::size_t k = 0; k < grid.cell_count(); ++k) {
        const Vec2 uv = grid.normalize(grid.index_to_coord(k));
        t.at(k, 0) = uv.x;
        t.at(k, 1) = uv.y;
    }
    return t;
}

// ---------------------------------------------------------------------------

TemporalAttention::TemporalAttention(nn::ParameterStore& store, std::string prefix, std::size_t embed,
                                     std::size_t heads, std::size_t points, std::uint64_t seed)
    : prefix_(std::move(prefix)),
      attn_(store, prefix_ + ".attn", {embed, embed, heads, 2, points}, seed) {
    add_layer_norm(store, prefix_ + ".ln", embed);
}

Var TemporalAttention::forward(const nn::ParameterStore& store, const Var& q_aligned, const Var& prev,
                               const BEVGrid& grid) const {
    const std::size_t cells = grid.cell_count();
    if (q_aligned.shape().size() != 2 || q_aligned.shape()[0] != cells) {
        throw ShapeError("temporal attention: query shape " + nn::shape_string(q_aligned.shape()) +
                         " does not match the grid");
    }
    if (prev.defined() && prev.shape() != q_aligned.shape()) {
        throw ShapeError("temporal attention: previous BEV shape mismatch");
    }
    nn::SamplingLayout layout;
    layout.groups = 2;
    for (std::size_t k = 0; k < cells; ++k) {
        const auto loc = static_cast<std::uint32_t>(k);
        const nn::SamplingSlot slots[2] = {{0, 0, loc}, {1, 1, loc}};
        layout.add_query(slots);
    }
    const nn::MapSize size{static_cast<std::size_t>(grid.rows()), static_cast<std::size_t>(grid.cols())};
    const nn::MapSize sizes[2] = {size, size};
    Var locs = Var::constant(cell_reference_points(grid));
    Var out = attn_.forward(store, q_aligned, {q_aligned, prev.defined() ? prev : q_aligned}, sizes, locs, layout);
    return apply_layer_norm(store, prefix_ + ".ln", nn::add(q_aligned, out));
}

nn::SamplingLayout spatial_layout(const ReferencePointSet& refs) {
    nn::SamplingLayout layout;
    layout.groups = 1;
    std::vector<nn::SamplingSlot> slots;
    for (std::size_t cell = 0; cell < refs.grid().cell_count(); ++cell) {
        slots.clear();
        for (std::size_t k = 0; k < refs.points_per_cell(); ++k) {
            const auto hits = refs.hits(cell, k);
            const std::size_t first = refs.hit_begin(cell, k);
            for (std::size_t j = 0; j < hits.size(); ++j) {
                slots.push_back({hits[j].camera, 0, static_cast<std::uint32_t>(first + j)});
            }
        }
        layout.add_query(slots, slots.empty() ? 1.0 : 1.0 / static_cast<double>(slots.size()));
    }
    return layout;
}

SpatialAttention::SpatialAttention(nn::ParameterStore& store, std::string prefix, std::size_t value_in,
                                   std::size_t embed, std::size_t heads, std::size_t points, std::uint64_t seed)
    : prefix_(std::move(prefix)), attn_(store, prefix_, {embed, value_in, heads, 1, points}, seed) {}

Var SpatialAttention::attend(const nn::ParameterStore& store, const Var& q, const std::vector<Var>& images,
                             const nn::MapSize& image_size, const ReferencePointSet& refs,
                             const Var* height_offset) const {
    if (images.empty()) throw Error("spatial attention: no camera features");
    const std::size_t cells = refs.grid().cell_count();
    if (q.shape().size() != 2 || q.shape()[0] != cells) {
        throw ShapeError("spatial attention: query shape " + nn::shape_string(q.shape()) +
                         " does not match the reference grid");
    }
    nn::SamplingLayout layout = spatial_layout(refs);
    std::vector<nn::MapSize> sizes(images.size(), image_size);
    Var locs = reference_locations(refs, height_offset);
    Var out = attn_.forward(store, q, images, sizes, locs, layout);

    bool any_hidden = false;
    Tensor mask(q.shape(), 1.0);
    const std::size_t c = q.shape()[1];
    for (std::size_t cell = 0; cell < cells; ++cell) {
        if (refs.hit_count(cell) != 0) continue;
        any_hidden = true;
        std::fill_n(mask.data().begin() + static_cast<std::ptrdiff_t>(cell * c), c, 0.0);
    }
    return any_hidden ? nn::mul(out, Var::constant(std::move(mask))) : out;
}

Var spatial_attention(const nn::ParameterStore& store, const SpatialAttention& spa, const std::string& ln,
                      const Var& q, const std::vector<Var>& images, const nn::MapSize& image_size,
                      const ReferencePointSet& refs) {
    return apply_layer_norm(store, ln, nn::add(q, spa.attend(store, q, images, image_size, refs)));
}

Var object_focused_spatial_attention(const nn::ParameterStore& store, const SpatialAttention& global,
                                     const SpatialAttention* local, const std::string& ln, const Var& q,
                                     const std::vector<Var>& images, const nn::MapSize& image_size,
                                     const ReferencePointSet& global_refs, const ReferencePointSet* local_refs,
                                     const Var* height_offset) {
    Var sum = nn::add(q, global.attend(store, q, images, image_size, global_refs));
    if (local != nullptr) {
        if (local_refs == nullptr) throw Error("object focused spatial attention: local references missing");
        sum = nn::add(sum, local->attend(store, q, images, image_size, *local_refs, height_offset));
    }
    return apply_layer_norm(store, ln, sum);
}

Var heatmap_head(const nn::ParameterStore& store, const std::string& prefix, const Var& bev) {
    Var h = nn::relu(apply_linear(store, prefix + ".0", bev));
    return nn::sigmoid(apply_linear(store, prefix + ".1", h));
}

DetectionHeadOutput detection_head(const nn::ParameterStore& store, const std::string& prefix, const Var& emb,
                                   const Var& reference) {
    if (reference.shape() != Shape{emb.shape()[0], 2}) throw ShapeError("detection head: reference shape mismatch");
    DetectionHeadOutput out;
    out.cls_logits = apply_linear(store, prefix + ".cls.1", nn::relu(apply_linear(store, prefix + ".cls.0", emb)));
    Var raw = apply_linear(store, prefix + ".reg.1", nn::relu(apply_linear(store, prefix + ".reg.0", emb)));
    Var center = nn::sigmoid(nn::add(nn::slice_cols(raw, 0, 2), inverse_sigmoid(reference)));
    out.box_code = nn::concat_cols({center, nn::slice_cols(raw, 2, kBoxCodeSize)});
    return out;
}

// ---------------------------------------------------------------------------

OCBEVNet::OCBEVNet(NetworkConfig cfg, std::vector<CameraModel> cameras, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      cameras_(std::move(cameras)),
      global_refs_(build_reference_points(cfg_.grid, cameras_, cfg_.global_range, cfg_.pillar_points)),
      local_base_refs_(build_reference_points(cfg_.grid, cameras_, cfg_.local_range, cfg_.pillar_points)) {
    cfg_.validate();
    std::uint64_t counter = 0;
    auto next = [&] { return mix_seed(seed, counter++); };
    const std::size_t C = cfg_.embed, cells = cfg_.grid.cell_count();

    store_.add("bev.embed", nn::normal_tensor({cells, C}, 0.1, next()));
    Tensor pos({cells, C});
    for (std::size_t k = 0; k < cells; ++k) {
        const Vec2 uv = cfg_.grid.normalize(cfg_.grid.index_to_coord(k));
        for (std::size_t c = 0; c < C; ++c) {
            const double coord = (c % 2 == 0) ? uv.x : uv.y;
            const double freq = std::numbers::pi * static_cast<double>(c / 4 + 1);
            pos.at(k, c) = ((c / 2) % 2 == 0) ? std::sin(freq * coord) : std::cos(freq * coord);
        }
    }
    store_.add("bev.pos", std::move(pos));

    for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) {
        const std::string p = "enc" + std::to_string(l);
        temporal_.emplace_back(store_, p + ".tsa", C, cfg_.heads, cfg_.points, next());
        spatial_global_.emplace_back(store_, p + ".sca_g", cfg_.image_channels, C, cfg_.heads, cfg_.points, next());
        spatial_local_.emplace_back(store_, p + ".sca_l", cfg_.image_channels, C, cfg_.heads, cfg_.points, next());
        offset_heads_.emplace_back(store_, p + ".dh", C, cfg_.max_height_offset);
        add_layer_norm(store_, p + ".sca_ln", C);
        add_linear(store_, p + ".ffn.0", C, cfg_.ffn_hidden, next());
        add_linear(store_, p + ".ffn.1", cfg_.ffn_hidden, C, next());
        add_layer_norm(store_, p + ".ffn_ln", C);
    }

    add_linear(store_, "heat.0", C, std::max<std::size_t>(1, C / 2), next());
    add_linear(store_, "heat.1", std::max<std::size_t>(1, C / 2), 1, next(), -2.0);

    const std::size_t N = cfg_.queries;
    store_.add("query.content", nn::normal_tensor({N, C}, 1.0, next()));
    store_.add("query.pos", nn::normal_tensor({N, C}, 1.0, next()));
    {
        Tensor ref({N, 2});
        Tensor u = nn::xavier(N, 2, next());
        const double limit = std::sqrt(6.0 / static_cast<double>(N + 2));
        for (std::size_t i = 0; i < ref.size(); ++i) {
            const double p = 0.05 + 0.9 * (u[i] / limit + 1.0) / 2.0;
            ref[i] = std::log(p / (1.0 - p));
        }
        store_.add("query.ref", std::move(ref));
    }
    add_linear(store_, "qe.pos", 2, C, next());

    for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
        const std::string p = "dec" + std::to_string(l);
        add_linear(store_, p + ".sa.q", C, C, next());
        add_linear(store_, p + ".sa.k", C, C, next());
        add_linear(store_, p + ".sa.v", C, C, next());
        add_linear(store_, p + ".sa.o", C, C, next());
        add_layer_norm(store_, p + ".sa_ln", C);
        cross_.emplace_back(store_, p + ".ca", nn::DeformableAttentionShape{C, C, cfg_.heads, 1, cfg_.points}, next());
        add_layer_norm(store_, p + ".ca_ln", C);
        add_linear(store_, p + ".ffn.0", C, cfg_.ffn_hidden, next());
        add_linear(store_, p + ".ffn.1", cfg_.ffn_hidden, C, next());
        add_layer_norm(store_, p + ".ffn_ln", C);
    }

    add_linear(store_, "det.cls.0", C, C, next());
    add_linear(store_, "det.cls.1", C, cfg_.classes, next(), -std::log((1.0 - 0.01) / 0.01));
    add_linear(store_, "det.reg.0", C, C, next());
    add_linear(store_, "det.reg.1", C, kBoxCodeSize, next());
    // Boxes start at the query references.
    store_.assign("det.reg.1.w", Tensor({C, kBoxCodeSize}));
}

Var OCBEVNet::spatial_block(std::size_t layer, const Var& x, const std::vector<Var>& images,
                            const nn::MapSize& image_size, std::vector<double>* offsets) const {
    const std::string ln = "enc" + std::to_string(layer) + ".sca_ln";
    if (!cfg_.flags.local_sampling) {
        if (offsets) offsets->push_back(0.0);
        return object_focused_spatial_attention(store_, spatial_global_[layer], nullptr, ln, x, images, image_size,
                                                global_refs_, nullptr, nullptr);
    }
    if (!cfg_.flags.adaptive_offset) {
        if (offsets) offsets->push_back(0.0);
        return object_focused_spatial_attention(store_, spatial_global_[layer], &spatial_local_[layer], ln, x,
                                                images, image_size, global_refs_, &local_base_refs_, nullptr);
    }
    Var dh = offset_heads_[layer].forward(store_, x);
    const double shift = dh.value()[0];
    if (offsets) offsets->push_back(shift);
    ReferencePointSet local = build_reference_points(cfg_.grid, cameras_, cfg_.local_range.shifted(shift),
                                                     cfg_.pillar_points);
    return object_focused_spatial_attention(store_, spatial_global_[layer], &spatial_local_[layer], ln, x, images,
                                            image_size, global_refs_, &local, &dh);
}

Var OCBEVNet::encode(const FrameInput& in, std::vector<double>* offsets) const {
    if (in.features == nullptr) throw Error("encode: image features missing");
    const ImageFeatureSet& feats = *in.features;
    feats.validate();
    if (feats.cameras() != cameras_.size()) {
        throw Error("encode: " + std::to_string(feats.cameras()) + " feature maps for " +
                    std::to_string(cameras_.size()) + " cameras");
    }
    if (feats.channels != cfg_.image_channels) throw ShapeError("encode: image channel count mismatch");
    std::vector<Var> images;
    images.reserve(feats.cameras());
    for (std::size_t cam = 0; cam < feats.cameras(); ++cam) images.push_back(Var::constant(feats.pixel_major(cam)));
    const nn::MapSize image_size{feats.height, feats.width};

    const bool has_prev = in.prev_bev != nullptr;
    Var prev;
    if (has_prev) {
        if (in.prev_bev->shape() != Shape{cfg_.grid.cell_count(), cfg_.embed}) {
            throw ShapeError("encode: previous BEV has shape " + nn::shape_string(in.prev_bev->shape()));
        }
        prev = Var::constant(*in.prev_bev);
    }
    FusionOptions fopts{cfg_.flags.ego_fusion, cfg_.flags.object_fusion, cfg_.max_aligned_objects};
    const FusionPlan plan = plan_fusion(cfg_.grid, has_prev, in.motion, in.prev_to_cur, in.dt, fopts);

    Var x = nn::add(store_.get("bev.embed"), store_.get("bev.pos"));
    for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) {
        const std::string p = "enc" + std::to_string(l);
        Var qa = fuse_bev(plan, in.prev_bev, x);
        x = temporal_[l].forward(store_, qa, prev, cfg_.grid);
        x = spatial_block(l, x, images, image_size, offsets);
        x = apply_layer_norm(store_, p + ".ffn_ln",
                             nn::add(x, ffn(store_, p + ".ffn", x, cfg_.dropout, mix_seed(in.dropout_seed, l))));
    }
    return x;
}

QuerySet OCBEVNet::base_queries() const {
    return {store_.get("query.content"), store_.get("query.pos"), nn::sigmoid(store_.get("query.ref"))};
}

Var OCBEVNet::decode(const QuerySet& queries, const Var& bev, std::uint64_t dropout_seed) const {
    queries.validate();
    const std::size_t N = queries.size();
    nn::SamplingLayout layout;
    layout.groups = 1;
    for (std::size_t n = 0; n < N; ++n) {
        const nn::SamplingSlot slot{0, 0, static_cast<std::uint32_t>(n)};
        layout.add_query(std::span<const nn::SamplingSlot>(&slot, 1));
    }
    const nn::MapSize sizes[1] = {{static_cast<std::size_t>(cfg_.grid.rows()),
                                   static_cast<std::size_t>(cfg_.grid.cols())}};
    Var q = queries.content;
    const Var& pos = queries.positional;
    for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
        const std::string p = "dec" + std::to_string(l);
        Var qp = nn::add(q, pos);
        Var sa = nn::multi_head_attention(apply_linear(store_, p + ".sa.q", qp), apply_linear(store_, p + ".sa.k", qp),
                                          apply_linear(store_, p + ".sa.v", q), cfg_.heads);
        q = apply_layer_norm(store_, p + ".sa_ln", nn::add(q, apply_linear(store_, p + ".sa.o", sa)));
        Var ca = cross_[l].forward(store_, nn::add(q, pos), {bev}, sizes, queries.reference, layout);
        q = apply_layer_norm(store_, p + ".ca_ln", nn::add(q, ca));
        q = apply_layer_norm(
            store_, p + ".ffn_ln",
            nn::add(q, ffn(store_, p + ".ffn", q, cfg_.dropout, mix_seed(dropout_seed, 1000 + l))));
    }
    return q;
}

NetworkOutput OCBEVNet::forward(const FrameInput& in) const {
    NetworkOutput out;
    out.bev = encode(in, &out.height_offsets);
    out.heatmap = heatmap_head(store_, "heat", out.bev);
    out.queries = base_queries();
    if (cfg_.flags.query_enhancement) {
        const Heatmap heat(cfg_.grid, std::vector<double>(out.heatmap.value().storage()));
        out.peaks = select_peaks(heat, cfg_.enhancement);
        const Var* bev = cfg_.enhancement.content_from_bev ? &out.bev : nullptr;
        out.queries = enhance_queries(out.queries, out.peaks, cfg_.grid, store_.get("qe.pos.w"),
                                      store_.get("qe.pos.b"), bev);
    }
    Var emb = decode(out.queries, out.bev, in.dropout_seed);
    DetectionHeadOutput det = detection_head(store_, "det", emb, out.queries.reference);
    out.cls_logits = det.cls_logits;
    out.box_code = det.box_code;
    return out;
}

std::vector<DetectionBox> OCBEVNet::detections(const NetworkOutput& out) const {
    std::vector<DetectionBox> boxes;
    const auto& logits = out.cls_logits.value();
    const auto& code = out.box_code.value();
    const std::size_t N = logits.rows(), K = logits.cols();
    boxes.reserve(N);
    for (std::size_t n = 0; n < N; ++n) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k) {
            if (logits.at(n, k) > logits.at(n, best)) best = k;
        }
        const double score = 1.0 / (1.0 + std::exp(-logits.at(n, best)));
        boxes.push_back(decode_box(code.data().subspan(n * kBoxCodeSize, kBoxCodeSize), cfg_.grid,
                                   static_cast<int>(best), score));
    }
    return boxes;
}

}  // namespace ocbev
