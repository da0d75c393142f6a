#include <cmath>
#include <random>

#include "doctest.h"
#include "ocbev/error.hpp"
#include "ocbev/gradcheck.hpp"
#include "ocbev/network.hpp"
#include "ocbev/ops.hpp"
#include "ocbev/simulator.hpp"

using namespace ocbev;
using nn::Tensor;
using nn::Var;

namespace {

RigSpec small_rig() {
    RigSpec r;
    r.image_width = 64;
    r.image_height = 40;
    r.stride = 8;
    return r;
}

ImageFeatureSet random_features(const RigSpec& rig, std::size_t channels, std::uint64_t seed) {
    ImageFeatureSet f(rig.cameras, channels, rig.feature_height(), rig.feature_width());
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    for (auto& m : f.maps)
        for (auto& v : m) v = n(rng);
    return f;
}

NetworkConfig tiny_config() {
    NetworkConfig c;
    c.grid = BEVGrid::square(6, 9.0);
    c.embed = 8;
    c.heads = 2;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.ffn_hidden = 12;
    c.queries = 10;
    c.image_channels = 3;
    c.enhancement.replace_count = 4;
    return c;
}

void near(const Tensor& a, const Tensor& b, double tol = 1e-12) {
    REQUIRE(a.shape() == b.shape());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(tol));
}

std::vector<Var> image_vars(const ImageFeatureSet& f) {
    std::vector<Var> v;
    for (std::size_t c = 0; c < f.cameras(); ++c) v.push_back(Var::constant(f.pixel_major(c)));
    return v;
}

}  // namespace

TEST_CASE("temporal attention at initialization averages the two value maps at the own cell") {
    const BEVGrid g = BEVGrid::square(4, 4.0);
    nn::ParameterStore store;
    TemporalAttention tsa(store, "tsa", 4, 2, 2, 3);
    const Var q = Var::constant(nn::normal_tensor({16, 4}, 1.0, 1));
    const Var prev = Var::constant(nn::normal_tensor({16, 4}, 1.0, 2));

    CHECK(tsa.forward(store, q, Var(), g).value() == tsa.forward(store, q, q, g).value());

    const Var vq = nn::linear(q, store.get("tsa.attn.value.w"), store.get("tsa.attn.value.b"));
    const Var vp = nn::linear(prev, store.get("tsa.attn.value.w"), store.get("tsa.attn.value.b"));
    const Var mixed = nn::linear(nn::scale(nn::add(vq, vp), 0.5), store.get("tsa.attn.out.w"), store.get("tsa.attn.out.b"));
    const Var expect = apply_layer_norm(store, "tsa.ln", nn::add(q, mixed));
    near(tsa.forward(store, q, prev, g).value(), expect.value());
    CHECK_THROWS_AS(tsa.forward(store, Var::constant(Tensor({15, 4})), Var(), g), Error);
}

TEST_CASE("spatial attention: hidden cells pass through, visible cells trace one sample") {
    // One camera facing +x; the grid spans both sides so the rear row is hidden.
    const CameraModel cam = CameraModel::looking_along(0.0, Eigen::Vector3d::Zero(), 32, 32, 32, 20, 64, 40);
    const BEVGrid g(1, 2, -10.0, 10.0, -5.0, 5.0);
    const auto refs = build_reference_points(g, std::span(&cam, 1), {-0.5, 0.5}, 1);
    nn::ParameterStore store;
    SpatialAttention spa(store, "sca", 3, 4, 1, 1, 5);
    add_layer_norm(store, "ln", 4);
    ImageFeatureSet f(1, 3, 5, 8);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    for (auto& v : f.maps[0]) v = n(rng);
    const Var q = Var::constant(nn::normal_tensor({2, 4}, 1.0, 3));
    const nn::MapSize size{5, 8};
    const Var out = spatial_attention(store, spa, "ln", q, image_vars(f), size, refs);
    const Var plain = apply_layer_norm(store, "ln", q);
    const Var att = spa.attend(store, q, image_vars(f), size, refs);
    for (std::size_t cell = 0; cell < 2; ++cell) {
        const bool visible = refs.hit_count(cell) != 0;
        CHECK(visible == (g.index_to_coord(cell).x > 0));
        for (std::size_t c = 0; c < 4; ++c) {
            if (!visible) {
                CHECK(out.value().at(cell, c) == plain.value().at(cell, c));
                CHECK(att.value().at(cell, c) == 0.0);
            }
        }
        if (!visible) continue;
        // Zero offset and weight heads: one point at the reference, weight 1.
        const CameraHit h = refs.hits(cell, 0)[0];
        Tensor chw({3, 5, 8}, f.maps[0]);
        const Var sample = nn::bilinear_sample(Var::constant(chw), Var::constant(Tensor({2}, {h.uv.x, h.uv.y})));
        const Var v = nn::linear(nn::reshape(sample, {1, 3}), store.get("sca.value.w"), store.get("sca.value.b"));
        const Var o = nn::linear(v, store.get("sca.out.w"), store.get("sca.out.b"));
        for (std::size_t c = 0; c < 4; ++c) CHECK(att.value().at(cell, c) == doctest::Approx(o.value()[c]).epsilon(1e-12));
    }
    CHECK_THROWS_AS(spa.attend(store, q, {}, size, refs), Error);
}

TEST_CASE("object focused spatial attention is the sum of both branches") {
    const RigSpec rig = small_rig();
    const auto cams = rig.build();
    const BEVGrid g = BEVGrid::square(4, 8.0);
    const auto grefs = build_reference_points(g, cams, SamplingDefaults::global_range(), 4);
    const auto lrefs = build_reference_points(g, cams, SamplingDefaults::local_range(), 4);
    nn::ParameterStore store;
    SpatialAttention glob(store, "g", 3, 4, 2, 2, 1), loc(store, "l", 3, 4, 2, 2, 2);
    add_layer_norm(store, "ln", 4);
    store.assign("g.offset.w", nn::normal_tensor({4, 8}, 0.5, 3));
    store.assign("l.weight.w", nn::normal_tensor({4, 4}, 0.5, 4));
    const auto f = random_features(rig, 3, 9);
    const auto imgs = image_vars(f);
    const nn::MapSize size{f.height, f.width};
    const Var q = Var::constant(nn::normal_tensor({16, 4}, 1.0, 5));

    const Var both = object_focused_spatial_attention(store, glob, &loc, "ln", q, imgs, size, grefs, &lrefs, nullptr);
    const Var oracle = apply_layer_norm(
        store, "ln", nn::add(nn::add(q, glob.attend(store, q, imgs, size, grefs)), loc.attend(store, q, imgs, size, lrefs)));
    near(both.value(), oracle.value(), 1e-13);

    const Var global_only = object_focused_spatial_attention(store, glob, nullptr, "ln", q, imgs, size, grefs, nullptr, nullptr);
    near(global_only.value(), spatial_attention(store, glob, "ln", q, imgs, size, grefs).value(), 1e-15);

    for (const char* name : {"l.value.w", "l.value.b", "l.out.w", "l.out.b"})
        store.assign(name, Tensor(store.get(name).shape()));
    const Var zeroed = object_focused_spatial_attention(store, glob, &loc, "ln", q, imgs, size, grefs, &lrefs, nullptr);
    near(zeroed.value(), global_only.value(), 1e-15);

    const Var dh0 = Var::constant(Tensor({1, 1}, {0.0}));
    const Var with_dh = object_focused_spatial_attention(store, glob, &loc, "ln", q, imgs, size, grefs, &lrefs, &dh0);
    CHECK(with_dh.value() == zeroed.value());
    CHECK_THROWS_AS(object_focused_spatial_attention(store, glob, &loc, "ln", q, imgs, size, grefs, nullptr, nullptr),
                    Error);
}

TEST_CASE("heads at zero weights") {
    nn::ParameterStore store;
    add_linear(store, "heat.0", 4, 2, 1);
    add_linear(store, "heat.1", 2, 1, 2);
    for (const char* n : {"heat.0.w", "heat.1.w", "heat.1.b"}) store.assign(n, Tensor(store.get(n).shape()));
    const Var bev = Var::constant(nn::normal_tensor({9, 4}, 1.0, 1));
    const Var heat = heatmap_head(store, "heat", bev);
    for (double v : heat.value().storage()) CHECK(v == 0.5);

    add_linear(store, "det.cls.0", 4, 4, 3);
    add_linear(store, "det.cls.1", 4, 3, 4);
    add_linear(store, "det.reg.0", 4, 4, 5);
    add_linear(store, "det.reg.1", 4, kBoxCodeSize, 6);
    store.assign("det.reg.1.w", Tensor({4, kBoxCodeSize}));
    const Var emb = Var::constant(nn::normal_tensor({3, 4}, 1.0, 7));
    const Var ref = Var::constant(Tensor({3, 2}, {0.5, 0.5, 0.2, 0.7, 0.9, 0.1}));
    const auto out = detection_head(store, "det", emb, ref);
    CHECK(out.cls_logits.shape() == nn::Shape{3, 3});
    for (std::size_t n = 0; n < 3; ++n) {
        CHECK(out.box_code.value().at(n, 0) == doctest::Approx(ref.value().at(n, 0)).epsilon(1e-12));
        CHECK(out.box_code.value().at(n, 1) == doctest::Approx(ref.value().at(n, 1)).epsilon(1e-12));
        CHECK(out.box_code.value().at(n, 8) == 0.0);
        CHECK(out.box_code.value().at(n, 9) == 0.0);
    }
    CHECK_THROWS_AS(detection_head(store, "det", emb, Var::constant(Tensor({2, 2}))), Error);

    const BEVGrid g = BEVGrid::square(10, 5.0);
    std::vector<double> code{0.5, 0.5, 0, 0, 0, 0, 0, 1, 0, 0};
    const DetectionBox b0 = decode_box(code, g);
    CHECK(b0.yaw == 0.0);
    CHECK(b0.x == doctest::Approx(0.0).epsilon(1e-15));
    code[6] = 1;
    code[7] = 0;
    CHECK(decode_box(code, g).yaw == doctest::Approx(std::numbers::pi / 2));
}

TEST_CASE("box code round trip") {
    const BEVGrid g = BEVGrid::square(20, 10.0);
    const DetectionBox b{1, 0.7, 3.2, -4.1, -0.9, 4.5, 1.9, 1.6, 2.8, 3.5, -0.5};
    const DetectionBox r = decode_box(encode_box(b, g), g, 1, 0.7);
    CHECK(r.x == doctest::Approx(b.x));
    CHECK(r.y == doctest::Approx(b.y));
    CHECK(r.l == doctest::Approx(b.l));
    CHECK(r.yaw == doctest::Approx(b.yaw));
    CHECK(r.vy == b.vy);
    DetectionBox bad = b;
    bad.w = 0;
    CHECK_THROWS_AS(validate_box(bad), Error);
    const BoxCode w = box_code_weights(g, 0.2);
    CHECK(w[0] == 20.0);
    CHECK(w[2] == 1.0);
    CHECK(w[9] == 0.2);
}

TEST_CASE("encoder with zero weights is a cascade of layer norms") {
    const RigSpec rig = small_rig();
    NetworkConfig cfg = tiny_config();
    cfg.encoder_layers = 2;
    OCBEVNet net(cfg, rig.build(), 4);
    auto& store = net.params();
    for (const auto& name : store.names()) {
        if (name.ends_with(".g") || name == "bev.embed" || name == "bev.pos") continue;
        store.assign(name, Tensor(store.get(name).shape()));
    }
    const auto f = random_features(rig, 3, 1);
    FrameInput in;
    in.features = &f;
    std::vector<double> offsets;
    const Var bev = net.encode(in, &offsets);
    CHECK(offsets == std::vector<double>{0.0, 0.0});
    Var x = nn::add(store.get("bev.embed"), store.get("bev.pos"));
    const Var one = Var::constant(Tensor({cfg.embed}, 1.0)), zero = Var::constant(Tensor({cfg.embed}, 0.0));
    for (int k = 0; k < 6; ++k) x = nn::layer_norm(x, one, zero);
    near(bev.value(), x.value(), 1e-12);
}

TEST_CASE("network forward pass") {
    const RigSpec rig = small_rig();
    NetworkConfig cfg = tiny_config();
    OCBEVNet net(cfg, rig.build(), 1);
    const auto f = random_features(rig, 3, 2);
    FrameInput in;
    in.features = &f;
    const NetworkOutput first = net.forward(in);
    CHECK(first.bev.shape() == nn::Shape{36, 8});
    CHECK(first.heatmap.shape() == nn::Shape{36, 1});
    CHECK(first.cls_logits.shape() == nn::Shape{10, 3});
    CHECK(first.box_code.shape() == nn::Shape{10, kBoxCodeSize});
    CHECK(first.bev.value().all_finite());
    CHECK(first.peaks.size() <= 4);
    CHECK(net.detections(first).size() == 10);

    const Tensor prev = first.bev.value();
    in.prev_bev = &prev;
    in.prev_to_cur = PlanarPose(0.1, -1.0, 0.0);
    in.motion = ObjectMotionRecord(cfg.grid, {{2.0, 1.0}}, {{4.0, 0.0}});
    const NetworkOutput second = net.forward(in);
    CHECK(second.box_code.value().all_finite());
    CHECK(second.bev.value() != first.bev.value());

    const NetworkOutput again = net.forward(in);
    CHECK(again.box_code.value() == second.box_code.value());

    NetworkConfig off = cfg;
    off.flags = ModuleFlags::all(false);
    OCBEVNet plain(off, rig.build(), 1);
    const NetworkOutput p = plain.forward(in);
    CHECK(p.peaks.empty());
    CHECK(p.queries.reference.value() == plain.base_queries().reference.value());
    CHECK(p.height_offsets == std::vector<double>{0.0});

    NetworkConfig bad = cfg;
    bad.heads = 3;
    CHECK_THROWS_AS(OCBEVNet(bad, rig.build(), 1), Error);
    ImageFeatureSet wrong = random_features(rig, 2, 3);
    in.features = &wrong;
    CHECK_THROWS_AS(net.forward(in), Error);
}

TEST_CASE("decoder smoke") {
    const RigSpec rig = small_rig();
    NetworkConfig cfg = tiny_config();
    cfg.queries = 1;
    cfg.enhancement.replace_count = 1;
    OCBEVNet net(cfg, rig.build(), 2);
    const Var bev = Var::constant(nn::normal_tensor({36, 8}, 1.0, 3));
    const Var emb = net.decode(net.base_queries(), bev);
    CHECK(emb.shape() == nn::Shape{1, 8});
    CHECK(emb.value().all_finite());
}

TEST_CASE("fuse_bev cuts gradients at overridden cells") {
    const BEVGrid g = BEVGrid::square(4, 4.0);
    const ObjectMotionRecord rec(g, {{-1.0, -1.0}}, {{4.0, 0.0}});
    const FusionPlan plan = plan_fusion(g, true, rec, PlanarPose(), 0.5, {});
    const Tensor prev = nn::normal_tensor({16, 2}, 1.0, 1);
    const Var cur = Var::leaf(nn::normal_tensor({16, 2}, 1.0, 2));
    nn::backward(nn::sum_all(fuse_bev(plan, &prev, cur)));
    const auto cut = plan.overridden(16);
    std::size_t zeros = 0;
    for (std::size_t k = 0; k < 16; ++k) {
        CHECK(cur.grad()[2 * k] == (cut[k] ? 0.0 : 1.0));
        zeros += cut[k];
    }
    CHECK(zeros == 1);
}

TEST_CASE("network gradients") {
    for (const char* op : {"temporal_attention", "spatial_attention", "object_focused_spatial_attention",
                           "adaptive_object_focused_spatial_attention", "heatmap_head", "detection_head", "fuse_bev"}) {
        const auto r = run_gradcheck(op, 3);
        CHECK_MESSAGE(r.pass, op << " " << r.worst << " " << r.max_rel_error);
    }
}
