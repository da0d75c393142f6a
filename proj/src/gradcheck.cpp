#include "ocbev/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ocbev/error.hpp"
#include "ocbev/losses.hpp"
#include "ocbev/network.hpp"
#include "ocbev/ops.hpp"
#include "ocbev/simulator.hpp"
#include "ocbev/training.hpp"

namespace ocbev {

using nn::Shape;
using nn::Tensor;
using nn::Var;

GradCheckOutcome check_gradients(const std::function<Var()>& loss, const std::vector<GradTarget>& targets,
                                 const GradCheckOptions& opts) {
    for (const auto& t : targets) {
        if (!t.var.defined() || !t.var.requires_grad()) throw Error("gradcheck: target '" + t.name + "' is not a leaf");
        t.var.node()->grad.clear();
    }
    {
        Var l = loss();
        if (l.size() != 1) throw ShapeError("gradcheck: loss must be a scalar");
        nn::backward(l);
    }
    std::vector<std::vector<double>> analytic;
    for (const auto& t : targets) {
        std::vector<double> g(t.var.grad().begin(), t.var.grad().end());
        g.resize(t.var.size(), 0.0);
        analytic.push_back(std::move(g));
    }

    const auto eval = [&]() {
        nn::NoGradGuard guard;
        return loss().value()[0];
    };
    const auto stencil = [&](double& x, double h) {
        const double x0 = x;
        double f[4];
        const double steps[4] = {h, -h, 2 * h, -2 * h};
        for (int i = 0; i < 4; ++i) {
            x = x0 + steps[i];
            f[i] = eval();
        }
        x = x0;
        return (8.0 * (f[0] - f[1]) - (f[2] - f[3])) / (12.0 * h);
    };

    GradCheckOutcome out;
    std::mt19937_64 rng(opts.seed);
    for (std::size_t t = 0; t < targets.size(); ++t) {
        Var var = targets[t].var;
        const std::size_t n = var.size();
        std::vector<std::size_t> coords(n);
        for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        if (n > opts.max_coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opts.max_coords_per_tensor);
        }
        for (std::size_t i : coords) {
            double& x = var.mutable_value()[i];
            const double h = opts.step * std::max(1.0, std::abs(x));
            const double num = stencil(x, h);
            const double wide = stencil(x, 2.0 * h);
            const double a = analytic[t][i];
            const double denom = std::max({std::abs(a), std::abs(num), opts.floor});
            if (std::abs(num - wide) > 0.25 * opts.tolerance * denom) {
                ++out.skipped;
                continue;
            }
            ++out.checked;
            const double rel = std::abs(a - num) / denom;
            if (rel >= out.max_rel_error) {
                out.max_rel_error = rel;
                out.worst = targets[t].name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return out;
}

namespace {

struct Rng {
    std::mt19937_64 gen;
    explicit Rng(std::uint64_t seed) : gen(seed * 0x9e3779b97f4a7c15ULL + 17) {}
    double normal(double s = 1.0) { return std::normal_distribution<double>(0.0, s)(gen); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen); }
    Tensor tensor(Shape shape, double s = 1.0) {
        Tensor t(std::move(shape));
        for (auto& v : t.data()) v = normal(s);
        return t;
    }
    Tensor tensor_in(Shape shape, double lo, double hi) {
        Tensor t(std::move(shape));
        for (auto& v : t.data()) v = uniform(lo, hi);
        return t;
    }
};


void randomize(nn::ParameterStore& store, Rng& rng, double s = 0.3) {
    for (const auto& name : store.names()) {
        Tensor& t = store.get(name).mutable_value();
        const bool gain = name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0;
        for (auto& v : t.data()) v = (gain ? 1.0 : 0.0) + rng.normal(s);
    }
}

void add_store(std::vector<GradTarget>& targets, const nn::ParameterStore& store) {
    for (const auto& name : store.names()) targets.push_back({name, store.get(name)});
}

struct Rig {
    BEVGrid grid = BEVGrid::square(4, 8.0);
    std::vector<CameraModel> cams;
    std::size_t channels = 3;
    nn::MapSize size{5, 8};

    Rig() {
        RigSpec r;
        r.image_width = 64;
        r.image_height = 40;
        cams = r.build();
    }
    std::vector<Var> images(Rng& rng, std::vector<GradTarget>* targets) const {
        std::vector<Var> out;
        for (std::size_t c = 0; c < cams.size(); ++c) {
            out.push_back(Var::leaf(rng.tensor({size.height * size.width, channels})));
            if (targets) targets->push_back({"image" + std::to_string(c), out.back()});
        }
        return out;
    }
};

GradCheckCase bilinear_case(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    const std::size_t C = 2, H = static_cast<std::size_t>(rng->integer(2, 5)), W = static_cast<std::size_t>(rng->integer(2, 5));
    Var map = Var::leaf(rng->tensor({C, H, W}));
    Var loc = Var::leaf(rng->tensor_in({2}, -0.1, 1.1));
    const Tensor r = rng->tensor({C});
    return {[=] { return nn::sum_all(nn::mul(nn::bilinear_sample(map, loc), Var::constant(r))); },
            {{"map", map}, {"loc", loc}}};
}

GradCheckCase deformable_case(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    auto store = std::make_shared<nn::ParameterStore>();
    const nn::DeformableAttentionShape shape{4, 3, 2, 2, 2};
    auto attn = std::make_shared<nn::DeformableAttention>(*store, "attn", shape, seed);
    randomize(*store, *rng);
    const std::size_t N = 5;
    std::vector<nn::MapSize> sizes = {{3, 4}, {2, 5}};
    Var query = Var::leaf(rng->tensor({N, shape.embed}));
    std::vector<Var> values = {Var::leaf(rng->tensor({12, shape.value_in})), Var::leaf(rng->tensor({10, shape.value_in}))};
    Var locs = Var::leaf(rng->tensor_in({N + 2, 2}, 0.05, 0.95));
    auto layout = std::make_shared<nn::SamplingLayout>();
    layout->groups = shape.groups;
    for (std::size_t n = 0; n < N; ++n) {
        std::vector<nn::SamplingSlot> slots;
        const int k = rng->integer(0, 3);
        for (int s = 0; s < k; ++s) {
            slots.push_back({static_cast<std::uint32_t>(rng->integer(0, 1)), static_cast<std::uint32_t>(rng->integer(0, 1)),
                             static_cast<std::uint32_t>(rng->integer(0, static_cast<int>(N) + 1))});
        }
        layout->add_query(slots, k ? 1.0 / k : 1.0);
    }
    GradCheckCase c;
    add_store(c.targets, *store);
    c.targets.push_back({"query", query});
    c.targets.push_back({"value0", values[0]});
    c.targets.push_back({"value1", values[1]});
    c.targets.push_back({"locations", locs});
    const Tensor r = rng->tensor({N, shape.embed});
    c.loss = [=] {
        Var out = attn->forward(*store, query, values, sizes, locs, *layout);
        return nn::sum_all(nn::mul(out, Var::constant(r)));
    };
    return c;
}

GradCheckCase temporal_case(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    auto store = std::make_shared<nn::ParameterStore>();
    const BEVGrid grid = BEVGrid::square(rng->integer(2, 4), 4.0);
    auto tsa = std::make_shared<TemporalAttention>(*store, "tsa", 4, 2, 2, seed);
    randomize(*store, *rng);
    const std::size_t cells = grid.cell_count();
    Var qa = Var::leaf(rng->tensor({cells, 4}));
    Var prev = seed % 3 == 0 ? Var() : Var::leaf(rng->tensor({cells, 4}));
    GradCheckCase c;
    add_store(c.targets, *store);
    c.targets.push_back({"q_aligned", qa});
    if (prev.defined()) c.targets.push_back({"prev", prev});
    const Tensor r = rng->tensor({cells, 4});
    c.loss = [=] { return nn::sum_all(nn::mul(tsa->forward(*store, qa, prev, grid), Var::constant(r))); };
    return c;
}

GradCheckCase spatial_case(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    auto rig = std::make_shared<Rig>();
    auto store = std::make_shared<nn::ParameterStore>();
    auto spa = std::make_shared<SpatialAttention>(*store, "sca", rig->channels, 4, 2, 2, seed);
    add_layer_norm(*store, "sca_ln", 4);
    randomize(*store, *rng);
    auto refs = std::make_shared<ReferencePointSet>(
        build_reference_points(rig->grid, rig->cams, SamplingDefaults::global_range(), 4));
    GradCheckCase c;
    add_store(c.targets, *store);
    const auto images = rig->images(*rng, &c.targets);
    Var q = Var::leaf(rng->tensor({rig->grid.cell_count(), 4}));
    c.targets.push_back({"query", q});
    const Tensor r = rng->tensor({rig->grid.cell_count(), 4});
    c.loss = [=] {
        Var out = spatial_attention(*store, *spa, "sca_ln", q, images, rig->size, *refs);
        return nn::sum_all(nn::mul(out, Var::constant(r)));
    };
    return c;
}

// Object focused spatial attention; with `adaptive` the local references follow
// the height-offset head.
GradCheckCase ofspa_case(std::uint64_t seed, bool adaptive) {
    auto rng = std::make_shared<Rng>(seed);
    auto rig = std::make_shared<Rig>();
    auto store = std::make_shared<nn::ParameterStore>();
    auto global = std::make_shared<SpatialAttention>(*store, "sca_g", rig->channels, 4, 2, 2, seed);
    auto local = std::make_shared<SpatialAttention>(*store, "sca_l", rig->channels, 4, 2, 2, seed + 7);
    auto head = std::make_shared<HeightOffsetHead>(*store, "dh", 4);
    add_layer_norm(*store, "sca_ln", 4);
    randomize(*store, *rng);
    auto grefs = std::make_shared<ReferencePointSet>(
        build_reference_points(rig->grid, rig->cams, SamplingDefaults::global_range(), 4));
    GradCheckCase c;
    add_store(c.targets, *store);
    if (!adaptive) c.targets.erase(std::remove_if(c.targets.begin(), c.targets.end(),
                                                  [](const GradTarget& t) { return t.name.rfind("dh.", 0) == 0; }),
                                   c.targets.end());
    const auto images = rig->images(*rng, &c.targets);
    Var q = Var::leaf(rng->tensor({rig->grid.cell_count(), 4}));
    c.targets.push_back({"query", q});
    const Tensor r = rng->tensor({rig->grid.cell_count(), 4});
    const double rdh = rng->normal();
    c.loss = [=] {
        Var dh;
        HeightRange range = SamplingDefaults::local_range();
        if (adaptive) {
            dh = head->forward(*store, q);
            range = range.shifted(dh.value()[0]);
        }
        const ReferencePointSet lrefs = build_reference_points(rig->grid, rig->cams, range, 4);
        Var out = object_focused_spatial_attention(*store, *global, local.get(), "sca_ln", q, images, rig->size, *grefs,
                                                   &lrefs, adaptive ? &dh : nullptr);
        Var l = nn::sum_all(nn::mul(out, Var::constant(r)));
        if (adaptive) l = nn::add(l, nn::scale(nn::sum_all(dh), rdh));
        return l;
    };
    return c;
}

GradCheckCase heatmap_case(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    auto store = std::make_shared<nn::ParameterStore>();
    add_linear(*store, "heat.0", 6, 3, seed);
    add_linear(*store, "heat.1", 3, 1, seed + 1);
    randomize(*store, *rng, 0.5);
    Var bev = Var::leaf(rng->tensor({9, 6}));
    GradCheckCase c;
    add_store(c.targets, *store);
    c.targets.push_back({"bev", bev});
    const Tensor r = rng->tensor({9, 1});
    c.loss = [=] { return nn::sum_all(nn::mul(heatmap_head(*store, "heat", bev), Var::constant(r))); };
    return c;
}

GradCheckCase detection_case(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    auto store = std::make_shared<nn::ParameterStore>();
    add_linear(*store, "det.cls.0", 4, 4, seed);
    add_linear(*store, "det.cls.1", 4, 3, seed + 1);
    add_linear(*store, "det.reg.0", 4, 4, seed + 2);
    add_linear(*store, "det.reg.1", 4, kBoxCodeSize, seed + 3);
    randomize(*store, *rng, 0.5);
    Var emb = Var::leaf(rng->tensor({5, 4}));
    Var ref = Var::leaf(rng->tensor_in({5, 2}, 0.05, 0.95));
    GradCheckCase c;
    add_store(c.targets, *store);
    c.targets.push_back({"embeddings", emb});
    c.targets.push_back({"reference", ref});
    const Tensor rc = rng->tensor({5, 3}), rb = rng->tensor({5, kBoxCodeSize});
    c.loss = [=] {
        const DetectionHeadOutput o = detection_head(*store, "det", emb, ref);
        return nn::add(nn::sum_all(nn::mul(o.cls_logits, Var::constant(rc))),
                       nn::sum_all(nn::mul(o.box_code, Var::constant(rb))));
    };
    return c;
}

GradCheckCase height_offset_case(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    auto store = std::make_shared<nn::ParameterStore>();
    auto head = std::make_shared<HeightOffsetHead>(*store, "dh", 5);
    randomize(*store, *rng, 0.5);
    Var bev = Var::leaf(rng->tensor({7, 5}));
    GradCheckCase c;
    add_store(c.targets, *store);
    c.targets.push_back({"bev", bev});
    c.loss = [=] { return nn::sum_all(head->forward(*store, bev)); };
    return c;
}

GradCheckCase reference_locations_case(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    auto rig = std::make_shared<Rig>();
    Var dh = Var::leaf(Tensor({1, 1}, rng->uniform(-0.9, 0.9)));
    auto r = std::make_shared<Tensor>();
    return {[=] {
                const ReferencePointSet refs = build_reference_points(
                    rig->grid, rig->cams, SamplingDefaults::local_range().shifted(dh.value()[0]), 4);
                Var locs = reference_locations(refs, &dh);
                if (r->size() != locs.size()) {
                    Rng fixed(seed + 99);
                    *r = fixed.tensor(locs.shape());
                }
                return nn::sum_all(nn::mul(locs, Var::constant(*r)));
            },
            {{"height_offset", dh}}};
}

GradCheckCase fusion_case(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    const BEVGrid grid = BEVGrid::square(6, 6.0);
    std::vector<Vec2> pos, vel;
    for (int i = 0; i < 3; ++i) {
        pos.push_back({rng->uniform(-5, 5), rng->uniform(-5, 5)});
        vel.push_back({rng->uniform(-4, 4), rng->uniform(-4, 4)});
    }
    const ObjectMotionRecord rec = ObjectMotionRecord::from_detections(grid, pos, vel);
    const PlanarPose pose(rng->uniform(-0.5, 0.5), rng->uniform(-2, 2), rng->uniform(-2, 2));
    FusionOptions opts{true, seed % 2 == 0, 30};
    auto plan = std::make_shared<FusionPlan>(plan_fusion(grid, true, rec, pose, 0.5, opts));
    auto prev = std::make_shared<Tensor>(rng->tensor({grid.cell_count(), 3}));
    Var cur = Var::leaf(rng->tensor({grid.cell_count(), 3}));
    const Tensor r = rng->tensor({grid.cell_count(), 3});
    return {[=] { return nn::sum_all(nn::mul(fuse_bev(*plan, prev.get(), cur), Var::constant(r))); }, {{"cur", cur}}};
}

GradCheckCase bce_case(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    Var pred = Var::leaf(rng->tensor_in({12, 1}, 0.02, 0.98));
    const Tensor target = rng->tensor_in({12}, 0.0, 1.0);
    return {[=] { return bce_loss(pred, target.storage()); }, {{"pred", pred}}};
}

GradCheckCase focal_case(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    const std::size_t N = 6, K = 3;
    Var logits = Var::leaf(rng->tensor({N, K}, 2.0));
    std::vector<int> target(N);
    for (auto& t : target) t = rng->integer(-1, static_cast<int>(K) - 1);
    return {[=] { return focal_loss(logits, target); }, {{"logits", logits}}};
}

GradCheckCase l1_case(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    Var pred = Var::leaf(rng->tensor({6, kBoxCodeSize}));
    const std::vector<std::size_t> rows = {0, 2, 5};
    std::vector<std::vector<double>> targets;
    for (std::size_t i = 0; i < rows.size(); ++i) targets.push_back(rng->tensor({kBoxCodeSize}).storage());
    return {[=] { return l1_box_loss(pred, rows, targets); }, {{"pred", pred}}};
}

GradCheckCase total_case(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    Var a = Var::leaf(rng->tensor({1})), b = Var::leaf(rng->tensor({1})), d = Var::leaf(rng->tensor({1}));
    return {[=] { return weighted_total(a, b, d); }, {{"centerness", a}, {"classification", b}, {"box", d}}};
}

GradCheckCase ops_case(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    Var x = Var::leaf(rng->tensor({4, 6}));
    Var w = Var::leaf(rng->tensor({6, 6}, 0.5));
    Var b = Var::leaf(rng->tensor({6}));
    Var g = Var::leaf(rng->tensor_in({6}, 0.5, 1.5));
    Var be = Var::leaf(rng->tensor({6}));
    Var kv = Var::leaf(rng->tensor({3, 6}));
    const Tensor r = rng->tensor({4, 6});
    return {[=] {
                Var h = nn::layer_norm(nn::linear(x, w, b), g, be);
                Var a = nn::multi_head_attention(h, kv, kv, 2);
                Var s = nn::softmax_groups(nn::tanh(a), 3);
                Var o = nn::concat_cols({nn::slice_cols(nn::sigmoid(h), 0, 3), nn::slice_cols(s, 3, 6)});
                Var m = nn::mean_rows(nn::mul(o, nn::transpose(nn::transpose(h))));
                return nn::add(nn::sum_all(nn::mul(o, Var::constant(r))), nn::sum_all(m));
            },
            {{"x", x}, {"w", w}, {"b", b}, {"gamma", g}, {"beta", be}, {"kv", kv}}};
}

// Tiny end-to-end network on a small rig; the loss is the training objective.
GradCheckCase full_model_case(std::uint64_t seed) {
    SceneSpec spec;
    spec.seed = 500 + seed;
    spec.frames = 2;
    spec.rig.image_width = 64;
    spec.rig.image_height = 40;
    spec.min_objects = 2;
    spec.max_objects = 4;
    auto scene = std::make_shared<Scene>(generate_scene(spec));
    TrainConfig cfg;
    NetworkConfig& nc = cfg.network;
    nc.grid = BEVGrid::square(6, 9.0);
    nc.embed = 4;
    nc.heads = 2;
    nc.encoder_layers = 1;
    nc.decoder_layers = 1;
    nc.ffn_hidden = 6;
    nc.queries = 6;
    nc.points = 1;
    nc.enhancement.replace_count = 3;
    nc.enhancement.content_from_bev = seed % 2 == 1;
    auto net = std::make_shared<OCBEVNet>(nc, spec.rig.build(), seed);
    Rng rng(seed);
    randomize(net->params(), rng, 0.4);
    auto ctx = std::make_shared<TemporalContext>(temporal_context(*net, *scene, 1, cfg));
    GradCheckCase c;
    add_store(c.targets, net->params());
    c.loss = [=] { return sample_objective(*net, *scene, 1, *ctx, cfg); };
    return c;
}

struct Entry {
    const char* name;
    CaseBuilder build;
};

const std::vector<Entry>& registry() {
    static const std::vector<Entry> entries = {
        {"bilinear_sample", bilinear_case},
        {"deformable_attention", deformable_case},
        {"temporal_attention", temporal_case},
        {"spatial_attention", spatial_case},
        {"object_focused_spatial_attention", [](std::uint64_t s) { return ofspa_case(s, false); }},
        {"adaptive_object_focused_spatial_attention", [](std::uint64_t s) { return ofspa_case(s, true); }},
        {"height_offset_head", height_offset_case},
        {"reference_locations", reference_locations_case},
        {"fuse_bev", fusion_case},
        {"heatmap_head", heatmap_case},
        {"detection_head", detection_case},
        {"bce_loss", bce_case},
        {"focal_loss", focal_case},
        {"l1_box_loss", l1_case},
        {"weighted_total", total_case},
        {"dense_ops", ops_case},
        {"full_model", full_model_case},
    };
    return entries;
}

}  // namespace

std::vector<std::string> gradcheck_ops() {
    std::vector<std::string> out;
    for (const auto& e : registry()) out.push_back(e.name);
    return out;
}

CaseBuilder gradcheck_case(const std::string& op) {
    for (const auto& e : registry()) {
        if (op == e.name) return e.build;
    }
    throw Error("gradcheck: unknown operation '" + op + "'");
}

GradCheckReport run_gradcheck(const std::string& op, std::size_t trials, const GradCheckOptions& opts) {
    const CaseBuilder build = gradcheck_case(op);
    GradCheckReport rep;
    rep.op = op;
    for (std::size_t i = 0; i < trials; ++i) {
        const GradCheckCase c = build(opts.seed * 1000 + i);
        GradCheckOptions o = opts;
        o.seed = opts.seed * 1000 + i;
        const GradCheckOutcome r = check_gradients(c.loss, c.targets, o);
        ++rep.instances;
        rep.checked += r.checked;
        rep.skipped += r.skipped;
        if (r.max_rel_error >= rep.max_rel_error) {
            rep.max_rel_error = r.max_rel_error;
            if (!r.worst.empty()) rep.worst = r.worst + " #" + std::to_string(i);
        }
    }
    rep.pass = rep.checked > 0 && rep.max_rel_error <= opts.tolerance && 4 * rep.skipped <= rep.checked + rep.skipped;
    return rep;
}

}  // namespace ocbev
