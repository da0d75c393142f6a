#include <cmath>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "ocbev/error.hpp"
#include "ocbev/ops.hpp"
#include "ocbev/training.hpp"

using namespace ocbev;

namespace {

SceneSpec small_spec(std::uint64_t seed) {
    SceneSpec s;
    s.seed = seed;
    s.frames = 3;
    s.rig.image_width = 64;
    s.rig.image_height = 40;
    return s;
}

TrainConfig small_config() {
    TrainConfig c;
    c.iterations = 4;
    c.eval_every = 2;
    c.schedule.lr = 1e-3;
    c.schedule.warmup_steps = 2;
    c.network.grid = BEVGrid::square(6, 9.0);
    c.network.embed = 8;
    c.network.heads = 2;
    c.network.encoder_layers = 1;
    c.network.decoder_layers = 1;
    c.network.ffn_hidden = 12;
    c.network.queries = 8;
    c.network.enhancement.replace_count = 4;
    return c;
}

struct Fixture {
    std::vector<Scene> train, eval;
    Fixture() {
        for (int i = 0; i < 3; ++i) train.push_back(generate_scene(small_spec(100 + i)));
        eval.push_back(generate_scene(small_spec(900)));
    }
};

const Fixture& data() {
    static const Fixture f;
    return f;
}

OCBEVNet make_net(const TrainConfig& c) { return OCBEVNet(c.network, small_spec(0).rig.build(), c.seed); }

}  // namespace

TEST_CASE("learning-rate schedule closed forms") {
    ScheduleConfig s;
    s.lr = 2e-4;
    const std::size_t total = 2000;
    CHECK(learning_rate(s, 0, total) == doctest::Approx(2e-4 / 3).epsilon(1e-15));
    CHECK(learning_rate(s, 250, total) == doctest::Approx(2e-4 * (1.0 / 3 + (2.0 / 3) * 0.5)).epsilon(1e-15));
    CHECK(learning_rate(s, 500, total) == doctest::Approx(2e-4).epsilon(1e-15));
    CHECK(learning_rate(s, total, total) == doctest::Approx(2e-7).epsilon(1e-12));
    CHECK(learning_rate(s, 1250, total) == doctest::Approx(2e-7 + (2e-4 - 2e-7) * 0.5).epsilon(1e-12));
    const TrainConfig d;
    CHECK(d.schedule.lr == 2e-4);
    CHECK(d.schedule.warmup_steps == 500);
    CHECK(d.clip == 35.0);
    CHECK(d.optimizer.weight_decay == 0.01);
    CHECK(d.network.max_aligned_objects == 30);
    CHECK(d.network.enhancement.replace_count == 50);
}

TEST_CASE("config json and ablation strings") {
    TrainConfig c = small_config();
    c.network.flags.object_fusion = false;
    c.velocity_source = VelocitySource::Predicted;
    const TrainConfig back = train_config_from_json(train_config_to_json(c));
    CHECK(train_config_to_json(back) == train_config_to_json(c));
    CHECK(back.network.flags == c.network.flags);

    CHECK(parse_ablation("all=off", ModuleFlags{}) == ModuleFlags::all(false));
    const ModuleFlags f = parse_ablation("ego_fusion=off,query_enhancement=off", ModuleFlags{});
    CHECK_FALSE(f.ego_fusion);
    CHECK_FALSE(f.query_enhancement);
    CHECK(f.object_fusion);
    CHECK(parse_ablation(flags_to_string(f), ModuleFlags::all(false)) == f);
    CHECK_THROWS_AS(parse_ablation("warp=on", ModuleFlags{}), Error);
    CHECK_THROWS_AS(parse_ablation("ego_fusion=maybe", ModuleFlags{}), Error);

    TrainConfig bad = small_config();
    bad.schedule.lr = -1e-4;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = small_config();
    bad.iterations = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("sample order is a pure function of seed and iteration") {
    CHECK(sample_index(3, 17, 50) == sample_index(3, 17, 50));
    CHECK(sample_index(3, 17, 50) < 50);
    std::size_t differ = 0;
    for (std::size_t i = 0; i < 20; ++i) differ += sample_index(1, i, 1000) != sample_index(2, i, 1000);
    CHECK(differ > 10);
    CHECK(enumerate_samples(data().train).size() == 6);
}

TEST_CASE("one iteration changes weights, zero learning rate freezes them") {
    TrainConfig c = small_config();
    c.iterations = 1;
    OCBEVNet net = make_net(c);
    const nn::ParameterStore before = net.params().clone();
    TrainState st;
    const TrainLog log = train(net, st, data().train, {}, c);
    REQUIRE(log.records.size() == 1);
    CHECK(std::isfinite(log.records[0].loss.total));
    std::size_t changed = 0;
    for (const auto& n : before.names()) changed += before.get(n).value() != net.params().get(n).value();
    CHECK(changed > 0);

    c.schedule.lr = 0.0;
    OCBEVNet frozen = make_net(c);
    const nn::ParameterStore init = frozen.params().clone();
    TrainState st2;
    train(frozen, st2, data().train, {}, c);
    for (const auto& n : init.names()) CHECK(init.get(n).value() == frozen.params().get(n).value());
}

TEST_CASE("training is deterministic and resumable") {
    const TrainConfig c = small_config();
    OCBEVNet a = make_net(c), b = make_net(c);
    TrainState sa, sb;
    const TrainLog la = train(a, sa, data().train, data().eval, c);
    const TrainLog lb = train(b, sb, data().train, data().eval, c);
    CHECK(la.to_jsonl() == lb.to_jsonl());
    CHECK(encode_ocbw(checkpoint_tensors(a, sa)) == encode_ocbw(checkpoint_tensors(b, sb)));
    REQUIRE(la.records.size() == 4);
    CHECK(la.records[1].eval.has_value());
    CHECK_FALSE(la.records[0].eval.has_value());
    for (const auto& r : la.records) CHECK(std::isfinite(r.loss.total));

    // Stop after 2, checkpoint, restore into a fresh net, continue.
    const auto dir = std::filesystem::temp_directory_path() / "ocbev_training_test";
    std::filesystem::create_directories(dir);
    TrainConfig half = c;
    half.iterations = 2;
    OCBEVNet p = make_net(c);
    TrainState sp;
    const TrainLog first = train(p, sp, data().train, data().eval, half);
    save_checkpoint(dir / "ck.ocbw", p, sp);
    OCBEVNet q(c.network, small_spec(0).rig.build(), 999);
    TrainState sq;
    load_checkpoint(dir / "ck.ocbw", q, sq);
    CHECK(sq.next_iteration == 2);
    const TrainLog rest = train(q, sq, data().train, data().eval, c);
    TrainLog joined = first;
    joined.records.insert(joined.records.end(), rest.records.begin(), rest.records.end());
    CHECK(joined.to_jsonl() == la.to_jsonl());
    CHECK(encode_ocbw(checkpoint_tensors(q, sq)) == encode_ocbw(checkpoint_tensors(a, sa)));
    std::filesystem::remove_all(dir);
}

TEST_CASE("log helpers") {
    TrainLog log;
    for (std::size_t i = 0; i < 3; ++i) {
        LogRecord r;
        r.iteration = i;
        if (i > 0) {
            r.eval = MetricReport{};
            r.eval->mean_ap = 0.1 * static_cast<double>(i);
        }
        log.records.push_back(r);
    }
    CHECK(log.iterations_to(0.15) == std::optional<std::size_t>(3));
    CHECK(log.iterations_to(0.05) == std::optional<std::size_t>(2));
    CHECK_FALSE(log.iterations_to(0.5).has_value());
    std::size_t lines = 0;
    for (char ch : log.to_jsonl()) lines += ch == '\n';
    CHECK(lines == 3);
}

TEST_CASE("gradient clipping and optimizer state") {
    nn::ParameterStore store;
    auto& v = store.add("x", nn::Tensor({2}, {1.0, 1.0}));
    nn::backward(nn::sum_all(nn::scale(v, 3.0)));
    CHECK(grad_norm(store) == doctest::Approx(std::sqrt(18.0)));
    CHECK(clip_grad_norm(store, 1.0) == doctest::Approx(std::sqrt(18.0)));
    CHECK(grad_norm(store) == doctest::Approx(1.0));
    AdamW opt;
    opt.step(store, 0.1);
    CHECK(opt.steps() == 1);
    // First Adam step moves each coordinate by lr (sign of the gradient) plus decay.
    CHECK(store.get("x").value()[0] == doctest::Approx(1.0 - 0.1 - 0.1 * 0.01).epsilon(1e-6));
    AdamW copy;
    copy.load_state(opt.state());
    CHECK(copy.state() == opt.state());
}

TEST_CASE("ablation harness shape") {
    TrainConfig c = small_config();
    c.iterations = 2;
    const auto res = run_ablation_grid(c, {{"baseline", ModuleFlags::all(false)}, {"full", ModuleFlags::all(true)}},
                                       {0, 1}, data().train, data().eval);
    REQUIRE(res.rows.size() == 2);
    for (const auto& r : res.rows) {
        CHECK(r.finals.size() == 2);
        CHECK(r.logs.size() == 2);
    }
    CHECK(res.table().find("baseline") != std::string::npos);
}
