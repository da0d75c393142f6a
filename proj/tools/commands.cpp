#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "ocbev/attention.hpp"
#include "ocbev/error.hpp"
#include "ocbev/gradcheck.hpp"
#include "ocbev/ingest.hpp"
#include "ocbev/kernels.hpp"
#include "ocbev/pgm.hpp"
#include "ocbev/simulator.hpp"
#include "ocbev/temporal_fusion.hpp"
#include "ocbev/tensor_io.hpp"
#include "ocbev/training.hpp"

namespace ocbev::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void write_json(const fs::path& p, const json& j) { write_file(p, dump(j)); }

json read_json_file(const fs::path& p) {
    const std::string text = read_file(p);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(p.string() + ": " + e.what());
    }
}

std::vector<fs::path> scene_files(const fs::path& dir) {
    if (dir.empty()) throw Error("no scene directory given");
    if (!fs::is_directory(dir)) throw Error("scene directory '" + dir.string() + "' does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (e.is_regular_file() && name.rfind("scene_", 0) == 0 && e.path().extension() == ".json")
            files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw Error("no scene files (scene_*.json) in '" + dir.string() + "'");
    return files;
}

std::vector<Scene> load_scenes(const fs::path& dir, unsigned threads) {
    const auto files = scene_files(dir);
    std::vector<Scene> scenes(files.size());
    parallel_for(files.size(), threads, [&](std::size_t i) { scenes[i] = load_scene(files[i]); });
    for (const auto& s : scenes) {
        if (spec_to_json(s.spec).at("rig") != spec_to_json(scenes[0].spec).at("rig") ||
            s.spec.feature_channels != scenes[0].spec.feature_channels)
            throw Error("scenes in '" + dir.string() + "' use different camera rigs");
    }
    return scenes;
}

void check_channels(const TrainConfig& cfg, const Scene& scene) {
    if (cfg.network.image_channels != static_cast<std::size_t>(scene.spec.feature_channels))
        throw Error("network.image_channels (" + std::to_string(cfg.network.image_channels) +
                    ") does not match the scenes' feature_channels (" + std::to_string(scene.spec.feature_channels) +
                    ")");
}

TrainConfig model_config(const json& cfg) {
    const std::string path = cfg.value("train_config", std::string());
    if (path.empty()) return TrainConfig{};
    return train_config_from_json(read_json_file(path));
}

fs::path default_train_config(const std::string& checkpoint) {
    return checkpoint.empty() ? fs::path() : fs::path(checkpoint).parent_path() / "train_config.json";
}

// ---------------------------------------------------------------------------

void cmd_simulate(const RunContext& ctx) {
    const json& c = ctx.config;
    const SceneSpec base = spec_from_json(c.at("spec"));
    const std::size_t n = c.at("scenes").get<std::size_t>();
    const std::string prefix = c.at("prefix").get<std::string>();
    parallel_for(n, ctx.threads, [&](std::size_t i) {
        SceneSpec s = base;
        s.seed = splitmix(ctx.seed * 0x100000001b3ULL + i);
        std::ostringstream stem;
        stem << prefix << "_" << std::setw(4) << std::setfill('0') << i;
        save_scene(generate_scene(s), ctx.out, stem.str());
    });
    std::cout << "wrote " << n << " scenes to " << ctx.out.string() << "\n";
}

void cmd_train(const RunContext& ctx) {
    const json& c = ctx.config;
    const TrainConfig cfg = train_config_from_json(c.at("train"));
    const std::vector<Scene> scenes = load_scenes(c.at("scenes").get<std::string>(), ctx.threads);
    std::vector<Scene> eval_scenes;
    if (!c.at("eval_scenes").get<std::string>().empty())
        eval_scenes = load_scenes(c.at("eval_scenes").get<std::string>(), ctx.threads);
    check_channels(cfg, scenes[0]);

    OCBEVNet net(cfg.network, scenes[0].spec.rig.build(), cfg.seed);
    TrainState state;
    const std::string resume = c.at("resume").get<std::string>();
    if (!resume.empty()) load_checkpoint(resume, net, state);

    write_json(ctx.out / "train_config.json", c.at("train"));
    std::ofstream log(ctx.out / "train.jsonl", std::ios::binary | std::ios::trunc);
    if (!log) throw Error("cannot write " + (ctx.out / "train.jsonl").string());
    TrainCallbacks cb;
    cb.on_record = [&](const LogRecord& r) {
        log << log_record_to_json(r).dump() << "\n";
        log.flush();
        if (r.eval) std::cout << "iter " << r.iteration + 1 << " mAP " << r.eval->mean_ap << "\n";
    };
    const TrainLog result = train(net, state, scenes, eval_scenes, cfg, cb);
    log.close();
    save_checkpoint(ctx.out / "checkpoint.ocbw", net, state);
    if (!result.records.empty() && result.records.back().eval) {
        const MetricReport& r = *result.records.back().eval;
        write_json(ctx.out / "report.json", report_to_json(r));
        write_file(ctx.out / "report.txt", report_to_text(r));
    }
    std::cout << "trained " << result.records.size() << " iterations; checkpoint "
              << (ctx.out / "checkpoint.ocbw").string() << "\n";
}

void cmd_eval(const RunContext& ctx) {
    const json& c = ctx.config;
    const std::vector<Scene> scenes = load_scenes(c.at("scenes").get<std::string>(), ctx.threads);
    const std::string predictor = c.at("predictor").get<std::string>();
    EvalConfig ec;
    ec.thresholds = c.at("thresholds").get<std::vector<double>>();
    ec.error_threshold = c.at("error_threshold").get<double>();
    ec.fast_speed = c.at("fast_speed").get<double>();

    MetricReport report;
    if (predictor == "model") {
        const TrainConfig cfg = model_config(c);
        check_channels(cfg, scenes[0]);
        OCBEVNet net(cfg.network, scenes[0].spec.rig.build(), cfg.seed);
        TrainState state;
        load_checkpoint(c.at("checkpoint").get<std::string>(), net, state);
        report = evaluate_model(net, scenes, cfg, ec);
    } else {
        const BEVGrid grid = model_config(c).network.grid;
        std::vector<std::vector<DetectionBox>> preds, gts;
        for (const auto& s : scenes) {
            for (std::size_t f = 1; f < s.frames.size(); ++f) {
                gts.push_back(truth_boxes(s.frames[f].objects, grid));
                preds.push_back(predictor == "oracle" ? gts.back() : std::vector<DetectionBox>{});
            }
        }
        report = evaluate(preds, gts, ec);
    }
    write_json(ctx.out / "report.json", report_to_json(report));
    write_file(ctx.out / "report.txt", report_to_text(report));
    std::cout << report_to_text(report);
}

BEVFeature to_channel_major(const nn::Tensor& cell_major, const BEVGrid& grid, double timestamp) {
    const std::size_t cells = cell_major.rows(), ch = cell_major.cols();
    std::vector<double> v(cells * ch);
    for (std::size_t i = 0; i < cells; ++i)
        for (std::size_t k = 0; k < ch; ++k) v[k * cells + i] = cell_major.at(i, k);
    return BEVFeature(grid, ch, std::move(v), timestamp);
}

std::vector<double> cell_norms(const BEVFeature& f) {
    std::vector<double> n(f.cells(), 0.0);
    for (std::size_t k = 0; k < f.channels(); ++k) {
        const auto ch = f.channel(k);
        for (std::size_t i = 0; i < f.cells(); ++i) n[i] += ch[i] * ch[i];
    }
    for (double& x : n) x = std::sqrt(x);
    return n;
}

void cmd_demo_align(const RunContext& ctx) {
    const json& c = ctx.config;
    const std::string scene_path = c.at("scene").get<std::string>();
    Scene scene;
    if (scene_path.empty()) {
        SceneSpec s = spec_from_json(c.at("spec"));
        s.seed = ctx.seed;
        scene = generate_scene(s);
    } else {
        scene = load_scene(scene_path);
    }
    const std::size_t frame = c.at("frame").get<std::size_t>();
    if (frame == 0 || frame >= scene.frames.size())
        throw Error("frame must lie in [1, " + std::to_string(scene.frames.size()) + ")");

    TrainConfig cfg = model_config(c);
    check_channels(cfg, scene);
    OCBEVNet net(cfg.network, scene.spec.rig.build(), ctx.seed);
    if (!c.at("checkpoint").get<std::string>().empty()) {
        TrainState state;
        load_checkpoint(c.at("checkpoint").get<std::string>(), net, state);
    }
    const NetworkConfig& nc = net.config();
    const BEVGrid& grid = nc.grid;
    const FrameRecord& prev = scene.frames[frame - 1];
    const FrameRecord& cur = scene.frames[frame];

    nn::NoGradGuard guard;
    FrameInput prev_in;
    prev_in.features = &prev.features;
    prev_in.dt = scene.spec.dt;
    const nn::Tensor prev_bev = net.encode(prev_in).value();
    FrameInput cur_in;
    cur_in.features = &cur.features;
    cur_in.dt = scene.spec.dt;
    const nn::Tensor cur_bev = net.encode(cur_in).value();

    const BEVFeature prev_f = to_channel_major(prev_bev, grid, prev.timestamp);
    const BEVFeature before = to_channel_major(cur_bev, grid, cur.timestamp);
    const ObjectMotionRecord motion = motion_record(prev.objects, grid);
    const PlanarPose pose = cur.prev_to_cur;
    const double dt = scene.spec.dt;
    const BEVFeature ego = fuse_ego(prev_f, before, pose);
    const BEVFeature fused = fuse_object(prev_f, ego, motion, pose, dt, nc.max_aligned_objects);

    FrameInput full;
    full.features = &cur.features;
    full.prev_bev = &prev_bev;
    full.prev_to_cur = pose;
    full.dt = dt;
    full.motion = motion;
    const NetworkOutput out = net.forward(full);

    // Self-checks of the dumps against the fusion rules.
    const AlignmentMapping mapping = ego_overlap_mapping(grid, grid, pose);
    std::vector<char> mapped(grid.cell_count(), 0);
    double ego_residual = 0.0;
    std::size_t doubled = 0;
    for (const auto& p : mapping.pairs) {
        mapped[p.target] = 1;
        bool twice = true;
        for (std::size_t k = 0; k < ego.channels(); ++k) {
            const double e = ego.at(k, p.target), b = before.at(k, p.target);
            ego_residual = std::max(ego_residual, std::abs(e - (b + prev_f.at(k, p.source))));
            twice = twice && e == 2.0 * b;
        }
        doubled += twice ? 1 : 0;
    }
    for (std::size_t i = 0; i < grid.cell_count(); ++i)
        if (!mapped[i])
            for (std::size_t k = 0; k < ego.channels(); ++k)
                ego_residual = std::max(ego_residual, std::abs(ego.at(k, i) - before.at(k, i)));

    json objects = json::array();
    bool objects_exact = true;
    for (const auto& p : predict_object_targets(motion, pose, dt, grid, nc.max_aligned_objects)) {
        bool exact = true;
        for (std::size_t k = 0; k < fused.channels(); ++k) exact = exact && fused.at(k, p.target) == prev_f.at(k, p.source);
        objects_exact = objects_exact && exact;
        const std::size_t w = static_cast<std::size_t>(grid.cols());
        objects.push_back({{"source", p.source}, {"target", p.target}, {"source_cell", {p.source / w, p.source % w}},
                           {"target_cell", {p.target / w, p.target % w}}, {"exact", exact}});
    }

    const std::size_t rows = static_cast<std::size_t>(grid.rows()), cols = static_cast<std::size_t>(grid.cols());
    const nn::Shape shape{nc.embed, rows, cols};
    write_ocbt(ctx.out / "prev.ocbt", nn::Tensor(shape, {prev_f.flat().begin(), prev_f.flat().end()}));
    write_ocbt(ctx.out / "before.ocbt", nn::Tensor(shape, {before.flat().begin(), before.flat().end()}));
    write_ocbt(ctx.out / "ego.ocbt", nn::Tensor(shape, {ego.flat().begin(), ego.flat().end()}));
    write_ocbt(ctx.out / "fused.ocbt", nn::Tensor(shape, {fused.flat().begin(), fused.flat().end()}));
    const std::vector<double>& heat = out.heatmap.value().storage();
    write_ocbt(ctx.out / "heatmap.ocbt", nn::Tensor({rows, cols}, heat));

    const std::vector<std::pair<const char*, std::vector<double>>> norms = {
        {"prev", cell_norms(prev_f)}, {"before", cell_norms(before)}, {"ego", cell_norms(ego)},
        {"fused", cell_norms(fused)}};
    double scale = 0.0;
    for (const auto& [name, n] : norms) scale = std::max(scale, *std::max_element(n.begin(), n.end()));
    for (const auto& [name, n] : norms) {
        std::vector<double> unit(n.size());
        for (std::size_t i = 0; i < n.size(); ++i) unit[i] = scale > 0.0 ? n[i] / scale : 0.0;
        write_pgm(ctx.out / (std::string(name) + "_norm.pgm"), image_from_unit(unit, rows, cols));
    }
    write_pgm(ctx.out / "heatmap.pgm", image_from_unit(heat, rows, cols));

    const json summary = {{"frame", frame},
                          {"grid", {grid.rows(), grid.cols(), grid.x_min(), grid.x_max(), grid.y_min(), grid.y_max()}},
                          {"norm_scale", scale},
                          {"overlap_cells", mapping.size()},
                          {"doubled_cells", doubled},
                          {"ego_residual", ego_residual},
                          {"objects", objects},
                          {"peaks", out.peaks.size()}};
    write_json(ctx.out / "demo_align.json", summary);
    std::cout << "overlap cells " << mapping.size() << ", aligned objects " << objects.size() << "\n";
    if (ego_residual != 0.0) throw ValidationFailure("ego fusion dump differs from aligned prev + cur");
    if (!objects_exact) throw ValidationFailure("an object feature was not transported bit-exactly");
}

void cmd_gradcheck(const RunContext& ctx) {
    const json& c = ctx.config;
    GradCheckOptions opts;
    opts.tolerance = c.at("tolerance").get<double>();
    opts.seed = ctx.seed;
    const std::size_t trials = c.at("trials").get<std::size_t>();
    json rows = json::array();
    std::vector<std::string> failures;
    std::cout << std::left << std::setw(28) << "op" << std::setw(8) << "trials" << std::setw(9) << "checked"
              << std::setw(9) << "skipped" << std::setw(14) << "max_rel_err" << "result\n";
    for (const auto& op : c.at("ops").get<std::vector<std::string>>()) {
        const GradCheckReport r = run_gradcheck(op, trials, opts);
        std::cout << std::left << std::setw(28) << op << std::setw(8) << r.instances << std::setw(9) << r.checked
                  << std::setw(9) << r.skipped << std::setw(14) << std::setprecision(3) << r.max_rel_error
                  << (r.pass ? "PASS" : "FAIL  worst " + r.worst) << "\n";
        rows.push_back({{"op", op},
                        {"instances", r.instances},
                        {"checked", r.checked},
                        {"skipped", r.skipped},
                        {"max_rel_error", r.max_rel_error},
                        {"worst", r.worst},
                        {"pass", r.pass}});
        if (!r.pass) {
            std::ostringstream m;
            m << op << ": max relative error " << r.max_rel_error << " at " << r.worst;
            failures.push_back(m.str());
        }
    }
    write_json(ctx.out / "gradcheck.json", {{"tolerance", opts.tolerance}, {"trials", trials}, {"ops", rows}});
    if (!failures.empty()) {
        std::string msg = "gradient check failed: ";
        for (std::size_t i = 0; i < failures.size(); ++i) msg += (i ? "; " : "") + failures[i];
        throw ValidationFailure(msg);
    }
}

double median_ms(const std::function<void()>& fn, std::size_t warmup, std::size_t repeats) {
    for (std::size_t i = 0; i < warmup; ++i) fn();
    std::vector<double> t;
    for (std::size_t i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(t.begin(), t.end());
    return t.size() % 2 ? t[t.size() / 2] : 0.5 * (t[t.size() / 2 - 1] + t[t.size() / 2]);
}

void cmd_bench(const RunContext& ctx) {
    const json& c = ctx.config;
    const std::size_t warmup = c.at("warmup").get<std::size_t>();
    const std::size_t repeats = c.at("repeats").get<std::size_t>();
    const std::size_t ch = c.at("channels").get<std::size_t>();
    std::vector<kernels::Isa> isas{kernels::Isa::Scalar};
    if (kernels::cpu_supports(kernels::Isa::Avx2)) isas.push_back(kernels::Isa::Avx2);

    std::mt19937_64 rng(ctx.seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    json rows = json::array();
    std::cout << std::left << std::setw(24) << "op" << std::setw(7) << "grid" << std::setw(8) << "isa"
              << "median_ms\n";
    for (const int n : c.at("grids").get<std::vector<int>>()) {
        const BEVGrid grid = BEVGrid::square(n, 0.5 * n);
        const std::size_t cells = grid.cell_count();
        const PlanarPose pose(0.1, 1.3, -0.7);
        std::vector<double> a(ch * cells), b(ch * cells);
        for (auto& x : a) x = U(rng);
        for (auto& x : b) x = U(rng);
        const BEVFeature prev(grid, ch, a), cur(grid, ch, b);

        nn::ParameterStore store;
        nn::DeformableAttention attn(store, "bench", {ch, ch, 4, 1, 2}, ctx.seed);
        const nn::Var map = nn::Var::constant(nn::Tensor({cells, ch}, b));
        const nn::Var cm_map = nn::Var::constant(nn::Tensor({ch, static_cast<std::size_t>(n), static_cast<std::size_t>(n)}, b));
        std::vector<nn::Var> locs;
        std::vector<double> ref(2 * cells);
        for (std::size_t i = 0; i < cells; ++i) {
            const double u = (static_cast<double>(i % n) + 0.5) / n, v = (static_cast<double>(i / n) + 0.5) / n;
            ref[2 * i] = u;
            ref[2 * i + 1] = v;
        }
        const std::size_t sample_count = std::min<std::size_t>(cells, 4096);
        for (std::size_t i = 0; i < sample_count; ++i)
            locs.push_back(nn::Var::constant(nn::Tensor({2}, {ref[2 * i] + 0.13 / n, ref[2 * i + 1] - 0.21 / n})));
        const nn::Var refs = nn::Var::constant(nn::Tensor({cells, 2}, ref));
        nn::SamplingLayout layout;
        layout.groups = 1;
        for (std::size_t i = 0; i < cells; ++i) {
            const nn::SamplingSlot slot{0, 0, static_cast<std::uint32_t>(i)};
            layout.add_query(std::span<const nn::SamplingSlot>(&slot, 1));
        }
        const nn::MapSize size{static_cast<std::size_t>(n), static_cast<std::size_t>(n)};

        const std::vector<std::pair<std::string, std::function<void()>>> ops = {
            {"ego_overlap_mapping", [&] { (void)ego_overlap_mapping(grid, grid, pose); }},
            {"fuse_ego", [&] { (void)fuse_ego(prev, cur, pose); }},
            {"bilinear_sample",
             [&] {
                 nn::NoGradGuard g;
                 for (const auto& l : locs) (void)nn::bilinear_sample(cm_map, l);
             }},
            {"deformable_attention",
             [&] {
                 nn::NoGradGuard g;
                 (void)attn.forward(store, map, {map}, std::span<const nn::MapSize>(&size, 1), refs, layout);
             }},
        };
        for (const auto& [name, fn] : ops) {
            for (const auto isa : isas) {
                kernels::ScopedIsa scope(isa);
                const double ms = median_ms(fn, warmup, repeats);
                const std::string isa_name(kernels::active().name);
                std::cout << std::left << std::setw(24) << name << std::setw(7) << n << std::setw(8) << isa_name
                          << std::fixed << std::setprecision(3) << ms << std::defaultfloat << "\n";
                json row = {{"op", name}, {"grid", n}, {"isa", isa_name}, {"median_ms", ms}};
                if (name == "bilinear_sample") row["samples"] = sample_count;
                rows.push_back(row);
            }
        }
    }
    write_json(ctx.out / "bench.json",
               {{"channels", ch}, {"warmup", warmup}, {"repeats", repeats}, {"results", rows}});
}

void cmd_ingest(const RunContext& ctx) {
    const json& c = ctx.config;
    const std::string input = c.at("input").get<std::string>();
    if (input.empty()) throw Error("ingest: --input is required");
    const Metadata meta = parse_metadata(read_file(input));
    QueueOptions opts;
    opts.queue_length = c.at("queue_length").get<std::size_t>();
    opts.rotate_to_first = c.at("rotate_to_first").get<bool>();
    const SequenceQueue q = build_sequence_queue(meta.poses, opts, meta.calibrations);
    write_json(ctx.out / "queue.json", queue_to_scene_json(q));
    std::vector<std::string> warnings = meta.warnings;
    warnings.insert(warnings.end(), q.warnings.begin(), q.warnings.end());
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    write_json(ctx.out / "ingest.json",
               {{"samples", q.samples.size()}, {"short_queue", q.short_queue}, {"warnings", warnings}});
    std::cout << "queue of " << q.samples.size() << " samples written to " << (ctx.out / "queue.json").string()
              << "\n";
}

}  // namespace

// ---------------------------------------------------------------------------

json default_config(const std::string& command) {
    if (command == "simulate") return {{"scenes", 4}, {"prefix", "scene"}, {"spec", spec_to_json(SceneSpec{})}};
    if (command == "train")
        return {{"scenes", ""}, {"eval_scenes", ""}, {"resume", ""}, {"train", train_config_to_json(TrainConfig{})}};
    if (command == "eval") {
        const EvalConfig e;
        return {{"scenes", ""},
                {"checkpoint", ""},
                {"train_config", ""},
                {"predictor", "model"},
                {"thresholds", e.thresholds},
                {"error_threshold", e.error_threshold},
                {"fast_speed", e.fast_speed}};
    }
    if (command == "demo-align")
        return {{"scene", ""}, {"spec", spec_to_json(SceneSpec{})}, {"frame", 1}, {"checkpoint", ""}, {"train_config", ""}};
    if (command == "gradcheck") return {{"ops", gradcheck_ops()}, {"trials", 20}, {"tolerance", 1e-6}};
    if (command == "bench") return {{"grids", {64, 128, 300}}, {"warmup", 2}, {"repeats", 7}, {"channels", 32}};
    if (command == "ingest") return {{"input", ""}, {"queue_length", 4}, {"rotate_to_first", true}};
    throw Error("unknown command '" + command + "'");
}

json resolve_config(const std::string& command, const json& cfg_in, std::uint64_t seed) {
    json cfg = default_config(command);
    if (!cfg_in.is_object()) throw Error("configuration must be a JSON object");
    for (const auto& [key, value] : cfg_in.items()) {
        if (!cfg.contains(key)) throw Error("unknown configuration key '" + key + "' for " + command);
        cfg[key] = value;
    }
    try {
        if (command == "simulate") {
            const SceneSpec s = spec_from_json(cfg["spec"]);
            s.validate();
            cfg["spec"] = spec_to_json(s);
            if (cfg["scenes"].get<long long>() < 1) throw Error("scenes must be at least 1");
        } else if (command == "train") {
            TrainConfig t = train_config_from_json(cfg["train"]);
            t.seed = seed;
            t.validate();
            t.network.validate();
            cfg["train"] = train_config_to_json(t);
            if (cfg["scenes"].get<std::string>().empty()) throw Error("train: --scenes is required");
        } else if (command == "eval") {
            const std::string p = cfg["predictor"].get<std::string>();
            if (p != "model" && p != "oracle" && p != "empty") throw Error("predictor must be model, oracle or empty");
            if (cfg["scenes"].get<std::string>().empty()) throw Error("eval: --scenes is required");
            if (p == "model" && cfg["checkpoint"].get<std::string>().empty())
                throw Error("eval: --checkpoint is required with the model predictor");
            if (cfg["train_config"].get<std::string>().empty())
                cfg["train_config"] = default_train_config(cfg["checkpoint"].get<std::string>()).string();
        } else if (command == "demo-align") {
            const SceneSpec s = spec_from_json(cfg["spec"]);
            s.validate();
            cfg["spec"] = spec_to_json(s);
            if (cfg["frame"].get<long long>() < 1) throw Error("frame must be at least 1");
            if (cfg["train_config"].get<std::string>().empty())
                cfg["train_config"] = default_train_config(cfg["checkpoint"].get<std::string>()).string();
        } else if (command == "gradcheck") {
            const auto known = gradcheck_ops();
            for (const auto& op : cfg["ops"].get<std::vector<std::string>>())
                if (std::find(known.begin(), known.end(), op) == known.end())
                    throw Error("gradcheck: unknown op '" + op + "'");
            if (cfg["trials"].get<long long>() < 1) throw Error("trials must be at least 1");
            if (!(cfg["tolerance"].get<double>() > 0.0)) throw Error("tolerance must be positive");
        } else if (command == "bench") {
            for (int n : cfg["grids"].get<std::vector<int>>())
                if (n < 1) throw Error("bench: grid sizes must be positive");
            if (cfg["repeats"].get<long long>() < 1) throw Error("repeats must be at least 1");
            if (cfg["channels"].get<long long>() < 4 || cfg["channels"].get<long long>() % 4 != 0)
                throw Error("channels must be a positive multiple of 4");
        } else if (command == "ingest") {
            if (cfg["queue_length"].get<long long>() < 2) throw Error("queue_length must be at least 2");
        }
    } catch (const json::exception& e) {
        throw Error(command + " configuration: " + e.what());
    }
    return cfg;
}

json manifest_json(const RunContext& ctx) {
    return {{"command", ctx.command},
            {"config", ctx.config},
            {"seed", ctx.seed},
            {"tool_version", kToolVersion},
            {"out", ctx.out.string()}};
}

void write_manifest(const RunContext& ctx) {
    std::error_code ec;
    fs::create_directories(ctx.out, ec);
    if (ec || !fs::is_directory(ctx.out))
        throw Error("cannot create output directory '" + ctx.out.string() + "'");
    write_json(ctx.out / "manifest.json", manifest_json(ctx));
}

void run_command(const RunContext& ctx) {
    const std::string& c = ctx.command;
    if (c == "simulate") cmd_simulate(ctx);
    else if (c == "train") cmd_train(ctx);
    else if (c == "eval") cmd_eval(ctx);
    else if (c == "demo-align") cmd_demo_align(ctx);
    else if (c == "gradcheck") cmd_gradcheck(ctx);
    else if (c == "bench") cmd_bench(ctx);
    else if (c == "ingest") cmd_ingest(ctx);
    else throw Error("unknown command '" + c + "'");
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!failure) failure = std::current_exception();
                    next = n;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace ocbev::cli
