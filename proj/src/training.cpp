#include "ocbev/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "ocbev/error.hpp"
#include "ocbev/ops.hpp"

namespace ocbev {

using nlohmann::json;

namespace {

std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

double learning_rate(const ScheduleConfig& s, std::size_t step, std::size_t total) {
    const double min_lr = s.lr * s.min_lr_ratio;
    if (step < s.warmup_steps) {
        const double frac = static_cast<double>(step) / static_cast<double>(s.warmup_steps);
        return s.lr * (s.warmup_ratio + (1.0 - s.warmup_ratio) * frac);
    }
    if (total <= s.warmup_steps) return s.lr;
    const double progress = std::min(1.0, static_cast<double>(step - s.warmup_steps) /
                                              static_cast<double>(total - s.warmup_steps));
    return min_lr + (s.lr - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(nn::ParameterStore& store, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& name : store.names()) {
        nn::Var& p = store.get(name);
        const auto g = p.grad();
        auto& m = m_[name];
        auto& v = v_[name];
        if (m.empty()) {
            m.assign(p.size(), 0.0);
            v.assign(p.size(), 0.0);
        }
        auto w = p.mutable_value().data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g.empty() ? 0.0 : g[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = m[i] / bc1, vhat = v[i] / bc2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
        }
    }
}

std::vector<NamedTensor> AdamW::state() const {
    std::vector<NamedTensor> out;
    out.push_back({"adam.step", nn::Tensor({1}, {static_cast<double>(t_)})});
    for (const auto& [name, m] : m_) out.push_back({"adam.m/" + name, nn::Tensor({m.size()}, m)});
    for (const auto& [name, v] : v_) out.push_back({"adam.v/" + name, nn::Tensor({v.size()}, v)});
    return out;
}

void AdamW::load_state(const std::vector<NamedTensor>& tensors) {
    m_.clear();
    v_.clear();
    t_ = 0;
    for (const auto& [name, t] : tensors) {
        if (name == "adam.step") t_ = static_cast<std::size_t>(t[0]);
        else if (name.rfind("adam.m/", 0) == 0) m_[name.substr(7)] = t.storage();
        else if (name.rfind("adam.v/", 0) == 0) v_[name.substr(7)] = t.storage();
    }
}

double grad_norm(const nn::ParameterStore& store) {
    double s = 0.0;
    for (const auto& name : store.names()) {
        for (double g : store.get(name).grad()) s += g * g;
    }
    return std::sqrt(s);
}

double clip_grad_norm(nn::ParameterStore& store, double max_norm) {
    const double total = grad_norm(store);
    if (total > max_norm) {
        const double scale = max_norm / (total + 1e-6);
        for (const auto& name : store.names()) {
            auto& grad = store.get(name).node()->grad;
            for (double& g : grad) g *= scale;
        }
    }
    return total;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(schedule.lr >= 0.0) || !std::isfinite(schedule.lr)) throw Error("TrainConfig: learning rate must be >= 0");
    if (iterations == 0) throw Error("TrainConfig: iterations must be positive");
    if (stop_at > iterations) throw Error("TrainConfig: stop_at exceeds iterations");
    if (schedule.warmup_steps == 0) throw Error("TrainConfig: warmup steps must be positive");
    if (!(clip > 0.0)) throw Error("TrainConfig: clip must be positive");
    if (!(velocity_code_weight >= 0.0)) throw Error("TrainConfig: velocity code weight must be >= 0");
    network.validate();
}

std::string flags_to_string(const ModuleFlags& f) {
    auto on = [](bool b) { return b ? "on" : "off"; };
    return std::string("ego_fusion=") + on(f.ego_fusion) + ",object_fusion=" + on(f.object_fusion) +
           ",local_sampling=" + on(f.local_sampling) + ",adaptive_offset=" + on(f.adaptive_offset) +
           ",query_enhancement=" + on(f.query_enhancement);
}

ModuleFlags parse_ablation(const std::string& spec, ModuleFlags flags) {
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw Error("ablation '" + item + "': expected name=on|off");
        const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
        bool on;
        if (val == "on" || val == "true" || val == "1") on = true;
        else if (val == "off" || val == "false" || val == "0") on = false;
        else throw Error("ablation '" + item + "': value must be on or off");
        if (key == "all") flags = ModuleFlags::all(on);
        else if (key == "ego_fusion") flags.ego_fusion = on;
        else if (key == "object_fusion") flags.object_fusion = on;
        else if (key == "local_sampling") flags.local_sampling = on;
        else if (key == "adaptive_offset") flags.adaptive_offset = on;
        else if (key == "query_enhancement") flags.query_enhancement = on;
        else throw Error("ablation: unknown module '" + key + "'");
    }
    return flags;
}

json train_config_to_json(const TrainConfig& c) {
    const NetworkConfig& n = c.network;
    const BEVGrid& g = n.grid;
    return {{"seed", c.seed},
            {"iterations", c.iterations},
            {"lr", c.schedule.lr},
            {"warmup_steps", c.schedule.warmup_steps},
            {"warmup_ratio", c.schedule.warmup_ratio},
            {"min_lr_ratio", c.schedule.min_lr_ratio},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"eps", c.optimizer.eps},
            {"weight_decay", c.optimizer.weight_decay},
            {"clip", c.clip},
            {"velocity_code_weight", c.velocity_code_weight},
            {"loss_weights", {c.loss_weights.centerness, c.loss_weights.classification, c.loss_weights.box}},
            {"velocity_source", c.velocity_source == VelocitySource::Oracle ? "oracle" : "predicted"},
            {"eval_every", c.eval_every},
            {"stop_at", c.stop_at},
            {"eval_top_k", c.eval_top_k},
            {"motion_score", c.motion_score},
            {"ablate", flags_to_string(n.flags)},
            {"network",
             {{"grid", {g.rows(), g.cols(), g.x_min(), g.x_max(), g.y_min(), g.y_max()}},
              {"embed", n.embed},
              {"heads", n.heads},
              {"encoder_layers", n.encoder_layers},
              {"decoder_layers", n.decoder_layers},
              {"ffn_hidden", n.ffn_hidden},
              {"dropout", n.dropout},
              {"points", n.points},
              {"queries", n.queries},
              {"classes", n.classes},
              {"image_channels", n.image_channels},
              {"pillar_points", n.pillar_points},
              {"global_range", {n.global_range.z_min, n.global_range.z_max}},
              {"local_range", {n.local_range.z_min, n.local_range.z_max}},
              {"max_height_offset", n.max_height_offset},
              {"max_aligned_objects", n.max_aligned_objects},
              {"replace_count", n.enhancement.replace_count},
              {"peak_window", n.enhancement.window},
              {"peak_min_score", n.enhancement.min_score},
              {"content_from_bev", n.enhancement.content_from_bev}}}};
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
    TrainConfig c = base;
    auto opt = [&](const json& o, const char* key, auto& out) {
        if (o.contains(key)) out = o.at(key).get<std::remove_reference_t<decltype(out)>>();
    };
    try {
        opt(j, "seed", c.seed);
        opt(j, "iterations", c.iterations);
        opt(j, "lr", c.schedule.lr);
        opt(j, "warmup_steps", c.schedule.warmup_steps);
        opt(j, "warmup_ratio", c.schedule.warmup_ratio);
        opt(j, "min_lr_ratio", c.schedule.min_lr_ratio);
        opt(j, "beta1", c.optimizer.beta1);
        opt(j, "beta2", c.optimizer.beta2);
        opt(j, "eps", c.optimizer.eps);
        opt(j, "weight_decay", c.optimizer.weight_decay);
        opt(j, "clip", c.clip);
        opt(j, "velocity_code_weight", c.velocity_code_weight);
        if (j.contains("loss_weights")) {
            const json& w = j.at("loss_weights");
            c.loss_weights = {w.at(0).get<double>(), w.at(1).get<double>(), w.at(2).get<double>()};
        }
        if (j.contains("velocity_source")) {
            const auto v = j.at("velocity_source").get<std::string>();
            if (v == "oracle") c.velocity_source = VelocitySource::Oracle;
            else if (v == "predicted") c.velocity_source = VelocitySource::Predicted;
            else throw ParseError("velocity_source must be 'oracle' or 'predicted'");
        }
        opt(j, "eval_every", c.eval_every);
        opt(j, "stop_at", c.stop_at);
        opt(j, "eval_top_k", c.eval_top_k);
        opt(j, "motion_score", c.motion_score);
        if (j.contains("ablate")) c.network.flags = parse_ablation(j.at("ablate").get<std::string>(), c.network.flags);
        if (j.contains("network")) {
            const json& n = j.at("network");
            NetworkConfig& nc = c.network;
            if (n.contains("grid")) {
                const json& g = n.at("grid");
                nc.grid = BEVGrid(g.at(0).get<int>(), g.at(1).get<int>(), g.at(2).get<double>(), g.at(3).get<double>(),
                                  g.at(4).get<double>(), g.at(5).get<double>());
            }
            opt(n, "embed", nc.embed);
            opt(n, "heads", nc.heads);
            opt(n, "encoder_layers", nc.encoder_layers);
            opt(n, "decoder_layers", nc.decoder_layers);
            opt(n, "ffn_hidden", nc.ffn_hidden);
            opt(n, "dropout", nc.dropout);
            opt(n, "points", nc.points);
            opt(n, "queries", nc.queries);
            opt(n, "classes", nc.classes);
            opt(n, "image_channels", nc.image_channels);
            opt(n, "pillar_points", nc.pillar_points);
            if (n.contains("global_range")) {
                nc.global_range = {n.at("global_range").at(0).get<double>(), n.at("global_range").at(1).get<double>()};
            }
            if (n.contains("local_range")) {
                nc.local_range = {n.at("local_range").at(0).get<double>(), n.at("local_range").at(1).get<double>()};
            }
            opt(n, "max_height_offset", nc.max_height_offset);
            opt(n, "max_aligned_objects", nc.max_aligned_objects);
            opt(n, "replace_count", nc.enhancement.replace_count);
            opt(n, "peak_window", nc.enhancement.window);
            opt(n, "peak_min_score", nc.enhancement.min_score);
            opt(n, "content_from_bev", nc.enhancement.content_from_bev);
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------

std::vector<SampleRef> enumerate_samples(const std::vector<Scene>& scenes) {
    std::vector<SampleRef> out;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        for (std::size_t f = 1; f < scenes[s].frames.size(); ++f) out.push_back({s, f});
    }
    return out;
}

std::size_t sample_index(std::uint64_t seed, std::size_t iteration, std::size_t count) {
    if (count == 0) throw Error("sample_index: no samples");
    return static_cast<std::size_t>(splitmix(seed * 0x100000001b3ULL + iteration) % count);
}

TemporalContext temporal_context(const OCBEVNet& net, const Scene& scene, std::size_t frame, const TrainConfig& cfg) {
    if (frame == 0 || frame >= scene.frames.size()) throw Error("sample frame must lie in [1, frames)");
    const FrameRecord& prev = scene.frames[frame - 1];
    const BEVGrid& grid = net.config().grid;
    TemporalContext ctx;
    nn::NoGradGuard guard;
    FrameInput in;
    in.features = &prev.features;
    in.dt = scene.spec.dt;
    if (cfg.velocity_source == VelocitySource::Predicted && net.config().flags.object_fusion) {
        const NetworkOutput out = net.forward(in);
        ctx.prev_bev = out.bev.value();
        std::vector<Vec2> pos, vel;
        for (const auto& b : net.detections(out)) {
            if (b.score < cfg.motion_score) continue;
            pos.push_back(b.center());
            vel.push_back(b.velocity());
        }
        ctx.motion = ObjectMotionRecord::from_detections(grid, pos, vel);
    } else {
        ctx.prev_bev = net.encode(in).value();
        ctx.motion = motion_record(prev.objects, grid);
    }
    return ctx;
}

nn::Var sample_objective(const OCBEVNet& net, const Scene& scene, std::size_t frame, const TemporalContext& ctx,
                         const TrainConfig& cfg, std::uint64_t dropout_seed, StepResult* info) {
    const FrameRecord& cur = scene.frames.at(frame);
    const NetworkConfig& nc = net.config();

    FrameInput in;
    in.features = &cur.features;
    in.prev_bev = &ctx.prev_bev;
    in.prev_to_cur = cur.prev_to_cur;
    in.dt = scene.spec.dt;
    in.motion = ctx.motion;
    in.dropout_seed = dropout_seed;
    const NetworkOutput out = net.forward(in);

    const std::vector<DetectionBox> gts = truth_boxes(cur.objects, nc.grid);
    std::vector<int> gt_class;
    std::vector<std::vector<double>> gt_codes;
    std::vector<Vec2> centers;
    for (const auto& b : gts) {
        gt_class.push_back(b.cls);
        const BoxCode code = encode_box(b, nc.grid);
        gt_codes.emplace_back(code.begin(), code.end());
        centers.push_back(b.center());
    }
    const std::size_t N = out.cls_logits.shape()[0];
    if (gts.size() > N) throw Error("train: more objects than decoder queries");

    nn::Tensor probs = out.cls_logits.value();
    for (auto& v : probs.data()) v = 1.0 / (1.0 + std::exp(-v));
    const BoxCode code_w = box_code_weights(nc.grid, cfg.velocity_code_weight);
    const auto cost = matching_cost(probs, out.box_code.value(), gt_class, gt_codes, cfg.loss_weights,
                                    LossDefaults::kFocalGamma, LossDefaults::kFocalAlpha, code_w);
    const Assignment assign = hungarian_assign(cost, N, gts.size());

    std::vector<int> target(N, -1);
    std::vector<std::size_t> rows;
    std::vector<std::vector<double>> targets;
    for (const auto& [q, g] : assign.pairs) {
        target[q] = gt_class[g];
        rows.push_back(q);
        targets.push_back(gt_codes[g]);
    }
    nn::Var l_cls = focal_loss(out.cls_logits, target);
    nn::Var l_box = l1_box_loss(out.box_code, rows, targets, code_w);
    nn::Var l_c;
    if (nc.flags.query_enhancement) l_c = bce_loss(out.heatmap, centerness_target(nc.grid, centers).values);
    nn::Var total = weighted_total(l_c, l_cls, l_box, cfg.loss_weights);
    if (info) {
        info->loss = total_loss(l_c.defined() ? l_c.value()[0] : 0.0, l_cls.value()[0], l_box.value()[0],
                                cfg.loss_weights);
        info->matches = assign.pairs.size();
    }
    return total;
}

namespace {

StepResult run_sample(const OCBEVNet& net, const Scene& scene, std::size_t frame, const TrainConfig& cfg,
                      std::uint64_t dropout_seed, bool with_grad) {
    const TemporalContext ctx = temporal_context(net, scene, frame, cfg);
    std::optional<nn::NoGradGuard> guard;
    if (!with_grad) guard.emplace();
    StepResult r;
    nn::Var total = sample_objective(net, scene, frame, ctx, cfg, dropout_seed, &r);
    if (with_grad) nn::backward(total);
    return r;
}

}  // namespace

StepResult train_step(const OCBEVNet& net, const Scene& scene, std::size_t frame, const TrainConfig& cfg,
                      std::uint64_t dropout_seed) {
    return run_sample(net, scene, frame, cfg, dropout_seed, true);
}

StepResult sample_loss(const OCBEVNet& net, const Scene& scene, std::size_t frame, const TrainConfig& cfg) {
    return run_sample(net, scene, frame, cfg, 0, false);
}

MetricReport evaluate_model(const OCBEVNet& net, const std::vector<Scene>& scenes, const TrainConfig& cfg,
                            const EvalConfig& eval) {
    nn::NoGradGuard guard;
    std::vector<std::vector<DetectionBox>> preds, gts;
    for (const auto& scene : scenes) {
        for (std::size_t f = 1; f < scene.frames.size(); ++f) {
            const TemporalContext ctx = temporal_context(net, scene, f, cfg);
            const FrameRecord& cur = scene.frames[f];
            FrameInput in;
            in.features = &cur.features;
            in.prev_bev = &ctx.prev_bev;
            in.prev_to_cur = cur.prev_to_cur;
            in.dt = scene.spec.dt;
            in.motion = ctx.motion;
            std::vector<DetectionBox> dets = net.detections(net.forward(in));
            std::stable_sort(dets.begin(), dets.end(),
                             [](const DetectionBox& a, const DetectionBox& b) { return a.score > b.score; });
            if (dets.size() > cfg.eval_top_k) dets.resize(cfg.eval_top_k);
            preds.push_back(std::move(dets));
            gts.push_back(truth_boxes(cur.objects, net.config().grid));
        }
    }
    return evaluate(preds, gts, eval);
}

// ---------------------------------------------------------------------------

json log_record_to_json(const LogRecord& r) {
    json j = {{"iter", r.iteration},
              {"lr", r.lr},
              {"loss_centerness", r.loss.centerness},
              {"loss_cls", r.loss.classification},
              {"loss_bbox", r.loss.box},
              {"loss_total", r.loss.total},
              {"grad_norm", r.grad_norm},
              {"matches", r.matches}};
    if (r.eval) j["eval"] = report_to_json(*r.eval);
    return j;
}

std::optional<std::size_t> TrainLog::iterations_to(double target) const {
    for (const auto& r : records) {
        if (r.eval && r.eval->mean_ap >= target) return r.iteration + 1;
    }
    return std::nullopt;
}

std::string TrainLog::to_jsonl() const {
    std::string out;
    for (const auto& r : records) out += log_record_to_json(r).dump() + "\n";
    return out;
}

TrainLog train(OCBEVNet& net, TrainState& state, const std::vector<Scene>& scenes,
               const std::vector<Scene>& eval_scenes, const TrainConfig& cfg, const TrainCallbacks& cb) {
    cfg.validate();
    if (scenes.empty()) throw Error("train: no training scenes");
    const std::vector<SampleRef> samples = enumerate_samples(scenes);
    if (samples.empty()) throw Error("train: scenes need at least two frames");
    state.optimizer.set_config(cfg.optimizer);

    TrainLog log;
    nn::ParameterStore& params = net.params();
    const std::size_t end = cfg.stop_at > 0 ? cfg.stop_at : cfg.iterations;
    for (std::size_t it = state.next_iteration; it < end; ++it) {
        const SampleRef s = samples[sample_index(cfg.seed, it, samples.size())];
        params.zero_grad();
        const StepResult r = train_step(net, scenes[s.scene], s.frame, cfg, splitmix(cfg.seed ^ (it * 0x9e37ULL)));
        if (!std::isfinite(r.loss.total)) {
            std::ostringstream msg;
            msg << "non-finite loss at iteration " << it << " (scene " << s.scene << ", frame " << s.frame
                << "): centerness=" << r.loss.centerness << " cls=" << r.loss.classification
                << " bbox=" << r.loss.box;
            throw Error(msg.str());
        }
        LogRecord rec;
        rec.iteration = it;
        rec.loss = r.loss;
        rec.matches = r.matches;
        rec.grad_norm = clip_grad_norm(params, cfg.clip);
        rec.lr = learning_rate(cfg.schedule, it, cfg.iterations);
        state.optimizer.step(params, rec.lr);
        state.next_iteration = it + 1;
        const bool last = it + 1 == cfg.iterations;
        if (!eval_scenes.empty() && ((cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0) || last)) {
            rec.eval = evaluate_model(net, eval_scenes, cfg);
        }
        log.records.push_back(rec);
        if (cb.on_record) cb.on_record(log.records.back());
    }
    return log;
}

std::vector<NamedTensor> checkpoint_tensors(const OCBEVNet& net, const TrainState& state) {
    std::vector<NamedTensor> out;
    for (const auto& name : net.params().names()) out.push_back({name, net.params().get(name).value()});
    for (auto& t : state.optimizer.state()) out.push_back(std::move(t));
    out.push_back({"train.next_iteration", nn::Tensor({1}, {static_cast<double>(state.next_iteration)})});
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const OCBEVNet& net, const TrainState& state) {
    write_ocbw(path, checkpoint_tensors(net, state));
}

void load_checkpoint(const std::filesystem::path& path, OCBEVNet& net, TrainState& state) {
    const auto tensors = read_ocbw(path);
    std::vector<NamedTensor> opt;
    std::size_t loaded = 0;
    for (const auto& [name, t] : tensors) {
        if (name.rfind("adam.", 0) == 0) {
            opt.push_back({name, t});
        } else if (name == "train.next_iteration") {
            state.next_iteration = static_cast<std::size_t>(t[0]);
        } else {
            if (!net.params().contains(name)) {
                throw Error("checkpoint '" + path.string() + "': unknown parameter '" + name + "'");
            }
            net.params().assign(name, t);
            ++loaded;
        }
    }
    if (loaded != net.params().size()) {
        throw Error("checkpoint '" + path.string() + "': holds " + std::to_string(loaded) + " of " +
                    std::to_string(net.params().size()) + " parameters");
    }
    if (!opt.empty()) state.optimizer.load_state(opt);
}

// ---------------------------------------------------------------------------

std::string AblationResult::table() const {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-24s %-17s %-8s %-8s %-8s %-10s %s\n", "config", "mAP (mean+-sd)", "ATE", "AOE",
                  "AVE", "AVE>5m/s", "flags");
    out << buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-24s %.4f +- %.4f  %-8.4f %-8.4f %-8.4f %-10.4f %s\n", r.label.c_str(),
                      r.mean_map, r.spread_map, r.mean_ate, r.mean_aoe, r.mean_ave, r.mean_fast_ave,
                      flags_to_string(r.flags).c_str());
        out << buf;
    }
    return out.str();
}

AblationResult run_ablation_grid(const TrainConfig& base,
                                 const std::vector<std::pair<std::string, ModuleFlags>>& flag_sets,
                                 const std::vector<std::uint64_t>& seeds, const std::vector<Scene>& scenes,
                                 const std::vector<Scene>& eval_scenes,
                                 const std::function<void(const std::string&)>& progress) {
    if (seeds.empty()) throw Error("run_ablation_grid: need at least one seed");
    if (scenes.empty()) throw Error("run_ablation_grid: no training scenes");
    const std::vector<CameraModel> cams = scenes.front().spec.rig.build();
    AblationResult result;
    for (const auto& [label, flags] : flag_sets) {
        AblationRow row;
        row.flags = flags;
        row.label = label;
        std::vector<double> maps, ates, aoes, aves, fast;
        for (std::uint64_t seed : seeds) {
            TrainConfig cfg = base;
            cfg.seed = seed;
            cfg.network.flags = flags;
            OCBEVNet net(cfg.network, cams, seed);
            TrainState state;
            TrainLog log = train(net, state, scenes, eval_scenes, cfg);
            const MetricReport final_report =
                log.records.back().eval ? *log.records.back().eval : evaluate_model(net, eval_scenes, cfg);
            maps.push_back(final_report.mean_ap);
            ates.push_back(final_report.errors.ate);
            aoes.push_back(final_report.errors.aoe);
            aves.push_back(final_report.errors.ave);
            fast.push_back(final_report.fast_errors.ave);
            row.finals.push_back(final_report);
            row.logs.push_back(std::move(log));
            if (progress) {
                std::ostringstream msg;
                msg << label << " seed " << seed << ": mAP " << final_report.mean_ap << " AVE "
                    << final_report.errors.ave << " fast AVE " << final_report.fast_errors.ave;
                progress(msg.str());
            }
        }
        row.mean_map = mean_of(maps);
        row.spread_map = stddev_of(maps);
        row.mean_ate = mean_of(ates);
        row.mean_aoe = mean_of(aoes);
        row.mean_ave = mean_of(aves);
        row.mean_fast_ave = mean_of(fast);
        result.rows.push_back(std::move(row));
    }
    return result;
}

}  // namespace ocbev
