#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "commands.hpp"
#include "json.hpp"
#include "ocbev/error.hpp"
#include "ocbev/tensor_io.hpp"

namespace {

using nlohmann::json;
using namespace ocbev;
using namespace ocbev::cli;

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kValidation = 3 };

struct Shared {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> config;
    std::optional<unsigned> threads;
    std::optional<std::string> replay;
};

/// Flag values keyed by configuration path; only flags actually given are applied.
struct Overrides {
    std::vector<std::function<void(json&)>> apply;
    std::vector<std::function<bool()>> given;
};

template <class T>
void value_option(CLI::App* sub, Overrides& ov, std::vector<std::shared_ptr<void>>& keep, const std::string& flag,
          const std::string& help, std::function<void(json&, const T&)> set) {
    auto value = std::make_shared<std::optional<T>>();
    keep.push_back(value);
    sub->add_option(flag, *value, help);
    ov.apply.push_back([value, set](json& cfg) {
        if (*value) set(cfg, **value);
    });
    ov.given.push_back([value] { return value->has_value(); });
}

void bool_flag(CLI::App* sub, Overrides& ov, std::vector<std::shared_ptr<void>>& keep, const std::string& flag,
               const std::string& help, std::function<void(json&)> set) {
    auto value = std::make_shared<bool>(false);
    keep.push_back(value);
    sub->add_flag(flag, *value, help);
    ov.apply.push_back([value, set](json& cfg) {
        if (*value) set(cfg);
    });
    ov.given.push_back([value] { return *value; });
}

void print_error(const std::string& type, const std::string& message, const std::string& command) {
    json e = {{"error", {{"type", type}, {"message", message}}}};
    if (!command.empty()) e["error"]["command"] = command;
    std::cerr << e.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Object-centric BEV detection toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    std::map<std::string, Shared> shared;
    std::map<std::string, Overrides> overrides;
    std::vector<std::shared_ptr<void>> keep;
    std::map<std::string, CLI::App*> subs;

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"simulate", "Generate synthetic scenes"},
        {"train", "Train a model on scene files"},
        {"eval", "Evaluate a checkpoint (or oracle/empty predictions) on scene files"},
        {"demo-align", "Dump BEV features before/after temporal fusion and the predicted heatmap"},
        {"gradcheck", "Finite-difference check of every differentiable operation"},
        {"bench", "Time the fusion and sampling kernels"},
        {"ingest", "Build a zero-based temporal queue from pose metadata"}};
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        Shared& s = shared[name];
        sub->add_option("--seed", s.seed, "Random seed (default 0)");
        sub->add_option("--out", s.out, "Output directory (default out/<command>)");
        sub->add_option("--config", s.config, "JSON configuration file; flags override its values");
        sub->add_option("--threads", s.threads, "Worker threads for scene-parallel work")->check(CLI::PositiveNumber);
        sub->add_option("--replay", s.replay, "Re-run the command recorded in a manifest");
        subs[name] = sub;
    }

    {
        auto* sub = subs["simulate"];
        auto& ov = overrides["simulate"];
        value_option<long long>(sub, ov, keep, "--scenes", "Number of scenes", [](json& c, const long long& v) { c["scenes"] = v; });
        value_option<long long>(sub, ov, keep, "--frames", "Frames per scene", [](json& c, const long long& v) { c["spec"]["frames"] = v; });
        value_option<double>(sub, ov, keep, "--dt", "Seconds between frames", [](json& c, const double& v) { c["spec"]["dt"] = v; });
        value_option<double>(sub, ov, keep, "--noise", "Feature noise level", [](json& c, const double& v) { c["spec"]["feature_noise"] = v; });
        bool_flag(sub, ov, keep, "--static", "Stationary ego and objects, noise-free features", [](json& c) {
            auto& s = c["spec"];
            s["ego_speed"] = {0.0, 0.0};
            s["ego_yaw_rate"] = {0.0, 0.0};
            s["feature_noise"] = 0.0;
            for (auto& cls : s["classes"]) cls["speed"] = {0.0, 0.0};
        });
    }
    {
        auto* sub = subs["train"];
        auto& ov = overrides["train"];
        value_option<std::string>(sub, ov, keep, "--scenes", "Directory of training scenes", [](json& c, const std::string& v) { c["scenes"] = v; });
        value_option<std::string>(sub, ov, keep, "--eval-scenes", "Directory of evaluation scenes", [](json& c, const std::string& v) { c["eval_scenes"] = v; });
        value_option<std::string>(sub, ov, keep, "--resume", "Checkpoint to continue from", [](json& c, const std::string& v) { c["resume"] = v; });
        value_option<long long>(sub, ov, keep, "--iters", "Total iterations", [](json& c, const long long& v) { c["train"]["iterations"] = v; });
        value_option<long long>(sub, ov, keep, "--stop-at", "Stop after this many iterations (schedule unchanged)",
                                [](json& c, const long long& v) { c["train"]["stop_at"] = v; });
        value_option<double>(sub, ov, keep, "--lr", "Peak learning rate", [](json& c, const double& v) { c["train"]["lr"] = v; });
        value_option<long long>(sub, ov, keep, "--eval-every", "Evaluation interval", [](json& c, const long long& v) { c["train"]["eval_every"] = v; });
        value_option<std::string>(sub, ov, keep, "--ablate", "Module switches, e.g. ego_fusion=off,object_fusion=on or all=off",
                          [](json& c, const std::string& v) { c["train"]["ablate"] = v; });
        value_option<std::string>(sub, ov, keep, "--velocity-source", "oracle or predicted",
                          [](json& c, const std::string& v) { c["train"]["velocity_source"] = v; });
    }
    {
        auto* sub = subs["eval"];
        auto& ov = overrides["eval"];
        value_option<std::string>(sub, ov, keep, "--scenes", "Directory of evaluation scenes", [](json& c, const std::string& v) { c["scenes"] = v; });
        value_option<std::string>(sub, ov, keep, "--checkpoint", "OCBW checkpoint", [](json& c, const std::string& v) { c["checkpoint"] = v; });
        value_option<std::string>(sub, ov, keep, "--train-config", "Training config (default: next to the checkpoint)",
                          [](json& c, const std::string& v) { c["train_config"] = v; });
        value_option<std::string>(sub, ov, keep, "--predictor", "model, oracle or empty", [](json& c, const std::string& v) { c["predictor"] = v; });
    }
    {
        auto* sub = subs["demo-align"];
        auto& ov = overrides["demo-align"];
        value_option<std::string>(sub, ov, keep, "--scene", "Scene JSON (default: generated from --seed)",
                          [](json& c, const std::string& v) { c["scene"] = v; });
        value_option<long long>(sub, ov, keep, "--frame", "Current frame (>= 1)", [](json& c, const long long& v) { c["frame"] = v; });
        value_option<std::string>(sub, ov, keep, "--checkpoint", "OCBW checkpoint (default: random weights)",
                          [](json& c, const std::string& v) { c["checkpoint"] = v; });
        value_option<std::string>(sub, ov, keep, "--train-config", "Training config", [](json& c, const std::string& v) { c["train_config"] = v; });
    }
    {
        auto* sub = subs["gradcheck"];
        auto& ov = overrides["gradcheck"];
        value_option<std::vector<std::string>>(sub, ov, keep, "--op", "Operation(s) to check (default: all)",
                                       [](json& c, const std::vector<std::string>& v) { c["ops"] = v; });
        value_option<long long>(sub, ov, keep, "--trials", "Random instances per operation", [](json& c, const long long& v) { c["trials"] = v; });
        value_option<double>(sub, ov, keep, "--tolerance", "Relative error bound", [](json& c, const double& v) { c["tolerance"] = v; });
    }
    {
        auto* sub = subs["bench"];
        auto& ov = overrides["bench"];
        value_option<std::vector<int>>(sub, ov, keep, "--grids", "Grid sizes", [](json& c, const std::vector<int>& v) { c["grids"] = v; });
        value_option<long long>(sub, ov, keep, "--repeats", "Timed repetitions (median reported)", [](json& c, const long long& v) { c["repeats"] = v; });
        value_option<long long>(sub, ov, keep, "--warmup", "Untimed warmup runs", [](json& c, const long long& v) { c["warmup"] = v; });
        value_option<long long>(sub, ov, keep, "--channels", "Feature channels", [](json& c, const long long& v) { c["channels"] = v; });
    }
    {
        auto* sub = subs["ingest"];
        auto& ov = overrides["ingest"];
        value_option<std::string>(sub, ov, keep, "--input", "Metadata JSON with ego_pose and calibrated_sensor tables",
                          [](json& c, const std::string& v) { c["input"] = v; });
        value_option<long long>(sub, ov, keep, "--queue-length", "Samples per queue", [](json& c, const long long& v) { c["queue_length"] = v; });
        bool_flag(sub, ov, keep, "--no-rotate", "Translate only; keep displacements in world axes",
                  [](json& c) { c["rotate_to_first"] = false; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        print_error("usage", e.what(), "");
        return kUsage;
    }

    std::string command;
    for (const auto& [name, sub] : subs)
        if (sub->parsed()) command = name;

    RunContext ctx;
    ctx.command = command;
    try {
        const Shared& s = shared[command];
        Overrides& ov = overrides[command];
        ctx.threads = s.threads.value_or(std::max(1u, std::thread::hardware_concurrency()));
        if (s.replay) {
            for (const auto& g : ov.given)
                if (g()) throw Error("--replay cannot be combined with configuration flags");
            if (s.config || s.seed) throw Error("--replay cannot be combined with --config or --seed");
            json m;
            try {
                m = json::parse(read_file(*s.replay));
                if (m.at("command").get<std::string>() != command)
                    throw Error("manifest records command '" + m.at("command").get<std::string>() + "', not '" +
                                command + "'");
                ctx.seed = m.at("seed").get<std::uint64_t>();
                ctx.config = resolve_config(command, m.at("config"), ctx.seed);
                ctx.out = s.out ? *s.out : m.at("out").get<std::string>();
            } catch (const json::exception& e) {
                throw ParseError(*s.replay + ": " + e.what());
            }
        } else {
            json cfg = default_config(command);
            std::uint64_t seed = 0;
            if (s.config) {
                json file;
                try {
                    file = json::parse(read_file(*s.config));
                } catch (const json::exception& e) {
                    throw ParseError(*s.config + ": " + e.what());
                }
                if (!file.is_object()) throw ParseError(*s.config + ": expected a JSON object");
                if (file.contains("seed")) {
                    seed = file["seed"].get<std::uint64_t>();
                    file.erase("seed");
                }
                for (const auto& [key, value] : file.items()) {
                    if (!cfg.contains(key)) throw Error("unknown configuration key '" + key + "' in " + *s.config);
                    if (cfg[key].is_object() && value.is_object()) cfg[key].merge_patch(value);
                    else cfg[key] = value;
                }
            }
            if (s.seed) seed = *s.seed;
            for (const auto& f : ov.apply) f(cfg);
            ctx.seed = seed;
            ctx.config = resolve_config(command, cfg, seed);
            ctx.out = s.out ? *s.out : "out/" + command;
        }
        write_manifest(ctx);
        run_command(ctx);
    } catch (const ValidationFailure& e) {
        print_error("validation_failed", e.what(), command);
        return kValidation;
    } catch (const ParseError& e) {
        print_error("parse_error", e.what(), command);
        return kFailure;
    } catch (const ShapeError& e) {
        print_error("shape_error", e.what(), command);
        return kFailure;
    } catch (const Error& e) {
        print_error("error", e.what(), command);
        return kFailure;
    } catch (const std::exception& e) {
        print_error("internal", e.what(), command);
        return kFailure;
    }
    return kOk;
}
