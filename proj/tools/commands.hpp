#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "json.hpp"

namespace ocbev::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// Raised when a command finished but one of its own checks failed.
class ValidationFailure : public std::runtime_error {
public:
    explicit ValidationFailure(const std::string& what) : std::runtime_error(what) {}
};

struct RunContext {
    std::string command;
    nlohmann::json config;  // fully resolved
    std::uint64_t seed = 0;
    std::filesystem::path out;
    unsigned threads = 1;
};

/// Default configuration of a command with every field present.
nlohmann::json default_config(const std::string& command);
/// Fills in and validates every field; throws ocbev::Error on bad values.
nlohmann::json resolve_config(const std::string& command, const nlohmann::json& cfg, std::uint64_t seed);

nlohmann::json manifest_json(const RunContext& ctx);
void write_manifest(const RunContext& ctx);

void run_command(const RunContext& ctx);

/// Runs fn(0..n-1) on up to `threads` workers; rethrows the first failure.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace ocbev::cli
