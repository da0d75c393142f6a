#include "ocbev/parameters.hpp"

#include <cmath>
#include <random>

#include "ocbev/error.hpp"

namespace ocbev::nn {

Var& ParameterStore::add(const std::string& name, Tensor init) {
    if (contains(name)) throw Error("ParameterStore: duplicate parameter '" + name + "'");
    index_[name] = vars_.size();
    names_.push_back(name);
    vars_.push_back(Var::leaf(std::move(init), true));
    return vars_.back();
}

const Var& ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("ParameterStore: unknown parameter '" + name + "'");
    return vars_[it->second];
}

Var& ParameterStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("ParameterStore: unknown parameter '" + name + "'");
    return vars_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : vars_) n += v.size();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& v : vars_) v.zero_grad();
}

ParameterStore ParameterStore::clone() const {
    ParameterStore out;
    for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], vars_[i].value());
    return out;
}

void ParameterStore::assign(const std::string& name, const Tensor& value) {
    Var& v = get(name);
    if (v.shape() != value.shape()) {
        throw ShapeError("ParameterStore::assign: shape mismatch for '" + name + "': " + shape_string(v.shape()) +
                         " vs " + shape_string(value.shape()));
    }
    v.mutable_value() = value;
}

Tensor xavier(std::size_t in, std::size_t out, std::uint64_t seed, double gain) {
    std::mt19937_64 rng(seed);
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor t({in, out});
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

Tensor normal_tensor(Shape shape, double stddev, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

}  // namespace ocbev::nn
