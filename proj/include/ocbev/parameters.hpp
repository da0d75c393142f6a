#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ocbev/autodiff.hpp"

namespace ocbev::nn {

/// Named trainable tensors in insertion order.
class ParameterStore {
public:
    /// Throws ocbev::Error on duplicate names.
    Var& add(const std::string& name, Tensor init);

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const Var& get(const std::string& name) const;
    Var& get(const std::string& name);

    const std::vector<std::string>& names() const { return names_; }
    std::size_t size() const { return names_.size(); }
    std::size_t scalar_count() const;

    void zero_grad();
    /// Deep copy: new leaves holding the same values.
    ParameterStore clone() const;

    /// Overwrites values of matching names; shapes must agree.
    void assign(const std::string& name, const Tensor& value);

private:
    std::vector<std::string> names_;
    std::vector<Var> vars_;
    std::map<std::string, std::size_t> index_;
};

/// Xavier-uniform [in, out] matrix from a deterministic stream.
Tensor xavier(std::size_t in, std::size_t out, std::uint64_t seed, double gain = 1.0);
Tensor normal_tensor(Shape shape, double stddev, std::uint64_t seed);

}  // namespace ocbev::nn
