#pragma once

// Differentiable building blocks. Matrices are rank-2 tensors, row-major.

#include <cstdint>
#include <span>
#include <vector>

#include "ocbev/autodiff.hpp"

namespace ocbev::nn {

// Gradient accumulator for input k of a recorded node, or null when that
// input does not require gradients.
double* input_grad(Node& self, std::size_t k);

Var matmul(const Var& a, const Var& b);
/// x[n,in] * w[in,out] + b[out]
Var linear(const Var& x, const Var& w, const Var& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a[n,c] + row[c] broadcast over rows
Var add_row(const Var& a, const Var& row);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);

Var sum_all(const Var& a);
Var mean_all(const Var& a);
/// [n,c] -> [1,c]
Var mean_rows(const Var& a);

Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(const Var& a, std::span<const std::size_t> rows);
Var concat_rows(const std::vector<Var>& parts);

/// Softmax over consecutive groups of `group` columns in every row.
Var softmax_groups(const Var& a, std::size_t group);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Inverted dropout with a mask drawn from `seed`; identity when p == 0.
Var dropout(const Var& x, double p, std::uint64_t seed);

/// Multi-head scaled dot-product attention over rows: q [n,c], k and v [m,c].
Var multi_head_attention(const Var& q, const Var& k, const Var& v, std::size_t heads);

}  // namespace ocbev::nn
