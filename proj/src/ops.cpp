#include "ocbev/ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ocbev/error.hpp"
#include "ocbev/kernels.hpp"

namespace ocbev::nn {

namespace {

void require_rank2(const Var& v, const char* op) {
    if (v.shape().size() != 2) {
        throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(v.shape()));
    }
}

void require_same(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
    }
}

template <typename F, typename D>
Var unary(const Var& a, F f, D df_from_xy) {
    Tensor out(a.shape());
    const auto& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return record(std::move(out), {a}, [df_from_xy](Node& self) {
        double* gx = input_grad(self, 0);
        if (!gx) return;
        const auto& x = self.inputs[0]->value;
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += self.grad[i] * df_from_xy(x[i], self.value[i]);
    });
}

}  // namespace

double* input_grad(Node& self, std::size_t k) {
    Node& in = *self.inputs[k];
    return in.requires_grad ? in.grad_buffer().data() : nullptr;
}

Var matmul(const Var& a, const Var& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) throw ShapeError("matmul: inner extents differ");
    Tensor out({m, n});
    kernels::gemm_nn(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
    return record(std::move(out), {a, b}, [m, k, n](Node& self) {
        const double* A = self.inputs[0]->value.data().data();
        const double* B = self.inputs[1]->value.data().data();
        const double* G = self.grad.data();
        if (double* gA = input_grad(self, 0)) kernels::gemm_nt(G, B, gA, m, n, k);
        if (double* gB = input_grad(self, 1)) kernels::gemm_tn(A, G, gB, m, k, n);
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    require_rank2(x, "linear");
    require_rank2(w, "linear");
    const std::size_t rows = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[1];
    if (w.shape()[0] != in || b.size() != out_dim) {
        throw ShapeError("linear: input " + shape_string(x.shape()) + ", weight " + shape_string(w.shape()) +
                         ", bias " + shape_string(b.shape()));
    }
    Tensor out({rows, out_dim});
    const double* B = b.value().data().data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(B, out_dim, out.data().data() + r * out_dim);
    kernels::gemm_nn(x.value().data().data(), w.value().data().data(), out.data().data(), rows, in, out_dim);
    return record(std::move(out), {x, w, b}, [rows, in, out_dim](Node& self) {
        const double* X = self.inputs[0]->value.data().data();
        const double* W = self.inputs[1]->value.data().data();
        const double* G = self.grad.data();
        if (double* gX = input_grad(self, 0)) kernels::gemm_nt(G, W, gX, rows, out_dim, in);
        if (double* gW = input_grad(self, 1)) kernels::gemm_tn(X, G, gW, rows, in, out_dim);
        if (double* gB = input_grad(self, 2)) {
            for (std::size_t r = 0; r < rows; ++r) kernels::axpy(1.0, G + r * out_dim, gB, out_dim);
        }
    });
}

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out(a.shape());
    kernels::add(a.value().data().data(), b.value().data().data(), out.data().data(), out.size());
    return record(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k)
            if (double* g = input_grad(self, k)) kernels::axpy(1.0, self.grad.data(), g, self.grad.size());
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return record(std::move(out), {a, b}, [](Node& self) {
        if (double* g = input_grad(self, 0)) kernels::axpy(1.0, self.grad.data(), g, self.grad.size());
        if (double* g = input_grad(self, 1)) kernels::axpy(-1.0, self.grad.data(), g, self.grad.size());
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return record(std::move(out), {a, b}, [](Node& self) {
        const std::size_t n = self.grad.size();
        if (double* g = input_grad(self, 0))
            kernels::mul_acc(1.0, self.grad.data(), self.inputs[1]->value.data().data(), g, n);
        if (double* g = input_grad(self, 1))
            kernels::mul_acc(1.0, self.grad.data(), self.inputs[0]->value.data().data(), g, n);
    });
}

Var scale(const Var& a, double s) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a.value()[i];
    return record(std::move(out), {a}, [s](Node& self) {
        if (double* g = input_grad(self, 0)) kernels::axpy(s, self.grad.data(), g, self.grad.size());
    });
}

Var add_row(const Var& a, const Var& row) {
    require_rank2(a, "add_row");
    const std::size_t n = a.shape()[0], c = a.shape()[1];
    if (row.size() != c) throw ShapeError("add_row: row length differs from column count");
    Tensor out(a.shape());
    for (std::size_t r = 0; r < n; ++r)
        kernels::add(a.value().data().data() + r * c, row.value().data().data(), out.data().data() + r * c, c);
    return record(std::move(out), {a, row}, [n, c](Node& self) {
        if (double* g = input_grad(self, 0)) kernels::axpy(1.0, self.grad.data(), g, self.grad.size());
        if (double* g = input_grad(self, 1))
            for (std::size_t r = 0; r < n; ++r) kernels::axpy(1.0, self.grad.data() + r * c, g, c);
    });
}

Var relu(const Var& a) {
    return unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
    return unary(
        a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sum_all(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return record(Tensor::scalar(s), {a}, [](Node& self) {
        double* g = input_grad(self, 0);
        if (!g) return;
        const double d = self.grad[0];
        for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) g[i] += d;
    });
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Var mean_rows(const Var& a) {
    require_rank2(a, "mean_rows");
    const std::size_t n = a.shape()[0], c = a.shape()[1];
    Tensor out({1, c});
    for (std::size_t r = 0; r < n; ++r) kernels::axpy(1.0, a.value().data().data() + r * c, out.data().data(), c);
    for (auto& v : out.data()) v /= static_cast<double>(n);
    return record(std::move(out), {a}, [n, c](Node& self) {
        double* g = input_grad(self, 0);
        if (!g) return;
        for (std::size_t r = 0; r < n; ++r) kernels::axpy(1.0 / static_cast<double>(n), self.grad.data(), g + r * c, c);
    });
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return record(std::move(out), {a}, [](Node& self) {
        if (double* g = input_grad(self, 0)) kernels::axpy(1.0, self.grad.data(), g, self.grad.size());
    });
}

Var transpose(const Var& a) {
    require_rank2(a, "transpose");
    const std::size_t n = a.shape()[0], c = a.shape()[1];
    Tensor out({c, n});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < c; ++k) out.at(k, r) = a.value().at(r, k);
    return record(std::move(out), {a}, [n, c](Node& self) {
        double* g = input_grad(self, 0);
        if (!g) return;
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t k = 0; k < c; ++k) g[r * c + k] += self.grad[k * n + r];
    });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
    require_rank2(a, "slice_cols");
    const std::size_t n = a.shape()[0], c = a.shape()[1];
    if (begin > end || end > c) throw ShapeError("slice_cols: range out of bounds");
    const std::size_t w = end - begin;
    Tensor out({n, w});
    for (std::size_t r = 0; r < n; ++r)
        std::copy_n(a.value().data().data() + r * c + begin, w, out.data().data() + r * w);
    return record(std::move(out), {a}, [n, c, w, begin](Node& self) {
        double* g = input_grad(self, 0);
        if (!g) return;
        for (std::size_t r = 0; r < n; ++r) kernels::axpy(1.0, self.grad.data() + r * w, g + r * c + begin, w);
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
    const std::size_t n = parts[0].shape().at(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.shape()[0] != n) throw ShapeError("concat_cols: row counts differ");
        widths.push_back(p.shape()[1]);
        total += p.shape()[1];
    }
    Tensor out({n, total});
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        for (std::size_t r = 0; r < n; ++r)
            std::copy_n(parts[k].value().data().data() + r * widths[k], widths[k], out.data().data() + r * total + off);
        off += widths[k];
    }
    return record(std::move(out), parts, [n, total, widths](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (double* g = input_grad(self, k))
                for (std::size_t r = 0; r < n; ++r)
                    kernels::axpy(1.0, self.grad.data() + r * total + off, g + r * widths[k], widths[k]);
            off += widths[k];
        }
    });
}

Var gather_rows(const Var& a, std::span<const std::size_t> rows) {
    require_rank2(a, "gather_rows");
    const std::size_t n = a.shape()[0], c = a.shape()[1];
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    Tensor out({idx.size(), c});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= n) throw ShapeError("gather_rows: row index out of range");
        std::copy_n(a.value().data().data() + idx[r] * c, c, out.data().data() + r * c);
    }
    return record(std::move(out), {a}, [idx, c](Node& self) {
        double* g = input_grad(self, 0);
        if (!g) return;
        for (std::size_t r = 0; r < idx.size(); ++r) kernels::axpy(1.0, self.grad.data() + r * c, g + idx[r] * c, c);
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
    const std::size_t c = parts[0].shape().at(1);
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank2(p, "concat_rows");
        if (p.shape()[1] != c) throw ShapeError("concat_rows: column counts differ");
        total += p.shape()[0];
    }
    Tensor out({total, c});
    std::size_t off = 0;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + off);
        off += p.size();
        sizes.push_back(p.size());
    }
    return record(std::move(out), parts, [sizes](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            if (double* g = input_grad(self, k)) kernels::axpy(1.0, self.grad.data() + off, g, sizes[k]);
            off += sizes[k];
        }
    });
}

Var softmax_groups(const Var& a, std::size_t group) {
    if (group == 0 || a.size() % group != 0) throw ShapeError("softmax_groups: bad group size");
    Tensor out(a.shape());
    const auto& x = a.value();
    for (std::size_t g0 = 0; g0 < x.size(); g0 += group) {
        double mx = x[g0];
        for (std::size_t i = 1; i < group; ++i) mx = std::max(mx, x[g0 + i]);
        double s = 0.0;
        for (std::size_t i = 0; i < group; ++i) s += (out[g0 + i] = std::exp(x[g0 + i] - mx));
        for (std::size_t i = 0; i < group; ++i) out[g0 + i] /= s;
    }
    return record(std::move(out), {a}, [group](Node& self) {
        double* g = input_grad(self, 0);
        if (!g) return;
        const auto& y = self.value;
        for (std::size_t g0 = 0; g0 < y.size(); g0 += group) {
            const double d = kernels::dot(y.data().data() + g0, self.grad.data() + g0, group);
            for (std::size_t i = 0; i < group; ++i) g[g0 + i] += y[g0 + i] * (self.grad[g0 + i] - d);
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    require_rank2(x, "layer_norm");
    const std::size_t n = x.shape()[0], c = x.shape()[1];
    if (gamma.size() != c || beta.size() != c) throw ShapeError("layer_norm: affine parameters must match columns");
    Tensor out({n, c});
    std::vector<double> xhat(n * c), inv_std(n);
    const double* X = x.value().data().data();
    const double* G = gamma.value().data().data();
    const double* B = beta.value().data().data();
    for (std::size_t r = 0; r < n; ++r) {
        double mean = 0.0;
        for (std::size_t k = 0; k < c; ++k) mean += X[r * c + k];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t k = 0; k < c; ++k) var += (X[r * c + k] - mean) * (X[r * c + k] - mean);
        var /= static_cast<double>(c);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t k = 0; k < c; ++k) {
            xhat[r * c + k] = (X[r * c + k] - mean) * inv_std[r];
            out[r * c + k] = G[k] * xhat[r * c + k] + B[k];
        }
    }
    return record(std::move(out), {x, gamma, beta},
                  [n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const double* dY = self.grad.data();
        const double* G = self.inputs[1]->value.data().data();
        double* gx = input_grad(self, 0);
        double* gg = input_grad(self, 1);
        double* gb = input_grad(self, 2);
        std::vector<double> dxhat(c);
        for (std::size_t r = 0; r < n; ++r) {
            const double* xh = xhat.data() + r * c;
            const double* dy = dY + r * c;
            if (gg) kernels::mul_acc(1.0, dy, xh, gg, c);
            if (gb) kernels::axpy(1.0, dy, gb, c);
            if (!gx) continue;
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
                dxhat[k] = dy[k] * G[k];
                mean_d += dxhat[k];
                mean_dx += dxhat[k] * xh[k];
            }
            mean_d /= static_cast<double>(c);
            mean_dx /= static_cast<double>(c);
            for (std::size_t k = 0; k < c; ++k) gx[r * c + k] += inv_std[r] * (dxhat[k] - mean_d - xh[k] * mean_dx);
        }
    });
}

Var dropout(const Var& x, double p, std::uint64_t seed) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw Error("dropout: probability must be below 1");
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution keep(1.0 - p);
    std::vector<double> mask(x.size());
    for (auto& m : mask) m = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * mask[i];
    return record(std::move(out), {x}, [mask = std::move(mask)](Node& self) {
        if (double* g = input_grad(self, 0)) kernels::mul_acc(1.0, self.grad.data(), mask.data(), g, mask.size());
    });
}

Var multi_head_attention(const Var& q, const Var& k, const Var& v, std::size_t heads) {
    require_rank2(q, "multi_head_attention");
    const std::size_t c = q.shape()[1];
    if (heads == 0 || c % heads != 0 || k.shape().size() != 2 || k.shape()[1] != c || v.shape()[1] != c ||
        v.shape()[0] != k.shape()[0]) {
        throw ShapeError("multi_head_attention: inconsistent shapes");
    }
    const std::size_t dh = c / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Var qh = slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = slice_cols(v, h * dh, (h + 1) * dh);
        Var scores = scale(matmul(qh, transpose(kh)), inv);
        Var attn = softmax_groups(scores, k.shape()[0]);
        outs.push_back(matmul(attn, vh));
    }
    return concat_cols(outs);
}

}  // namespace ocbev::nn
