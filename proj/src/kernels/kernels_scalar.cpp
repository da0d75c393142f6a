#include "ocbev/kernels.hpp"

namespace ocbev::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void add_scalar(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_acc_scalar(double alpha, const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] += alpha * a[i] * b[i];
}

void gemm_nn_scalar(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p)
            if (const double s = a[i * k + p]; s != 0.0) axpy_scalar(s, b + p * n, c + i * n, n);
}

void gemm_nt_scalar(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot_scalar(a + i * k, b + j * k, k);
}

void gemm_tn_scalar(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p)
            if (const double s = a[i * k + p]; s != 0.0) axpy_scalar(s, b + i * n, c + p * n, n);
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table{Isa::Scalar,    "scalar",       dot_scalar,     axpy_scalar,   add_scalar,
                                   mul_acc_scalar, gemm_nn_scalar, gemm_nt_scalar, gemm_tn_scalar};
    return table;
}

}  // namespace ocbev::kernels
