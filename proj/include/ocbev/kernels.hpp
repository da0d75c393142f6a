#pragma once

// Data-parallel inner loops shared by the fusion, sampling and network code.
// Every kernel has a portable scalar reference; an AVX2/FMA variant is compiled
// alongside it and picked at runtime when the CPU supports it. Set the
// environment variable OCBEV_KERNELS=scalar to force the reference path.

#include <atomic>
#include <cstddef>
#include <string_view>

namespace ocbev::kernels {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
    Isa isa;
    std::string_view name;
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // out = a + b (out may alias a or b)
    void (*add)(const double* a, const double* b, double* out, std::size_t n);
    // out += alpha * a * b, elementwise
    void (*mul_acc)(double alpha, const double* a, const double* b, double* out, std::size_t n);
    // Row-major products accumulated into c. Zero entries of a are skipped.
    // nn: c[m,n] += a[m,k] b[k,n]
    void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
    // nt: c[m,n] += a[m,k] b[n,k]^T
    void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
    // tn: c[k,n] += a[m,k]^T b[m,n]
    void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
};

const KernelTable& scalar_table();
/// Null when the build has no AVX2 variant (non-x86 targets).
const KernelTable* avx2_table();

bool cpu_supports(Isa isa);

namespace detail {
extern std::atomic<const KernelTable*> active_table;
const KernelTable& init_active();
}  // namespace detail

/// Table used by the free functions below.
inline const KernelTable& active() {
    const KernelTable* t = detail::active_table.load(std::memory_order_relaxed);
    return t ? *t : detail::init_active();
}
/// Switches the active table; throws ocbev::Error when the ISA is unavailable.
void select(Isa isa);

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }
inline void add(const double* a, const double* b, double* out, std::size_t n) { active().add(a, b, out, n); }
inline void mul_acc(double alpha, const double* a, const double* b, double* out, std::size_t n) {
    active().mul_acc(alpha, a, b, out, n);
}
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    active().gemm_nn(a, b, c, m, k, n);
}
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    active().gemm_nt(a, b, c, m, k, n);
}
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    active().gemm_tn(a, b, c, m, k, n);
}

/// RAII override of the active table, used by equivalence tests and the bench.
class ScopedIsa {
public:
    explicit ScopedIsa(Isa isa);
    ~ScopedIsa();
    ScopedIsa(const ScopedIsa&) = delete;
    ScopedIsa& operator=(const ScopedIsa&) = delete;

private:
    const KernelTable* previous_;
};

}  // namespace ocbev::kernels
