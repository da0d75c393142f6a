#include "ocbev/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>
#define OCBEV_HAVE_AVX2 1
#else
#define OCBEV_HAVE_AVX2 0
#endif

namespace ocbev::kernels {

#if OCBEV_HAVE_AVX2
namespace {

#define OCBEV_AVX2 __attribute__((target("avx2,fma")))

OCBEV_AVX2 double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    }
    acc0 = _mm256_add_pd(acc0, acc1);
    __m128d lo = _mm256_castpd256_pd128(acc0);
    __m128d hi = _mm256_extractf128_pd(acc0, 1);
    lo = _mm_add_pd(lo, hi);
    double s = _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

OCBEV_AVX2 void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

OCBEV_AVX2 void add_avx2(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

OCBEV_AVX2 void mul_acc_avx2(double alpha, const double* a, const double* b, double* out,
                             std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        _mm256_storeu_pd(out + i, _mm256_fmadd_pd(va, prod, _mm256_loadu_pd(out + i)));
    }
    for (; i < n; ++i) out[i] += alpha * a[i] * b[i];
}

// c[i, j0:j0+16] stays in registers while p runs over the shared dimension.
OCBEV_AVX2 void gemm_nn_avx2(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                             std::size_t n) {
    const std::size_t n16 = n - n % 16;
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n16; j += 16) {
            __m256d c0 = _mm256_loadu_pd(ci + j), c1 = _mm256_loadu_pd(ci + j + 4);
            __m256d c2 = _mm256_loadu_pd(ci + j + 8), c3 = _mm256_loadu_pd(ci + j + 12);
            for (std::size_t p = 0; p < k; ++p) {
                if (ai[p] == 0.0) continue;
                const __m256d s = _mm256_set1_pd(ai[p]);
                const double* bp = b + p * n + j;
                c0 = _mm256_fmadd_pd(s, _mm256_loadu_pd(bp), c0);
                c1 = _mm256_fmadd_pd(s, _mm256_loadu_pd(bp + 4), c1);
                c2 = _mm256_fmadd_pd(s, _mm256_loadu_pd(bp + 8), c2);
                c3 = _mm256_fmadd_pd(s, _mm256_loadu_pd(bp + 12), c3);
            }
            _mm256_storeu_pd(ci + j, c0);
            _mm256_storeu_pd(ci + j + 4, c1);
            _mm256_storeu_pd(ci + j + 8, c2);
            _mm256_storeu_pd(ci + j + 12, c3);
        }
        if (n16 < n) {
            for (std::size_t p = 0; p < k; ++p)
                if (ai[p] != 0.0) axpy_avx2(ai[p], b + p * n + n16, ci + n16, n - n16);
        }
    }
}

OCBEV_AVX2 void gemm_nt_avx2(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot_avx2(a + i * k, b + j * k, k);
}

OCBEV_AVX2 void gemm_tn_avx2(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                             std::size_t n) {
    const std::size_t n16 = n - n % 16;
    for (std::size_t p = 0; p < k; ++p) {
        double* cp = c + p * n;
        for (std::size_t j = 0; j < n16; j += 16) {
            __m256d c0 = _mm256_loadu_pd(cp + j), c1 = _mm256_loadu_pd(cp + j + 4);
            __m256d c2 = _mm256_loadu_pd(cp + j + 8), c3 = _mm256_loadu_pd(cp + j + 12);
            for (std::size_t i = 0; i < m; ++i) {
                const double v = a[i * k + p];
                if (v == 0.0) continue;
                const __m256d s = _mm256_set1_pd(v);
                const double* bi = b + i * n + j;
                c0 = _mm256_fmadd_pd(s, _mm256_loadu_pd(bi), c0);
                c1 = _mm256_fmadd_pd(s, _mm256_loadu_pd(bi + 4), c1);
                c2 = _mm256_fmadd_pd(s, _mm256_loadu_pd(bi + 8), c2);
                c3 = _mm256_fmadd_pd(s, _mm256_loadu_pd(bi + 12), c3);
            }
            _mm256_storeu_pd(cp + j, c0);
            _mm256_storeu_pd(cp + j + 4, c1);
            _mm256_storeu_pd(cp + j + 8, c2);
            _mm256_storeu_pd(cp + j + 12, c3);
        }
        if (n16 < n) {
            for (std::size_t i = 0; i < m; ++i)
                if (const double v = a[i * k + p]; v != 0.0) axpy_avx2(v, b + i * n + n16, cp + n16, n - n16);
        }
    }
}

#undef OCBEV_AVX2

}  // namespace

const KernelTable* avx2_table() {
    static const KernelTable table{Isa::Avx2,   "avx2",       dot_avx2,     axpy_avx2,   add_avx2,
                                   mul_acc_avx2, gemm_nn_avx2, gemm_nt_avx2, gemm_tn_avx2};
    return &table;
}

#else

const KernelTable* avx2_table() { return nullptr; }

#endif

}  // namespace ocbev::kernels
