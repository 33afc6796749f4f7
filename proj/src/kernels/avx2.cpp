#include "navkd/kernels.hpp"

#if defined(NAVKD_HAVE_AVX2)

#include <immintrin.h>

namespace navkd::kernels {
namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

double sum_sq_diff(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// Shared register-blocked update C += alpha * op(A) * B where op(A)(i, p) is
// a[i * lda + p] (TransA = false) or a[p * lda + i] (TransA = true).
template <bool TransA>
inline double a_at(const double* a, std::size_t lda, std::size_t i, std::size_t p) {
    return TransA ? a[p * lda + i] : a[i * lda + p];
}

template <bool TransA>
void gemm_xn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    const __m256d valpha = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        std::size_t j = 0;
        for (; j + 8 <= n; j += 8) {
            __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
            __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
            __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
            __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
            for (std::size_t p = 0; p < k; ++p) {
                const double* brow = b + p * ldb + j;
                const __m256d b0 = _mm256_loadu_pd(brow);
                const __m256d b1 = _mm256_loadu_pd(brow + 4);
                __m256d av = _mm256_set1_pd(a_at<TransA>(a, lda, i, p));
                c00 = _mm256_fmadd_pd(av, b0, c00);
                c01 = _mm256_fmadd_pd(av, b1, c01);
                av = _mm256_set1_pd(a_at<TransA>(a, lda, i + 1, p));
                c10 = _mm256_fmadd_pd(av, b0, c10);
                c11 = _mm256_fmadd_pd(av, b1, c11);
                av = _mm256_set1_pd(a_at<TransA>(a, lda, i + 2, p));
                c20 = _mm256_fmadd_pd(av, b0, c20);
                c21 = _mm256_fmadd_pd(av, b1, c21);
                av = _mm256_set1_pd(a_at<TransA>(a, lda, i + 3, p));
                c30 = _mm256_fmadd_pd(av, b0, c30);
                c31 = _mm256_fmadd_pd(av, b1, c31);
            }
            double* cr = c + i * ldc + j;
            _mm256_storeu_pd(cr, _mm256_fmadd_pd(valpha, c00, _mm256_loadu_pd(cr)));
            _mm256_storeu_pd(cr + 4, _mm256_fmadd_pd(valpha, c01, _mm256_loadu_pd(cr + 4)));
            cr += ldc;
            _mm256_storeu_pd(cr, _mm256_fmadd_pd(valpha, c10, _mm256_loadu_pd(cr)));
            _mm256_storeu_pd(cr + 4, _mm256_fmadd_pd(valpha, c11, _mm256_loadu_pd(cr + 4)));
            cr += ldc;
            _mm256_storeu_pd(cr, _mm256_fmadd_pd(valpha, c20, _mm256_loadu_pd(cr)));
            _mm256_storeu_pd(cr + 4, _mm256_fmadd_pd(valpha, c21, _mm256_loadu_pd(cr + 4)));
            cr += ldc;
            _mm256_storeu_pd(cr, _mm256_fmadd_pd(valpha, c30, _mm256_loadu_pd(cr)));
            _mm256_storeu_pd(cr + 4, _mm256_fmadd_pd(valpha, c31, _mm256_loadu_pd(cr + 4)));
        }
        for (; j + 4 <= n; j += 4) {
            __m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
            __m256d c2 = _mm256_setzero_pd(), c3 = _mm256_setzero_pd();
            for (std::size_t p = 0; p < k; ++p) {
                const __m256d b0 = _mm256_loadu_pd(b + p * ldb + j);
                c0 = _mm256_fmadd_pd(_mm256_set1_pd(a_at<TransA>(a, lda, i, p)), b0, c0);
                c1 = _mm256_fmadd_pd(_mm256_set1_pd(a_at<TransA>(a, lda, i + 1, p)), b0, c1);
                c2 = _mm256_fmadd_pd(_mm256_set1_pd(a_at<TransA>(a, lda, i + 2, p)), b0, c2);
                c3 = _mm256_fmadd_pd(_mm256_set1_pd(a_at<TransA>(a, lda, i + 3, p)), b0, c3);
            }
            double* cr = c + i * ldc + j;
            _mm256_storeu_pd(cr, _mm256_fmadd_pd(valpha, c0, _mm256_loadu_pd(cr)));
            _mm256_storeu_pd(cr + ldc, _mm256_fmadd_pd(valpha, c1, _mm256_loadu_pd(cr + ldc)));
            _mm256_storeu_pd(cr + 2 * ldc, _mm256_fmadd_pd(valpha, c2, _mm256_loadu_pd(cr + 2 * ldc)));
            _mm256_storeu_pd(cr + 3 * ldc, _mm256_fmadd_pd(valpha, c3, _mm256_loadu_pd(cr + 3 * ldc)));
        }
        for (; j < n; ++j) {
            for (std::size_t r = 0; r < 4; ++r) {
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += a_at<TransA>(a, lda, i + r, p) * b[p * ldb + j];
                c[(i + r) * ldc + j] += alpha * s;
            }
        }
    }
    for (; i < m; ++i) {
        double* crow = c + i * ldc;
        for (std::size_t p = 0; p < k; ++p) axpy(alpha * a_at<TransA>(a, lda, i, p), b + p * ldb, crow, n);
    }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    gemm_xn<false>(m, n, k, alpha, a, lda, b, ldb, c, ldc);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    gemm_xn<true>(m, n, k, alpha, a, lda, b, ldb, c, ldc);
}

// Four dot products per pass so each A row is loaded once per column block.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    const std::size_t kv = k & ~std::size_t{3};
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * lda;
        double* crow = c + i * ldc;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const double* b0 = b + j * ldb;
            const double* b1 = b0 + ldb;
            const double* b2 = b1 + ldb;
            const double* b3 = b2 + ldb;
            __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
            __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
            for (std::size_t p = 0; p < kv; p += 4) {
                const __m256d av = _mm256_loadu_pd(arow + p);
                s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
                s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
                s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
                s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
            }
            double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
            for (std::size_t p = kv; p < k; ++p) {
                r0 += arow[p] * b0[p];
                r1 += arow[p] * b1[p];
                r2 += arow[p] * b2[p];
                r3 += arow[p] * b3[p];
            }
            crow[j] += alpha * r0;
            crow[j + 1] += alpha * r1;
            crow[j + 2] += alpha * r2;
            crow[j + 3] += alpha * r3;
        }
        for (; j < n; ++j) crow[j] += alpha * dot(arow, b + j * ldb, k);
    }
}

constexpr KernelTable kAvx2{Isa::Avx2, dot, axpy, sum_sq_diff, gemm_nn, gemm_nt, gemm_tn};

}  // namespace

const KernelTable* avx2_table() { return &kAvx2; }

}  // namespace navkd::kernels

#else

namespace navkd::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace navkd::kernels

#endif
