#pragma once

// Dense double-precision inner loops used by the tensor engine.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2/FMA
// variant. The active table is picked once at startup from CPUID and can be
// pinned with NAVKD_SIMD=scalar|avx2 or select(). Results of the two tables
// agree to rounding (FMA contraction), not bit-for-bit; within one table the
// kernels are deterministic.

#include <cstddef>
#include <string_view>

namespace navkd::kernels {

enum class Isa { Scalar, Avx2 };

// All matrices are row-major with explicit leading dimensions.
struct KernelTable {
    Isa isa;
    double (*dot)(const double* a, const double* b, std::size_t n);
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    double (*sum_sq_diff)(const double* a, const double* b, std::size_t n);
    // C[m x n] += alpha * A[m x k] * B[k x n]
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, double alpha,
                    const double* a, std::size_t lda, const double* b, std::size_t ldb,
                    double* c, std::size_t ldc);
    // C[m x n] += alpha * A[m x k] * B[n x k]^T
    void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, double alpha,
                    const double* a, std::size_t lda, const double* b, std::size_t ldb,
                    double* c, std::size_t ldc);
    // C[m x n] += alpha * A[k x m]^T * B[k x n]
    void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, double alpha,
                    const double* a, std::size_t lda, const double* b, std::size_t ldb,
                    double* c, std::size_t ldc);
};

const KernelTable& scalar_table();
// Null when the binary was built without AVX2 support.
const KernelTable* avx2_table();

bool supported(Isa isa);
const KernelTable& table(Isa isa);

const KernelTable& active();
Isa active_isa();
// Throws std::invalid_argument if the ISA is not supported on this CPU.
void select(Isa isa);

std::string_view name(Isa isa);

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }
inline double sum_sq_diff(const double* a, const double* b, std::size_t n) {
    return active().sum_sq_diff(a, b, n);
}
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
                    std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    active().gemm_nn(m, n, k, alpha, a, lda, b, ldb, c, ldc);
}
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
                    std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    active().gemm_nt(m, n, k, alpha, a, lda, b, ldb, c, ldc);
}
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
                    std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    active().gemm_tn(m, n, k, alpha, a, lda, b, ldb, c, ldc);
}

}  // namespace navkd::kernels
