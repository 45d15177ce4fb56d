#pragma once

#include <cstdlib>
#include <stdexcept>

#include <dlfcn.h>

namespace olbp {
namespace detail {

// cblas constants (row-major layout, transpose flags)
inline constexpr int kCblasRowMajor = 101;
inline constexpr int kCblasNoTrans = 111;
inline constexpr int kCblasTrans = 112;

using sgemm_fn = void (*)(int, int, int, int, int, int, float, const float*, int,
                          const float*, int, float, float*, int);
using dgemm_fn = void (*)(int, int, int, int, int, int, double, const double*, int,
                          const double*, int, double, double*, int);

struct BlasHandle {
    sgemm_fn sgemm = nullptr;
    dgemm_fn dgemm = nullptr;
};

// OpenBLAS picks its compute kernel from CPUID inside a library constructor,
// and virtualized CPUIDs often route it to a slow generic kernel. The library
// is therefore loaded lazily via dlopen, after OPENBLAS_CORETYPE has been set
// to the widest SIMD level the host really supports, and pinned to one thread
// so every output value is a single serial reduction (bit-reproducible).
// Variables the user already set are respected.
inline BlasHandle load_blas() {
#if defined(__GNUC__) && defined(__x86_64__)
    if (std::getenv("OPENBLAS_CORETYPE") == nullptr) {
        if (__builtin_cpu_supports("avx512f"))
            setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
        else if (__builtin_cpu_supports("avx2"))
            setenv("OPENBLAS_CORETYPE", "HASWELL", 0);
    }
#endif
    setenv("OPENBLAS_NUM_THREADS", "1", 0);
    void* lib = dlopen("libopenblas.so.0", RTLD_NOW | RTLD_LOCAL);
    if (!lib) lib = dlopen("libopenblas.so", RTLD_NOW | RTLD_LOCAL);
    if (!lib) throw std::runtime_error("cannot load libopenblas: " + std::string(dlerror()));
    BlasHandle h;
    h.sgemm = reinterpret_cast<sgemm_fn>(dlsym(lib, "cblas_sgemm"));
    h.dgemm = reinterpret_cast<dgemm_fn>(dlsym(lib, "cblas_dgemm"));
    if (!h.sgemm || !h.dgemm)
        throw std::runtime_error("libopenblas is missing cblas_sgemm/cblas_dgemm");
    return h;
}

inline const BlasHandle& blas() {
    static const BlasHandle h = load_blas();
    return h;
}

}  // namespace detail

// C[MxN] (+)= A * B, row-major; trans_* select op(A)=A^T / op(B)=B^T.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta, float* c,
                 int ldc) {
    detail::blas().sgemm(detail::kCblasRowMajor,
                         trans_a ? detail::kCblasTrans : detail::kCblasNoTrans,
                         trans_b ? detail::kCblasTrans : detail::kCblasNoTrans, m, n, k, alpha,
                         a, lda, b, ldb, beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb, double beta, double* c,
                 int ldc) {
    detail::blas().dgemm(detail::kCblasRowMajor,
                         trans_a ? detail::kCblasTrans : detail::kCblasNoTrans,
                         trans_b ? detail::kCblasTrans : detail::kCblasNoTrans, m, n, k, alpha,
                         a, lda, b, ldb, beta, c, ldc);
}

}  // namespace olbp
