// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense float64 kernels used by the autodiff core.
//
// Every kernel has a portable scalar reference in kernels::scalar and, on
// x86-64, an AVX2+FMA variant in kernels::avx2. The public entry points
// below dispatch through a table chosen once at first use; tests pin a
// backend with set_backend() to compare the two paths.
//
// All matrices are row-major and densely packed. The gemm kernels
// accumulate into C (C += op(A) * op(B)); callers zero C when they want a
// plain product.

#include <cstddef>
#include <span>
#include <string_view>

namespace metaxp::kernels {

enum class Backend { Scalar, Avx2 };

std::string_view backend_name(Backend backend);
bool backend_supported(Backend backend);

// Backend in use. Defaults to the widest supported one unless the
// METAXP_KERNELS environment variable names another ("scalar", "avx2").
Backend active_backend();

// Throws std::invalid_argument if the backend is not supported on this CPU.
void set_backend(Backend backend);

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);

double dot(std::span<const double> x, std::span<const double> y);
// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
// x *= alpha
void scale(double alpha, std::span<double> x);
// False if any element is NaN or infinite.
bool all_finite(std::span<const double> x);

// Raw-pointer signatures shared by both backends.
namespace scalar {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
double dot(std::size_t n, const double* x, const double* y);
void axpy(std::size_t n, double alpha, const double* x, double* y);
void scale(std::size_t n, double alpha, double* x);
bool all_finite(std::size_t n, const double* x);
}  // namespace scalar

namespace avx2 {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
double dot(std::size_t n, const double* x, const double* y);
void axpy(std::size_t n, double alpha, const double* x, double* y);
void scale(std::size_t n, double alpha, double* x);
bool all_finite(std::size_t n, const double* x);
}  // namespace avx2

}  // namespace metaxp::kernels
