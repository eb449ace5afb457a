// SPDX-License-Identifier: Apache-2.0
#include <cassert>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "metaxp/kernels.hpp"

namespace metaxp::kernels {

namespace {

struct KernelTable {
  Backend backend;
  void (*gemm_nn)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
  void (*gemm_nt)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
  void (*gemm_tn)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
  double (*dot)(std::size_t, const double*, const double*);
  void (*axpy)(std::size_t, double, const double*, double*);
  void (*scale)(std::size_t, double, double*);
  bool (*all_finite)(std::size_t, const double*);
};

constexpr KernelTable kScalarTable{Backend::Scalar, scalar::gemm_nn, scalar::gemm_nt, scalar::gemm_tn,
                                   scalar::dot,     scalar::axpy,    scalar::scale, scalar::all_finite};
constexpr KernelTable kAvx2Table{Backend::Avx2, avx2::gemm_nn, avx2::gemm_nt, avx2::gemm_tn,
                                 avx2::dot,     avx2::axpy,    avx2::scale, avx2::all_finite};

const KernelTable& table_for(Backend backend) {
  return backend == Backend::Avx2 ? kAvx2Table : kScalarTable;
}

Backend initial_backend() {
  if (const char* env = std::getenv("METAXP_KERNELS")) {
    const std::string name(env);
    if (name == "scalar") return Backend::Scalar;
    if (name == "avx2" && backend_supported(Backend::Avx2)) return Backend::Avx2;
  }
  return backend_supported(Backend::Avx2) ? Backend::Avx2 : Backend::Scalar;
}

const KernelTable*& current() {
  static const KernelTable* table = &table_for(initial_backend());
  return table;
}

}  // namespace

std::string_view backend_name(Backend backend) {
  return backend == Backend::Avx2 ? "avx2" : "scalar";
}

bool backend_supported(Backend backend) {
  if (backend == Backend::Scalar) return true;
#if defined(METAXP_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported;
#else
  return false;
#endif
}

Backend active_backend() { return current()->backend; }

void set_backend(Backend backend) {
  if (!backend_supported(backend)) {
    throw std::invalid_argument("kernel backend not supported on this CPU: " +
                                std::string(backend_name(backend)));
  }
  current() = &table_for(backend);
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  assert(a.size() >= m * k && b.size() >= k * n && c.size() >= m * n);
  current()->gemm_nn(m, n, k, a.data(), b.data(), c.data());
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  assert(a.size() >= m * k && b.size() >= n * k && c.size() >= m * n);
  current()->gemm_nt(m, n, k, a.data(), b.data(), c.data());
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  assert(a.size() >= k * m && b.size() >= k * n && c.size() >= m * n);
  current()->gemm_tn(m, n, k, a.data(), b.data(), c.data());
}

double dot(std::span<const double> x, std::span<const double> y) {
  assert(x.size() == y.size());
  return current()->dot(x.size(), x.data(), y.data());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  current()->axpy(x.size(), alpha, x.data(), y.data());
}

void scale(double alpha, std::span<double> x) { current()->scale(x.size(), alpha, x.data()); }

bool all_finite(std::span<const double> x) { return current()->all_finite(x.size(), x.data()); }

}  // namespace metaxp::kernels
