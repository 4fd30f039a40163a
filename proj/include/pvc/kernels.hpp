#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace pvc::kernels {

// Vectorizable inner loops of the tensor/autodiff core. Every entry has a
// scalar reference implementation; AVX2 (x86-64) and NEON (aarch64)
// variants are selected at runtime and equivalence-tested against the
// reference. Elementwise entries are bit-identical across backends;
// reductions and axpy/dot may differ by reassociation within a few ulps.
struct Ops {
  const char* name;

  void (*add)(const double* a, const double* b, double* y, std::size_t n);
  void (*sub)(const double* a, const double* b, double* y, std::size_t n);
  void (*mul)(const double* a, const double* b, double* y, std::size_t n);
  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // y[i] += a[i] * b[i]
  void (*fma_acc)(const double* a, const double* b, double* y, std::size_t n);
  void (*scale)(double a, double* x, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*abs_sum)(const double* x, std::size_t n);
  double (*sq_sum)(const double* x, std::size_t n);
  double (*abs_diff_sum)(const double* a, const double* b, std::size_t n);
  double (*max_abs)(const double* x, std::size_t n);
  void (*leaky_relu)(const double* x, double* y, std::size_t n, double slope);
  // gx[i] += gy[i] * (x[i] > 0 ? 1 : slope)
  void (*leaky_relu_grad)(const double* x, const double* gy, double* gx, std::size_t n,
                          double slope);
};

const Ops& scalar_ops();

// Backend chosen for this process: best available unless overridden by
// the PVC_KERNELS environment variable (scalar | avx2 | neon).
const Ops& active();

std::vector<std::string> available_backends();
const Ops* backend_by_name(const std::string& name);

}  // namespace pvc::kernels
