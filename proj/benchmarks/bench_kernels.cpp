// Compares the serial reference kernels against the OpenMP versions and the
// end-to-end gradient throughput. Usage: bench_kernels [repeats]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "salbench/models.hpp"
#include "salbench/rng.hpp"
#include "salbench/saliency.hpp"
#include "salbench/tensor.hpp"

using namespace salbench;

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

double bench_matmul(size_t m, size_t k, size_t n, int repeats, bool parallel) {
  RngStream rng(1234);
  std::vector<double> a(m * k), b(k * n), c(m * n);
  for (auto& v : a) v = rng.uniform(-1, 1);
  for (auto& v : b) v = rng.uniform(-1, 1);
  double t0 = now_seconds();
  for (int r = 0; r < repeats; ++r) {
    if (parallel) matmul_kernel(a.data(), b.data(), c.data(), m, k, n);
    else matmul_reference(a.data(), b.data(), c.data(), m, k, n);
  }
  return (now_seconds() - t0) / repeats;
}

double bench_gradients(ArchKind arch, int repeats) {
  Vocabulary vocab;
  for (int i = 0; i < 60; ++i) vocab.add("tok" + std::to_string(i));
  ModelConfig cfg;
  cfg.arch = arch;
  cfg.embed_dim = 32;
  cfg.hidden_dim = 64;
  cfg.layers = 2;
  LanguageModel model = init_model(cfg, vocab, 99, "bench");
  ProbeHead probe = init_probe(model.hidden_dim(), {"A", "B"}, 7);
  std::vector<int> prefix = {2, 9, 4, 11, 6, 3, 8, 5};
  double t0 = now_seconds();
  for (int r = 0; r < repeats; ++r) {
    (void)input_gradient(model, prefix, r % 2, HeadRef(probe));
  }
  return (now_seconds() - t0) / repeats;
}

}  // namespace

int main(int argc, char** argv) {
  int repeats = argc > 1 ? std::atoi(argv[1]) : 5;
#ifdef _OPENMP
  std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
  std::printf("openmp: not enabled\n");
#endif

  std::printf("%-28s %12s %12s %8s\n", "kernel", "serial (ms)", "omp (ms)", "speedup");
  for (size_t dim : {64, 128, 256, 512}) {
    double serial = bench_matmul(dim, dim, dim, repeats, false) * 1e3;
    double par = bench_matmul(dim, dim, dim, repeats, true) * 1e3;
    std::printf("matmul %4zux%-4zu x %-10zu %12.3f %12.3f %8.2f\n", dim, dim, dim, serial, par,
                serial / par);
  }

  for (ArchKind arch : {ArchKind::kRecurrent, ArchKind::kAttention}) {
    double per = bench_gradients(arch, repeats * 10) * 1e3;
    std::printf("input_gradient %-12s %12.3f ms/call\n", arch_name(arch).c_str(), per);
  }
  return 0;
}
