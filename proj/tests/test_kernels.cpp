#include <doctest.h>

#include <random>

#include "mixhop/kernels.hpp"
#include "mixhop/sparse_adjacency.hpp"
#include "oracles.hpp"

using namespace mixhop;

namespace {

// Sets the kernel thread count for one scope.
struct ThreadScope {
  int saved = kernels::thread_count();
  explicit ThreadScope(int n) { kernels::set_thread_count(n); }
  ~ThreadScope() { kernels::set_thread_count(saved); }
};

DenseMatrix with_zeros(DenseMatrix m, std::mt19937_64& gen) {
  std::bernoulli_distribution coin(0.3);
  for (double& v : m.values())
    if (coin(gen)) v = 0.0;
  return m;
}

}  // namespace

TEST_CASE("serial kernels match the triple-loop oracle") {
  std::mt19937_64 gen(1);
  const DenseMatrix a = with_zeros(oracle::random_matrix(17, 9, gen), gen);
  const DenseMatrix b = oracle::random_matrix(9, 5, gen);
  DenseMatrix out(17, 5);
  kernels::serial::gemm(a, b, out);
  CHECK(max_abs_diff(out, oracle::matmul(a, b)) < 1e-14);

  const DenseMatrix c = oracle::random_matrix(17, 5, gen);
  DenseMatrix tn(9, 5);
  kernels::serial::gemm_tn(a, c, tn);
  CHECK(max_abs_diff(tn, oracle::matmul(a.transposed(), c)) < 1e-14);

  DenseMatrix nt(17, 9);
  const DenseMatrix d = oracle::random_matrix(9, 9, gen);
  kernels::serial::gemm_nt(a, d, nt);
  CHECK(max_abs_diff(nt, oracle::matmul(a, d.transposed())) < 1e-14);

  const auto edges = oracle::random_edges(17, 0.3, gen);
  const auto s = SparseAdjacency::from_edge_list(edges, 17).renormalize();
  DenseMatrix sp(17, 5);
  kernels::serial::spmm(s.view(), c, sp);
  CHECK(max_abs_diff(sp, oracle::matmul(oracle::normalized_adjacency(edges, 17), c)) < 1e-14);
}

TEST_CASE("parallel kernels agree bitwise with the serial reference") {
  std::mt19937_64 gen(2);
  const DenseMatrix a = with_zeros(oracle::random_matrix(203, 31, gen), gen);
  const DenseMatrix b = oracle::random_matrix(31, 13, gen);
  const DenseMatrix c = oracle::random_matrix(203, 13, gen);
  const DenseMatrix d = oracle::random_matrix(7, 31, gen);
  const auto s = SparseAdjacency::from_edge_list(oracle::random_edges(203, 0.05, gen), 203)
                     .renormalize();

  DenseMatrix g1(203, 13), tn1(31, 13), nt1(203, 7), sp1(203, 13);
  kernels::serial::gemm(a, b, g1);
  kernels::serial::gemm_tn(a, c, tn1);
  kernels::serial::gemm_nt(a, d, nt1);
  kernels::serial::spmm(s.view(), c, sp1);

  for (int threads : {1, 2, 3, 4, 8}) {
    CAPTURE(threads);
    ThreadScope scope(threads);
    DenseMatrix g2(203, 13, 9.0), tn2(31, 13, 9.0), nt2(203, 7, 9.0), sp2(203, 13, 9.0);
    kernels::parallel::gemm(a, b, g2);
    kernels::parallel::gemm_tn(a, c, tn2);
    kernels::parallel::gemm_nt(a, d, nt2);
    kernels::parallel::spmm(s.view(), c, sp2);
    CHECK(g2 == g1);
    CHECK(tn2 == tn1);
    CHECK(nt2 == nt1);
    CHECK(sp2 == sp1);
    CHECK(kernels::matmul(a, b) == g1);
    CHECK(kernels::spmm(s.view(), c) == sp1);
  }
}

TEST_CASE("thread count setting") {
  ThreadScope scope(3);
  CHECK(kernels::thread_count() == 3);
  kernels::set_thread_count(0);
  CHECK(kernels::thread_count() == 1);
}
