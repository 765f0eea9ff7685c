#include <cmath>

#include "capgnn/error.hpp"
#include "capgnn/linalg.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace capgnn;
using linalg::CsrMatrix;
using linalg::DenseMatrix;
using linalg::NormOrder;
using linalg::SeededRng;

TEST_CASE("dense construction validates shape and finiteness") {
  CHECK_THROWS_AS(DenseMatrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(DenseMatrix::from_rows({{1.0, 2.0}, {3.0}}), ShapeError);
  CHECK_THROWS_AS(DenseMatrix::from_rows({{1.0, NAN}}), ShapeError);
  CHECK_THROWS_AS(DenseMatrix::from_rows({{INFINITY}}), ShapeError);
  const auto m = DenseMatrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(1, 2) == 6.0);
  CHECK(m.size() == 6);
}

TEST_CASE("csr canonical form is enforced") {
  CHECK_THROWS_AS(CsrMatrix(2, 2, {0, 2, 2}, {1, 0}, {1.0, 1.0}), ShapeError);
  CHECK_THROWS_AS(CsrMatrix(2, 2, {0, 2, 2}, {0, 0}, {1.0, 1.0}), ShapeError);
  CHECK_THROWS_AS(CsrMatrix(2, 2, {0, 1, 1}, {2}, {1.0}), ShapeError);
  CHECK_THROWS_AS(CsrMatrix(2, 2, {1, 1, 1}, {0}, {1.0}), ShapeError);
  CHECK_THROWS_AS(CsrMatrix(2, 2, {0, 2, 1}, {0}, {1.0}), ShapeError);
  CHECK_THROWS_AS(CsrMatrix::from_entries(2, 2, {{0, 1, 1.0}, {0, 1, 2.0}}), ShapeError);
  const auto m = CsrMatrix::from_entries(2, 3, {{1, 2, 5.0}, {0, 1, 1.0}, {1, 0, 2.0}});
  CHECK(m.nnz() == 3);
  CHECK(m.at(1, 0) == 2.0);
  CHECK(m.at(1, 1) == 0.0);
  CHECK(m.at(1, 2) == 5.0);
  CHECK(CsrMatrix::from_dense(m.to_dense()) == m);
}

TEST_CASE("spmm examples") {
  SUBCASE("identity leaves the operand unchanged") {
    const auto b = DenseMatrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
    CHECK(linalg::spmm(CsrMatrix::identity(3), b) == b);
  }
  SUBCASE("permutation swaps rows") {
    const auto p = CsrMatrix::from_entries(2, 2, {{0, 1, 1.0}, {1, 0, 1.0}});
    const auto b = DenseMatrix::from_rows({{1, 2}, {3, 4}});
    CHECK(linalg::spmm(p, b) == DenseMatrix::from_rows({{3, 4}, {1, 2}}));
  }
  SUBCASE("empty row gives a zero row") {
    const auto a = CsrMatrix::from_entries(3, 3, {{0, 0, 2.0}, {2, 1, 1.0}});
    const auto b = DenseMatrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
    const auto c = linalg::spmm(a, b);
    CHECK(c(1, 0) == 0.0);
    CHECK(c(1, 1) == 0.0);
    CHECK(c(0, 1) == 4.0);
    CHECK(c(2, 0) == 3.0);
  }
  SUBCASE("dimension mismatch names both shapes") {
    const auto a = CsrMatrix::identity(3);
    const DenseMatrix b(2, 4);
    try {
      (void)linalg::spmm(a, b);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("3x3") != std::string::npos);
      CHECK(msg.find("2x4") != std::string::npos);
    }
  }
}

TEST_CASE("spmm agrees with a dense triple loop on random 8x8 instances") {
  SeededRng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<CsrMatrix::Entry> entries;
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t j = 0; j < 8; ++j) {
        if (rng.uniform() < 0.35) entries.push_back({i, j, rng.normal()});
      }
    }
    const auto a = CsrMatrix::from_entries(8, 8, entries);
    const auto b = linalg::sample_gaussian_like(8, 8, rng);
    const auto got = linalg::spmm(a, b);
    const auto want = oracle::naive_product(a.to_dense(), b);
    for (std::size_t k = 0; k < got.size(); ++k) {
      const double scale = std::max(1.0, std::abs(want.data()[k]));
      CHECK(std::abs(got.data()[k] - want.data()[k]) <= 1e-12 * scale);
    }
  }
}

TEST_CASE("dense products agree with the triple loop") {
  SeededRng rng(5);
  const auto a = linalg::sample_gaussian_like(4, 3, rng);
  const auto b = linalg::sample_gaussian_like(3, 5, rng);
  const auto c = linalg::sample_gaussian_like(4, 5, rng);
  const auto ab = linalg::matmul(a, b);
  const auto ab_ref = oracle::naive_product(a, b);
  // aᵀc and c bᵀ through explicit transposes.
  DenseMatrix at(3, 4), bt(5, 3);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) at(j, i) = a(i, j);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) bt(j, i) = b(i, j);
  const auto tn = linalg::matmul_tn(a, c);
  const auto tn_ref = oracle::naive_product(at, c);
  const auto nt = linalg::matmul_nt(c, b);
  const auto nt_ref = oracle::naive_product(c, bt);
  for (std::size_t k = 0; k < ab.size(); ++k) CHECK(ab.data()[k] == doctest::Approx(ab_ref.data()[k]).epsilon(1e-12));
  for (std::size_t k = 0; k < tn.size(); ++k) CHECK(tn.data()[k] == doctest::Approx(tn_ref.data()[k]).epsilon(1e-12));
  for (std::size_t k = 0; k < nt.size(); ++k) CHECK(nt.data()[k] == doctest::Approx(nt_ref.data()[k]).epsilon(1e-12));
  CHECK_THROWS_AS((void)linalg::matmul(a, c), ShapeError);
  CHECK_THROWS_AS((void)linalg::matmul_tn(a, b), ShapeError);
  CHECK_THROWS_AS((void)linalg::matmul_nt(a, b), ShapeError);
}

TEST_CASE("lp_norm examples") {
  CHECK(linalg::lp_norm(DenseMatrix::from_rows({{3, 4}}), NormOrder::two) == 5.0);
  CHECK(linalg::lp_norm(DenseMatrix::from_rows({{-7, 2}}), NormOrder::inf) == 7.0);
  CHECK(linalg::lp_norm(DenseMatrix(3, 2), NormOrder::two) == 0.0);
  CHECK(linalg::lp_norm(DenseMatrix(3, 2), NormOrder::inf) == 0.0);
  CHECK_THROWS_AS((void)linalg::lp_norm(DenseMatrix(), NormOrder::two), ShapeError);
  CHECK_THROWS_AS((void)linalg::parse_norm_order("1"), ConfigError);
  CHECK(linalg::parse_norm_order("2") == NormOrder::two);
  CHECK(linalg::parse_norm_order("inf") == NormOrder::inf);
}

TEST_CASE("lp_norm is absolutely homogeneous") {
  SeededRng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = linalg::sample_gaussian_like(1 + rng.uniform_index(6), 1 + rng.uniform_index(6), rng);
    const double c = rng.uniform(-10.0, 10.0);
    const double lhs = linalg::lp_norm(c * m, NormOrder::two);
    const double rhs = std::abs(c) * linalg::lp_norm(m, NormOrder::two);
    CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, rhs));
  }
}

TEST_CASE("gaussian sampling") {
  SUBCASE("same seed gives bit-identical matrices") {
    SeededRng a(42), b(42);
    CHECK(linalg::sample_gaussian_like(5, 7, a) == linalg::sample_gaussian_like(5, 7, b));
  }
  SUBCASE("different seeds differ") {
    SeededRng a(1), b(2);
    CHECK_FALSE(linalg::sample_gaussian_like(5, 7, a) == linalg::sample_gaussian_like(5, 7, b));
  }
  SUBCASE("moments of 10000 draws") {
    SeededRng rng(2024);
    const auto m = linalg::sample_gaussian_like(100, 100, rng);
    double mean = 0.0;
    for (double v : m.data()) mean += v;
    mean /= static_cast<double>(m.size());
    double var = 0.0;
    for (double v : m.data()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(m.size() - 1));
    CHECK(std::abs(mean) <= 0.05);
    CHECK(std::abs(sd - 1.0) <= 0.05);
  }
  SUBCASE("zero dimensions are rejected") {
    SeededRng rng(0);
    CHECK_THROWS((void)linalg::sample_gaussian_like(0, 3, rng));
  }
}

TEST_CASE("rng helpers") {
  SeededRng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.uniform_index(7) < 7);
  }
  SeededRng p(9), q(9);
  auto pc = p.split();
  auto qc = q.split();
  CHECK(pc.next_u64() == qc.next_u64());
  CHECK(p.next_u64() == q.next_u64());
  CHECK_THROWS_AS((void)rng.uniform_index(0), ConfigError);
}
