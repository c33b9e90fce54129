#include <gtest/gtest.h>

#include <cmath>

#include "mndbn/math.hpp"

using namespace mndbn;

TEST(Sigmoid, SymmetryAndSaturation) {
    EXPECT_EQ(sigmoid(0.0), 0.5);
    EXPECT_GT(sigmoid(40.0), 1.0 - 1e-15);
    EXPECT_LT(sigmoid(40.0), 1.0);
    EXPECT_GT(sigmoid(-1000.0), 0.0);
    EXPECT_LT(sigmoid(1000.0), 1.0);
    EXPECT_NEAR(sigmoid(1.7) + sigmoid(-1.7), 1.0, 1e-15);
}

TEST(Sigmoid, MonotoneOnGrid) {
    double prev = 0.0;
    for (double z = -30.0; z <= 30.0; z += 0.25) {
        const double s = sigmoid(z);
        EXPECT_GT(s, prev);
        prev = s;
    }
}

TEST(Bernoulli, DegenerateProbabilities) {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        EXPECT_EQ(sample_bernoulli(0.0, rng), 0);
        EXPECT_EQ(sample_bernoulli(1.0, rng), 1);
    }
}

TEST(Bernoulli, FairCoinMean) {
    Rng rng(2024);
    long ones = 0;
    const long n = 1'000'000;
    for (long i = 0; i < n; ++i) ones += sample_bernoulli(0.5, rng);
    const double mean = static_cast<double>(ones) / n;
    EXPECT_GE(mean, 0.497);
    EXPECT_LE(mean, 0.503);
}

TEST(Bernoulli, ConsumesOneDrawAndRejectsBadProbability) {
    Rng a(7), b(7);
    sample_bernoulli(0.3, a);
    b.next_u64();
    EXPECT_EQ(a, b);
    EXPECT_THROW(sample_bernoulli(1.5, a), contract_error);
    EXPECT_THROW(sample_bernoulli(-0.1, a), contract_error);
    EXPECT_THROW(sample_bernoulli(std::nan(""), a), contract_error);
}

TEST(Rng, SameSeedSameStream) {
    Rng a(99), b(99), c(100);
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        EXPECT_EQ(x, b.next_u64());
        (void)c;
    }
    EXPECT_NE(Rng(99).next_u64(), Rng(100).next_u64());
}

TEST(Rng, FrozenStreamValues) {
    // Pins the generator so serialized experiments stay replayable.
    Rng r(42);
    EXPECT_EQ(r.next_u64(), 1546998764402558742ULL);
    EXPECT_EQ(r.next_u64(), 6990951692964543102ULL);
    EXPECT_EQ(r.next_u64(), 12544586762248559009ULL);
    EXPECT_DOUBLE_EQ(Rng(42).uniform(), 0.083862971059882163);
    EXPECT_EQ(Rng::stream(42, 3).next_u64(), 7178714523722854651ULL);
}

TEST(Rng, UniformIndexCoversRange) {
    Rng r(5);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) ++hits[r.uniform_index(7)];
    for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Rng, NormalMoments) {
    Rng r(11);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Matmul, HandComputed) {
    const Matrix a{{1, 2}, {3, 4}};
    const Matrix b{{5, 6}, {7, 8}};
    EXPECT_EQ(matmul(a, b), (Matrix{{19, 22}, {43, 50}}));
}

TEST(Matmul, IdentityAndTranspose) {
    Rng rng(3);
    const Matrix a = gaussian_matrix(3, 4, 1.0, rng);
    const Matrix b = gaussian_matrix(4, 2, 1.0, rng);
    EXPECT_EQ(matmul(a, Matrix::identity(4)), a);
    const Matrix lhs = transpose(matmul(a, b));
    const Matrix rhs = matmul(transpose(b), transpose(a));
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs.flat()[i], rhs.flat()[i], 1e-14);
}

TEST(Matmul, VariantsAgree) {
    Rng rng(4);
    const Matrix a = gaussian_matrix(5, 3, 1.0, rng);
    const Matrix b = gaussian_matrix(5, 4, 1.0, rng);
    const Matrix c = gaussian_matrix(6, 3, 1.0, rng);
    const Matrix tn = matmul_tn(a, b);
    const Matrix ref_tn = matmul(transpose(a), b);
    const Matrix nt = matmul_nt(a, c);
    const Matrix ref_nt = matmul(a, transpose(c));
    for (std::size_t i = 0; i < tn.size(); ++i) EXPECT_NEAR(tn.flat()[i], ref_tn.flat()[i], 1e-13);
    for (std::size_t i = 0; i < nt.size(); ++i) EXPECT_NEAR(nt.flat()[i], ref_nt.flat()[i], 1e-13);
}

TEST(Matmul, RejectsMismatchedShapes) {
    const Matrix a(2, 3), b(2, 3);
    EXPECT_THROW(matmul(a, b), contract_error);
    EXPECT_THROW(add(a, Matrix(3, 2)), contract_error);
    EXPECT_THROW(sub(a, Matrix(2, 2)), contract_error);
    EXPECT_THROW(matmul_tn(a, Matrix(3, 3)), contract_error);
    Matrix y(2, 2);
    EXPECT_THROW(axpy(1.0, a, y), contract_error);
    EXPECT_THROW(add_row_vector(y, Vector(3)), contract_error);
}

TEST(Matmul, ThreadCountDoesNotChangeResults) {
    Rng rng(8);
    const Matrix a = gaussian_matrix(300, 40, 1.0, rng);
    const Matrix b = gaussian_matrix(40, 30, 1.0, rng);
    set_num_threads(1);
    const Matrix one = matmul(a, b);
    const Matrix tn1 = matmul_tn(a, a);
    set_num_threads(4);
    const Matrix four = matmul(a, b);
    const Matrix tn4 = matmul_tn(a, a);
    set_num_threads(1);
    EXPECT_EQ(one, four);
    EXPECT_EQ(tn1, tn4);
}

TEST(Reductions, SumsAndMeans) {
    const Matrix a{{1, 2, 3}, {4, 5, 6}};
    EXPECT_EQ(row_sums(a), (Vector{6, 15}));
    EXPECT_EQ(col_sums(a), (Vector{5, 7, 9}));
    EXPECT_EQ(col_means(a), (Vector{2.5, 3.5, 4.5}));
    EXPECT_DOUBLE_EQ(log_sum_exp(Vector{std::log(1.0), std::log(3.0)}), std::log(4.0));
    EXPECT_NEAR(softplus(800.0), 800.0, 1e-12);
    EXPECT_NEAR(softplus(-800.0), 0.0, 1e-300);
}
