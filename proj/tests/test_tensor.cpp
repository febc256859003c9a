#include <doctest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "ctc/tensor.hpp"
#include "ctc/tensor_io.hpp"
#include "oracles.hpp"

using namespace ctc;

TEST_CASE("linear offsets follow first-index-fastest order and are a bijection") {
    const Dims dims{3, 4, 2};
    std::set<Index> seen;
    for (const auto& s : oracle::all_indices(dims)) {
        const Index off = linear_offset(dims, s);
        CHECK(off == s[0] + 3 * s[1] + 12 * s[2]);
        CHECK(entry_index(dims, off) == s);
        seen.insert(off);
    }
    CHECK(seen.size() == 24);
    CHECK(*seen.rbegin() == 23);
    CHECK_THROWS_AS(linear_offset(dims, EntryIndex{3, 0, 0}), InvalidArgument);
    CHECK_THROWS_AS(linear_offset(dims, EntryIndex{0, 0}), DimensionMismatch);
}

TEST_CASE("construction validates dims") {
    CHECK_THROWS_AS(DenseTensor(Dims{}), InvalidArgument);
    CHECK_THROWS_AS(DenseTensor(Dims{2, 0}), InvalidArgument);
    CHECK_THROWS_AS(DenseTensor(Dims(9, 1)), InvalidArgument);
    CHECK_NOTHROW(DenseTensor(Dims(8, 1)));
    CHECK_THROWS_AS(DenseTensor(Dims{2, 2}, VectorX<double>::Zero(3)), DimensionMismatch);
}

TEST_CASE("inner product and norms") {
    const auto ones = DenseTensor::ones({2, 2, 2});
    CHECK(inner_product(ones, ones) == 8.0);
    CHECK(frobenius_norm(ones) == doctest::Approx(2.0 * std::sqrt(2.0)).epsilon(1e-15));
    CHECK(max_norm(ones) == 1.0);

    DenseTensor single({2, 3});
    single[4] = -3.0;
    CHECK(frobenius_norm(single) == 3.0);
    CHECK(max_norm(single) == 3.0);

    std::mt19937_64 rng(7);
    const auto x = oracle::random_tensor({3, 4, 2}, rng);
    const auto y = oracle::random_tensor({3, 4, 2}, rng);
    double loop = 0.0;
    for (const auto& s : oracle::all_indices(x.dims())) loop += x(s) * y(s);
    CHECK(inner_product(x, y) == doctest::Approx(loop).epsilon(1e-14));
    CHECK(inner_product(x, y) == inner_product(y, x));
    CHECK(inner_product(x, DenseTensor::zeros(x.dims())) == 0.0);
    const double f = frobenius_norm(x);
    CHECK(std::abs(inner_product(x, x) - f * f) <= 1e-12 * f * f);
}

TEST_CASE("norms reject missing entries and mismatched dims") {
    DenseTensor x = DenseTensor::ones({2, 2});
    x[1] = missing_value<double>();
    CHECK(x.has_missing());
    CHECK_THROWS_AS(frobenius_norm(x), MissingValueError);
    CHECK_THROWS_AS(max_norm(x), MissingValueError);
    CHECK_THROWS_AS(inner_product(x, DenseTensor::ones({2, 2})), MissingValueError);
    CHECK_THROWS_AS(inner_product(DenseTensor::ones({2, 2}), DenseTensor::ones({4})), DimensionMismatch);
}

TEST_CASE("mode product matches the defining sum") {
    std::mt19937_64 rng(11);
    const auto x = oracle::random_tensor({3, 3, 3}, rng);
    for (std::size_t k = 0; k < 3; ++k) {
        const oracle::Mat u = oracle::random_matrix(2, 3, rng);
        const auto y = mode_product(x, u, k);
        CHECK(y.dim(k) == 2);
        for (const auto& s : oracle::all_indices(y.dims())) {
            double sum = 0.0;
            for (Index i = 0; i < 3; ++i) {
                EntryIndex t = s;
                t[k] = i;
                sum += u(s[k], i) * x(t);
            }
            CHECK(y(s) == doctest::Approx(sum).epsilon(1e-14));
        }
        const auto same = mode_product(x, MatrixX<double>::Identity(3, 3), k);
        CHECK(same.values() == x.values());
    }
    SUBCASE("all-ones row vector sums along the mode") {
        const auto m = mode_product(x, MatrixX<double>::Ones(1, 3), 1);
        CHECK(m.dims() == Dims{3, 1, 3});
        CHECK(m(EntryIndex{2, 0, 1}) ==
              doctest::Approx(x(EntryIndex{2, 0, 1}) + x(EntryIndex{2, 1, 1}) + x(EntryIndex{2, 2, 1})));
    }
    CHECK_THROWS_AS(mode_product(x, MatrixX<double>::Ones(2, 4), 0), DimensionMismatch);
}

TEST_CASE("separation groups leading modes into rows") {
    std::mt19937_64 rng(3);
    const auto x = oracle::random_tensor({2, 3, 4}, rng);
    const auto m = separation(x, 1);
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 12);
    for (const auto& s : oracle::all_indices(x.dims())) CHECK(m(s[0], s[1] + 3 * s[2]) == x(s));
    // each column is the vectorized mode-1 fiber
    CHECK(m.col(5) == x.values().segment(10, 2));
    const auto m2 = separation(x, 2);
    CHECK(m2.rows() == 6);
    const auto back = from_separation(m2, x.dims());
    CHECK(back.values() == x.values());
    CHECK_THROWS_AS(separation(x, 0), InvalidArgument);
    CHECK_THROWS_AS(separation(x, 3), InvalidArgument);

    const auto mat = oracle::random_tensor({3, 5}, rng);
    CHECK(separation(mat, 1) == Eigen::Map<const MatrixX<double>>(mat.data(), 3, 5));
}

TEST_CASE("unfold and fold are inverse") {
    std::mt19937_64 rng(5);
    const auto x = oracle::random_tensor({2, 3, 4}, rng);
    for (std::size_t k = 0; k < 3; ++k) {
        const auto u = unfold(x, k);
        CHECK(u.rows() == x.dim(k));
        CHECK(fold(u, k, x.dims()).values() == x.values());
    }
    // Kolda ordering: remaining modes first-index-fastest
    const auto u1 = unfold(x, 1);
    CHECK(u1(2, 1 + 2 * 3) == x(EntryIndex{1, 2, 3}));
}

TEST_CASE("DTEN round trip including NaN") {
    std::mt19937_64 rng(9);
    auto x = oracle::random_tensor({3, 2, 5}, rng);
    x[4] = missing_value<double>();
    std::stringstream ss;
    write_dten(ss, x);
    const std::string bytes = ss.str();
    REQUIRE(bytes.size() == 4 + 1 + 1 + 4 + 3 * 4 + 30 * 8);
    CHECK(bytes.substr(0, 4) == "DTEN");
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 1);
    CHECK(static_cast<unsigned char>(bytes[6]) == 3);
    CHECK(static_cast<unsigned char>(bytes[10]) == 3);
    const auto y = read_dten(ss);
    CHECK(y.dims() == x.dims());
    CHECK(y.is_missing(4));
    for (Index i = 0; i < x.size(); ++i)
        if (i != 4) CHECK(y[i] == x[i]);

    std::stringstream bad("DTEX\x01\x01");
    CHECK_THROWS_AS(read_dten(bad), DataError);
    std::stringstream truncated(bytes.substr(0, 40));
    CHECK_THROWS_AS(read_dten(truncated), DataError);
    CHECK_THROWS_AS(read_dten(std::filesystem::path("/nonexistent/never.dten")), DataError);
}
