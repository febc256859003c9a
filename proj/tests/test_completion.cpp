#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "ctc/completion.hpp"
#include "ctc/tensor_io.hpp"
#include "oracles.hpp"

using namespace ctc;

namespace {

oracle::Mat orthonormal(Index rows, Index cols, std::mt19937_64& rng) {
    Eigen::HouseholderQR<oracle::Mat> qr(oracle::random_matrix(rows, cols, rng));
    return qr.householderQ() * oracle::Mat::Identity(rows, cols);
}

TuckerTensor random_tucker(const Dims& dims, const std::vector<Index>& rank, std::mt19937_64& rng) {
    TuckerTensor t;
    t.core = oracle::random_tensor(Dims(rank.begin(), rank.end()), rng);
    for (std::size_t k = 0; k < dims.size(); ++k) t.factors.push_back(orthonormal(dims[k], rank[k], rng));
    return t;
}

DenseTensor mask_out(DenseTensor x, double frac, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Index i = 0; i < x.size(); ++i)
        if (u(rng) < frac) x[i] = missing_value<double>();
    return x;
}

// Tangent norm by dense projection of the indicator.
double dense_tangent_norm(const EntryIndex& s, const TuckerTensor& t) {
    const Dims dims = t.dims();
    oracle::Vec e = oracle::Vec::Zero(num_entries(dims));
    e(oracle::offset(dims, s)) = 1.0;
    return oracle::project_onto_span(oracle::tucker_tangent_basis(t), e).norm();
}

}  // namespace

TEST_CASE("tucker_full applies every factor") {
    std::mt19937_64 rng(1);
    const auto t = random_tucker({3, 4, 5}, {2, 2, 3}, rng);
    const auto x = tucker_full(t);
    CHECK(x.dims() == Dims{3, 4, 5});
    for (const auto& s : oracle::all_indices(x.dims())) {
        double sum = 0.0;
        for (const auto& c : oracle::all_indices(t.core.dims()))
            sum += t.core(c) * t.factors[0](s[0], c[0]) * t.factors[1](s[1], c[1]) * t.factors[2](s[2], c[2]);
        CHECK(x(s) == doctest::Approx(sum).epsilon(1e-13));
    }
    auto bad = t;
    bad.factors[1] = oracle::Mat::Zero(4, 3);
    CHECK_THROWS_AS(bad.validate(), DimensionMismatch);
}

TEST_CASE("fully observed exact Tucker tensor is recovered") {
    std::mt19937_64 rng(2);
    const auto x = tucker_full(random_tucker({6, 7, 5}, {2, 2, 2}, rng));
    CompletionOptions opts;
    opts.rank = {2, 2, 2};
    const auto fit = tucker_complete(x, opts);
    const auto est = tucker_full(fit.tucker);
    CHECK(frobenius_norm(est - x) <= 1e-6 * frobenius_norm(x));
    for (const auto& u : fit.tucker.factors)
        CHECK((u.transpose() * u - oracle::Mat::Identity(u.cols(), u.cols())).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("noiseless completion with half the entries missing") {
    std::mt19937_64 rng(3);
    const auto x = tucker_full(random_tucker({20, 20, 20}, {3, 3, 3}, rng));
    const auto masked = mask_out(x, 0.5, rng);
    CompletionOptions opts;
    opts.rank = {3, 3, 3};
    const auto fit = tucker_complete(masked, opts);
    const auto est = tucker_full(fit.tucker);
    double num = 0.0, den = 0.0;
    for (Index i = 0; i < x.size(); ++i)
        if (masked.is_missing(i)) {
            num += (est[i] - x[i]) * (est[i] - x[i]);
            den += x[i] * x[i];
        }
    CHECK(std::sqrt(num / den) <= 1e-3);
    for (std::size_t i = 1; i < fit.objective.size(); ++i) CHECK(fit.objective[i] <= fit.objective[i - 1]);
}

TEST_CASE("full rank interpolates and rank increases shrink residuals") {
    std::mt19937_64 rng(4);
    const auto x = oracle::random_tensor({4, 3, 5}, rng);
    CompletionOptions opts;
    opts.rank = {4, 3, 5};
    CHECK(frobenius_norm(tucker_full(tucker_complete(x, opts).tucker) - x) <= 1e-10 * frobenius_norm(x));
    double prev = std::numeric_limits<double>::infinity();
    for (Index r = 1; r <= 3; ++r) {
        opts.rank = {r, r, r};
        const double res = frobenius_norm(tucker_full(tucker_complete(x, opts).tucker) - x);
        CHECK(res <= prev + 1e-12);
        prev = res;
    }
}

TEST_CASE("completion tolerates empty slices and rejects empty data") {
    std::mt19937_64 rng(5);
    auto x = tucker_full(random_tucker({5, 5, 5}, {2, 2, 2}, rng));
    for (Index j = 0; j < 5; ++j)
        for (Index k = 0; k < 5; ++k) x(EntryIndex{2, j, k}) = missing_value<double>();
    CompletionOptions opts;
    opts.rank = {2, 2, 2};
    opts.max_iter = 50;
    const auto est = TuckerCompletion(opts).complete(x);
    CHECK(!est.has_missing());
    CHECK(est.dims() == x.dims());

    const auto a = tucker_complete(x, opts), b = tucker_complete(x, opts);
    CHECK(a.tucker.core.values() == b.tucker.core.values());

    DenseTensor none = DenseTensor::constant({3, 3, 3}, missing_value<double>());
    CHECK_THROWS_AS(tucker_complete(none, opts), InvalidArgument);
    opts.rank = {2, 2};
    CHECK_THROWS_AS(tucker_complete(x, opts), InvalidArgument);
}

TEST_CASE("Tucker tangent norm") {
    std::mt19937_64 rng(6);
    SUBCASE("full rank gives one everywhere") {
        const auto t = random_tucker({3, 4, 2}, {3, 4, 2}, rng);
        const auto n = tucker_tangent_norms(t);
        CHECK((n.values().array() - 1.0).abs().maxCoeff() <= 1e-12);
    }
    SUBCASE("rank one on coordinate axes") {
        TuckerTensor t;
        t.core = DenseTensor::constant({1, 1, 1}, 2.0);
        for (int k = 0; k < 3; ++k) t.factors.push_back(oracle::Mat::Identity(3, 1));
        CHECK(tucker_tangent_norm(EntryIndex{0, 0, 0}, t) == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(tucker_tangent_norm(EntryIndex{1, 1, 1}, t) == 0.0);
        // one off-axis coordinate: direction along one factor
        CHECK(tucker_tangent_norm(EntryIndex{1, 0, 0}, t) == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(tucker_tangent_norm(EntryIndex{1, 2, 0}, t) == 0.0);
    }
    SUBCASE("matches the dense tangent basis") {
        for (int trial = 0; trial < 3; ++trial) {
            const auto t = random_tucker({4, 4, 4}, {2, 2, 2}, rng);
            const auto n = tucker_tangent_norms(t);
            for (const auto& s : oracle::all_indices(t.dims())) {
                CHECK(std::abs(n(s) - dense_tangent_norm(s, t)) <= 1e-8);
                CHECK(std::abs(tucker_tangent_norm(s, t) - n(s)) <= 1e-12);
            }
        }
        const auto t = random_tucker({3, 5, 4}, {2, 3, 1}, rng);
        for (const auto& s : oracle::all_indices(t.dims())) {
            const double v = tucker_tangent_norm(s, t);
            CHECK(std::abs(v - dense_tangent_norm(s, t)) <= 1e-8);
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("external completion runs a command on DTEN files") {
    const auto dir = std::filesystem::temp_directory_path() / "ctc_external_test";
    std::filesystem::create_directories(dir);
    DenseTensor x = DenseTensor::ones({2, 3});
    x[1] = missing_value<double>();

    // copying the input back keeps the NaN, which the adapter must reject
    CHECK_THROWS_AS(ExternalCompletion("cp {input} {output}").complete(x), DataError);
    CHECK_THROWS_AS(ExternalCompletion("false {input} {output}").complete(x), DataError);
    CHECK_THROWS_AS(ExternalCompletion("cp {input} somewhere"), InvalidArgument);

    const auto fixed = dir / "estimate.dten";
    write_dten(fixed.string(), DenseTensor::constant({2, 3}, 4.0));
    const ExternalCompletion ext("cp " + fixed.string() + " {output} # {input}");
    CHECK(ext.name() == "external");
    const auto est = ext.complete(x);
    CHECK(est.values() == DenseTensor::constant({2, 3}, 4.0).values());

    write_dten(fixed.string(), DenseTensor::constant({3, 2}, 4.0));
    CHECK_THROWS_AS(ext.complete(x), DataError);
    std::filesystem::remove_all(dir);
}
