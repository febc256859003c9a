#include <doctest.h>

#include <cmath>

#include "ctc/missingness.hpp"
#include "oracles.hpp"

using namespace ctc;

namespace {

PropensityModel ising(double theta, double q = 0.7) {
    PropensityModel m;
    m.coupling = Coupling::product(theta);
    m.q = q;
    return m;
}

MaskTensor random_mask(const Dims& dims, std::mt19937_64& rng, double p = 0.5) {
    std::bernoulli_distribution b(p);
    DenseTensor w(dims);
    for (Index i = 0; i < w.size(); ++i) w[i] = b(rng) ? 1.0 : -1.0;
    return MaskTensor(w);
}

}  // namespace

TEST_CASE("mask tensor holds only ±1") {
    CHECK_THROWS_AS(MaskTensor(DenseTensor::zeros({2, 2})), InvalidArgument);
    DenseTensor x = DenseTensor::ones({2, 3});
    x[2] = missing_value<double>();
    const auto w = MaskTensor::from_observed(x);
    CHECK(w[2] == -1.0);
    CHECK(w.count_observed() == 5);
}

TEST_CASE("coupling and field polynomials") {
    const auto g = Coupling::product(0.25);
    CHECK(g(2.0, 3.0) == 1.5);
    CHECK(g.dx(2.0, 3.0) == 0.75);
    CHECK(Coupling::product(0.0).is_zero());
    CHECK_THROWS_AS(Coupling::product(-1.0), InvalidArgument);
    CHECK_THROWS_AS(Coupling({{1.0, 2, 1}}), InvalidArgument);
    const Coupling sym({{1.0, 2, 1}, {1.0, 1, 2}, {0.5, 0, 0}});
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int i = 0; i < 50; ++i) {
        const double x = u(rng), y = u(rng);
        CHECK(sym(x, y) == doctest::Approx(sym(y, x)).epsilon(1e-14));
        const double h = 1e-6;
        CHECK(sym.dx(x, y) == doctest::Approx((sym(x + h, y) - sym(x - h, y)) / (2 * h)).epsilon(1e-7));
    }
    const Field f;
    CHECK(f(1.0) == 0.5);
    CHECK(f.derivative(3.0) == 0.5);
    const Field cubic({1.0, 0.0, 0.0, 2.0});
    CHECK(cubic(2.0) == 17.0);
    CHECK(cubic.derivative(2.0) == 24.0);
}

TEST_CASE("neighbors on the grid lattice") {
    CHECK(neighbors({2, 2, 2}, {5, 5, 5}).size() == 6);
    CHECK(neighbors({0, 0, 0}, {5, 5, 5}).size() == 3);
    CHECK(neighbors({0, 0, 0}, {1, 1, 1}).empty());
    const Dims dims{3, 4, 2};
    for (const auto& s : oracle::all_indices(dims))
        for (const auto& t : neighbors(s, dims)) {
            Index l1 = 0;
            for (std::size_t k = 0; k < 3; ++k) l1 += std::abs(s[k] - t[k]);
            CHECK(l1 == 1);
            const auto back = neighbors(t, dims);
            CHECK(std::find(back.begin(), back.end(), s) != back.end());
        }
}

TEST_CASE("neighbor_sum matches explicit neighbor loops") {
    std::mt19937_64 rng(2);
    const auto x = oracle::random_tensor({3, 4, 5}, rng);
    const auto ns = neighbor_sum(x);
    for (const auto& s : oracle::all_indices(x.dims())) {
        double sum = 0.0;
        for (const auto& t : neighbors(s, x.dims())) sum += x(t);
        CHECK(ns(s) == doctest::Approx(sum).epsilon(1e-14));
    }
}

TEST_CASE("hamiltonian") {
    std::mt19937_64 rng(3);
    const auto w = random_mask({2, 2, 2}, rng);
    CHECK(hamiltonian(w, DenseTensor({2, 2, 2}), ising(0.3)) == 0.0);
    const auto b = oracle::random_tensor({2, 2, 2}, rng, -2, 2);
    double field = 0.0;
    for (Index i = 0; i < 8; ++i) field += 0.5 * b[i] * w[i];
    CHECK(hamiltonian(w, b, ising(0.0)) == doctest::Approx(-field).epsilon(1e-14));
    const auto m = ising(1.0 / 15);
    CHECK(oracle::lattice_edges({2, 2, 2}).size() == 12);
    const std::vector<double> wv(w.tensor().data(), w.tensor().data() + 8);
    CHECK(hamiltonian(w, b, m) == doctest::Approx(oracle::hamiltonian_edges(wv, b, m)).epsilon(1e-13));
    CHECK_THROWS_AS(hamiltonian(w, DenseTensor({2, 2}), m), DimensionMismatch);
}

TEST_CASE("conditional probabilities") {
    std::mt19937_64 rng(4);
    const auto w = random_mask({3, 3, 3}, rng);
    CHECK(conditional_prob({1, 1, 1}, w, DenseTensor({3, 3, 3}), ising(0.3), false) == 0.5);
    DenseTensor b({3, 3, 3});
    b(EntryIndex{1, 2, 0}) = 1.0;
    CHECK(conditional_prob({1, 2, 0}, w, b, ising(0.0), false) == doctest::Approx(0.7310585786300049).epsilon(1e-15));
    CHECK(conditional_prob({1, 2, 0}, w, b, ising(0.0, 0.5), true) ==
          doctest::Approx(0.5 * 0.7310585786300049).epsilon(1e-15));
    CHECK(logistic(800.0) == 1.0);
    CHECK(logistic(-800.0) == 0.0);
    CHECK(std::isfinite(logistic(-800.0)));

    SUBCASE("exact Boltzmann enumeration on small lattices") {
        for (const Dims& dims : {Dims{2, 2, 1}, Dims{2, 3, 2}, Dims{3, 4}}) {
            const auto bb = oracle::random_tensor(dims, rng, -1.5, 1.5);
            for (double theta : {0.0, 0.2, 1.0 / 15}) {
                const auto m = ising(theta);
                const auto ww = random_mask(dims, rng);
                const std::vector<double> wv(ww.tensor().data(), ww.tensor().data() + ww.size());
                const auto vec = conditional_probs(ww, bb, m);
                for (Index s = 0; s < bb.size(); ++s) {
                    const double exact = oracle::exact_conditional(s, wv, bb, m);
                    CHECK(std::abs(conditional_prob(entry_index(dims, s), ww, bb, m, false) - exact) <= 1e-10);
                    CHECK(std::abs(vec[s] - exact) <= 1e-10);
                }
            }
        }
    }
    SUBCASE("theta = 0 ignores neighbors and increases in b") {
        const auto m = ising(0.0);
        const auto w2 = random_mask({3, 3, 3}, rng);
        auto bb = oracle::random_tensor({3, 3, 3}, rng);
        const double p1 = conditional_prob({1, 1, 1}, w, bb, m, false);
        CHECK(conditional_prob({1, 1, 1}, w2, bb, m, false) == p1);
        bb(EntryIndex{1, 1, 1}) += 0.1;
        CHECK(conditional_prob({1, 1, 1}, w, bb, m, false) > p1);
    }
}

TEST_CASE("negative pseudo-likelihood") {
    const Index n = 27;
    const auto all = MaskTensor::constant({3, 3, 3}, 1.0);
    CHECK(neg_pseudo_likelihood(all, DenseTensor({3, 3, 3}), ising(0.3, 0.5)) ==
          doctest::Approx(-n * std::log(0.25)).epsilon(1e-14));

    std::mt19937_64 rng(5);
    const auto w = random_mask({3, 3, 3}, rng);
    const auto b = oracle::random_tensor({3, 3, 3}, rng, -2, 2);
    for (double theta : {0.0, 1.0 / 15, 0.3}) {
        const auto m = ising(theta);
        double ref = 0.0;
        for (const auto& s : oracle::all_indices(b.dims())) {
            double z = 2.0 * 0.5 * b(s);
            for (const auto& t : neighbors(s, b.dims())) z += 2.0 * theta * b(s) * b(t) * w.tensor()(t);
            const double qp = m.q / (1.0 + std::exp(-z));
            ref -= w.tensor()(s) > 0 ? std::log(qp) : std::log(1.0 - qp);
        }
        CHECK(std::abs(neg_pseudo_likelihood(w, b, m) - ref) <= 1e-10 * std::abs(ref));
        if (theta == 0.0) {
            double bern = 0.0;
            for (Index i = 0; i < b.size(); ++i) {
                const double p = 1.0 / (1.0 + std::exp(-b[i]));
                bern -= w[i] > 0 ? std::log(m.q * p) : std::log(1.0 - m.q * p);
            }
            CHECK(neg_pseudo_likelihood(w, b, m) == doctest::Approx(bern).epsilon(1e-13));
        }
    }
    CHECK(std::isfinite(neg_pseudo_likelihood(all, DenseTensor::constant({3, 3, 3}, 400.0), ising(0.3))));
}

TEST_CASE("pseudo-gradient") {
    SUBCASE("hand evaluation at b = 0") {
        const auto all = MaskTensor::constant({3, 3, 3}, 1.0);
        const auto g = pseudo_gradient(all, DenseTensor({3, 3, 3}), ising(0.0));
        for (Index i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(-0.5).epsilon(1e-14));
    }
    SUBCASE("Bernoulli derivative") {
        std::mt19937_64 rng(6);
        const auto w = random_mask({4, 3, 2}, rng);
        const auto b = oracle::random_tensor({4, 3, 2}, rng, -2, 2);
        const auto m = ising(0.0);
        const auto g = pseudo_gradient(w, b, m);
        for (Index i = 0; i < b.size(); ++i) {
            // d/db of -log(q s(b)) is -(1 - s); of -log(1 - q s(b)) is q s (1 - s)/(1 - q s)
            const double s = 1.0 / (1.0 + std::exp(-b[i]));
            const double ref = w[i] > 0 ? -(1.0 - s) : m.q * s * (1.0 - s) / (1.0 - m.q * s);
            CHECK(g[i] == doctest::Approx(ref).epsilon(1e-12));
        }
    }
    SUBCASE("general polynomial coupling against finite differences") {
        std::mt19937_64 rng(7);
        PropensityModel m;
        m.coupling = Coupling({{0.1, 2, 1}, {0.1, 1, 2}, {0.05, 1, 1}});
        m.field = Field({0.1, 0.4, 0.0, 0.05});
        const auto w = random_mask({3, 4, 2}, rng);
        auto b = oracle::random_tensor({3, 4, 2}, rng, -1, 1);
        const auto g = pseudo_gradient(w, b, m);
        for (Index i = 0; i < b.size(); ++i) {
            const double h = 1e-5, b0 = b[i];
            b[i] = b0 + h;
            const double up = neg_pseudo_likelihood(w, b, m);
            b[i] = b0 - h;
            const double dn = neg_pseudo_likelihood(w, b, m);
            b[i] = b0;
            CHECK(std::abs(g[i] - (up - dn) / (2 * h)) <= 1e-5 * (1.0 + std::abs(g[i])));
        }
    }
}

TEST_CASE("Gibbs schedule validation") {
    CHECK_THROWS_AS((GibbsSchedule{100, 10, 7}.validate()), InvalidArgument);
    CHECK_THROWS_AS((GibbsSchedule{100, 100, 1}.validate()), InvalidArgument);
    CHECK_THROWS_AS((GibbsSchedule{0, 0, 1}.validate()), InvalidArgument);
    CHECK(GibbsSchedule{8000, 2000, 200}.kept() == 30);
    const auto masks = gibbs_sample(DenseTensor({4, 4, 4}), ising(0.1), {50, 10, 8}, 1);
    CHECK(masks.size() == 5);
}

TEST_CASE("Gibbs sampler is deterministic given the seed") {
    std::mt19937_64 rng(8);
    const auto b = oracle::random_tensor({5, 4, 3}, rng);
    const auto a = gibbs_sample(b, ising(0.2), {40, 20, 10}, 99);
    const auto c = gibbs_sample(b, ising(0.2), {40, 20, 10}, 99);
    const auto d = gibbs_sample(b, ising(0.2), {40, 20, 10}, 100);
    REQUIRE(a.size() == 2);
    CHECK(a[1].tensor().values() == c[1].tensor().values());
    CHECK(a[1].tensor().values() != d[1].tensor().values());
}

TEST_CASE("Gibbs marginals without coupling") {
    std::mt19937_64 rng(9);
    const Dims dims{3, 3, 2};
    const auto b = oracle::random_tensor(dims, rng, -1.5, 1.5);
    const long kept = 10000;
    for (const auto& bb : {b, DenseTensor(dims)}) {
        const auto masks = gibbs_sample(bb, ising(0.0), {kept + 10, 10, 1}, 5);
        REQUIRE(masks.size() == static_cast<std::size_t>(kept));
        for (Index s = 0; s < bb.size(); ++s) {
            double freq = 0.0;
            for (const auto& w : masks) freq += w.observed(s);
            freq /= kept;
            const double p = logistic(2.0 * 0.5 * bb[s]);
            CHECK(std::abs(freq - p) <= 3.0 * std::sqrt(p * (1 - p) / kept));
        }
    }
}
