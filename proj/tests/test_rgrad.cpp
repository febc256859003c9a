#include <doctest.h>

#include <sstream>

#include "ctc/rgrad.hpp"
#include "ctc/simulation.hpp"
#include "oracles.hpp"

using namespace ctc;

namespace {

TT random_point(const Dims& dims, const std::vector<Index>& rank, std::mt19937_64& rng) {
    return tt_svd(tt_full(oracle::random_tt(dims, rank, rng)), rank);
}

double max_abs(const DenseTensor& x) { return x.values().cwiseAbs().maxCoeff(); }

PropensityModel ising(double theta) {
    PropensityModel m;
    m.coupling = Coupling::product(theta);
    return m;
}

}  // namespace

TEST_CASE("tangent projection matches dense least squares on a tangent basis") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 5; ++trial) {
        const auto b = random_point({3, 3, 3}, {2, 2}, rng);
        const auto g = oracle::random_tensor({3, 3, 3}, rng);
        const auto v = tangent_project(g, b);
        const auto emb = tangent_embed(v);
        const oracle::Vec ref = oracle::project_onto_span(oracle::tt_tangent_basis(b), g.values());
        CHECK((emb.values() - ref).cwiseAbs().maxCoeff() <= 1e-8);
        CHECK(gauge_error(v) <= 1e-8);
        CHECK(frobenius_norm(emb) <= frobenius_norm(g) * (1 + 1e-8));
        // idempotence
        const auto again = tangent_project(emb, b);
        for (std::size_t k = 0; k < 3; ++k) CHECK(max_abs(again.deltas[k] - v.deltas[k]) <= 1e-8);
    }
    SUBCASE("four modes") {
        const auto b = random_point({3, 2, 3, 2}, {2, 3, 2}, rng);
        const auto g = oracle::random_tensor(b.dims(), rng);
        const auto emb = tangent_embed(tangent_project(g, b));
        const oracle::Vec ref = oracle::project_onto_span(oracle::tt_tangent_basis(b), g.values());
        CHECK((emb.values() - ref).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("tangent vectors of the base point are fixed points") {
    std::mt19937_64 rng(2);
    const auto b = random_point({4, 3, 5}, {2, 3}, rng);
    const double c = 1.7;
    TangentVector t{b, {}};
    for (std::size_t k = 0; k < 3; ++k) t.deltas.push_back(DenseTensor(b.core(k).dims()));
    t.deltas[2] = b.core(2) * c;
    const auto g = tangent_embed(t);
    CHECK(max_abs(g - tt_full(b) * c) <= 1e-12);
    const auto p = tangent_project(g, b);
    for (std::size_t k = 0; k < 3; ++k) CHECK(max_abs(p.deltas[k] - t.deltas[k]) <= 1e-9);
}

TEST_CASE("directions orthogonal to the tangent space project to zero") {
    std::mt19937_64 rng(3);
    const auto b = random_point({3, 3, 3}, {1, 1}, rng);
    const auto g = oracle::random_tensor({3, 3, 3}, rng);
    const oracle::Vec in_span = oracle::project_onto_span(oracle::tt_tangent_basis(b), g.values());
    const DenseTensor perp({3, 3, 3}, g.values() - in_span);
    const auto p = tangent_project(perp, b);
    for (const auto& y : p.deltas) CHECK(max_abs(y) <= 1e-9);
}

TEST_CASE("tangent summands are mutually orthogonal") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        const auto b = random_point({4, 5, 3, 3}, {2, 3, 2}, rng);
        const auto parts = tangent_summands(tangent_project(oracle::random_tensor(b.dims(), rng), b));
        for (std::size_t i = 0; i < parts.size(); ++i)
            for (std::size_t j = i + 1; j < parts.size(); ++j)
                CHECK(std::abs(inner_product(parts[i], parts[j])) <=
                      1e-8 * frobenius_norm(parts[i]) * frobenius_norm(parts[j]) + 1e-300);
    }
    SUBCASE("zero deltas and a single last delta") {
        const auto b = random_point({3, 4, 2}, {2, 2}, rng);
        TangentVector t{b, {}};
        for (std::size_t k = 0; k < 3; ++k) t.deltas.push_back(DenseTensor(b.core(k).dims()));
        CHECK(max_abs(tangent_embed(t)) == 0.0);
        t.deltas[2] = oracle::random_tensor(b.core(2).dims(), rng);
        auto cores = b.cores();
        cores[2] = t.deltas[2];
        CHECK(max_abs(tangent_embed(t) - tt_full(TT(cores))) <= 1e-13);
    }
}

TEST_CASE("tangent projection input checks") {
    std::mt19937_64 rng(5);
    const auto raw = oracle::random_tt({3, 3, 3}, {2, 2}, rng);
    CHECK_THROWS_AS(tangent_project(DenseTensor({3, 3, 3}), raw), InvalidArgument);
    const auto b = tt_svd(tt_full(raw), {2, 2});
    CHECK_THROWS_AS(tangent_project(DenseTensor({3, 3, 2}), b), DimensionMismatch);
    auto cores = b.cores();
    cores[2] = DenseTensor(cores[2].dims());
    CHECK_THROWS_AS(tangent_project(oracle::random_tensor({3, 3, 3}, rng), TT(cores, true)), DegenerateRankError);
}

TEST_CASE("a gradient step stays within TT rank 2r") {
    std::mt19937_64 rng(6);
    const auto b = random_point({5, 5, 5}, {2, 2}, rng);
    const auto p = tangent_embed(tangent_project(oracle::random_tensor({5, 5, 5}, rng), b));
    const auto x = tt_full(b) - 0.3 * p;
    const auto t = retract(x, {4, 4});
    CHECK(frobenius_norm(tt_full(t) - x) <= 1e-8 * frobenius_norm(x));
    CHECK(left_orthogonality_error(retract(x, {2, 2})) <= 1e-10);
    const auto exact = random_point({4, 4, 4}, {2, 2}, rng);
    CHECK(frobenius_norm(tt_full(retract(tt_full(exact), {2, 2})) - tt_full(exact)) <= 1e-8);
}

TEST_CASE("retraction from a tangent vector matches the dense path") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 3; ++trial) {
        const auto b = random_point({6, 5, 4}, {2, 3}, rng);
        const auto v = tangent_project(oracle::random_tensor(b.dims(), rng), b);
        const auto emb = tangent_embed(v);
        CHECK(tangent_norm_squared(v) == doctest::Approx(emb.values().squaredNorm()).epsilon(1e-10));
        const double t = -0.4;
        const auto step = tangent_step(v, t);
        CHECK(frobenius_norm(tt_full(step) - (tt_full(b) + t * emb)) <= 1e-12 * frobenius_norm(tt_full(b)));
        const auto fast = retract(v, t, {2, 3});
        const auto dense = retract(tt_full(b) + t * emb, {2, 3});
        CHECK(frobenius_norm(tt_full(fast) - tt_full(dense)) <= 1e-9 * frobenius_norm(tt_full(dense)));
        CHECK(left_orthogonality_error(fast) <= 1e-10);
    }
    const auto b = random_point({3, 4, 3, 2}, {2, 3, 2}, rng);
    const auto v = tangent_project(oracle::random_tensor(b.dims(), rng), b);
    CHECK(frobenius_norm(tt_full(tangent_step(v, 0.7)) - (tt_full(b) + 0.7 * tangent_embed(v))) <= 1e-12);
    auto bad = v;
    bad.deltas.pop_back();
    CHECK_THROWS_AS(tangent_step(bad, 1.0), DimensionMismatch);
}

TEST_CASE("initialization is seeded") {
    std::mt19937_64 rng(7);
    DenseTensor wv({4, 4, 4});
    for (Index i = 0; i < wv.size(); ++i) wv[i] = rng() % 2 ? 1.0 : -1.0;
    const MaskTensor w(wv);
    RGradConfig cfg;
    cfg.rank = {2, 2};
    cfg.seed = 3;
    const auto a = initialize(w, cfg), b = initialize(w, cfg);
    for (std::size_t k = 0; k < 3; ++k) CHECK(a.core(k).values() == b.core(k).values());
    cfg.init_sigma = 0.0;
    CHECK(max_abs(tt_full(initialize(w, cfg)) - tt_full(tt_svd(wv, {2, 2}))) == 0.0);
    cfg.rank = {2};
    CHECK_THROWS_AS(initialize(w, cfg), InvalidArgument);
}

TEST_CASE("effective parameter count") {
    CHECK(effective_param_count({40, 40, 40}, {3, 3}) == 582);
    CHECK(effective_param_count({5, 6}, {2}) == 5 * 2 - 4 + 6 * 2);
}

namespace {

struct BernoulliCase {
    DenseTensor b_star;
    MaskTensor w;
};

// Rank-(1,1) truth with entries of magnitude between about 0.5 and 1 times scale,
// and a training mask drawn from the independent model.
BernoulliCase bernoulli_case(Index d, double scale, std::uint64_t seed, const PropensityModel& m) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> mag(0.8, 1.2), unit(0.0, 1.0);
    oracle::Mat u(d, 3);
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < 3; ++j) u(i, j) = (rng() % 2 ? 1.0 : -1.0) * mag(rng);
    DenseTensor b_star({d, d, d});
    for (const auto& s : oracle::all_indices(b_star.dims())) b_star(s) = u(s[0], 0) * u(s[1], 1) * u(s[2], 2);
    b_star *= scale / max_norm(b_star);
    DenseTensor wv({d, d, d});
    for (Index i = 0; i < wv.size(); ++i) wv[i] = unit(rng) < m.q * logistic(b_star[i]) ? 1.0 : -1.0;
    return {b_star, MaskTensor(wv)};
}

double prob_rmse(const DenseTensor& b_hat, const DenseTensor& b_star) {
    double se = 0.0;
    for (Index i = 0; i < b_hat.size(); ++i) {
        const double diff = logistic(b_hat[i]) - logistic(b_star[i]);
        se += diff * diff;
    }
    return std::sqrt(se / static_cast<double>(b_hat.size()));
}

}  // namespace

TEST_CASE("small Bernoulli recovery") {
    const auto m = ising(0.0);
    RGradConfig cfg;
    cfg.rank = {1, 1};
    double mean = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto c = bernoulli_case(8, 2.5, seed, m);
        mean += prob_rmse(tt_full(fit_mple(c.w, m, cfg).b_hat), c.b_star) / 10.0;
    }
    CHECK(mean <= 0.1);
}

TEST_CASE("Armijo trace is monotone and rank selection reports its table") {
    const auto m = ising(0.0);
    const auto c = bernoulli_case(8, 2.5, 11, m);
    RGradConfig cfg;
    cfg.rank = {1, 1};
    cfg.step = ArmijoStep{};
    cfg.l_max = 300;
    const auto fit = fit_mple(c.w, m, cfg);
    REQUIRE(!fit.trace.empty());
    CHECK(fit.trace.front().iter == 1);
    double prev = fit.initial_loss;
    for (const auto& row : fit.trace) {
        CHECK(row.pseudo_loglik <= prev);
        prev = row.pseudo_loglik;
    }
    CHECK(fit.final_loss == fit.trace.back().pseudo_loglik);
    CHECK(fit.final_loss == doctest::Approx(neg_pseudo_likelihood(c.w, tt_full(fit.b_hat), m)).epsilon(1e-10));

    std::ostringstream csv;
    write_trace_csv(csv, fit.trace);
    CHECK(csv.str().rfind("iter,pseudo_loglik,step_size,rel_change\n", 0) == 0);

    RGradConfig fixed;
    fixed.rank = {1, 1};
    CHECK(fit_mple(c.w, m, fixed).trace.front().step_size == 0.1);
    const auto sel = rank_select(c.w, m, {1, 2}, InfoCriterion::bic, fixed);
    REQUIRE(sel.table.size() == 2);
    for (const auto& row : sel.table) {
        CHECK(row.params == effective_param_count(c.w.dims(), row.fitted_rank));
        CHECK(row.criterion == doctest::Approx(2 * row.neg_pseudo_loglik + std::log(512.0) * row.params));
    }
    CHECK(sel.best == 1);
    CHECK(sel.best_fit.final_loss == sel.table[0].neg_pseudo_loglik);
    const auto aic = rank_select(c.w, m, {1, 2}, InfoCriterion::aic, fixed);
    CHECK(aic.table[1].criterion == doctest::Approx(2 * aic.table[1].neg_pseudo_loglik + 2.0 * aic.table[1].params));
}

TEST_CASE("RGrad config validation") {
    RGradConfig cfg;
    cfg.rank = {2, 2};
    CHECK_NOTHROW(cfg.validate(3));
    cfg.step = FixedStep{0.0};
    CHECK_THROWS_AS(cfg.validate(3), InvalidArgument);
    cfg.step = ArmijoStep{1.0, 2.0, 3};
    CHECK_THROWS_AS(cfg.validate(3), InvalidArgument);
    cfg.step = FixedStep{};
    cfg.l_max = 0;
    CHECK_THROWS_AS(cfg.validate(3), InvalidArgument);
    CHECK(parse_criterion("aic") == InfoCriterion::aic);
    CHECK_THROWS_AS(parse_criterion("hqic"), InvalidArgument);
}
