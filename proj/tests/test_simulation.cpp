#include <doctest.h>

#include <set>
#include <sstream>

#include "ctc/simulation.hpp"
#include "oracles.hpp"

using namespace ctc;

namespace {

ExperimentConfig small_config() {
    ExperimentConfig cfg;
    cfg.d = 8;
    cfg.r = 2;
    cfg.theta = 1.0 / 15;
    cfg.noise = {NoiseKind::constant, NoiseKind::adversarial};
    cfg.levels = {0.8, 0.9};
    cfg.completion_rank = {2, 2, 2};
    cfg.completion_max_iter = 50;
    cfg.mcmc = GibbsSchedule{60, 20, 20};
    cfg.repetitions = 2;
    cfg.rank_candidates = {1, 2};
    cfg.rgrad.l_max = 30;
    cfg.scores = {ScoreKind::absolute, ScoreKind::normalized};
    return cfg;
}

}  // namespace

TEST_CASE("block parameter") {
    const Index d = 10, r = 3;
    const auto b0 = gen_block_param(d, r, 5, 0.0);
    CHECK(max_norm(b0) == doctest::Approx(2.0).epsilon(1e-15));
    const Index block = 4;  // ceil(10 / 3)
    auto group = [&](Index i) { return std::min(i / block, r - 1); };
    std::set<double> values;
    for (const auto& s : oracle::all_indices(b0.dims())) {
        EntryIndex rep{block * group(s[0]), block * group(s[1]), block * group(s[2])};
        CHECK(b0(s) == b0(rep));
        values.insert(b0(s));
    }
    CHECK(values.size() == 27);

    const auto noisy = gen_block_param(d, r, 5);
    CHECK(max_norm(noisy) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(noisy.values() != b0.values());
    CHECK(gen_block_param(d, r, 5).values() == noisy.values());

    const auto one = gen_block_param(6, 1, 2, 0.0);
    CHECK((one.values().array() - one[0]).abs().maxCoeff() <= 1e-15);
    CHECK(std::abs(one[0]) == doctest::Approx(2.0));
    CHECK_THROWS_AS(gen_block_param(3, 4, 1), InvalidArgument);
}

TEST_CASE("signal and noise") {
    const auto b = gen_block_param(12, 3, 1);
    for (auto kind : {NoiseKind::constant, NoiseKind::adversarial}) {
        const auto sn = gen_signal_and_noise(12, kind, 2.0, b, 9);
        CHECK(max_norm(sn.x_star) == doctest::Approx(2.0).epsilon(1e-14));
        CHECK(max_norm(sn.x_star) / max_norm(sn.x - sn.x_star) == doctest::Approx(2.0).epsilon(1e-12));
        const auto again = gen_signal_and_noise(12, kind, 2.0, b, 9);
        CHECK(again.x.values() == sn.x.values());
    }
    const auto c = gen_signal_and_noise(12, NoiseKind::constant, 2.0, b, 9);
    const auto a = gen_signal_and_noise(12, NoiseKind::adversarial, 2.0, b, 9);
    CHECK(c.x_star.values() == a.x_star.values());
    const auto clean = gen_signal_and_noise(12, NoiseKind::constant, 1e6, b, 9);
    CHECK(frobenius_norm(clean.x - clean.x_star) <= 1e-5 * frobenius_norm(clean.x_star));

    CHECK(noise_sigma(NoiseKind::adversarial, 0.0) == 1.0);
    CHECK(noise_sigma(NoiseKind::adversarial, 2.0) == doctest::Approx(0.5 * (1 + std::exp(-2.0))));
    CHECK(noise_sigma(NoiseKind::constant, -1.3) == 1.0);
}

TEST_CASE("coverage metrics") {
    const auto levels = default_levels();
    REQUIRE(levels.size() == 20);
    CHECK(levels.front() == doctest::Approx(0.80));
    CHECK(levels.back() == doctest::Approx(0.99));
    CHECK(miscoverage(std::vector<double>(20, 0.0), levels) == doctest::Approx(89.5).epsilon(1e-12));
    CHECK(miscoverage(levels, levels) == 0.0);
    std::vector<double> cov(20);
    double ref = 0.0;
    for (int i = 0; i < 20; ++i) {
        cov[i] = 0.7 + 0.015 * i;
        ref += std::abs(levels[i] - cov[i]);
    }
    CHECK(miscoverage(cov, levels) == doctest::Approx(100.0 * ref / 20).epsilon(1e-12));
    CHECK_THROWS_AS(miscoverage({0.5}, levels), InvalidArgument);

    DenseTensor truth = DenseTensor::constant({2, 2}, 1.0);
    std::vector<Interval> iv{{0, 1, 0.5, 1.5, 0.5, 1, false}, {1, 3, 2.5, 3.5, 0.5, 1, false},
                             {2, 1, 1.0, 1.0, 0.0, 1, false}, {3, 0, -kMaxWeight, 0.5, 1, 1, false}};
    CHECK(empirical_coverage(iv, truth) == 0.5);

    const auto b = gen_block_param(6, 2, 3);
    CHECK(rse(b, b) == 0.0);
    CHECK(rse(DenseTensor(b.dims()), b) == 1.0);
    CHECK(rse(b * 2.0, b) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(rse(b, DenseTensor(b.dims())), InvalidArgument);
}

TEST_CASE("experiment config defaults, validation and JSON") {
    ExperimentConfig cfg;
    CHECK(cfg.schedule().iters == 8000);
    CHECK(cfg.schedule().burn_in == 2000);
    CHECK(cfg.schedule().thin == 200);
    cfg.fast = false;
    CHECK(cfg.schedule().iters == 40000);
    CHECK(cfg.schedule().burn_in == 10000);
    CHECK(cfg.schedule().thin == 1000);
    CHECK(cfg.effective_candidates() == std::vector<Index>{2, 3, 4, 5, 6, 7, 8, 9});
    cfg.d = 20;
    CHECK(cfg.effective_candidates() == std::vector<Index>{2, 3, 4, 5});
    CHECK(cfg.effective_levels().size() == 20);

    auto bad = ExperimentConfig{};
    bad.q = 1.0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = ExperimentConfig{};
    bad.methods = {"oracle", "magic"};
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = ExperimentConfig{};
    bad.repetitions = 31;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);

    const auto small = small_config();
    const auto j = small.to_json();
    const auto back = ExperimentConfig::from_json(j);
    CHECK(back.to_json() == j);
    CHECK(back.mcmc->iters == 60);
    auto extra = j;
    extra["colour"] = "blue";
    CHECK_THROWS_AS(ExperimentConfig::from_json(extra), InvalidArgument);
    const auto partial = ExperimentConfig::from_json(nlohmann::json{{"d", 12}, {"noise", {"adversarial"}}});
    CHECK(partial.d == 12);
    CHECK(partial.noise == std::vector<NoiseKind>{NoiseKind::adversarial});
    CHECK(partial.r == 3);
}

TEST_CASE("small experiment is deterministic and well formed") {
    const auto cfg = small_config();
    const auto a = run_experiment(cfg);
    const auto b = run_experiment(cfg);
    CHECK(a.to_json().dump() == b.to_json().dump());
    CHECK(a.summaries.size() == 2 * 3 * 2);
    for (const auto& s : a.summaries) {
        REQUIRE(s.reps.size() == 2);
        for (double c : s.coverage_mean) {
            CHECK(c >= 0.0);
            CHECK(c <= 1.0);
        }
        CHECK(s.amc_mean >= 0.0);
        if (s.method == "rgrad") {
            CHECK(std::isfinite(s.rse_mean));
            for (const auto& r : s.reps) CHECK((r.selected_rank == 1 || r.selected_rank == 2));
        }
        if (s.method == "unweighted") CHECK(s.clamped_total == 0);
    }
    const auto& u = a.find(NoiseKind::adversarial, "oracle", ScoreKind::normalized);
    CHECK(u.method == "oracle");
    CHECK_THROWS_AS(a.find(NoiseKind::constant, "rgrad", ScoreKind::two_sided), InvalidArgument);

    std::ostringstream csv;
    a.write_rep_csv(csv);
    std::istringstream lines(csv.str());
    std::string line;
    int rows = 0;
    while (std::getline(lines, line)) ++rows;
    CHECK(rows == 1 + 12 * 2);

    auto other = cfg;
    other.seed = 2;
    CHECK(run_experiment(other).to_json().dump() != a.to_json().dump());
}
