// ctc_acceptance: one pass/fail line per acceptance criterion.
//
// Groups: fast (criteria 1, 2, 3, 8), rank_select (4), simulation (5, 6, 7, 9).
// Exit status is 1 when any criterion fails.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ctc/conformal.hpp"
#include "ctc/random.hpp"
#include "ctc/rgrad.hpp"
#include "ctc/simulation.hpp"
#include "oracles.hpp"

using namespace ctc;

namespace {

namespace tol {
// 1
constexpr int quantile_instances = 500;
constexpr double conditional = 1e-10;
constexpr double gibbs_tv = 0.02;
constexpr long gibbs_kept = 100000;
constexpr double tangent_ls = 1e-8;
// 2
constexpr double fd_step = 1e-5;
constexpr double gradient_rel = 1e-5;
constexpr int gradient_seeds = 20;
// 3
constexpr double tt_recovery = 1e-8;
constexpr double left_orth = 1e-10;
constexpr double separation = 1e-10;
constexpr double summand_orth = 1e-8;
// 4
constexpr Index rank_d = 80;
constexpr Index rank_r = 3;
constexpr int rank_min_hits = 9;
// 5
constexpr double rse_lo = 0.27;
constexpr double rse_hi = 0.43;
// 6
constexpr double const_rgrad_max = 1.5;
constexpr double adv_unweighted_min = 8.0;
constexpr double adv_rgrad_max = 2.5;
constexpr double adv_oracle_max = 1.5;
constexpr double ising_unweighted_min = 13.0;
constexpr double ising_rgrad_max = 3.5;
// 7
constexpr double cov90_lo = 0.87;
constexpr double cov90_hi = 0.93;
// 8
constexpr int gap_instances = 100;
// 9
constexpr double score_gap_pp = 1.5;
// simulation settings
constexpr Index sim_d = 40;
constexpr Index sim_r = 3;
constexpr Index sim_r_high = 9;
}  // namespace tol

struct Outcome {
    int id;
    bool pass;
    std::string detail;
};

std::vector<Outcome> outcomes;

void report(int id, bool pass, const std::string& detail) {
    outcomes.push_back({id, pass, detail});
    std::cout << "criterion " << id << ": " << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
}

void info(const std::string& line) { std::cout << "  " << line << std::endl; }

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

PropensityModel ising(double theta) {
    PropensityModel m;
    m.coupling = Coupling::product(theta);
    return m;
}

MaskTensor random_mask(const Dims& dims, double p, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    DenseTensor w(dims);
    for (Index i = 0; i < w.size(); ++i) w[i] = u(rng) < p ? 1.0 : -1.0;
    return MaskTensor(w);
}

unsigned state_code(const MaskTensor& w) {
    unsigned c = 0;
    for (Index i = 0; i < w.size(); ++i)
        if (w.observed(i)) c |= 1u << i;
    return c;
}

// Smallest atom v with mass{atoms <= v} >= (1 - alpha) of the total, by scanning every atom.
double brute_quantile(const std::vector<double>& s, const std::vector<double>& w, double w_star, double alpha) {
    constexpr double kInf = std::numeric_limits<double>::infinity();
    double total = w_star;
    for (double x : w) total += x;
    const double target = (1.0 - alpha) * total * (1.0 - 1e-12);
    double best = kInf;
    for (std::size_t i = 0; i < s.size(); ++i) {
        double mass = 0.0;
        for (std::size_t j = 0; j < s.size(); ++j)
            if (s[j] <= s[i]) mass += w[j];
        if (mass >= target) best = std::min(best, s[i]);
    }
    return best;
}

// 1. Oracle equivalences.
void criterion_1(std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::mt19937_64 rng(derive_seed(seed, 101));

    int quantile_bad = 0, infinite = 0;
    for (int t = 0; t < tol::quantile_instances; ++t) {
        const bool ties = t % 2 == 1;
        const int n = std::uniform_int_distribution<int>(1, 60)(rng);
        std::vector<double> s(n), w(n);
        for (int i = 0; i < n; ++i) {
            if (ties) {
                s[i] = std::uniform_int_distribution<int>(0, 5)(rng);
                w[i] = std::uniform_int_distribution<int>(1, 4)(rng);
            } else {
                s[i] = std::normal_distribution<double>(0.0, 1.0)(rng);
                w[i] = std::exp(std::normal_distribution<double>(0.0, 1.0)(rng));
            }
        }
        const double alpha = std::uniform_real_distribution<double>(0.01, 0.5)(rng);
        const double w_star = ties ? std::uniform_int_distribution<int>(0, 4)(rng)
                                   : std::exp(std::normal_distribution<double>(-1.0, 1.5)(rng));
        const double got = weighted_quantile(s, w, w_star, alpha);
        const double want = brute_quantile(s, w, w_star, alpha);
        if (std::isinf(want)) ++infinite;
        if (!(got == want)) ++quantile_bad;
    }
    info("weighted quantile: " + std::to_string(tol::quantile_instances - quantile_bad) + "/" +
         std::to_string(tol::quantile_instances) + " exact (" + std::to_string(infinite) + " at +inf)");
    ok = ok && quantile_bad == 0;

    double cond_err = 0.0;
    for (const Dims& dims : {Dims{2, 3}, Dims{2, 2, 2}, Dims{2, 2, 3}})
        for (double theta : {0.0, 1.0 / 15, 0.3}) {
            const auto b = oracle::random_tensor(dims, rng, -2.0, 2.0);
            const auto m = ising(theta);
            const auto p = oracle::boltzmann(b, m);
            const Index n = b.size();
            for (unsigned code = 0; code < (1u << n); ++code) {
                const auto v = oracle::state_of(code, n);
                const MaskTensor w(DenseTensor(dims, Eigen::Map<const oracle::Vec>(v.data(), n)));
                for (Index s = 0; s < n; ++s) {
                    const unsigned up = code | (1u << s), down = code & ~(1u << s);
                    const double exact = p[up] / (p[up] + p[down]);
                    const double got = conditional_prob(entry_index(dims, s), w, b, m, false);
                    cond_err = std::max(cond_err, std::abs(got - exact));
                }
            }
        }
    info("conditional probability max error " + fmt("%.2e", cond_err) + " over every state of (2,3), (2,2,2), (2,2,3)");
    ok = ok && cond_err <= tol::conditional;

    // TV of 1e5 exact i.i.d. draws is already near 0.5 sum sqrt(2 p (1 - p) / (pi N)), which passes 0.02 on
    // 12-entry lattices with 4096 states. Those are reported next to their floor; the gate covers 6 and 8 entries.
    struct Case {
        Dims dims;
        double amp, theta;
        bool gated;
    };
    const std::vector<Case> cases{
        {{2, 3}, 1.0, 0.0, true},     {{2, 3}, 1.0, 0.3, true},     {{2, 3}, 2.0, 0.3, true},
        {{2, 2, 2}, 1.0, 0.0, true},  {{2, 2, 2}, 1.0, 0.3, true},  {{2, 2, 2}, 2.0, 0.3, true},
        {{2, 2, 3}, 1.0, 0.0, false}, {{2, 2, 3}, 2.0, 0.3, false}};
    double tv_max = 0.0;
    for (std::size_t c = 0; c < cases.size(); ++c) {
        const auto& cs = cases[c];
        const auto b = oracle::random_tensor(cs.dims, rng, -cs.amp, cs.amp);
        const auto m = ising(cs.theta);
        const auto p = oracle::boltzmann(b, m);
        const GibbsSchedule sched{5 * tol::gibbs_kept + 100, 100, 5};
        const auto masks = gibbs_sample(b, m, sched, derive_seed(seed, 102, c));
        std::vector<double> freq(p.size(), 0.0);
        for (const auto& w : masks) freq[state_code(w)] += 1.0 / static_cast<double>(masks.size());
        double tv = 0.0, floor = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            tv += 0.5 * std::abs(freq[k] - p[k]);
            floor += 0.5 * std::sqrt(2.0 * p[k] * (1.0 - p[k]) / (M_PI * static_cast<double>(masks.size())));
        }
        if (cs.gated) tv_max = std::max(tv_max, tv);
        info("gibbs " + dims_to_string(cs.dims) + " amp " + fmt("%.0f", cs.amp) + " theta " + fmt("%.2f", cs.theta) +
             ": TV " + fmt("%.4f", tv) + " (iid floor " + fmt("%.4f", floor) + ", " + std::to_string(masks.size()) +
             " samples" + (cs.gated ? ")" : ", reported)"));
        ok = ok && static_cast<long>(masks.size()) == tol::gibbs_kept;
    }
    ok = ok && tv_max <= tol::gibbs_tv;

    double tan_err = 0.0;
    for (int t = 0; t < 20; ++t) {
        const auto b = tt_svd(tt_full(oracle::random_tt({3, 3, 3}, {2, 2}, rng)), {2, 2});
        const auto g = oracle::random_tensor({3, 3, 3}, rng);
        const auto emb = tangent_embed(tangent_project(g, b));
        const oracle::Vec ref = oracle::project_onto_span(oracle::tt_tangent_basis(b), g.values());
        tan_err = std::max(tan_err, (emb.values() - ref).cwiseAbs().maxCoeff());
    }
    info("tangent projection vs dense least squares max error " + fmt("%.2e", tan_err));
    ok = ok && tan_err <= tol::tangent_ls;

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(1, ok,
           "quantile mismatches " + std::to_string(quantile_bad) + ", cond err " + fmt("%.1e", cond_err) + " <= 1e-10, max TV " +
               fmt("%.4f", tv_max) + " <= 0.02, tangent err " + fmt("%.1e", tan_err) + " <= 1e-8 (" + fmt("%.1f", secs) + " s)");
}

// 2. Pseudo-gradient against central differences.
void criterion_2(std::uint64_t seed) {
    double worst = 0.0;
    int cases = 0;
    for (Index d : {3, 4, 5})
        for (double theta : {0.0, 1.0 / 15, 0.3})
            for (int s = 0; s < tol::gradient_seeds; ++s) {
                std::mt19937_64 rng(derive_seed(seed, 201, static_cast<std::uint64_t>(cases)));
                const Dims dims{d, d, d};
                const auto m = ising(theta);
                const auto w = random_mask(dims, 0.6, rng);
                auto b = oracle::random_tensor(dims, rng, -1.5, 1.5);
                const auto g = pseudo_gradient(w, b, m);
                double num = 0.0, den = 0.0;
                for (Index i = 0; i < b.size(); ++i) {
                    const double b0 = b[i];
                    b[i] = b0 + tol::fd_step;
                    const double up = neg_pseudo_likelihood(w, b, m);
                    b[i] = b0 - tol::fd_step;
                    const double dn = neg_pseudo_likelihood(w, b, m);
                    b[i] = b0;
                    const double fd = (up - dn) / (2.0 * tol::fd_step);
                    num = std::max(num, std::abs(g[i] - fd));
                    den = std::max(den, std::abs(fd));
                }
                worst = std::max(worst, num / den);
                ++cases;
            }
    report(2, worst <= tol::gradient_rel,
           "max ||g - fd||_inf / ||fd||_inf = " + fmt("%.2e", worst) + " <= 1e-5 over " + std::to_string(cases) + " cases");
}

// 3. TT machinery.
void criterion_3(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, 301));
    double rec = 0.0, orth = 0.0, sep = 0.0, sum_orth = 0.0;
    int cases = 0;
    for (std::size_t K : {3u, 4u})
        for (Index d : {3, 5, 7})
            for (Index r = 1; r <= 4; ++r) {
                const Dims dims(K, d);
                const std::vector<Index> rank(K - 1, r);
                const auto truth_tt = oracle::random_tt(dims, rank, rng);
                const auto truth = tt_full(truth_tt);
                const auto t = tt_svd(truth, rank);
                rec = std::max(rec, frobenius_norm(tt_full(t) - truth) / frobenius_norm(truth));
                orth = std::max(orth, left_orthogonality_error(t));
                const auto lefts = left_parts(t);
                const auto rights = right_parts(t);
                const auto full = tt_full(t);
                for (std::size_t k = 1; k < K; ++k) {
                    const oracle::Mat prod = lefts[k] * rights[k];
                    sep = std::max(sep, (separation(full, k) - prod).norm() / full.values().norm());
                }
                // Scaled by ||P g||^2: a summand forced to zero by a square core is pure roundoff.
                const auto v = tangent_project(oracle::random_tensor(dims, rng), t);
                const auto parts = tangent_summands(v);
                const double scale = std::pow(frobenius_norm(tangent_embed(v)), 2);
                for (std::size_t i = 0; i < parts.size(); ++i)
                    for (std::size_t j = i + 1; j < parts.size(); ++j)
                        sum_orth = std::max(sum_orth, std::abs(inner_product(parts[i], parts[j])) / scale);
                ++cases;
            }
    const bool ok = rec <= tol::tt_recovery && orth <= tol::left_orth && sep <= tol::separation &&
                    sum_orth <= tol::summand_orth;
    report(3, ok,
           "recovery " + fmt("%.1e", rec) + " <= 1e-8, left-orth " + fmt("%.1e", orth) + " <= 1e-10, separation " +
               fmt("%.1e", sep) + " <= 1e-10, summand overlap " + fmt("%.1e", sum_orth) + " <= 1e-8 over " +
               std::to_string(cases) + " tensors");
}

// 4. P-AIC rank selection at d = 80.
void criterion_4(std::uint64_t seed, int reps) {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig cfg;
    cfg.d = tol::rank_d;
    cfg.r = tol::rank_r;
    cfg.seed = seed;
    PropensityModel model;
    const auto b_star = gen_block_param(cfg.d, cfg.r, derive_seed(seed, stream::block_param));
    const auto masks = gibbs_sample(b_star, model, cfg.schedule(), derive_seed(seed, stream::chain));
    const auto candidates = cfg.effective_candidates();
    int hits = 0;
    std::vector<Index> chosen;
    for (int rep = 0; rep < reps; ++rep) {
        const auto split = split_observed(masks[static_cast<std::size_t>(rep)], cfg.q, derive_seed(seed, stream::split, rep));
        RGradConfig rc = cfg.rgrad;
        rc.seed = derive_seed(seed, stream::rgrad, rep);
        rc.rank.assign(2, candidates.front());
        const auto sel = rank_select(split.train_mask(), model, candidates, InfoCriterion::aic, rc);
        chosen.push_back(sel.best);
        hits += sel.best == tol::rank_r;
        std::ostringstream row;
        row << "rep " << rep << ": P-AIC picks " << sel.best << " (";
        for (const auto& r : sel.table) row << r.candidate << ":" << fmt("%.1f", r.criterion) << " ";
        row << ")";
        info(row.str());
    }
    double mean = 0.0, sd = 0.0;
    for (Index c : chosen) mean += static_cast<double>(c) / reps;
    for (Index c : chosen) sd += (c - mean) * (c - mean) / std::max(1, reps - 1);
    sd = std::sqrt(sd);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(4, hits >= tol::rank_min_hits * reps / 10,
           "rank 3 chosen " + std::to_string(hits) + "/" + std::to_string(reps) + " (need >= " +
               std::to_string(tol::rank_min_hits * reps / 10) + "), mean " + fmt("%.2f", mean) + " sd " + fmt("%.2f", sd) +
               " (" + fmt("%.0f", secs) + " s)");
}

ExperimentConfig sim_config(std::uint64_t seed, int reps, double theta, Index r) {
    ExperimentConfig cfg;
    cfg.d = tol::sim_d;
    cfg.r = r;
    cfg.theta = theta;
    cfg.noise = {NoiseKind::constant, NoiseKind::adversarial};
    cfg.repetitions = reps;
    cfg.seed = seed;
    cfg.scores = {ScoreKind::absolute, ScoreKind::two_sided, ScoreKind::normalized};
    return cfg;
}

double coverage_at(const MetricsReport& rep, const MethodSummary& s, double tau) {
    for (std::size_t i = 0; i < rep.levels.size(); ++i)
        if (std::abs(rep.levels[i] - tau) < 1e-9) return s.coverage_mean[i];
    throw InvalidArgument("level not in report");
}

void print_summaries(const std::string& tag, const MetricsReport& rep) {
    for (const auto& s : rep.summaries) {
        std::string line = tag + " " + to_string(s.noise) + " " + s.method + " " + to_string(s.score) + ": AMC " +
                           fmt("%.3f", s.amc_mean) + "% (sd " + fmt("%.3f", s.amc_sd) + "), cov90 " +
                           fmt("%.4f", coverage_at(rep, s, 0.90));
        if (s.method == "rgrad") line += ", RSE " + fmt("%.4f", s.rse_mean);
        info(line);
    }
}

// 5, 6, 7, 9 share the d = 40 experiments.
void simulation_criteria(std::uint64_t seed, int reps) {
    const auto t0 = std::chrono::steady_clock::now();
    auto since = [&] { return fmt("%.0f", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()); };
    const auto e0 = run_experiment(sim_config(seed, reps, 0.0, tol::sim_r), &std::cerr);
    print_summaries("theta 0", e0);
    info("theta 0 done after " + since() + " s");
    const auto e1 = run_experiment(sim_config(seed, reps, 1.0 / 15, tol::sim_r), &std::cerr);
    print_summaries("theta 1/15", e1);
    info("theta 1/15 done after " + since() + " s");
    auto e9cfg = sim_config(seed, reps, 0.0, tol::sim_r_high);
    e9cfg.methods = {"rgrad"};
    e9cfg.scores = {ScoreKind::absolute};
    const auto e9 = run_experiment(e9cfg, &std::cerr);
    print_summaries("r 9", e9);
    info("r 9 done after " + since() + " s");

    const auto C = NoiseKind::constant, A = NoiseKind::adversarial;
    const double rse0 = e0.find(C, "rgrad").rse_mean;
    report(5, rse0 >= tol::rse_lo && rse0 <= tol::rse_hi,
           "RGrad mean RSE " + fmt("%.4f", rse0) + " (sd " + fmt("%.4f", e0.find(C, "rgrad").rse_sd) +
               ") in [0.27, 0.43]; theta 1/15 gives " + fmt("%.4f", e1.find(C, "rgrad").rse_mean));

    const double a_rg = e0.find(C, "rgrad").amc_mean;
    const double b_un = e0.find(A, "unweighted").amc_mean, b_rg = e0.find(A, "rgrad").amc_mean,
                 b_or = e0.find(A, "oracle").amc_mean;
    const double c_un = e1.find(A, "unweighted").amc_mean, c_rg = e1.find(A, "rgrad").amc_mean;
    const bool ok6a = a_rg <= tol::const_rgrad_max;
    const bool ok6b = b_un >= tol::adv_unweighted_min && b_rg <= tol::adv_rgrad_max && b_or <= tol::adv_oracle_max;
    const bool ok6c = c_un >= tol::ising_unweighted_min && c_rg <= tol::ising_rgrad_max;
    info(std::string("6a ") + (ok6a ? "pass" : "fail") + ": constant rgrad " + fmt("%.3f", a_rg) + "% <= 1.5");
    info(std::string("6b ") + (ok6b ? "pass" : "fail") + ": adversarial unweighted " + fmt("%.3f", b_un) +
         "% >= 8, rgrad " + fmt("%.3f", b_rg) + "% <= 2.5, oracle " + fmt("%.3f", b_or) + "% <= 1.5");
    info(std::string("6c ") + (ok6c ? "pass" : "fail") + ": theta 1/15 adversarial unweighted " + fmt("%.3f", c_un) +
         "% >= 13, rgrad " + fmt("%.3f", c_rg) + "% <= 3.5");
    report(6, ok6a && ok6b && ok6c,
           std::string("(a) ") + (ok6a ? "pass" : "fail") + " (b) " + (ok6b ? "pass" : "fail") + " (c) " +
               (ok6c ? "pass" : "fail"));

    bool ok7 = true;
    std::string d7;
    for (const auto* e : {&e0, &e1})
        for (auto nk : {C, A}) {
            const double c = coverage_at(*e, e->find(nk, "rgrad"), 0.90);
            ok7 = ok7 && c >= tol::cov90_lo && c <= tol::cov90_hi;
            d7 += (e == &e0 ? "theta 0 " : "theta 1/15 ") + to_string(nk) + " " + fmt("%.4f", c) + ", ";
        }
    for (auto nk : {C, A}) {
        const double c3 = coverage_at(e0, e0.find(nk, "rgrad"), 0.90), c9 = coverage_at(e9, e9.find(nk, "rgrad"), 0.90);
        info("r/d = 9/40 " + to_string(nk) + ": cov90 " + fmt("%.4f", c9) + " vs " + fmt("%.4f", c3) + " at r = 3, AMC " +
             fmt("%.3f", e9.find(nk, "rgrad").amc_mean) + "% vs " + fmt("%.3f", e0.find(nk, "rgrad").amc_mean) +
             "% (reported, not gated)");
    }
    report(7, ok7, "RGrad 90% coverage " + d7 + "all in [0.87, 0.93]");

    double worst = 0.0;
    for (const auto* e : {&e0, &e1})
        for (auto nk : {C, A}) {
            const double abs_amc = e->find(nk, "rgrad", ScoreKind::absolute).amc_mean;
            for (auto sk : {ScoreKind::two_sided, ScoreKind::normalized}) {
                const double diff = std::abs(e->find(nk, "rgrad", sk).amc_mean - abs_amc);
                worst = std::max(worst, diff);
            }
        }
    report(9, worst <= tol::score_gap_pp,
           "max |AMC(score) - AMC(absolute)| for RGrad = " + fmt("%.3f", worst) + " pp <= 1.5 over both theta and noises");
}

// 8. Weight approximation gap against its bound.
void criterion_8(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, 801));
    int checked = 0, violations = 0;
    double worst_ratio = 0.0;
    while (checked < tol::gap_instances) {
        const Dims dims{3, 3, 3};
        const auto x = oracle::random_tensor(dims, rng);
        const auto mask = random_mask(dims, 0.7, rng);
        const auto split = split_observed(mask, 0.7, rng());
        if (split.missing.empty() || split.calibration.empty()) continue;
        const auto b = oracle::random_tensor(dims, rng, -1.0, 1.0);
        const auto m = ising(0.5 * std::uniform_real_distribution<double>(0, 1)(rng));
        const auto star = entry_index(dims, split.missing.front());
        const auto g = weight_approx_gap(star, split, b, m);
        if (!(g.empirical_gap <= g.bound)) ++violations;
        if (g.bound > 0) worst_ratio = std::max(worst_ratio, g.empirical_gap / g.bound);
        ++checked;
    }
    report(8, violations == 0,
           std::to_string(violations) + " violations on " + std::to_string(checked) +
               " random 3x3x3 Ising instances, max gap/bound " + fmt("%.3f", worst_ratio));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks, one line per criterion"};
    std::vector<std::string> only;
    std::uint64_t seed = 1;
    int reps = 10;
    app.add_option("--only", only, "groups to run: fast, rank_select, simulation (default all)")
        ->check(CLI::IsMember({"fast", "rank_select", "simulation"}));
    app.add_option("--seed", seed, "master seed");
    app.add_option("--reps", reps, "repetitions for criteria 4 to 7 and 9")->check(CLI::Range(1, 30));
    CLI11_PARSE(app, argc, argv);
    const std::set<std::string> groups =
        only.empty() ? std::set<std::string>{"fast", "rank_select", "simulation"} : std::set<std::string>(only.begin(), only.end());

    try {
        if (groups.count("fast")) {
            criterion_1(seed);
            criterion_2(seed);
            criterion_3(seed);
        }
        if (groups.count("rank_select")) criterion_4(seed, reps);
        if (groups.count("simulation")) simulation_criteria(seed, reps);
        if (groups.count("fast")) criterion_8(seed);
    } catch (const std::exception& e) {
        std::cout << "error: " << e.what() << std::endl;
        return 1;
    }
    std::map<int, bool> by_id;
    for (const auto& o : outcomes) by_id[o.id] = o.pass;
    int failed = 0;
    std::cout << "summary:";
    for (int id = 1; id <= 9; ++id) {
        const auto it = by_id.find(id);
        std::cout << " " << id << "=" << (it == by_id.end() ? "skip" : it->second ? "pass" : "FAIL");
        failed += it != by_id.end() && !it->second;
    }
    std::cout << std::endl;
    return failed ? 1 : 0;
}
