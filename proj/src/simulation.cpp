#include "ctc/simulation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "ctc/completion.hpp"
#include "ctc/random.hpp"
#include "ctc/tensor_io.hpp"

namespace ctc {

namespace {

constexpr Index kModes = 3;

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

NoiseKind parse_noise_kind(const std::string& name) {
    if (name == "constant") return NoiseKind::constant;
    if (name == "adversarial") return NoiseKind::adversarial;
    throw InvalidArgument("unknown noise regime '" + name + "' (use constant or adversarial)");
}

std::string to_string(NoiseKind kind) { return kind == NoiseKind::constant ? "constant" : "adversarial"; }

std::vector<double> default_levels() {
    std::vector<double> t;
    for (int i = 80; i <= 99; ++i) t.push_back(i / 100.0);
    return t;
}

void ExperimentConfig::validate() const {
    if (d < 1 || r < 1) throw InvalidArgument("experiment: d and r must be positive");
    if (r > d) throw InvalidArgument("experiment: block count r exceeds d");
    if (!(theta >= 0) || !std::isfinite(theta)) throw InvalidArgument("experiment: theta must be finite and >= 0");
    if (noise.empty()) throw InvalidArgument("experiment: at least one noise regime");
    if (!(snr > 0)) throw InvalidArgument("experiment: snr must be positive");
    if (!(q > 0 && q < 1)) throw InvalidArgument("experiment: q must lie in (0, 1)");
    for (double t : effective_levels())
        if (!(t > 0 && t < 1)) throw InvalidArgument("experiment: coverage levels must lie in (0, 1)");
    if (completion_rank.size() != static_cast<std::size_t>(kModes))
        throw InvalidArgument("experiment: completion_rank needs 3 entries");
    for (Index c : completion_rank)
        if (c < 1) throw InvalidArgument("experiment: completion ranks must be positive");
    if (repetitions < 1) throw InvalidArgument("experiment: repetitions must be at least 1");
    schedule().validate();
    if (schedule().kept() < repetitions)
        throw InvalidArgument("experiment: MCMC schedule keeps " + std::to_string(schedule().kept()) +
                              " masks, fewer than " + std::to_string(repetitions) + " repetitions");
    static const std::set<std::string> known{"unweighted", "oracle", "rgrad"};
    if (methods.empty()) throw InvalidArgument("experiment: at least one method");
    for (const auto& mth : methods)
        if (!known.count(mth)) throw InvalidArgument("experiment: unknown method '" + mth + "'");
    if (scores.empty()) throw InvalidArgument("experiment: at least one score");
    for (Index c : effective_candidates())
        if (c < 1) throw InvalidArgument("experiment: rank candidates must be positive");
    if (rgrad_rank && *rgrad_rank < 1) throw InvalidArgument("experiment: rgrad_rank must be positive");
    RGradConfig probe = rgrad;
    probe.rank.assign(kModes - 1, 1);
    probe.validate(kModes);
}

GibbsSchedule ExperimentConfig::schedule() const {
    if (mcmc) return *mcmc;
    return fast ? GibbsSchedule{8000, 2000, 200} : GibbsSchedule{40000, 10000, 1000};
}

std::vector<double> ExperimentConfig::effective_levels() const { return levels.empty() ? default_levels() : levels; }

std::vector<Index> ExperimentConfig::effective_candidates() const {
    if (!rank_candidates.empty()) return rank_candidates;
    std::vector<Index> c;
    const Index hi = std::max<Index>(2, std::min<Index>(9, d / 4));
    for (Index r2 = 2; r2 <= hi; ++r2) c.push_back(r2);
    return c;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    static const std::set<std::string> keys{
        "d", "r", "theta", "noise", "snr", "q", "levels", "completion_rank", "completion_max_iter",
        "completion_tol", "fast", "mcmc", "repetitions", "seed", "methods", "scores", "rank_candidates",
        "rgrad_rank", "criterion", "rgrad", "neighbor_mask", "audit_dir"};
    if (!j.is_object()) throw InvalidArgument("experiment config must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!keys.count(key)) throw InvalidArgument("experiment config: unknown key '" + key + "'");

    ExperimentConfig c;
    try {
        if (j.contains("d")) c.d = j.at("d").get<Index>();
        if (j.contains("r")) c.r = j.at("r").get<Index>();
        if (j.contains("theta")) c.theta = j.at("theta").get<double>();
        if (j.contains("noise")) {
            const auto& n = j.at("noise");
            c.noise.clear();
            if (n.is_string())
                c.noise.push_back(parse_noise_kind(n.get<std::string>()));
            else
                for (const auto& e : n) c.noise.push_back(parse_noise_kind(e.get<std::string>()));
        }
        if (j.contains("snr")) c.snr = j.at("snr").get<double>();
        if (j.contains("q")) c.q = j.at("q").get<double>();
        if (j.contains("levels")) c.levels = j.at("levels").get<std::vector<double>>();
        if (j.contains("completion_rank")) c.completion_rank = j.at("completion_rank").get<std::vector<Index>>();
        if (j.contains("completion_max_iter")) c.completion_max_iter = j.at("completion_max_iter").get<int>();
        if (j.contains("completion_tol")) c.completion_tol = j.at("completion_tol").get<double>();
        if (j.contains("fast")) c.fast = j.at("fast").get<bool>();
        if (j.contains("mcmc")) {
            const auto& m = j.at("mcmc");
            GibbsSchedule s = c.schedule();
            for (const auto& [key, value] : m.items())
                if (key != "iters" && key != "burn_in" && key != "thin" && key != "seed")
                    throw InvalidArgument("experiment config: unknown mcmc key '" + key + "'");
            if (m.contains("iters")) s.iters = m.at("iters").get<long>();
            if (m.contains("burn_in")) s.burn_in = m.at("burn_in").get<long>();
            if (m.contains("thin")) s.thin = m.at("thin").get<long>();
            if (m.contains("seed")) c.chain_seed = m.at("seed").get<std::uint64_t>();
            c.mcmc = s;
        }
        if (j.contains("repetitions")) c.repetitions = j.at("repetitions").get<int>();
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
        if (j.contains("scores")) {
            c.scores.clear();
            for (const auto& e : j.at("scores")) c.scores.push_back(parse_score_kind(e.get<std::string>()));
        }
        if (j.contains("rank_candidates")) c.rank_candidates = j.at("rank_candidates").get<std::vector<Index>>();
        if (j.contains("rgrad_rank") && !j.at("rgrad_rank").is_null()) c.rgrad_rank = j.at("rgrad_rank").get<Index>();
        if (j.contains("criterion")) c.criterion = parse_criterion(j.at("criterion").get<std::string>());
        if (j.contains("rgrad")) {
            const auto& g = j.at("rgrad");
            static const std::set<std::string> gkeys{"step",  "eta", "eta0",   "alpha",
                                                     "max_halvings", "tol", "l_max", "init_sigma"};
            for (const auto& [key, value] : g.items())
                if (!gkeys.count(key)) throw InvalidArgument("experiment config: unknown rgrad key '" + key + "'");
            const std::string step = g.value("step", std::string("fixed"));
            if (step == "fixed") {
                c.rgrad.step = FixedStep{g.value("eta", 0.1)};
            } else if (step == "armijo") {
                c.rgrad.step = ArmijoStep{g.value("eta0", 1.0), g.value("alpha", 1e-4), g.value("max_halvings", 30)};
            } else {
                throw InvalidArgument("experiment config: rgrad.step must be fixed or armijo");
            }
            c.rgrad.tol = g.value("tol", c.rgrad.tol);
            c.rgrad.l_max = g.value("l_max", c.rgrad.l_max);
            c.rgrad.init_sigma = g.value("init_sigma", c.rgrad.init_sigma);
        }
        if (j.contains("neighbor_mask")) {
            const auto nm = j.at("neighbor_mask").get<std::string>();
            if (nm == "training")
                c.neighbor_mask = NeighborMask::training;
            else if (nm == "observed")
                c.neighbor_mask = NeighborMask::observed;
            else
                throw InvalidArgument("experiment config: neighbor_mask must be training or observed");
        }
        if (j.contains("audit_dir")) c.audit_dir = j.at("audit_dir").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("experiment config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["d"] = d;
    j["r"] = r;
    j["theta"] = theta;
    j["noise"] = nlohmann::json::array();
    for (auto n : noise) j["noise"].push_back(to_string(n));
    j["snr"] = snr;
    j["q"] = q;
    j["levels"] = effective_levels();
    j["completion_rank"] = completion_rank;
    j["completion_max_iter"] = completion_max_iter;
    j["completion_tol"] = completion_tol;
    j["fast"] = fast;
    const auto s = schedule();
    j["mcmc"] = {{"iters", s.iters}, {"burn_in", s.burn_in}, {"thin", s.thin}};
    if (chain_seed) j["mcmc"]["seed"] = *chain_seed;
    j["repetitions"] = repetitions;
    j["seed"] = seed;
    j["methods"] = methods;
    j["scores"] = nlohmann::json::array();
    for (auto sc : scores) j["scores"].push_back(to_string(sc));
    j["rank_candidates"] = effective_candidates();
    j["rgrad_rank"] = rgrad_rank ? nlohmann::json(*rgrad_rank) : nlohmann::json(nullptr);
    j["criterion"] = criterion == InfoCriterion::aic ? "aic" : "bic";
    nlohmann::json g;
    if (const auto* f = std::get_if<FixedStep>(&rgrad.step)) {
        g["step"] = "fixed";
        g["eta"] = f->eta;
    } else {
        const auto& a = std::get<ArmijoStep>(rgrad.step);
        g["step"] = "armijo";
        g["eta0"] = a.eta0;
        g["alpha"] = a.alpha;
        g["max_halvings"] = a.max_halvings;
    }
    g["tol"] = rgrad.tol;
    g["l_max"] = rgrad.l_max;
    g["init_sigma"] = rgrad.init_sigma;
    j["rgrad"] = g;
    j["neighbor_mask"] = neighbor_mask == NeighborMask::training ? "training" : "observed";
    if (!audit_dir.empty()) j["audit_dir"] = audit_dir;
    return j;
}

DenseTensor gen_block_param(Index d, Index r, std::uint64_t seed, double noise_sd) {
    if (d < 1 || r < 1) throw InvalidArgument("gen_block_param: d and r must be positive");
    if (r > d) throw InvalidArgument("gen_block_param: r = " + std::to_string(r) + " exceeds d = " + std::to_string(d));
    if (!(noise_sd >= 0)) throw InvalidArgument("gen_block_param: noise sd must be non-negative");
    Rng rng(seed);
    DenseTensor core(Dims{r, r, r});
    const double mix_sd = 0.5;
    for (Index i = 0; i < core.size(); ++i) {
        const double mu = rng.uniform() < 0.5 ? 1.0 : -1.0;
        core[i] = rng.normal(mu, mix_sd);
    }
    const Index block = (d + r - 1) / r;
    MatrixX<double> u = MatrixX<double>::Zero(d, r);
    for (Index i = 0; i < d; ++i) u(i, std::min(i / block, r - 1)) = 1.0;
    DenseTensor b = core;
    for (Index k = 0; k < kModes; ++k) b = mode_product(b, u, static_cast<std::size_t>(k));
    // The noise stream is drawn even at zero sd so the core stays seed-aligned.
    for (Index i = 0; i < b.size(); ++i) b[i] += noise_sd * rng.normal();
    const double mx = max_norm(b);
    if (mx > 0) b *= 2.0 / mx;
    return b;
}

double noise_sigma(NoiseKind noise, double b_star_s) {
    return noise == NoiseKind::constant ? 1.0 : 0.5 * (1.0 + std::exp(-b_star_s));
}

SignalAndNoise gen_signal_and_noise(Index d, NoiseKind noise, double snr, const DenseTensor& b_star,
                                    std::uint64_t seed) {
    if (b_star.dims() != Dims{d, d, d}) throw DimensionMismatch("gen_signal_and_noise: B* must be d×d×d");
    if (!(snr > 0)) throw InvalidArgument("gen_signal_and_noise: snr must be positive");
    Rng rng(seed);
    const Index t = 3;
    DenseTensor core(Dims{t, t, t});
    for (Index i = 0; i < core.size(); ++i) core[i] = rng.normal();
    DenseTensor xs = core;
    for (Index k = 0; k < kModes; ++k) {
        MatrixX<double> u(d, t);
        for (Index c = 0; c < t; ++c)
            for (Index i = 0; i < d; ++i) u(i, c) = rng.normal();
        xs = mode_product(xs, u, static_cast<std::size_t>(k));
    }
    xs *= 2.0 / max_norm(xs);
    DenseTensor e(xs.dims());
    for (Index i = 0; i < e.size(); ++i) e[i] = noise_sigma(noise, b_star[i]) * rng.normal();
    e *= max_norm(xs) / (snr * max_norm(e));
    return {xs, xs + e};
}

double empirical_coverage(const std::vector<Interval>& intervals, const DenseTensor& truth) {
    if (intervals.empty()) return std::numeric_limits<double>::quiet_NaN();
    Index hit = 0;
    for (const auto& iv : intervals) {
        const double x = truth[iv.offset];
        if (iv.lo <= x && x <= iv.hi) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(intervals.size());
}

double miscoverage(const std::vector<double>& coverages, const std::vector<double>& levels) {
    if (coverages.size() != levels.size() || levels.empty())
        throw InvalidArgument("miscoverage: one coverage per level required");
    double s = 0.0;
    for (std::size_t i = 0; i < levels.size(); ++i) s += std::abs(levels[i] - coverages[i]);
    return 100.0 * s / static_cast<double>(levels.size());
}

double rse(const DenseTensor& b_hat, const DenseTensor& b_star) {
    b_hat.require_same_dims(b_star, "rse");
    const double den = frobenius_norm(b_star);
    if (den == 0) throw InvalidArgument("rse: reference tensor is zero");
    return frobenius_norm(b_hat - b_star) / den;
}

const MethodSummary& MetricsReport::find(NoiseKind noise, const std::string& method, ScoreKind score) const {
    for (const auto& s : summaries)
        if (s.noise == noise && s.method == method && s.score == score) return s;
    throw InvalidArgument("report has no entry for " + to_string(noise) + "/" + method + "/" + to_string(score));
}

nlohmann::json MetricsReport::to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["config"] = config.to_json();
    j["levels"] = levels;
    j["results"] = nlohmann::json::array();
    for (const auto& s : summaries) {
        nlohmann::json e;
        e["noise"] = to_string(s.noise);
        e["method"] = s.method;
        e["score"] = to_string(s.score);
        e["avg_miscoverage_pct"] = {{"mean", num(s.amc_mean)}, {"sd", num(s.amc_sd)}};
        nlohmann::json cov = nlohmann::json::object(), wid = nlohmann::json::object();
        for (std::size_t l = 0; l < levels.size(); ++l) {
            std::ostringstream key;
            key << std::fixed << std::setprecision(2) << levels[l];
            cov[key.str()] = num(s.coverage_mean[l]);
            wid[key.str()] = num(s.width_mean[l]);
        }
        e["coverage"] = cov;
        e["mean_width"] = wid;
        e["rse"] = {{"mean", num(s.rse_mean)}, {"sd", num(s.rse_sd)}};
        nlohmann::json ranks = nlohmann::json::array();
        for (const auto& r : s.reps) ranks.push_back(r.selected_rank);
        if (s.method == "rgrad") e["selected_rank"] = ranks;
        e["unbounded_intervals"] = s.unbounded_total;
        e["clamped_weights"] = s.clamped_total;
        j["results"].push_back(e);
    }
    return j;
}

void MetricsReport::write_rep_csv(std::ostream& os) const {
    os << "noise,method,score,rep,selected_rank,rse,avg_miscoverage_pct,unbounded,clamped";
    for (double t : levels) os << ",coverage_" << std::lround(t * 100);
    for (double t : levels) os << ",width_" << std::lround(t * 100);
    os << '\n' << std::setprecision(17);
    for (const auto& s : summaries)
        for (const auto& r : s.reps) {
            os << to_string(s.noise) << ',' << s.method << ',' << to_string(s.score) << ',' << r.rep << ','
               << r.selected_rank << ',';
            if (std::isfinite(r.rse)) os << r.rse;
            os << ',' << r.avg_miscoverage_pct << ',' << r.unbounded << ',' << r.clamped;
            for (double c : r.coverage) os << ',' << c;
            for (double w : r.width) os << ',' << w;
            os << '\n';
        }
}

MetricsReport run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
    cfg.validate();
    const auto levels = cfg.effective_levels();
    const Dims dims{cfg.d, cfg.d, cfg.d};
    PropensityModel model;
    model.coupling = Coupling::product(cfg.theta);
    model.q = cfg.q;
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

    const DenseTensor b_star = gen_block_param(cfg.d, cfg.r, derive_seed(cfg.seed, stream::block_param));
    const std::uint64_t chain_seed = cfg.chain_seed ? *cfg.chain_seed : derive_seed(cfg.seed, stream::chain);
    const auto masks = gibbs_sample(b_star, model, cfg.schedule(), chain_seed);
    if (log) *log << "[experiment] B* and " << masks.size() << " masks ready after " << elapsed() << " s\n";
    if (!cfg.audit_dir.empty()) {
        std::filesystem::create_directories(cfg.audit_dir);
        write_dten(std::filesystem::path(cfg.audit_dir) / "b_star.dten", b_star);
    }

    const std::size_t n_noise = cfg.noise.size(), n_meth = cfg.methods.size(), n_score = cfg.scores.size();
    const bool need_unc = std::find(cfg.scores.begin(), cfg.scores.end(), ScoreKind::normalized) != cfg.scores.end();
    // results[rep][noise][method][score]
    std::vector<std::vector<RepMetrics>> results(cfg.repetitions,
                                                 std::vector<RepMetrics>(n_noise * n_meth * n_score));
    const auto candidates = cfg.effective_candidates();

#pragma omp parallel for schedule(dynamic)
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
        const MaskTensor& w = masks[static_cast<std::size_t>(rep)];
        const SplitAssignment split = split_observed(w, cfg.q, derive_seed(cfg.seed, stream::split, rep));

        std::vector<CalibrationWeights> weights(n_meth);
        double fit_rse = std::numeric_limits<double>::quiet_NaN();
        Index selected = 0;
        for (std::size_t mi = 0; mi < n_meth; ++mi) {
            const auto& mth = cfg.methods[mi];
            if (mth == "unweighted") {
                weights[mi] = uniform_weights(dims);
            } else if (mth == "oracle") {
                weights[mi] = calibration_weights(split, b_star, model, cfg.neighbor_mask);
            } else {
                RGradConfig rc = cfg.rgrad;
                rc.seed = derive_seed(cfg.seed, stream::rgrad, rep);
                const MaskTensor w_tr = split.train_mask();
                TT b_hat;
                if (cfg.rgrad_rank) {
                    rc.rank.assign(kModes - 1, *cfg.rgrad_rank);
                    b_hat = fit_mple(w_tr, model, rc).b_hat;
                    selected = *cfg.rgrad_rank;
                } else {
                    rc.rank.assign(kModes - 1, candidates.front());
                    auto sel = rank_select(w_tr, model, candidates, cfg.criterion, rc);
                    selected = sel.best;
                    b_hat = std::move(sel.best_fit.b_hat);
                }
                const DenseTensor b_full = tt_full(b_hat);
                fit_rse = rse(b_full, b_star);
                weights[mi] = calibration_weights(split, b_full, model, cfg.neighbor_mask);
            }
        }

        for (std::size_t ni = 0; ni < n_noise; ++ni) {
            const auto sn = gen_signal_and_noise(cfg.d, cfg.noise[ni], cfg.snr, b_star, derive_seed(cfg.seed, stream::signal, rep));
            DenseTensor x_obs = sn.x;
            for (Index i : split.missing) x_obs[i] = missing_value<double>();
            CompletionOptions co;
            co.rank = cfg.completion_rank;
            co.max_iter = cfg.completion_max_iter;
            co.tol = cfg.completion_tol;
            co.seed = derive_seed(cfg.seed, stream::completion, rep);
            const TuckerFit fit = tucker_complete(split.training_data(sn.x), co);
            const DenseTensor xhat = tucker_full(fit.tucker);
            std::optional<DenseTensor> unc;
            if (need_unc) {
                unc = tucker_tangent_norms(fit.tucker);
                for (Index i = 0; i < unc->size(); ++i) (*unc)[i] = std::max((*unc)[i], 1e-12);
            }
            if (!cfg.audit_dir.empty()) {
                const auto base = std::filesystem::path(cfg.audit_dir);
                const std::string tag = std::to_string(rep) + "_" + to_string(cfg.noise[ni]);
                write_dten(base / ("mask_" + std::to_string(rep) + ".dten"), w.tensor());
                write_dten(base / ("x_" + tag + ".dten"), sn.x);
                write_dten(base / ("xhat_" + tag + ".dten"), xhat);
            }

            for (std::size_t mi = 0; mi < n_meth; ++mi)
                for (std::size_t si = 0; si < n_score; ++si) {
                    ScoreFunction sf{cfg.scores[si], std::nullopt};
                    if (sf.kind == ScoreKind::normalized) sf.uncertainty = unc;
                    const ConformalCalibration cal(x_obs, xhat, split, weights[mi], sf);
                    RepMetrics rm;
                    rm.rep = rep;
                    rm.clamped = weights[mi].clamped;
                    if (cfg.methods[mi] == "rgrad") {
                        rm.rse = fit_rse;
                        rm.selected_rank = selected;
                    }
                    for (double tau : levels) {
                        const auto ivs = cal.intervals(1.0 - tau);
                        rm.coverage.push_back(empirical_coverage(ivs, sn.x));
                        double wsum = 0.0;
                        Index bounded = 0;
                        for (const auto& iv : ivs) {
                            if (iv.unbounded) {
                                ++rm.unbounded;
                            } else {
                                wsum += iv.hi - iv.lo;
                                ++bounded;
                            }
                        }
                        rm.width.push_back(bounded ? wsum / static_cast<double>(bounded)
                                                   : std::numeric_limits<double>::infinity());
                    }
                    rm.avg_miscoverage_pct = miscoverage(rm.coverage, levels);
                    results[rep][(ni * n_meth + mi) * n_score + si] = std::move(rm);
                }
        }
        if (log) {
#pragma omp critical(ctc_experiment_log)
            *log << "[experiment] repetition " << rep << " done after " << elapsed() << " s"
                 << (selected ? " (rgrad rank " + std::to_string(selected) + ")" : std::string()) << '\n';
        }
    }

    MetricsReport report;
    report.config = cfg;
    report.levels = levels;
    for (std::size_t ni = 0; ni < n_noise; ++ni)
        for (std::size_t mi = 0; mi < n_meth; ++mi)
            for (std::size_t si = 0; si < n_score; ++si) {
                MethodSummary s{cfg.noise[ni], cfg.methods[mi], cfg.scores[si], {}, 0, 0, {}, {}, 0, 0, 0, 0};
                std::vector<double> amc, rses;
                for (int rep = 0; rep < cfg.repetitions; ++rep) {
                    const auto& rm = results[rep][(ni * n_meth + mi) * n_score + si];
                    s.reps.push_back(rm);
                    amc.push_back(rm.avg_miscoverage_pct);
                    if (std::isfinite(rm.rse)) rses.push_back(rm.rse);
                    s.unbounded_total += rm.unbounded;
                    s.clamped_total += rm.clamped;
                }
                s.amc_mean = mean_of(amc);
                s.amc_sd = sd_of(amc);
                s.rse_mean = rses.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_of(rses);
                s.rse_sd = rses.empty() ? std::numeric_limits<double>::quiet_NaN() : sd_of(rses);
                for (std::size_t l = 0; l < levels.size(); ++l) {
                    std::vector<double> cv, wd;
                    for (const auto& rm : s.reps) {
                        cv.push_back(rm.coverage[l]);
                        wd.push_back(rm.width[l]);
                    }
                    s.coverage_mean.push_back(mean_of(cv));
                    s.width_mean.push_back(mean_of(wd));
                }
                report.summaries.push_back(std::move(s));
            }
    if (log) *log << "[experiment] finished after " << elapsed() << " s\n";
    return report;
}

}  // namespace ctc
