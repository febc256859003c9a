// ctc: command-line front end for simulation, propensity fitting, completion,
// conformal intervals, evaluation and full experiments.

#include <omp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ctc/completion.hpp"
#include "ctc/conformal.hpp"
#include "ctc/random.hpp"
#include "ctc/rgrad.hpp"
#include "ctc/simulation.hpp"
#include "ctc/tensor_io.hpp"
#include "ctc/tt_io.hpp"

using namespace ctc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string key_of(const std::string& flag) {
    std::string k = flag;
    for (char& c : k)
        if (c == '-') c = '_';
    return k;
}

// Options settable by flag or by JSON config key; a given flag wins over the config.
class Params {
public:
    explicit Params(CLI::App* app) : app_(app) {}

    template <typename T>
    CLI::Option* option(const std::string& name, T& var, const std::string& help) {
        CLI::Option* opt = app_->add_option("--" + name, var, help)->capture_default_str();
        bind(name, opt, var);
        return opt;
    }

    CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
        CLI::Option* opt = app_->add_flag("--" + name, var, help);
        bind(name, opt, var);
        return opt;
    }

    bool has(const std::string& key) const { return find(key) != nullptr; }

    // True when the value came from the command line or the config file.
    bool given(const std::string& name) const {
        const Binding* b = find(key_of(name));
        return b && (b->opt->count() > 0 || b->from_config);
    }

    void load(const std::string& key, const json& value) {
        Binding* b = find(key);
        if (b->opt->count() > 0) return;
        try {
            b->load(value);
        } catch (const json::exception& e) {
            throw UsageError("config key '" + key + "': " + e.what());
        }
        b->from_config = true;
    }

    void echo(json& out) const {
        for (const auto& b : binds_) out[b.key] = b.save();
    }

private:
    struct Binding {
        std::string key;
        CLI::Option* opt;
        std::function<void(const json&)> load;
        std::function<json()> save;
        bool from_config = false;
    };

    template <typename T>
    void bind(const std::string& name, CLI::Option* opt, T& var) {
        binds_.push_back({key_of(name), opt, [&var](const json& j) { var = j.get<T>(); }, [&var] { return json(var); }});
    }

    const Binding* find(const std::string& key) const {
        for (const auto& b : binds_)
            if (b.key == key) return &b;
        return nullptr;
    }
    Binding* find(const std::string& key) {
        for (auto& b : binds_)
            if (b.key == key) return &b;
        return nullptr;
    }

    CLI::App* app_;
    std::vector<Binding> binds_;
};

struct Globals {
    std::uint64_t seed = 1;
    int threads = 0;
    std::string output_dir = ".";
    std::string config;
};

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError("config " + path + ": " + e.what());
    }
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << std::setw(2) << j << '\n';
    if (!out) throw DataError("failed writing " + path.string());
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << std::setprecision(17);
    return out;
}

PropensityModel make_model(double theta, double q, const std::string& h) {
    if (h != "logit") throw UsageError("unknown field '" + h + "' (only logit is supported)");
    PropensityModel m;
    m.coupling = Coupling::product(theta);
    m.q = q;
    m.validate();
    return m;
}

ScoreKind score_of(std::string name) {
    for (char& c : name)
        if (c == '-') c = '_';
    return parse_score_kind(name);
}

std::string level_tag(double tau) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << tau;
    return os.str();
}

std::vector<Index> default_candidates(const Dims& dims) {
    ExperimentConfig c;
    c.d = *std::min_element(dims.begin(), dims.end());
    return c.effective_candidates();
}

std::uint64_t default_split_seed(const Globals& g) { return derive_seed(g.seed, stream::split, 0); }

// ---- simulate ----

struct SimulateArgs {
    Index d = 40;
    Index r = 3;
    double theta = 0.0;
    double snr = 2.0;
    std::string noise = "constant";
    int reps = 30;
    bool paper = false;
    int mcmc_iters = 0;
    int burn_in = 0;
    int thin = 0;

    void add(Params& p) {
        p.option("d", d, "side length of the d x d x d tensor");
        p.option("r", r, "number of blocks per mode in B*");
        p.option("theta", theta, "Ising coupling");
        p.option("snr", snr, "max|X*| / max|E|");
        p.option("noise", noise, "constant | adversarial");
        p.option("reps", reps, "number of masks to emit");
        p.flag("paper", paper, "use the long MCMC schedule");
        p.option("mcmc-iters", mcmc_iters, "override the chain length (0 keeps the schedule)");
        p.option("burn-in", burn_in, "burn-in sweeps when --mcmc-iters is set");
        p.option("thin", thin, "thinning when --mcmc-iters is set");
    }

    ExperimentConfig config(const Globals& g) const {
        ExperimentConfig c;
        c.d = d;
        c.r = r;
        c.theta = theta;
        c.snr = snr;
        c.noise = {parse_noise_kind(noise)};
        c.repetitions = reps;
        c.fast = !paper;
        c.seed = g.seed;
        if (mcmc_iters > 0) c.mcmc = GibbsSchedule{mcmc_iters, burn_in, thin};
        c.validate();
        return c;
    }
};

struct SimData {
    DenseTensor b_star;
    std::vector<MaskTensor> masks;
    SignalAndNoise signal;
};

SimData simulate(const ExperimentConfig& c, int rep) {
    PropensityModel m;
    m.coupling = Coupling::product(c.theta);
    SimData s;
    s.b_star = gen_block_param(c.d, c.r, derive_seed(c.seed, stream::block_param));
    const std::uint64_t chain_seed = c.chain_seed ? *c.chain_seed : derive_seed(c.seed, stream::chain);
    s.masks = gibbs_sample(s.b_star, m, c.schedule(), chain_seed);
    s.masks.erase(s.masks.begin() + c.repetitions, s.masks.end());
    s.signal = gen_signal_and_noise(c.d, c.noise.front(), c.snr, s.b_star,
                                    derive_seed(c.seed, stream::signal, static_cast<std::uint64_t>(rep)));
    return s;
}

DenseTensor mask_data(const DenseTensor& x, const MaskTensor& w) {
    DenseTensor out = x;
    for (Index i = 0; i < out.size(); ++i)
        if (!w.observed(i)) out[i] = missing_value<double>();
    return out;
}

int run_simulate(const Globals& g, const SimulateArgs& a) {
    const auto c = a.config(g);
    const auto s = simulate(c, 0);
    const fs::path out(g.output_dir);
    write_dten(out / "b_star.dten", s.b_star);
    for (std::size_t i = 0; i < s.masks.size(); ++i)
        write_dten(out / ("mask_" + std::to_string(i) + ".dten"), s.masks[i].tensor());
    write_dten(out / "x_star.dten", s.signal.x_star);
    write_dten(out / "x_full.dten", s.signal.x);
    write_dten(out / "x.dten", mask_data(s.signal.x, s.masks.front()));
    std::cout << "wrote B*, " << s.masks.size() << " masks and x (mask 0) to " << out.string() << '\n';
    return 0;
}

// ---- fit ----

struct ModelArgs {
    double theta = 0.0;
    double q = 0.7;
    std::string h = "logit";
    std::uint64_t split_seed = 0;

    void add(Params& p) {
        p.option("theta", theta, "Ising coupling of the propensity model");
        p.option("q", q, "probability that an observed entry is in the training split");
        p.option("field", h, "field link (logit)");
        p.option("split-seed", split_seed,
                 "seed of the train/calibration split; must match across fit, complete and conformal "
                 "(default derived from --seed)");
    }

    void resolve(const Params& p, const Globals& g) {
        if (!p.given("split-seed")) split_seed = default_split_seed(g);
    }

    PropensityModel model() const { return make_model(theta, q, h); }
};

struct FitArgs {
    std::string mask;
    std::string data;
    std::vector<Index> rank;
    std::string rank_select;
    std::vector<Index> candidates;
    std::string step = "fixed";
    double eta = 0.1;
    int l_max = 500;
    double tol = 1e-4;

    void add(Params& p) {
        p.option("mask", mask, "observation mask (DTEN, +1 observed / -1 missing)");
        p.option("data", data, "data tensor (DTEN, NaN missing); the mask is its observed pattern");
        p.option("rank", rank, "TT rank r_1,...,r_{K-1}")->delimiter(',');
        p.option("rank-select", rank_select, "aic | bic: choose the rank among --candidates");
        p.option("candidates", candidates, "scalar rank candidates (default 2..min(9, d/4))")->delimiter(',');
        p.option("step", step, "fixed | armijo");
        p.option("eta", eta, "fixed step size or Armijo initial step");
        p.option("l-max", l_max, "iteration cap");
        p.option("tol", tol, "relative change tolerance");
    }

    RGradConfig config(std::uint64_t seed) const {
        RGradConfig c;
        if (step == "fixed")
            c.step = FixedStep{eta};
        else if (step == "armijo")
            c.step = ArmijoStep{eta};
        else
            throw UsageError("unknown step rule '" + step + "' (use fixed or armijo)");
        c.l_max = l_max;
        c.tol = tol;
        c.seed = seed;
        return c;
    }
};

MaskTensor load_mask(const std::string& mask, const std::string& data) {
    if (mask.empty() == data.empty()) throw UsageError("give exactly one of --mask and --data");
    if (!mask.empty()) {
        try {
            return MaskTensor(read_dten(mask));
        } catch (const InvalidArgument& e) {
            throw DataError(mask + ": " + e.what());
        }
    }
    return MaskTensor::from_observed(read_dten(data));
}

struct FitOutput {
    TT b_hat;
    FitResult fit;
    std::vector<RankSelectRow> table;
    Index selected = 0;
};

FitOutput fit_propensity(const MaskTensor& w_tr, const PropensityModel& m, const FitArgs& a, std::uint64_t seed) {
    const std::size_t K = w_tr.dims().size();
    RGradConfig cfg = a.config(seed);
    FitOutput out;
    if (!a.rank_select.empty()) {
        if (!a.rank.empty()) throw UsageError("give either --rank or --rank-select, not both");
        const auto crit = parse_criterion(a.rank_select);
        const auto cand = a.candidates.empty() ? default_candidates(w_tr.dims()) : a.candidates;
        cfg.rank.assign(K - 1, cand.front());
        auto sel = rank_select(w_tr, m, cand, crit, cfg);
        out.selected = sel.best;
        out.table = std::move(sel.table);
        out.fit = std::move(sel.best_fit);
    } else {
        if (a.rank.empty()) throw UsageError("give --rank or --rank-select");
        if (a.rank.size() + 1 != K)
            throw UsageError("--rank needs " + std::to_string(K - 1) + " entries for a " + std::to_string(K) +
                             "-mode tensor");
        cfg.rank = a.rank;
        out.fit = fit_mple(w_tr, m, cfg);
    }
    out.b_hat = out.fit.b_hat;
    return out;
}

void write_fit(const fs::path& out, const FitOutput& f) {
    write_tt(out / "b_hat", f.b_hat);
    write_trace_csv((out / "trace.csv").string(), f.fit.trace);
    if (!f.table.empty()) {
        auto os = open_out(out / "rank_select.csv");
        os << "candidate,neg_pseudo_loglik,params,criterion,selected\n";
        for (const auto& r : f.table)
            os << r.candidate << ',' << r.neg_pseudo_loglik << ',' << r.params << ',' << r.criterion << ','
               << (r.candidate == f.selected ? 1 : 0) << '\n';
    }
}

int run_fit(const Globals& g, const ModelArgs& ma, const FitArgs& a) {
    const auto m = ma.model();
    const MaskTensor w = load_mask(a.mask, a.data);
    const auto split = split_observed(w, m.q, ma.split_seed);
    const auto f = fit_propensity(split.train_mask(), m, a, derive_seed(g.seed, stream::rgrad, 0));
    write_fit(g.output_dir, f);
    std::cout << "rank";
    for (Index r : f.b_hat.ranks()) std::cout << ' ' << r;
    std::cout << "  iterations " << f.fit.trace.size() << "  neg pseudo-loglik " << std::setprecision(10)
              << f.fit.final_loss << (f.fit.converged ? "  converged" : "  not converged") << '\n';
    return 0;
}

// ---- complete ----

struct CompleteArgs {
    std::string data;
    std::vector<Index> rank{3, 3, 3};
    int max_iter = 1000;
    double tol = 1e-6;
    std::string external;
    bool uncertainty = false;

    void add(Params& p) {
        p.option("data", data, "data tensor (DTEN, NaN missing)");
        p.option("rank", rank, "Tucker rank")->delimiter(',');
        p.option("max-iter", max_iter, "iteration cap");
        p.option("tol", tol, "relative objective tolerance");
        p.option("external", external, "external completion command with {input} and {output} placeholders");
        p.flag("uncertainty", uncertainty, "also write tangent-norm uncertainty for the normalized score");
    }
};

struct CompleteOutput {
    DenseTensor xhat;
    std::optional<DenseTensor> uncertainty;
};

CompleteOutput complete_training(const DenseTensor& x, const SplitAssignment& split, const CompleteArgs& a,
                                 std::uint64_t seed) {
    const DenseTensor train = split.training_data(x);
    CompleteOutput out;
    if (!a.external.empty()) {
        if (a.uncertainty) throw UsageError("--uncertainty needs the built-in Tucker completion");
        out.xhat = ExternalCompletion(a.external).complete(train);
        return out;
    }
    CompletionOptions co;
    co.rank = a.rank;
    co.max_iter = a.max_iter;
    co.tol = a.tol;
    co.seed = seed;
    const auto fit = tucker_complete(train, co);
    out.xhat = tucker_full(fit.tucker);
    if (a.uncertainty) out.uncertainty = tucker_tangent_norms(fit.tucker);
    return out;
}

int run_complete(const Globals& g, const ModelArgs& ma, const CompleteArgs& a) {
    if (a.data.empty()) throw UsageError("--data is required");
    const DenseTensor x = read_dten(a.data);
    const auto split = split_observed(MaskTensor::from_observed(x), ma.q, ma.split_seed);
    const auto c = complete_training(x, split, a, derive_seed(g.seed, stream::completion, 0));
    const fs::path out(g.output_dir);
    write_dten(out / "xhat.dten", c.xhat);
    if (c.uncertainty) write_dten(out / "uncertainty.dten", *c.uncertainty);
    std::cout << "completed from " << split.train.size() << " training entries\n";
    return 0;
}

// ---- conformal ----

struct ConformalArgs {
    std::string data;
    std::string xhat;
    std::string b_hat;
    bool unweighted = false;
    double alpha = 0.1;
    bool all_levels = false;
    std::string score = "absolute";
    std::string uncertainty;
    std::string neighbor = "training";

    void add(Params& p) {
        p.option("data", data, "data tensor (DTEN, NaN missing)");
        p.option("xhat", xhat, "completed tensor fitted on the training split only");
        p.option("b-hat", b_hat, "fitted propensity TT (file stem)");
        p.flag("unweighted", unweighted, "uniform weights (canonical split conformal)");
        p.option("alpha", alpha, "miscoverage level");
        p.flag("all-levels", all_levels, "write intervals for every coverage level 0.80..0.99");
        p.option("score", score, "absolute | two-sided | normalized");
        p.option("uncertainty", uncertainty, "per-entry scale for the normalized score (DTEN)");
        p.option("neighbor", neighbor, "training | observed: neighbor states in the weights");
    }
};

struct LevelIntervals {
    double level;
    std::vector<Interval> intervals;
};

std::vector<LevelIntervals> conformalize(const DenseTensor& x, const DenseTensor& xhat, const SplitAssignment& split,
                                         const CalibrationWeights& weights, const ScoreFunction& score,
                                         const std::vector<double>& levels) {
    if (xhat.dims() != x.dims())
        throw DimensionMismatch("xhat dims " + dims_to_string(xhat.dims()) + " vs data " + dims_to_string(x.dims()));
    if (xhat.has_missing()) throw DataError("xhat contains missing entries");
    const ConformalCalibration cal(x, xhat, split, weights, score);
    std::vector<LevelIntervals> out;
    for (double tau : levels) out.push_back({tau, cal.intervals(1.0 - tau)});
    return out;
}

void write_levels(const fs::path& out, const std::vector<LevelIntervals>& ivs, const Dims& dims, bool single) {
    if (single) {
        write_intervals_csv((out / "intervals.csv").string(), ivs.front().intervals, dims);
        return;
    }
    json index{{"levels", json::array()}, {"files", json::array()}};
    for (const auto& l : ivs) {
        const std::string name = "intervals_" + level_tag(l.level) + ".csv";
        write_intervals_csv((out / name).string(), l.intervals, dims);
        index["levels"].push_back(l.level);
        index["files"].push_back(name);
    }
    write_json_file(out / "levels.json", index);
}

CalibrationWeights make_weights(const SplitAssignment& split, const std::string& b_hat, bool unweighted,
                                const PropensityModel& m, const std::string& neighbor) {
    if (unweighted) {
        if (!b_hat.empty()) throw UsageError("--unweighted ignores --b-hat; give one of them");
        return uniform_weights(split.dims);
    }
    if (b_hat.empty()) throw UsageError("give --b-hat or --unweighted");
    if (neighbor != "training" && neighbor != "observed")
        throw UsageError("unknown neighbor mask '" + neighbor + "' (use training or observed)");
    const TT b = read_tt(b_hat);
    if (b.dims() != split.dims)
        throw DimensionMismatch("b_hat dims " + dims_to_string(b.dims()) + " vs data " + dims_to_string(split.dims));
    return calibration_weights(split, b, m, neighbor == "training" ? NeighborMask::training : NeighborMask::observed);
}

ScoreFunction make_score(const std::string& score, std::optional<DenseTensor> unc) {
    ScoreFunction sf{score_of(score), std::nullopt};
    if (sf.kind == ScoreKind::normalized) {
        if (!unc) throw UsageError("the normalized score needs --uncertainty");
        for (Index i = 0; i < unc->size(); ++i) (*unc)[i] = std::max((*unc)[i], 1e-12);
        sf.uncertainty = std::move(unc);
    }
    return sf;
}

std::vector<double> levels_of(bool all, double alpha) {
    if (all) return default_levels();
    if (!(alpha > 0 && alpha < 1)) throw UsageError("--alpha must lie in (0, 1)");
    return {1.0 - alpha};
}

int run_conformal(const Globals& g, const ModelArgs& ma, const ConformalArgs& a) {
    if (a.data.empty() || a.xhat.empty()) throw UsageError("--data and --xhat are required");
    const auto m = ma.model();
    const DenseTensor x = read_dten(a.data);
    const DenseTensor xhat = read_dten(a.xhat);
    const auto split = split_observed(MaskTensor::from_observed(x), m.q, ma.split_seed);
    const auto weights = make_weights(split, a.b_hat, a.unweighted, m, a.neighbor);
    std::optional<DenseTensor> unc;
    if (!a.uncertainty.empty()) unc = read_dten(a.uncertainty);
    const auto ivs = conformalize(x, xhat, split, weights, make_score(a.score, unc), levels_of(a.all_levels, a.alpha));
    write_levels(g.output_dir, ivs, x.dims(), !a.all_levels);
    Index unbounded = 0;
    for (const auto& iv : ivs.front().intervals) unbounded += iv.unbounded ? 1 : 0;
    std::cout << ivs.front().intervals.size() << " missing entries, " << split.calibration.size()
              << " calibration entries, " << unbounded << " unbounded at level " << ivs.front().level << '\n';
    return 0;
}

// ---- evaluate ----

struct EvaluateArgs {
    std::string truth;
    std::string intervals;
    std::string intervals_dir;
    std::string b_hat;
    std::string b_star;

    void add(Params& p) {
        p.option("truth", truth, "complete ground-truth tensor (DTEN)");
        p.option("intervals", intervals, "one intervals CSV");
        p.option("intervals-dir", intervals_dir, "directory written by conformal --all-levels");
        p.option("b-hat", b_hat, "fitted propensity TT (file stem) for the RSE");
        p.option("b-star", b_star, "true propensity parameter (DTEN) for the RSE");
    }
};

json interval_metrics(const std::vector<Interval>& ivs, const DenseTensor& truth) {
    double width = 0.0;
    Index bounded = 0, unbounded = 0;
    for (const auto& iv : ivs) {
        if (iv.unbounded) {
            ++unbounded;
        } else {
            width += iv.hi - iv.lo;
            ++bounded;
        }
    }
    return {{"entries", ivs.size()},
            {"coverage", empirical_coverage(ivs, truth)},
            {"mean_width", bounded ? width / static_cast<double>(bounded) : 0.0},
            {"unbounded", unbounded}};
}

json evaluate_levels(const std::vector<LevelIntervals>& ivs, const DenseTensor& truth) {
    json j{{"levels", json::array()}};
    std::vector<double> cov, taus;
    for (const auto& l : ivs) {
        json m = interval_metrics(l.intervals, truth);
        m["level"] = l.level;
        cov.push_back(m["coverage"].get<double>());
        taus.push_back(l.level);
        j["levels"].push_back(m);
    }
    j["avg_miscoverage_pct"] = miscoverage(cov, taus);
    return j;
}

int run_evaluate(const Globals& g, const EvaluateArgs& a) {
    json report;
    if (!a.truth.empty()) {
        const DenseTensor truth = read_dten(a.truth);
        if (!a.intervals.empty() && !a.intervals_dir.empty())
            throw UsageError("give --intervals or --intervals-dir, not both");
        if (!a.intervals.empty()) report["intervals"] = interval_metrics(read_intervals_csv(a.intervals, truth.dims()), truth);
        if (!a.intervals_dir.empty()) {
            const fs::path dir(a.intervals_dir);
            const json index = read_json_file((dir / "levels.json").string());
            std::vector<LevelIntervals> ivs;
            for (std::size_t i = 0; i < index.at("levels").size(); ++i)
                ivs.push_back({index["levels"][i].get<double>(),
                               read_intervals_csv((dir / index["files"][i].get<std::string>()).string(), truth.dims())});
            report["intervals"] = evaluate_levels(ivs, truth);
        }
    }
    if (!a.b_hat.empty() || !a.b_star.empty()) {
        if (a.b_hat.empty() || a.b_star.empty()) throw UsageError("the RSE needs both --b-hat and --b-star");
        report["rse"] = rse(tt_full(read_tt(a.b_hat)), read_dten(a.b_star));
    }
    if (report.empty()) throw UsageError("nothing to evaluate: give --truth with intervals, or --b-hat and --b-star");
    write_json_file(fs::path(g.output_dir) / "metrics.json", report);
    std::cout << std::setw(2) << report << '\n';
    return 0;
}

// ---- experiment ----

struct ExperimentArgs {
    Index d = 0;
    Index r = 0;
    double theta = -1.0;
    int reps = 0;
    std::vector<std::string> noise;
    bool paper = false;

    void add(CLI::App* app) {
        app->add_option("--d", d, "override d");
        app->add_option("--r", r, "override r");
        app->add_option("--theta", theta, "override theta");
        app->add_option("--reps", reps, "override repetitions");
        app->add_option("--noise", noise, "override noise regimes")->delimiter(',');
        app->add_flag("--paper", paper, "use the long MCMC schedule");
    }
};

void write_tables(const fs::path& path, const MetricsReport& rep) {
    auto os = open_out(path);
    os << "noise,method,score,avg_miscoverage_pct,avg_miscoverage_sd,rse_mean,rse_sd,unbounded_total,clamped_total";
    for (double tau : rep.levels) os << ",coverage_" << level_tag(tau);
    for (double tau : rep.levels) os << ",width_" << level_tag(tau);
    os << '\n';
    for (const auto& s : rep.summaries) {
        os << to_string(s.noise) << ',' << s.method << ',' << to_string(s.score) << ',' << s.amc_mean << ','
           << s.amc_sd << ',';
        if (std::isfinite(s.rse_mean)) os << s.rse_mean;
        os << ',';
        if (std::isfinite(s.rse_sd)) os << s.rse_sd;
        os << ',' << s.unbounded_total << ',' << s.clamped_total;
        for (double c : s.coverage_mean) os << ',' << c;
        for (double w : s.width_mean) os << ',' << w;
        os << '\n';
    }
}

int run_experiment_cmd(const Globals& g, const CLI::App* app, const ExperimentArgs& a, json cfg_json) {
    if (app->count("--d")) cfg_json["d"] = a.d;
    if (app->count("--r")) cfg_json["r"] = a.r;
    if (app->count("--theta")) cfg_json["theta"] = a.theta;
    if (app->count("--reps")) cfg_json["repetitions"] = a.reps;
    if (app->count("--noise")) cfg_json["noise"] = a.noise;
    if (app->count("--paper")) {
        cfg_json["fast"] = false;
        cfg_json.erase("mcmc");
    }
    cfg_json["seed"] = g.seed;
    // The echoed config lists the schedule actually run; a flag change of d or
    // fast must not inherit it.
    if (app->count("--d") || app->count("--r")) cfg_json.erase("rank_candidates");
    const auto cfg = ExperimentConfig::from_json(cfg_json);
    cfg.validate();
    json echo = cfg.to_json();
    echo["command"] = "experiment";
    echo["threads"] = g.threads;
    echo["output_dir"] = g.output_dir;
    write_json_file(fs::path(g.output_dir) / "experiment_config.json", echo);

    const auto report = run_experiment(cfg, &std::cerr);
    write_json_file(fs::path(g.output_dir) / "report.json", report.to_json());
    auto reps = open_out(fs::path(g.output_dir) / "reps.csv");
    report.write_rep_csv(reps);
    write_tables(fs::path(g.output_dir) / "tables.csv", report);
    for (const auto& s : report.summaries)
        std::cout << std::left << std::setw(12) << to_string(s.noise) << std::setw(12) << s.method << std::setw(12)
                  << to_string(s.score) << "avg miscoverage " << std::fixed << std::setprecision(3) << s.amc_mean
                  << "% (sd " << s.amc_sd << ")" << std::defaultfloat << '\n';
    return 0;
}

// ---- pipeline ----

struct PipelineArgs {
    int rep = 0;
    double alpha = 0.1;
    bool all_levels = false;
    std::string score = "absolute";
    bool unweighted = false;

    void add(Params& p) {
        p.option("rep", rep, "which simulated mask to use");
        p.option("alpha", alpha, "miscoverage level");
        p.flag("all-levels", all_levels, "intervals for every coverage level 0.80..0.99");
        p.option("score", score, "absolute | two-sided | normalized");
        p.flag("unweighted", unweighted, "uniform weights instead of the fitted propensity");
    }
};

int run_pipeline(const Globals& g, SimulateArgs sa, const ModelArgs& ma, FitArgs fa, CompleteArgs ca,
                 const PipelineArgs& pa) {
    if (pa.rep < 0) throw UsageError("--rep must be non-negative");
    sa.reps = std::max(sa.reps, pa.rep + 1);
    const auto c = sa.config(g);
    if (ma.theta != c.theta) throw UsageError("pipeline uses one theta for simulation and fitting");
    const auto rep = static_cast<std::uint64_t>(pa.rep);
    const auto s = simulate(c, pa.rep);
    const auto m = ma.model();
    const MaskTensor& w = s.masks[rep];
    // One split drives completion and calibration alike.
    const auto split = split_observed(w, m.q, ma.split_seed);
    const fs::path out(g.output_dir);
    write_dten(out / "b_star.dten", s.b_star);
    write_dten(out / "mask.dten", w.tensor());
    write_dten(out / "x_full.dten", s.signal.x);
    const DenseTensor x = mask_data(s.signal.x, w);
    write_dten(out / "x.dten", x);

    json metrics;
    CalibrationWeights weights;
    if (pa.unweighted) {
        weights = uniform_weights(x.dims());
    } else {
        const auto f = fit_propensity(split.train_mask(), m, fa, derive_seed(g.seed, stream::rgrad, rep));
        write_fit(out, f);
        const DenseTensor b_full = tt_full(f.b_hat);
        metrics["rse"] = rse(b_full, s.b_star);
        metrics["rank"] = f.b_hat.ranks();
        weights = calibration_weights(split, b_full, m);
    }
    ca.uncertainty = score_of(pa.score) == ScoreKind::normalized;
    const auto comp = complete_training(s.signal.x, split, ca, derive_seed(g.seed, stream::completion, rep));
    write_dten(out / "xhat.dten", comp.xhat);
    if (comp.uncertainty) write_dten(out / "uncertainty.dten", *comp.uncertainty);
    const auto ivs = conformalize(x, comp.xhat, split, weights, make_score(pa.score, comp.uncertainty),
                                  levels_of(pa.all_levels, pa.alpha));
    write_levels(out, ivs, x.dims(), !pa.all_levels);
    metrics["intervals"] = evaluate_levels(ivs, s.signal.x);
    write_json_file(out / "metrics.json", metrics);
    std::cout << std::setw(2) << metrics << '\n';
    return 0;
}

int dispatch(int argc, char** argv) {
    CLI::App app{"Conformalized tensor completion", "ctc"};
    app.require_subcommand(1);
    Globals g;
    Params gp(&app);
    gp.option("seed", g.seed, "master seed");
    gp.option("threads", g.threads, "worker threads (0 = all cores)");
    gp.option("output-dir", g.output_dir, "directory for every output file");
    app.add_option("--config", g.config, "JSON config; keys are flag names with '_' for '-', flags win");

    struct Sub {
        CLI::App* app;
        Params params;
    };
    auto make = [&](const std::string& name, const std::string& help) {
        CLI::App* a = app.add_subcommand(name, help);
        a->fallthrough();
        return Sub{a, Params(a)};
    };

    SimulateArgs sim_a;
    ModelArgs model_a;
    FitArgs fit_a;
    CompleteArgs comp_a;
    ConformalArgs conf_a;
    EvaluateArgs eval_a;
    ExperimentArgs exp_a;
    PipelineArgs pipe_a;

    auto sim = make("simulate", "write B*, masks from the Ising chain, and a noisy low-rank tensor");
    sim_a.add(sim.params);
    auto fit = make("fit", "fit the propensity TT on the training split of a mask");
    model_a.add(fit.params);
    fit_a.add(fit.params);
    ModelArgs model_c = model_a;
    auto comp = make("complete", "complete the tensor from the training split only");
    model_c.add(comp.params);
    comp_a.add(comp.params);
    ModelArgs model_f = model_a;
    auto conf = make("conformal", "conformal intervals for every missing entry");
    model_f.add(conf.params);
    conf_a.add(conf.params);
    auto eval = make("evaluate", "coverage, width and RSE of written outputs");
    eval_a.add(eval.params);
    CLI::App* exp = app.add_subcommand("experiment", "run the simulation study; --config is an experiment config");
    exp->fallthrough();
    exp_a.add(exp);
    SimulateArgs sim_p;
    ModelArgs model_p;
    FitArgs fit_p;
    fit_p.rank_select = "aic";
    CompleteArgs comp_p;
    auto pipe = make("pipeline", "simulate, fit, complete, conformalize and evaluate one repetition");
    sim_p.add(pipe.params);
    // theta is shared with the simulation options
    pipe.params.option("q", model_p.q, "probability that an observed entry is in the training split");
    pipe.params.option("split-seed", model_p.split_seed, "seed of the train/calibration split");
    fit_p.add(pipe.params);
    pipe.params.option("completion-rank", comp_p.rank, "Tucker rank")->delimiter(',');
    pipe.params.option("completion-max-iter", comp_p.max_iter, "completion iteration cap");
    pipe_a.add(pipe.params);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    CLI::App* chosen = app.get_subcommands().front();
    const std::string name = chosen->get_name();
    json cfg_json = g.config.empty() ? json::object() : read_json_file(g.config);
    if (!cfg_json.is_object()) throw UsageError("config must be a JSON object");
    if (cfg_json.contains("command")) {
        if (cfg_json["command"] != name)
            throw UsageError("config was written for '" + cfg_json["command"].get<std::string>() + "', not '" + name + "'");
        cfg_json.erase("command");
    }

    Sub* sub = nullptr;
    for (Sub* s : {&sim, &fit, &comp, &conf, &eval, &pipe})
        if (s->app == chosen) sub = s;

    // Global keys are shared by every subcommand.
    for (const auto& key : {"seed", "threads", "output_dir"}) {
        if (cfg_json.contains(key)) {
            gp.load(key, cfg_json[key]);
            if (name != "experiment" || std::string(key) != "seed") cfg_json.erase(key);
        }
    }
    if (sub) {
        for (auto it = cfg_json.begin(); it != cfg_json.end(); ++it) {
            if (!sub->params.has(it.key())) throw UsageError("unknown config key '" + it.key() + "' for " + name);
            sub->params.load(it.key(), it.value());
        }
    }

    if (g.threads < 0) throw UsageError("--threads must be >= 0");
    if (g.threads > 0) omp_set_num_threads(g.threads);
    fs::create_directories(g.output_dir);

    if (name == "experiment") return run_experiment_cmd(g, exp, exp_a, cfg_json);

    ModelArgs* model = name == "fit" ? &model_a : name == "complete" ? &model_c : name == "conformal" ? &model_f
                                                                                                     : &model_p;
    model->resolve(sub->params, g);
    if (name == "pipeline") {
        model_p.theta = sim_p.theta;
        if (!fit_p.rank.empty()) fit_p.rank_select.clear();
    }

    json echo{{"command", name}};
    gp.echo(echo);
    sub->params.echo(echo);
    write_json_file(fs::path(g.output_dir) / (name + "_config.json"), echo);

    if (name == "simulate") return run_simulate(g, sim_a);
    if (name == "fit") return run_fit(g, model_a, fit_a);
    if (name == "complete") return run_complete(g, model_c, comp_a);
    if (name == "conformal") return run_conformal(g, model_f, conf_a);
    if (name == "evaluate") return run_evaluate(g, eval_a);
    return run_pipeline(g, sim_p, model_p, fit_p, comp_p, pipe_a);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "ctc: " << e.what() << "\nRun with --help for usage.\n";
        return kExitUsage;
    } catch (const DimensionMismatch& e) {
        std::cerr << "ctc: data error: " << e.what() << '\n';
        return kExitData;
    } catch (const MissingValueError& e) {
        std::cerr << "ctc: data error: " << e.what() << '\n';
        return kExitData;
    } catch (const InvalidArgument& e) {
        std::cerr << "ctc: " << e.what() << "\nRun with --help for usage.\n";
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "ctc: data error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "ctc: data error: " << e.what() << '\n';
        return kExitData;
    } catch (const NumericalError& e) {
        std::cerr << "ctc: numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "ctc: " << e.what() << '\n';
        return 1;
    }
}
