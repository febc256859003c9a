#pragma once

// Simulation harness: tensor-block-model propensity parameters, low-Tucker-rank
// signals with constant or propensity-linked noise, coverage metrics, and the
// end-to-end experiment comparing unweighted, oracle and fitted weights.

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctc/conformal.hpp"
#include "ctc/missingness.hpp"
#include "ctc/rgrad.hpp"
#include "ctc/tensor.hpp"

namespace ctc {

// Purpose tags of the derive_seed streams behind every experiment draw.
namespace stream {
inline constexpr std::uint64_t block_param = 1;
inline constexpr std::uint64_t chain = 2;
inline constexpr std::uint64_t split = 3;
inline constexpr std::uint64_t signal = 4;
inline constexpr std::uint64_t rgrad = 6;
inline constexpr std::uint64_t completion = 7;
}  // namespace stream

enum class NoiseKind { constant, adversarial };

NoiseKind parse_noise_kind(const std::string& name);
std::string to_string(NoiseKind kind);

struct ExperimentConfig {
    Index d = 40;
    Index r = 3;
    double theta = 0.0;
    std::vector<NoiseKind> noise{NoiseKind::constant};
    double snr = 2.0;
    double q = 0.7;
    std::vector<double> levels;  // nominal coverages; empty means 0.80..0.99
    std::vector<Index> completion_rank{3, 3, 3};
    int completion_max_iter = 1000;
    double completion_tol = 1e-6;
    bool fast = true;
    std::optional<GibbsSchedule> mcmc;  // overrides the fast/long schedule
    std::optional<std::uint64_t> chain_seed;
    int repetitions = 30;
    std::uint64_t seed = 1;
    std::vector<std::string> methods{"unweighted", "oracle", "rgrad"};
    std::vector<ScoreKind> scores{ScoreKind::absolute};
    std::vector<Index> rank_candidates;  // empty means 2..min(9, d/4)
    std::optional<Index> rgrad_rank;     // fixed rank instead of selection
    InfoCriterion criterion = InfoCriterion::aic;
    RGradConfig rgrad;
    NeighborMask neighbor_mask = NeighborMask::training;
    std::string audit_dir;  // write generated tensors as DTEN when non-empty

    void validate() const;
    GibbsSchedule schedule() const;
    std::vector<double> effective_levels() const;
    std::vector<Index> effective_candidates() const;

    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

std::vector<double> default_levels();

// B* = C ×_1 U_1 ×_2 U_2 ×_3 U_3 + E_1 rescaled to max-norm 2, with block
// memberships U_k and mixture-normal core (component sd 0.5); noise_sd is the sd of E_1.
DenseTensor gen_block_param(Index d, Index r, std::uint64_t seed, double noise_sd = 0.2);

struct SignalAndNoise {
    DenseTensor x_star;
    DenseTensor x;
};

// Tucker-(3,3,3) signal rescaled to max-norm 2 plus noise scaled to max|X*|/max|E| = snr.
SignalAndNoise gen_signal_and_noise(Index d, NoiseKind noise, double snr, const DenseTensor& b_star,
                                    std::uint64_t seed);

// Per-entry noise scale before the SNR rescale.
double noise_sigma(NoiseKind noise, double b_star_s);

// Fraction of intervals containing the truth.
double empirical_coverage(const std::vector<Interval>& intervals, const DenseTensor& truth);

// (100/|levels|) sum |tau - coverage(tau)|.
double miscoverage(const std::vector<double>& coverages, const std::vector<double>& levels);

double rse(const DenseTensor& b_hat, const DenseTensor& b_star);

struct RepMetrics {
    int rep = 0;
    std::vector<double> coverage;  // per level
    std::vector<double> width;     // mean width of bounded intervals, per level
    double avg_miscoverage_pct = 0.0;
    double rse = std::numeric_limits<double>::quiet_NaN();
    Index selected_rank = 0;
    Index unbounded = 0;
    Index clamped = 0;
};

struct MethodSummary {
    NoiseKind noise;
    std::string method;
    ScoreKind score;
    std::vector<RepMetrics> reps;
    double amc_mean = 0.0;
    double amc_sd = 0.0;
    std::vector<double> coverage_mean;
    std::vector<double> width_mean;
    double rse_mean = std::numeric_limits<double>::quiet_NaN();
    double rse_sd = std::numeric_limits<double>::quiet_NaN();
    Index unbounded_total = 0;
    Index clamped_total = 0;
};

struct MetricsReport {
    ExperimentConfig config;
    std::vector<double> levels;
    std::vector<MethodSummary> summaries;

    const MethodSummary& find(NoiseKind noise, const std::string& method, ScoreKind score = ScoreKind::absolute) const;
    nlohmann::json to_json() const;
    void write_rep_csv(std::ostream& os) const;
};

MetricsReport run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

}  // namespace ctc
