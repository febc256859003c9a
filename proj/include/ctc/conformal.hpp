#pragma once

// Weighted split conformal prediction for tensor entries: train/calibration
// split of the observed set, propensity-odds weights, non-conformity scores,
// the weighted quantile with its point mass at infinity, and intervals.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ctc/missingness.hpp"
#include "ctc/tensor.hpp"
#include "ctc/tt.hpp"

namespace ctc {

// Entry sets as sorted linear offsets.
struct SplitAssignment {
    Dims dims;
    std::vector<Index> train;
    std::vector<Index> calibration;
    std::vector<Index> missing;
    double q = 0.7;

    MaskTensor train_mask() const;
    MaskTensor observed_mask() const;
    // x with every non-training entry set to NaN.
    DenseTensor training_data(const DenseTensor& x) const;
};

SplitAssignment split_observed(const MaskTensor& mask, double q, std::uint64_t seed);

enum class ScoreKind { absolute, two_sided, normalized };

ScoreKind parse_score_kind(const std::string& name);
std::string to_string(ScoreKind kind);

struct ScoreFunction {
    ScoreKind kind = ScoreKind::absolute;
    // Per-entry positive scale for the normalized score.
    std::optional<DenseTensor> uncertainty;
};

// Which mask supplies the neighbor states in the approximate weights.
enum class NeighborMask { training, observed };

struct CalibrationWeights {
    DenseTensor omega;      // (1 - p~)/p~ at every entry, clamped
    Index clamped = 0;      // clamp events over calibration and missing entries
};

inline constexpr double kMinWeight = 1e-8;
inline constexpr double kMaxWeight = 1e8;

CalibrationWeights calibration_weights(const SplitAssignment& split, const DenseTensor& b_hat,
                                       const PropensityModel& m, NeighborMask neighbor = NeighborMask::training);
CalibrationWeights calibration_weights(const SplitAssignment& split, const TT& b_hat, const PropensityModel& m,
                                       NeighborMask neighbor = NeighborMask::training);
// omega = 1 everywhere.
CalibrationWeights uniform_weights(const Dims& dims);

// Normalized weights over calibration (in split order) then s_star, with the
// state set to +1 on train, calibration and s_star.
std::vector<double> exact_weights(const EntryIndex& s_star, const SplitAssignment& split, const DenseTensor& b,
                                  const PropensityModel& m);
// The same normalization with the observed mask as state (s_star at -1).
std::vector<double> approx_weights(const EntryIndex& s_star, const SplitAssignment& split, const DenseTensor& b,
                                   const PropensityModel& m);

// Weighted eCDF of calibration scores sorted once; quantiles add a point mass
// omega_star at +infinity.
class WeightedQuantile {
public:
    WeightedQuantile() = default;
    WeightedQuantile(const std::vector<double>& scores, const std::vector<double>& weights);

    // Smallest score whose cumulative weight reaches (1 - alpha)(W + omega_star),
    // or +infinity when the calibration atoms cannot reach it.
    double operator()(double omega_star, double alpha) const;

    double total_weight() const { return total_; }
    std::size_t size() const { return sorted_.size(); }

private:
    std::vector<double> sorted_;
    std::vector<double> cum_;
    double total_ = 0.0;
};

double weighted_quantile(const std::vector<double>& scores, const std::vector<double>& weights, double omega_star,
                         double alpha);

struct Interval {
    Index offset;
    double estimate;
    double lo;
    double hi;
    double q_hat;
    double omega_star;
    bool unbounded;
};

class ConformalCalibration {
public:
    ConformalCalibration(const DenseTensor& x_masked, const DenseTensor& xhat, const SplitAssignment& split,
                         const CalibrationWeights& weights, ScoreFunction score);

    // One interval per missing entry, at miscoverage alpha.
    std::vector<Interval> intervals(double alpha) const;

    const std::vector<double>& scores() const { return scores_; }
    const std::vector<double>& weights() const { return weights_; }

private:
    DenseTensor xhat_;
    std::vector<Index> missing_;
    std::vector<double> omega_star_;
    ScoreFunction score_;
    std::vector<double> scores_;
    std::vector<double> weights_;
    WeightedQuantile upper_;
    WeightedQuantile lower_;  // of negated residuals, two-sided only
};

std::vector<Interval> conformal_intervals(const DenseTensor& x_masked, const DenseTensor& xhat,
                                          const SplitAssignment& split, const CalibrationWeights& weights,
                                          const ScoreFunction& score, double alpha);

struct WeightGap {
    double empirical_gap;
    double bound;
};

// sup_x |F*(x) - F(x)| between the exact and approximate score distributions.
// Without scores the supremum is also taken over all orderings of the scores.
WeightGap weight_approx_gap(const EntryIndex& s_star, const SplitAssignment& split, const DenseTensor& b,
                            const PropensityModel& m, const std::optional<std::vector<double>>& scores = std::nullopt);

void write_intervals_csv(std::ostream& os, const std::vector<Interval>& intervals, const Dims& dims);
void write_intervals_csv(const std::string& path, const std::vector<Interval>& intervals, const Dims& dims);
// Inverse of write_intervals_csv; throws DataError on malformed rows.
std::vector<Interval> read_intervals_csv(std::istream& is, const Dims& dims);
std::vector<Interval> read_intervals_csv(const std::string& path, const Dims& dims);

}  // namespace ctc
