#include "ctc/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ctc/random.hpp"

namespace ctc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Cumulative weights within this relative distance of the target level count as reaching it.
constexpr double kLevelSlack = 1e-12;

std::vector<double> state_field(const DenseTensor& state, const DenseTensor& b, const PropensityModel& m) {
    const DenseTensor z = local_field(MaskTensor(state), b, m);
    return {z.data(), z.data() + z.size()};
}

}  // namespace

MaskTensor SplitAssignment::train_mask() const {
    DenseTensor w = DenseTensor::constant(dims, -1.0);
    for (Index i : train) w[i] = 1.0;
    return MaskTensor(std::move(w));
}

MaskTensor SplitAssignment::observed_mask() const {
    DenseTensor w = DenseTensor::constant(dims, -1.0);
    for (Index i : train) w[i] = 1.0;
    for (Index i : calibration) w[i] = 1.0;
    return MaskTensor(std::move(w));
}

DenseTensor SplitAssignment::training_data(const DenseTensor& x) const {
    if (x.dims() != dims) throw DimensionMismatch("training_data: dims " + dims_to_string(x.dims()) + " vs split " +
                                                  dims_to_string(dims));
    DenseTensor out = DenseTensor::constant(dims, missing_value<double>());
    for (Index i : train) out[i] = x[i];
    return out;
}

SplitAssignment split_observed(const MaskTensor& mask, double q, std::uint64_t seed) {
    if (!(q > 0.0 && q < 1.0)) throw InvalidArgument("split probability q must lie in (0, 1)");
    SplitAssignment s;
    s.dims = mask.dims();
    s.q = q;
    const std::uint64_t stream = 0x5b117;
    for (Index i = 0; i < mask.size(); ++i) {
        if (!mask.observed(i))
            s.missing.push_back(i);
        else if (counter_uniform(seed, stream, static_cast<std::uint64_t>(i)) < q)
            s.train.push_back(i);
        else
            s.calibration.push_back(i);
    }
    return s;
}

ScoreKind parse_score_kind(const std::string& name) {
    if (name == "absolute") return ScoreKind::absolute;
    if (name == "two-sided" || name == "two_sided") return ScoreKind::two_sided;
    if (name == "normalized") return ScoreKind::normalized;
    throw InvalidArgument("unknown score '" + name + "' (use absolute, two-sided or normalized)");
}

std::string to_string(ScoreKind kind) {
    switch (kind) {
        case ScoreKind::absolute: return "absolute";
        case ScoreKind::two_sided: return "two_sided";
        case ScoreKind::normalized: return "normalized";
    }
    return "?";
}

CalibrationWeights calibration_weights(const SplitAssignment& split, const DenseTensor& b_hat,
                                       const PropensityModel& m, NeighborMask neighbor) {
    if (b_hat.dims() != split.dims)
        throw DimensionMismatch("calibration_weights: parameter dims " + dims_to_string(b_hat.dims()) +
                                " vs split " + dims_to_string(split.dims));
    const MaskTensor state = neighbor == NeighborMask::training ? split.train_mask() : split.observed_mask();
    const DenseTensor z = local_field(state, b_hat, m);
    CalibrationWeights out{DenseTensor(split.dims), 0};
    std::vector<char> counted(z.size(), 0);
    for (Index i : split.calibration) counted[i] = 1;
    for (Index i : split.missing) counted[i] = 1;
    for (Index i = 0; i < z.size(); ++i) {
        // (1 - logistic(z)) / logistic(z) = exp(-z)
        const double w = std::exp(-z[i]);
        const double c = std::clamp(w, kMinWeight, kMaxWeight);
        if (c != w && counted[i]) ++out.clamped;
        out.omega[i] = c;
    }
    return out;
}

CalibrationWeights calibration_weights(const SplitAssignment& split, const TT& b_hat, const PropensityModel& m,
                                       NeighborMask neighbor) {
    return calibration_weights(split, tt_full(b_hat), m, neighbor);
}

CalibrationWeights uniform_weights(const Dims& dims) { return {DenseTensor::ones(dims), 0}; }

namespace {

std::vector<double> normalized_weights(const std::vector<double>& z, const SplitAssignment& split, Index star) {
    // a_k = exp(-z_k), normalized by log-sum-exp.
    std::vector<double> neg;
    neg.reserve(split.calibration.size() + 1);
    for (Index i : split.calibration) neg.push_back(-z[i]);
    neg.push_back(-z[star]);
    const double mx = *std::max_element(neg.begin(), neg.end());
    double total = 0.0;
    for (double v : neg) total += std::exp(v - mx);
    for (double& v : neg) v = std::exp(v - mx) / total;
    return neg;
}

Index missing_offset(const EntryIndex& s_star, const SplitAssignment& split) {
    const Index star = linear_offset(split.dims, s_star);
    if (!std::binary_search(split.missing.begin(), split.missing.end(), star))
        throw InvalidArgument("s_star must be a missing entry");
    return star;
}

}  // namespace

std::vector<double> exact_weights(const EntryIndex& s_star, const SplitAssignment& split, const DenseTensor& b,
                                  const PropensityModel& m) {
    const Index star = missing_offset(s_star, split);
    DenseTensor state = split.observed_mask().tensor();
    state[star] = 1.0;
    return normalized_weights(state_field(state, b, m), split, star);
}

std::vector<double> approx_weights(const EntryIndex& s_star, const SplitAssignment& split, const DenseTensor& b,
                                   const PropensityModel& m) {
    const Index star = missing_offset(s_star, split);
    return normalized_weights(state_field(split.observed_mask().tensor(), b, m), split, star);
}

WeightedQuantile::WeightedQuantile(const std::vector<double>& scores, const std::vector<double>& weights) {
    if (scores.size() != weights.size()) throw DimensionMismatch("weighted quantile: scores and weights differ in size");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (std::isnan(scores[i])) throw InvalidArgument("weighted quantile: NaN score");
        if (!(weights[i] > 0) || !std::isfinite(weights[i]))
            throw InvalidArgument("weighted quantile: weights must be finite and positive");
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    sorted_.reserve(order.size());
    cum_.reserve(order.size());
    double c = 0.0;
    for (std::size_t i : order) {
        sorted_.push_back(scores[i]);
        c += weights[i];
        cum_.push_back(c);
    }
    total_ = c;
}

double WeightedQuantile::operator()(double omega_star, double alpha) const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
    if (!(omega_star >= 0) || !std::isfinite(omega_star))
        throw InvalidArgument("test-point weight must be finite and non-negative");
    if (sorted_.empty()) return kInf;
    const double target = (1.0 - alpha) * (total_ + omega_star) * (1.0 - kLevelSlack);
    const auto it = std::lower_bound(cum_.begin(), cum_.end(), target);
    if (it == cum_.end()) return kInf;
    return sorted_[static_cast<std::size_t>(it - cum_.begin())];
}

double weighted_quantile(const std::vector<double>& scores, const std::vector<double>& weights, double omega_star,
                         double alpha) {
    return WeightedQuantile(scores, weights)(omega_star, alpha);
}

ConformalCalibration::ConformalCalibration(const DenseTensor& x_masked, const DenseTensor& xhat,
                                           const SplitAssignment& split, const CalibrationWeights& weights,
                                           ScoreFunction score)
    : xhat_(xhat), missing_(split.missing), score_(std::move(score)) {
    if (x_masked.dims() != split.dims || xhat.dims() != split.dims || weights.omega.dims() != split.dims)
        throw DimensionMismatch("conformal calibration: data, estimate, weights and split dims must agree");
    if (xhat.has_missing()) throw MissingValueError("completion estimate contains missing entries");
    if (score_.kind == ScoreKind::normalized) {
        if (!score_.uncertainty) throw InvalidArgument("normalized score needs an uncertainty tensor");
        if (score_.uncertainty->dims() != split.dims) throw DimensionMismatch("uncertainty dims do not match data");
    }
    auto scale = [&](Index i) {
        const double u = (*score_.uncertainty)[i];
        if (!(u > 0) || !std::isfinite(u))
            throw InvalidArgument("normalized score needs positive uncertainty at entry " + std::to_string(i));
        return u;
    };
    std::vector<double> neg;
    for (Index i : split.calibration) {
        if (x_masked.is_missing(i)) throw InvalidArgument("calibration entry " + std::to_string(i) + " is missing");
        const double r = x_masked[i] - xhat[i];
        switch (score_.kind) {
            case ScoreKind::absolute: scores_.push_back(std::abs(r)); break;
            case ScoreKind::normalized: scores_.push_back(std::abs(r) / scale(i)); break;
            case ScoreKind::two_sided:
                scores_.push_back(r);
                neg.push_back(-r);
                break;
        }
        weights_.push_back(weights.omega[i]);
    }
    upper_ = WeightedQuantile(scores_, weights_);
    if (score_.kind == ScoreKind::two_sided) lower_ = WeightedQuantile(neg, weights_);
    omega_star_.reserve(missing_.size());
    for (Index i : missing_) {
        omega_star_.push_back(weights.omega[i]);
        if (score_.kind == ScoreKind::normalized) scale(i);
    }
}

std::vector<Interval> ConformalCalibration::intervals(double alpha) const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
    std::vector<Interval> out(missing_.size());
    const Index n = static_cast<Index>(missing_.size());
#pragma omp parallel for schedule(static) if (n > 8192)
    for (Index t = 0; t < n; ++t) {
        const Index i = missing_[t];
        const double est = xhat_[i];
        const double w = omega_star_[t];
        Interval iv{i, est, 0, 0, 0, w, false};
        switch (score_.kind) {
            case ScoreKind::absolute: {
                iv.q_hat = upper_(w, alpha);
                iv.lo = est - iv.q_hat;
                iv.hi = est + iv.q_hat;
                break;
            }
            case ScoreKind::normalized: {
                iv.q_hat = upper_(w, alpha);
                const double u = (*score_.uncertainty)[i];
                iv.lo = est - iv.q_hat * u;
                iv.hi = est + iv.q_hat * u;
                break;
            }
            case ScoreKind::two_sided: {
                iv.q_hat = upper_(w, alpha / 2);
                const double q_lo = -lower_(w, alpha / 2);
                iv.lo = est + q_lo;
                iv.hi = est + iv.q_hat;
                break;
            }
        }
        iv.unbounded = std::isinf(iv.lo) || std::isinf(iv.hi);
        out[t] = iv;
    }
    return out;
}

std::vector<Interval> conformal_intervals(const DenseTensor& x_masked, const DenseTensor& xhat,
                                          const SplitAssignment& split, const CalibrationWeights& weights,
                                          const ScoreFunction& score, double alpha) {
    return ConformalCalibration(x_masked, xhat, split, weights, score).intervals(alpha);
}

WeightGap weight_approx_gap(const EntryIndex& s_star, const SplitAssignment& split, const DenseTensor& b,
                            const PropensityModel& m, const std::optional<std::vector<double>>& scores) {
    const Index star = missing_offset(s_star, split);
    const auto exact = exact_weights(s_star, split, b, m);
    const auto approx = approx_weights(s_star, split, b, m);
    const std::size_t n = split.calibration.size();
    if (scores && scores->size() != n) throw DimensionMismatch("weight_approx_gap: one score per calibration entry");

    double gap = 0.0;
    if (scores) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto c) { return (*scores)[a] < (*scores)[c]; });
        double diff = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            diff += exact[order[t]] - approx[order[t]];
            // Evaluate only once all tied scores are included.
            if (t + 1 == n || (*scores)[order[t + 1]] != (*scores)[order[t]]) gap = std::max(gap, std::abs(diff));
        }
    } else {
        double pos = 0.0, neg = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double d = exact[t] - approx[t];
            (d > 0 ? pos : neg) += std::abs(d);
        }
        gap = std::max(pos, neg);
    }

    const auto nbrs = neighbors(s_star, split.dims);
    double gamma = kInf;
    double mass = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const Index j = split.calibration[t];
        for (const auto& nb : nbrs)
            if (linear_offset(split.dims, nb) == j) {
                gamma = std::min(gamma, m.coupling(b[j], b[star]));
                mass += exact[t];
            }
    }
    const double factor = std::isinf(gamma) ? 1.0 : std::max(1.0, std::exp(4.0 * gamma) - 1.0);
    return {gap, 3.0 * factor * mass};
}

void write_intervals_csv(std::ostream& os, const std::vector<Interval>& intervals, const Dims& dims) {
    os << "index,estimate,lo,hi,q_hat,omega_star,unbounded_flag\n" << std::setprecision(17);
    for (const auto& iv : intervals) {
        const auto s = entry_index(dims, iv.offset);
        for (std::size_t k = 0; k < s.size(); ++k) os << (k ? ":" : "") << s[k];
        os << ',' << iv.estimate << ',' << iv.lo << ',' << iv.hi << ',' << iv.q_hat << ',' << iv.omega_star << ','
           << (iv.unbounded ? 1 : 0) << '\n';
    }
}

void write_intervals_csv(const std::string& path, const std::vector<Interval>& intervals, const Dims& dims) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open " + path + " for writing");
    write_intervals_csv(os, intervals, dims);
    if (!os) throw DataError("failed writing " + path);
}

std::vector<Interval> read_intervals_csv(std::istream& is, const Dims& dims) {
    std::string line;
    if (!std::getline(is, line) || line != "index,estimate,lo,hi,q_hat,omega_star,unbounded_flag")
        throw DataError("intervals CSV: missing or unexpected header");
    std::vector<Interval> out;
    for (Index row = 2; std::getline(is, line); ++row) {
        if (line.empty()) continue;
        const std::string where = "intervals CSV line " + std::to_string(row);
        std::vector<std::string> fields;
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
        if (fields.size() != 7) throw DataError(where + ": expected 7 fields");
        EntryIndex s;
        std::stringstream is_idx(fields[0]);
        for (std::string c; std::getline(is_idx, c, ':');) {
            char* end = nullptr;
            const long long v = std::strtoll(c.c_str(), &end, 10);
            if (c.empty() || *end != '\0') throw DataError(where + ": bad index '" + fields[0] + "'");
            s.push_back(static_cast<Index>(v));
        }
        if (s.size() != dims.size()) throw DataError(where + ": index has the wrong number of coordinates");
        for (std::size_t k = 0; k < s.size(); ++k)
            if (s[k] < 0 || s[k] >= dims[k]) throw DataError(where + ": index out of range");
        double v[5];
        for (int k = 0; k < 5; ++k) {
            const std::string& f = fields[static_cast<std::size_t>(k) + 1];
            char* end = nullptr;
            v[k] = std::strtod(f.c_str(), &end);
            if (f.empty() || *end != '\0') throw DataError(where + ": bad number '" + f + "'");
        }
        if (fields[6] != "0" && fields[6] != "1") throw DataError(where + ": unbounded_flag must be 0 or 1");
        out.push_back({linear_offset(dims, s), v[0], v[1], v[2], v[3], v[4], fields[6] == "1"});
    }
    return out;
}

std::vector<Interval> read_intervals_csv(const std::string& path, const Dims& dims) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path);
    return read_intervals_csv(is, dims);
}

}  // namespace ctc
