#pragma once

// Riemannian gradient descent for the low-TT-rank pseudo-likelihood estimator:
// tangent-space projection at a left-orthogonal TT point, embedding, TT-SVD
// retraction, and rank selection by pseudo-information criteria.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "ctc/missingness.hpp"
#include "ctc/tensor.hpp"
#include "ctc/tt.hpp"

namespace ctc {

struct FixedStep {
    double eta = 0.1;
};

struct ArmijoStep {
    double eta0 = 1.0;
    double alpha = 1e-4;
    int max_halvings = 30;
};

struct RGradConfig {
    std::vector<Index> rank;
    std::variant<FixedStep, ArmijoStep> step = FixedStep{};
    double tol = 1e-4;
    int l_max = 500;
    double init_sigma = 0.1;
    std::uint64_t seed = 0;

    void validate(std::size_t modes) const;
};

// Tangent vector at base: sum_k of base with core k replaced by deltas[k].
struct TangentVector {
    TT base;
    std::vector<DenseTensor> deltas;
};

// Largest entry of |L(Y_k)^T L(T_k)| over k < K.
double gauge_error(const TangentVector& v);

TangentVector tangent_project(const DenseTensor& g, const TT& b);
DenseTensor tangent_embed(const TangentVector& v);
// Individual summands C_k of the embedding.
std::vector<DenseTensor> tangent_summands(const TangentVector& v);

TT retract(const DenseTensor& x, const std::vector<Index>& rank);
// The TT of base + t * embed(v), with ranks at most twice the base ranks.
TT tangent_step(const TangentVector& v, double t);
// Retraction of base + t * embed(v) by TT rounding; same point as
// retract(tt_full(v.base) + t * tangent_embed(v), rank) without the full tensor.
TT retract(const TangentVector& v, double t, const std::vector<Index>& rank);
// Squared Frobenius norm of embed(v) for a gauge-conditioned tangent vector.
double tangent_norm_squared(const TangentVector& v);

TT initialize(const MaskTensor& w_tr, const RGradConfig& cfg);

struct TraceRow {
    int iter;
    double pseudo_loglik;  // negative pseudo-likelihood after the step
    double step_size;
    double rel_change;
};

struct FitResult {
    TT b_hat;
    std::vector<TraceRow> trace;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    bool converged = false;
};

FitResult fit_mple(const MaskTensor& w_tr, const PropensityModel& m, const RGradConfig& cfg);

void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace);
void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace);

// Dimension of the TT manifold at the given ranks (r_1..r_{K-1}).
Index effective_param_count(const Dims& dims, const std::vector<Index>& rank);

enum class InfoCriterion { aic, bic };

InfoCriterion parse_criterion(const std::string& name);

struct RankSelectRow {
    Index candidate;
    std::vector<Index> fitted_rank;
    double neg_pseudo_loglik;
    Index params;
    double criterion;
};

struct RankSelectResult {
    Index best;
    FitResult best_fit;
    std::vector<RankSelectRow> table;
};

// Fits each scalar candidate r' as the rank vector (r', ..., r') and returns the
// minimizer of 2l + penalty, ties toward the smaller candidate.
RankSelectResult rank_select(const MaskTensor& w_tr, const PropensityModel& m, const std::vector<Index>& candidates,
                             InfoCriterion criterion, const RGradConfig& cfg);

}  // namespace ctc
