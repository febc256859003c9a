#include "ctc/rgrad.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>

#include "ctc/random.hpp"

namespace ctc {

void RGradConfig::validate(std::size_t modes) const {
    if (rank.size() + 1 != modes)
        throw InvalidArgument("rank vector has length " + std::to_string(rank.size()) + ", expected " +
                              std::to_string(modes - 1));
    for (Index r : rank)
        if (r < 1) throw InvalidArgument("ranks must be positive");
    if (const auto* f = std::get_if<FixedStep>(&step)) {
        if (!(f->eta > 0)) throw InvalidArgument("step size eta must be positive");
    } else {
        const auto& a = std::get<ArmijoStep>(step);
        if (!(a.eta0 > 0) || !(a.alpha > 0 && a.alpha < 1) || a.max_halvings < 0)
            throw InvalidArgument("Armijo needs eta0 > 0, alpha in (0,1), max_halvings >= 0");
    }
    if (!(tol > 0)) throw InvalidArgument("tol must be positive");
    if (l_max < 1) throw InvalidArgument("l_max must be at least 1");
    if (!(init_sigma >= 0)) throw InvalidArgument("init_sigma must be non-negative");
}

double gauge_error(const TangentVector& v) {
    double err = 0.0;
    for (std::size_t k = 0; k + 1 < v.base.modes(); ++k) {
        const MatrixX<double> c = left_unfold(v.deltas[k]).transpose() * left_unfold(v.base.core(k));
        if (c.size()) err = std::max(err, c.cwiseAbs().maxCoeff());
    }
    return err;
}

namespace {

// Solves Z X = rhs rows-wise for X = rhs * gram^{-1} with a symmetric factorization.
MatrixX<double> right_solve_gram(const MatrixX<double>& rhs, const MatrixX<double>& gram, std::size_t mode) {
    Eigen::LLT<MatrixX<double>> llt(gram);
    const double scale = gram.diagonal().maxCoeff();
    if (!(scale > 0) || !std::isfinite(scale))
        throw DegenerateRankError(mode, "right-part Gram matrix at mode " + std::to_string(mode + 1) + " is zero");
    if (llt.info() != Eigen::Success || llt.rcond() < 1e-12) {
        MatrixX<double> jittered = gram;
        jittered.diagonal().array() += 1e-10 * scale;
        llt.compute(jittered);
        if (llt.info() != Eigen::Success)
            throw DegenerateRankError(mode, "right-part Gram matrix at mode " + std::to_string(mode + 1) +
                                                " is singular after jitter");
    }
    // X gram = rhs  <=>  gram X^T = rhs^T
    return llt.solve(rhs.transpose()).transpose();
}

}  // namespace

TangentVector tangent_project(const DenseTensor& g, const TT& b) {
    if (!b.left_orthogonal()) throw InvalidArgument("tangent_project needs a left-orthogonal TT base point");
    if (g.dims() != b.dims())
        throw DimensionMismatch("tangent_project: gradient dims " + dims_to_string(g.dims()) + " vs TT dims " +
                                dims_to_string(b.dims()));
    detail::require_observed(g, "tangent_project");
    const std::size_t K = b.modes();
    const auto lefts = left_parts(b);
    const auto rights = right_parts(b);
    const Dims dims = b.dims();

    TangentVector out{b, {}};
    out.deltas.reserve(K);
    for (std::size_t k = 0; k < K; ++k) {
        const Index r0 = b.rank(k), d = dims[k], r1 = b.rank(k + 1);
        const Index p_prev = dims_product(dims, 0, k);
        if (k + 1 == K) {
            Eigen::Map<const MatrixX<double>> gk(g.data(), p_prev, d);
            MatrixX<double> y = lefts[k].transpose() * gk;
            out.deltas.push_back(from_separation(y, Dims{r0, d, 1}));
            break;
        }
        const auto& right = rights[k + 1];
        MatrixX<double> m = separation(g, k + 1) * right.transpose();
        m.resize(p_prev, d * r1);
        MatrixX<double> z = lefts[k].transpose() * m;
        z.resize(r0 * d, r1);
        MatrixX<double> y = right_solve_gram(z, right * right.transpose(), k);
        const auto l = left_unfold(b.core(k));
        y -= l * (l.transpose() * y);
        out.deltas.push_back(fold_left(y, r0, d, r1));
    }
    return out;
}

namespace {

void check_tangent(const TangentVector& v) {
    const TT& b = v.base;
    const std::size_t K = b.modes();
    if (v.deltas.size() != K) throw DimensionMismatch("tangent vector needs one delta per core");
    for (std::size_t k = 0; k < K; ++k)
        if (v.deltas[k].dims() != b.core(k).dims())
            throw DimensionMismatch("tangent delta " + std::to_string(k) + " has dims " +
                                    dims_to_string(v.deltas[k].dims()) + ", core has " +
                                    dims_to_string(b.core(k).dims()));
}

}  // namespace

std::vector<DenseTensor> tangent_summands(const TangentVector& v) {
    const TT& b = v.base;
    const std::size_t K = b.modes();
    check_tangent(v);
    const auto lefts = left_parts(b);
    const auto rights = right_parts(b);
    std::vector<DenseTensor> out;
    out.reserve(K);
    for (std::size_t k = 0; k < K; ++k) {
        const MatrixX<double> left = detail::extend_left(lefts[k], v.deltas[k]);
        const MatrixX<double> full = left * rights[k + 1];
        out.push_back(DenseTensor(b.dims(), Eigen::Map<const VectorX<double>>(full.data(), full.size())));
    }
    return out;
}

DenseTensor tangent_embed(const TangentVector& v) {
    const auto parts = tangent_summands(v);
    DenseTensor sum(v.base.dims());
    for (const auto& c : parts) sum += c;
    return sum;
}

TT retract(const DenseTensor& x, const std::vector<Index>& rank) { return tt_svd(x, rank); }

TT tangent_step(const TangentVector& v, double t) {
    const TT& b = v.base;
    const std::size_t K = b.modes();
    check_tangent(v);
    if (K == 1) return TT(std::vector<DenseTensor>{b.core(0) + t * v.deltas[0]});
    std::vector<DenseTensor> cores;
    cores.reserve(K);
    for (std::size_t k = 0; k < K; ++k) {
        const DenseTensor& c = b.core(k);
        const DenseTensor& dl = v.deltas[k];
        const Index r0 = c.dim(0), d = c.dim(1), r1 = c.dim(2);
        const bool first = k == 0, last = k + 1 == K;
        const Index n0 = first ? 1 : 2 * r0, n1 = last ? 1 : 2 * r1;
        DenseTensor out({n0, d, n1});
        auto at = [&](Index a, Index i, Index e) -> double& { return out[a + n0 * (i + d * e)]; };
        for (Index e = 0; e < r1; ++e)
            for (Index i = 0; i < d; ++i)
                for (Index a = 0; a < r0; ++a) {
                    const Index src = a + r0 * (i + d * e);
                    if (first) {
                        at(a, i, e) = c[src];
                        at(a, i, r1 + e) = t * dl[src];
                    } else if (last) {
                        at(a, i, e) = c[src] + t * dl[src];
                        at(r0 + a, i, e) = c[src];
                    } else {
                        at(a, i, e) = c[src];
                        at(a, i, r1 + e) = t * dl[src];
                        at(r0 + a, i, r1 + e) = c[src];
                    }
                }
        cores.push_back(std::move(out));
    }
    return TT(std::move(cores));
}

TT retract(const TangentVector& v, double t, const std::vector<Index>& rank) {
    return tt_round(tangent_step(v, t), rank);
}

double tangent_norm_squared(const TangentVector& v) {
    check_tangent(v);
    const auto rights = right_parts(v.base);
    double s = 0.0;
    for (std::size_t k = 0; k < v.deltas.size(); ++k) s += (left_unfold(v.deltas[k]) * rights[k + 1]).squaredNorm();
    return s;
}

TT initialize(const MaskTensor& w_tr, const RGradConfig& cfg) {
    cfg.validate(w_tr.dims().size());
    DenseTensor x = w_tr.tensor();
    if (cfg.init_sigma > 0) {
        Rng rng(derive_seed(cfg.seed, 0x1a17));
        for (Index i = 0; i < x.size(); ++i) x[i] += rng.normal(0.0, cfg.init_sigma);
    }
    return tt_svd(x, cfg.rank);
}

FitResult fit_mple(const MaskTensor& w_tr, const PropensityModel& m, const RGradConfig& cfg) {
    cfg.validate(w_tr.dims().size());
    m.validate();
    FitResult res;
    res.b_hat = initialize(w_tr, cfg);
    DenseTensor full = tt_full(res.b_hat);
    auto eval = pseudo_loss_and_gradient(w_tr, full, m);
    double loss = eval.loss;
    if (!std::isfinite(loss)) throw NumericalError("pseudo-likelihood is not finite at the initial point");
    res.initial_loss = loss;

    const auto* armijo = std::get_if<ArmijoStep>(&cfg.step);
    // Gradient at the current point, when the last evaluation produced one.
    std::optional<DenseTensor> grad_now = std::move(eval.gradient);
    for (int it = 1; it <= cfg.l_max; ++it) {
        const DenseTensor grad = grad_now ? std::move(*grad_now) : pseudo_gradient(w_tr, full, m);
        grad_now.reset();
        const TangentVector p = tangent_project(grad, res.b_hat);
        const double pn2 = tangent_norm_squared(p);
        if (pn2 == 0.0) {
            res.converged = true;
            break;
        }

        double eta = armijo ? armijo->eta0 : std::get<FixedStep>(cfg.step).eta;
        TT cand = retract(p, -eta, cfg.rank);
        DenseTensor cand_full = tt_full(cand);
        double cand_loss;
        if (armijo) {
            cand_loss = neg_pseudo_likelihood(w_tr, cand_full, m);
        } else {
            eval = pseudo_loss_and_gradient(w_tr, cand_full, m);
            cand_loss = eval.loss;
            grad_now = std::move(eval.gradient);
        }
        if (armijo) {
            int h = 0;
            while (!(loss - cand_loss >= armijo->alpha * eta * pn2) && h < armijo->max_halvings) {
                eta *= 0.5;
                ++h;
                cand = retract(p, -eta, cfg.rank);
                cand_full = tt_full(cand);
                cand_loss = neg_pseudo_likelihood(w_tr, cand_full, m);
            }
            // Line search exhausted: keep only a non-increasing step.
            if (!(loss - cand_loss >= armijo->alpha * eta * pn2) && !(cand_loss <= loss)) break;
        }
        if (!std::isfinite(cand_loss))
            throw NumericalError("pseudo-likelihood became non-finite at iteration " + std::to_string(it));

        const double base_norm = frobenius_norm(full);
        const double diff = (cand_full.values() - full.values()).norm();
        const double rel = base_norm > 0 ? diff / base_norm : (diff > 0 ? std::numeric_limits<double>::infinity() : 0.0);
        res.trace.push_back({it, cand_loss, eta, rel});
        res.b_hat = std::move(cand);
        full = std::move(cand_full);
        loss = cand_loss;
        if (rel < cfg.tol) {
            res.converged = true;
            break;
        }
    }
    res.final_loss = loss;
    return res;
}

void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace) {
    os << "iter,pseudo_loglik,step_size,rel_change\n" << std::setprecision(17);
    for (const auto& r : trace) os << r.iter << ',' << r.pseudo_loglik << ',' << r.step_size << ',' << r.rel_change << '\n';
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open " + path + " for writing");
    write_trace_csv(os, trace);
    if (!os) throw DataError("failed writing " + path);
}

Index effective_param_count(const Dims& dims, const std::vector<Index>& rank) {
    if (rank.size() + 1 != dims.size()) throw InvalidArgument("effective_param_count: rank length mismatch");
    const std::size_t K = dims.size();
    Index total = 0;
    Index r_prev = 1;
    for (std::size_t k = 0; k + 1 < K; ++k) {
        total += dims[k] * r_prev * rank[k] - rank[k] * rank[k];
        r_prev = rank[k];
    }
    return total + dims[K - 1] * r_prev;
}

InfoCriterion parse_criterion(const std::string& name) {
    if (name == "aic" || name == "p-aic" || name == "AIC") return InfoCriterion::aic;
    if (name == "bic" || name == "p-bic" || name == "BIC") return InfoCriterion::bic;
    throw InvalidArgument("unknown information criterion '" + name + "' (use aic or bic)");
}

RankSelectResult rank_select(const MaskTensor& w_tr, const PropensityModel& m, const std::vector<Index>& candidates,
                             InfoCriterion criterion, const RGradConfig& cfg) {
    if (candidates.empty()) throw InvalidArgument("rank_select needs at least one candidate");
    const std::size_t K = w_tr.dims().size();
    const double penalty = criterion == InfoCriterion::aic ? 2.0 : std::log(static_cast<double>(w_tr.size()));
    const Index nc = static_cast<Index>(candidates.size());
    std::vector<FitResult> fits(candidates.size());
    std::vector<RankSelectRow> rows(candidates.size());
#pragma omp parallel for schedule(dynamic)
    for (Index c = 0; c < nc; ++c) {
        RGradConfig local = cfg;
        local.rank.assign(K - 1, candidates[c]);
        local.seed = derive_seed(cfg.seed, 0x5e1ec7, static_cast<std::uint64_t>(candidates[c]));
        fits[c] = fit_mple(w_tr, m, local);
        const auto fitted = fits[c].b_hat.ranks();
        const Index params = effective_param_count(w_tr.dims(), fitted);
        rows[c] = {candidates[c], fitted, fits[c].final_loss, params, 2.0 * fits[c].final_loss + penalty * params};
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < rows.size(); ++c)
        if (rows[c].criterion < rows[best].criterion ||
            (rows[c].criterion == rows[best].criterion && rows[c].candidate < rows[best].candidate))
            best = c;
    return {rows[best].candidate, std::move(fits[best]), std::move(rows)};
}

}  // namespace ctc
