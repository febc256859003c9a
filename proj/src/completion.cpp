#include "ctc/completion.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>

#include <unistd.h>

#include "ctc/tensor_io.hpp"

namespace ctc {

Dims TuckerTensor::dims() const {
    Dims d;
    for (const auto& u : factors) d.push_back(u.rows());
    return d;
}

void TuckerTensor::validate() const {
    if (factors.size() != core.modes()) throw DimensionMismatch("Tucker core and factor count disagree");
    for (std::size_t k = 0; k < factors.size(); ++k) {
        if (factors[k].cols() != core.dim(k))
            throw DimensionMismatch("Tucker factor " + std::to_string(k) + " has " +
                                    std::to_string(factors[k].cols()) + " columns, core mode has " +
                                    std::to_string(core.dim(k)));
    }
}

DenseTensor tucker_full(const TuckerTensor& t) {
    t.validate();
    DenseTensor x = t.core;
    for (std::size_t k = 0; k < t.factors.size(); ++k) x = mode_product(x, t.factors[k], k);
    return x;
}

namespace {

// y ×_k U_k^T over all modes.
DenseTensor project_all(const DenseTensor& y, const std::vector<MatrixX<double>>& u) {
    DenseTensor z = y;
    for (std::size_t k = 0; k < u.size(); ++k) z = mode_product(z, u[k].transpose(), k);
    return z;
}

DenseTensor reconstruct(const DenseTensor& core, const std::vector<MatrixX<double>>& u) {
    DenseTensor x = core;
    for (std::size_t k = 0; k < u.size(); ++k) x = mode_product(x, u[k], k);
    return x;
}

struct Observed {
    VectorX<double> values;  // zero where missing
    VectorX<double> mask;    // 1 observed, 0 missing
    Index count = 0;
};

Observed observed_part(const DenseTensor& x) {
    Observed o{VectorX<double>::Zero(x.size()), VectorX<double>::Zero(x.size()), 0};
    for (Index i = 0; i < x.size(); ++i)
        if (!x.is_missing(i)) {
            if (!std::isfinite(x[i])) throw InvalidArgument("tucker_complete: observed entries must be finite");
            o.values[i] = x[i];
            o.mask[i] = 1.0;
            ++o.count;
        }
    return o;
}

double objective(const DenseTensor& fit, const Observed& obs) {
    return 0.5 * (fit.values() - obs.values).cwiseProduct(obs.mask).squaredNorm();
}

// Warm-started CG on the normal equations of min_c 1/2 ||P_O(c ×U) - x_O||^2.
void refine_core(DenseTensor& core, const std::vector<MatrixX<double>>& u, const Observed& obs, const Dims& dims,
                 int iters) {
    auto apply = [&](const DenseTensor& c) {
        DenseTensor y = reconstruct(c, u);
        y.values().array() *= obs.mask.array();
        return project_all(y, u);
    };
    const DenseTensor rhs = project_all(DenseTensor(dims, obs.values), u);
    DenseTensor r = rhs - apply(core);
    DenseTensor p = r;
    double rr = r.values().squaredNorm();
    const double stop = 1e-28 * std::max(rhs.values().squaredNorm(), std::numeric_limits<double>::min());
    for (int it = 0; it < iters && rr > stop; ++it) {
        const DenseTensor ap = apply(p);
        const double pap = p.values().dot(ap.values());
        if (!(pap > 0)) break;
        const double a = rr / pap;
        core.values() += a * p.values();
        r.values() -= a * ap.values();
        const double rr_new = r.values().squaredNorm();
        p.values() = r.values() + (rr_new / rr) * p.values();
        rr = rr_new;
    }
}

MatrixX<double> gram_inverse(const MatrixX<double>& gram) {
    const Index r = gram.rows();
    MatrixX<double> g = gram;
    const double scale = std::max(gram.diagonal().maxCoeff(), std::numeric_limits<double>::min());
    g.diagonal().array() += 1e-12 * scale;
    Eigen::LDLT<MatrixX<double>> ldlt(g);
    return ldlt.solve(MatrixX<double>::Identity(r, r));
}

}  // namespace

TuckerFit tucker_complete(const DenseTensor& x_masked, const CompletionOptions& opts) {
    const std::size_t K = x_masked.modes();
    const Dims& dims = x_masked.dims();
    if (opts.rank.size() != K)
        throw InvalidArgument("tucker_complete: rank has length " + std::to_string(opts.rank.size()) + ", data has " +
                              std::to_string(K) + " modes");
    for (std::size_t k = 0; k < K; ++k)
        if (opts.rank[k] < 1) throw InvalidArgument("tucker_complete: ranks must be positive");
    if (opts.max_iter < 0 || !(opts.tol > 0)) throw InvalidArgument("tucker_complete: need max_iter >= 0, tol > 0");

    const Observed obs = observed_part(x_masked);
    if (obs.count == 0) throw InvalidArgument("tucker_complete: every entry is missing");
    const double p_hat = static_cast<double>(obs.count) / static_cast<double>(x_masked.size());

    std::vector<Index> rank(K);
    for (std::size_t k = 0; k < K; ++k) rank[k] = std::min(opts.rank[k], dims[k]);

    const DenseTensor zero_filled(dims, obs.values);
    std::vector<MatrixX<double>> u(K);
    for (std::size_t k = 0; k < K; ++k) {
        Eigen::BDCSVD<MatrixX<double>> svd(unfold(zero_filled, k), Eigen::ComputeThinU);
        MatrixX<double> basis = MatrixX<double>::Identity(dims[k], rank[k]);
        const Index avail = std::min(rank[k], svd.matrixU().cols());
        basis.leftCols(avail) = svd.matrixU().leftCols(avail);
        Eigen::HouseholderQR<MatrixX<double>> qr(basis);
        u[k] = qr.householderQ() * MatrixX<double>::Identity(dims[k], rank[k]);
    }
    DenseTensor core = project_all(zero_filled, u) * (1.0 / p_hat);
    refine_core(core, u, obs, dims, opts.core_cg_iters);

    TuckerFit fit;
    DenseTensor xhat = reconstruct(core, u);
    double f = objective(xhat, obs);
    const double f_floor = 1e-30 * std::max(obs.values.squaredNorm(), std::numeric_limits<double>::min());

    for (int it = 0; it < opts.max_iter; ++it) {
        if (f <= f_floor) {
            fit.converged = true;
            break;
        }
        // Residual on observed entries, then preconditioned factor directions.
        DenseTensor resid = xhat;
        resid.values() = (xhat.values() - obs.values).cwiseProduct(obs.mask);
        std::vector<MatrixX<double>> dir(K);
        for (std::size_t k = 0; k < K; ++k) {
            DenseTensor z = resid;
            for (std::size_t l = 0; l < K; ++l)
                if (l != k) z = mode_product(z, u[l].transpose(), l);
            const MatrixX<double> ck = unfold(core, k);
            MatrixX<double> g = unfold(z, k) * ck.transpose();
            g -= u[k] * (u[k].transpose() * g);
            dir[k] = -(g * gram_inverse(ck * ck.transpose())) / p_hat;
        }

        double eta = 0.5;
        std::vector<MatrixX<double>> trial(K);
        double f_trial = f;
        bool accepted = false;
        for (int h = 0; h < 30; ++h, eta *= 0.5) {
            for (std::size_t k = 0; k < K; ++k) trial[k] = u[k] + eta * dir[k];
            f_trial = objective(reconstruct(core, trial), obs);
            if (f_trial < f) {
                accepted = true;
                break;
            }
        }
        const DenseTensor core_prev = core;
        const std::vector<MatrixX<double>> u_prev = u;
        if (accepted) {
            for (std::size_t k = 0; k < K; ++k) {
                Eigen::HouseholderQR<MatrixX<double>> qr(trial[k]);
                const MatrixX<double> q = qr.householderQ() * MatrixX<double>::Identity(dims[k], rank[k]);
                const MatrixX<double> r = q.transpose() * trial[k];
                core = mode_product(core, r, k);
                u[k] = q;
            }
        }
        refine_core(core, u, obs, dims, opts.core_cg_iters);
        DenseTensor x_new = reconstruct(core, u);
        const double f_new = objective(x_new, obs);
        if (!(f_new <= f)) {
            // Rounding in the QR and core solve can undo a step near the optimum.
            core = core_prev;
            u = u_prev;
            fit.converged = true;
            break;
        }
        xhat = std::move(x_new);
        fit.objective.push_back(f_new);
        const double rel = (f - f_new) / std::max(f, std::numeric_limits<double>::min());
        f = f_new;
        if (rel < opts.tol) {
            fit.converged = true;
            break;
        }
    }
    fit.tucker = {std::move(core), std::move(u)};
    return fit;
}

namespace {

// Row-space projectors of the core unfoldings.
std::vector<MatrixX<double>> core_row_projectors(const DenseTensor& core) {
    std::vector<MatrixX<double>> q;
    for (std::size_t k = 0; k < core.modes(); ++k) {
        const MatrixX<double> ck = unfold(core, k);
        Eigen::JacobiSVD<MatrixX<double>> svd(ck, Eigen::ComputeThinV);
        const auto& s = svd.singularValues();
        Index rk = 0;
        const double cut = s.size() ? 1e-12 * s(0) : 0.0;
        while (rk < s.size() && s(rk) > cut) ++rk;
        const MatrixX<double> v = svd.matrixV().leftCols(rk);
        q.push_back(v * v.transpose());
    }
    return q;
}

double tangent_norm_at(const EntryIndex& s, const TuckerTensor& t, const std::vector<MatrixX<double>>& q) {
    const std::size_t K = t.factors.size();
    double prod = 1.0;
    std::vector<double> rho(K);
    for (std::size_t k = 0; k < K; ++k) {
        rho[k] = t.factors[k].row(s[k]).squaredNorm();
        prod *= rho[k];
    }
    double sq = prod;
    for (std::size_t k = 0; k < K; ++k) {
        VectorX<double> v = VectorX<double>::Ones(1);
        for (std::size_t l = 0; l < K; ++l) {
            if (l == k) continue;
            const auto row = t.factors[l].row(s[l]);
            VectorX<double> next(v.size() * row.size());
            for (Index a = 0; a < row.size(); ++a) next.segment(a * v.size(), v.size()) = row(a) * v;
            v = std::move(next);
        }
        sq += std::max(0.0, 1.0 - rho[k]) * v.dot(q[k] * v);
    }
    return std::sqrt(std::clamp(sq, 0.0, 1.0));
}

}  // namespace

double tucker_tangent_norm(const EntryIndex& s, const TuckerTensor& t) {
    t.validate();
    linear_offset(t.dims(), s);
    return tangent_norm_at(s, t, core_row_projectors(t.core));
}

DenseTensor tucker_tangent_norms(const TuckerTensor& t) {
    t.validate();
    const auto q = core_row_projectors(t.core);
    const Dims dims = t.dims();
    DenseTensor out(dims);
    for (Index i = 0; i < out.size(); ++i) out[i] = tangent_norm_at(entry_index(dims, i), t, q);
    return out;
}

DenseTensor TuckerCompletion::complete(const DenseTensor& x_masked) const {
    return tucker_full(tucker_complete(x_masked, opts_).tucker);
}

ExternalCompletion::ExternalCompletion(std::string command_template) : command_(std::move(command_template)) {
    if (command_.find("{input}") == std::string::npos || command_.find("{output}") == std::string::npos)
        throw InvalidArgument("external completion command must contain {input} and {output}");
}

DenseTensor ExternalCompletion::complete(const DenseTensor& x_masked) const {
    namespace fs = std::filesystem;
    static std::atomic<unsigned> counter{0};
    const fs::path dir = fs::temp_directory_path() /
                         ("ctc-complete-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::create_directories(dir);
    const std::string in = (dir / "input.dten").string();
    const std::string out = (dir / "output.dten").string();
    write_dten(in, x_masked);
    std::string cmd = command_;
    for (const auto& [key, value] : {std::pair<std::string, std::string>{"{input}", in}, {"{output}", out}})
        for (std::size_t pos; (pos = cmd.find(key)) != std::string::npos;) cmd.replace(pos, key.size(), "'" + value + "'");
    const int status = std::system(cmd.c_str());
    if (status != 0) {
        fs::remove_all(dir);
        throw DataError("external completion command failed with status " + std::to_string(status) + ": " + cmd);
    }
    DenseTensor est = read_dten(out);
    fs::remove_all(dir);
    if (est.dims() != x_masked.dims())
        throw DataError("external completion returned dims " + dims_to_string(est.dims()) + ", expected " +
                        dims_to_string(x_masked.dims()));
    if (est.has_missing()) throw DataError("external completion output contains missing entries");
    return est;
}

}  // namespace ctc
