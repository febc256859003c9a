#pragma once

// Tensor-train format. Core k is an r_{k-1} × d_k × r_k tensor with r_0 = r_K = 1,
// and entry (i_1..i_K) is the product of slice matrices T_1[:, i_1, :] ... T_K[:, i_K, :].

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <string>
#include <utility>
#include <vector>

#include "ctc/tensor.hpp"

namespace ctc {

template <typename Scalar>
class TTTensor {
public:
    TTTensor() = default;

    explicit TTTensor(std::vector<Tensor<Scalar>> cores, bool left_orthogonal = false)
        : cores_(std::move(cores)), left_orthogonal_(left_orthogonal) {
        if (cores_.empty()) throw InvalidArgument("TTTensor needs at least one core");
        for (std::size_t k = 0; k < cores_.size(); ++k) {
            if (cores_[k].modes() != 3)
                throw InvalidArgument("TT core " + std::to_string(k) + " must have 3 modes");
            if (k > 0 && cores_[k].dim(0) != cores_[k - 1].dim(2))
                throw DimensionMismatch("TT cores " + std::to_string(k - 1) + " and " + std::to_string(k) +
                                        " do not chain: " + dims_to_string(cores_[k - 1].dims()) +
                                        " then " + dims_to_string(cores_[k].dims()));
        }
        if (cores_.front().dim(0) != 1 || cores_.back().dim(2) != 1)
            throw DimensionMismatch("TT boundary ranks must be 1");
        if (cores_.size() > kMaxModes) throw InvalidArgument("TTTensor supports at most 8 modes");
    }

    std::size_t modes() const noexcept { return cores_.size(); }
    const std::vector<Tensor<Scalar>>& cores() const noexcept { return cores_; }
    const Tensor<Scalar>& core(std::size_t k) const { return cores_.at(k); }
    bool left_orthogonal() const noexcept { return left_orthogonal_; }

    Dims dims() const {
        Dims d(cores_.size());
        for (std::size_t k = 0; k < cores_.size(); ++k) d[k] = cores_[k].dim(1);
        return d;
    }

    // (r_1, ..., r_{K-1})
    std::vector<Index> ranks() const {
        std::vector<Index> r;
        for (std::size_t k = 0; k + 1 < cores_.size(); ++k) r.push_back(cores_[k].dim(2));
        return r;
    }

    // r_k with the r_0 = r_K = 1 convention.
    Index rank(std::size_t k) const { return k == 0 ? 1 : cores_.at(k - 1).dim(2); }

private:
    std::vector<Tensor<Scalar>> cores_;
    bool left_orthogonal_ = false;
};

using TT = TTTensor<double>;

template <typename Scalar>
Eigen::Map<const MatrixX<Scalar>> left_unfold(const Tensor<Scalar>& f) {
    if (f.modes() != 3) throw InvalidArgument("left_unfold needs a 3-mode tensor");
    return {f.data(), f.dim(0) * f.dim(1), f.dim(2)};
}

template <typename Scalar>
Eigen::Map<const MatrixX<Scalar>> right_unfold(const Tensor<Scalar>& f) {
    if (f.modes() != 3) throw InvalidArgument("right_unfold needs a 3-mode tensor");
    return {f.data(), f.dim(0), f.dim(1) * f.dim(2)};
}

template <typename Derived>
Tensor<typename Derived::Scalar> fold_left(const Eigen::MatrixBase<Derived>& m, Index r0, Index d, Index r1) {
    if (m.rows() != r0 * d || m.cols() != r1)
        throw DimensionMismatch("fold_left: matrix is not (r0*d) x r1");
    return from_separation(m, Dims{r0, d, r1});
}

template <typename Derived>
Tensor<typename Derived::Scalar> fold_right(const Eigen::MatrixBase<Derived>& m, Index r0, Index d, Index r1) {
    if (m.rows() != r0 || m.cols() != d * r1)
        throw DimensionMismatch("fold_right: matrix is not r0 x (d*r1)");
    return from_separation(m, Dims{r0, d, r1});
}

// Largest entrywise deviation of L(F_k)^T L(F_k) from the identity over cores k < K.
template <typename Scalar>
Scalar left_orthogonality_error(const TTTensor<Scalar>& t) {
    Scalar err = 0;
    for (std::size_t k = 0; k + 1 < t.modes(); ++k) {
        const auto l = left_unfold(t.core(k));
        const MatrixX<Scalar> gram = l.transpose() * l;
        err = std::max(err, (gram - MatrixX<Scalar>::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff());
    }
    return err;
}

namespace detail {

// Next left part: (B^{<=k-1} ⊗ I) L(T_k) computed as B^{<=k-1} R(T_k) reinterpreted.
template <typename Scalar>
MatrixX<Scalar> extend_left(const MatrixX<Scalar>& prev, const Tensor<Scalar>& core) {
    MatrixX<Scalar> next = prev * right_unfold(core);
    next.resize(prev.rows() * core.dim(1), core.dim(2));
    return next;
}

// Next right part: R(T_k)(I ⊗ B^{>=k+1}) computed as L(T_k) B^{>=k+1} reinterpreted.
template <typename Scalar>
MatrixX<Scalar> extend_right(const Tensor<Scalar>& core, const MatrixX<Scalar>& next_part) {
    MatrixX<Scalar> part = left_unfold(core) * next_part;
    part.resize(core.dim(0), core.dim(1) * next_part.cols());
    return part;
}

// Leading rk left singular vectors of a. Wide matrices go through the Gram
// matrix when its spectrum is well separated from zero; otherwise a full SVD.
template <typename Scalar>
MatrixX<Scalar> leading_left_singular(const MatrixX<Scalar>& a, Index rk) {
    if (a.cols() >= 4 * a.rows()) {
        MatrixX<Scalar> gram = MatrixX<Scalar>::Zero(a.rows(), a.rows());
        gram.template selfadjointView<Eigen::Lower>().rankUpdate(a);
        Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(gram);
        const auto& ev = es.eigenvalues();
        const Index n = ev.size();
        if (es.info() == Eigen::Success && ev(n - 1) > 0 && ev(n - rk) > Scalar(1e-10) * ev(n - 1))
            return es.eigenvectors().rightCols(rk).rowwise().reverse();
    }
    Eigen::BDCSVD<MatrixX<Scalar>> svd(a, Eigen::ComputeThinU);
    return svd.matrixU().leftCols(rk);
}

}  // namespace detail

// All left parts B^{<=0}, ..., B^{<=K}; entry k has shape (d_1...d_k) × r_k.
template <typename Scalar>
std::vector<MatrixX<Scalar>> left_parts(const TTTensor<Scalar>& t) {
    std::vector<MatrixX<Scalar>> parts;
    parts.reserve(t.modes() + 1);
    parts.push_back(MatrixX<Scalar>::Ones(1, 1));
    for (std::size_t k = 0; k < t.modes(); ++k) parts.push_back(detail::extend_left(parts.back(), t.core(k)));
    return parts;
}

// All right parts; entry k is B^{>=k+1} with shape r_k × (d_{k+1}...d_K), entry K is [1].
template <typename Scalar>
std::vector<MatrixX<Scalar>> right_parts(const TTTensor<Scalar>& t) {
    const std::size_t K = t.modes();
    std::vector<MatrixX<Scalar>> parts(K + 1);
    parts[K] = MatrixX<Scalar>::Ones(1, 1);
    for (std::size_t k = K; k-- > 0;) parts[k] = detail::extend_right(t.core(k), parts[k + 1]);
    return parts;
}

template <typename Scalar>
MatrixX<Scalar> left_part(const TTTensor<Scalar>& t, std::size_t k) {
    if (k > t.modes()) throw InvalidArgument("left_part index out of range");
    MatrixX<Scalar> part = MatrixX<Scalar>::Ones(1, 1);
    for (std::size_t l = 0; l < k; ++l) part = detail::extend_left(part, t.core(l));
    return part;
}

template <typename Scalar>
MatrixX<Scalar> right_part(const TTTensor<Scalar>& t, std::size_t k) {
    if (k > t.modes()) throw InvalidArgument("right_part index out of range");
    MatrixX<Scalar> part = MatrixX<Scalar>::Ones(1, 1);
    for (std::size_t l = t.modes(); l-- > k;) part = detail::extend_right(t.core(l), part);
    return part;
}

template <typename Scalar>
Tensor<Scalar> tt_full(const TTTensor<Scalar>& t) {
    MatrixX<Scalar> all = left_part(t, t.modes());
    return Tensor<Scalar>(t.dims(), Eigen::Map<const VectorX<Scalar>>(all.data(), all.size()));
}

template <typename Scalar>
Scalar tt_entry(const TTTensor<Scalar>& t, const EntryIndex& s) {
    const Dims dims = t.dims();
    if (s.size() != dims.size()) throw DimensionMismatch("tt_entry: index has wrong number of coordinates");
    for (std::size_t k = 0; k < dims.size(); ++k)
        if (s[k] < 0 || s[k] >= dims[k]) throw InvalidArgument("tt_entry: index out of range");
    VectorX<Scalar> row = VectorX<Scalar>::Ones(1);
    for (std::size_t k = 0; k < t.modes(); ++k) {
        const auto& c = t.core(k);
        const Index r0 = c.dim(0), d = c.dim(1), r1 = c.dim(2);
        Eigen::Map<const MatrixX<Scalar>, 0, Eigen::OuterStride<>> slice(c.data() + r0 * s[k], r0, r1,
                                                                         Eigen::OuterStride<>(r0 * d));
        row = (row.transpose() * slice).transpose();
    }
    return row(0);
}

// Sequential truncated-SVD sweep. Requested ranks above an unfolding's row or
// column count are clamped to that bound.
template <typename Scalar>
TTTensor<Scalar> tt_svd(const Tensor<Scalar>& x, const std::vector<Index>& rank) {
    const std::size_t K = x.modes();
    if (rank.size() + 1 != K)
        throw InvalidArgument("tt_svd: rank vector has length " + std::to_string(rank.size()) + ", expected " +
                              std::to_string(K - 1));
    for (Index r : rank)
        if (r < 1) throw InvalidArgument("tt_svd: ranks must be positive");
    detail::require_observed(x, "tt_svd");

    std::vector<Tensor<Scalar>> cores;
    cores.reserve(K);
    MatrixX<Scalar> a = Eigen::Map<const MatrixX<Scalar>>(x.data(), x.size(), 1);
    Index r_prev = 1;
    for (std::size_t k = 0; k + 1 < K; ++k) {
        const Index rows = r_prev * x.dim(k);
        const Index cols = a.size() / rows;
        a.resize(rows, cols);
        const Index rk = std::min({rank[k], rows, cols});
        const MatrixX<Scalar> u = detail::leading_left_singular(a, rk);
        cores.push_back(fold_left(u, r_prev, x.dim(k), rk));
        a = u.transpose() * a;
        r_prev = rk;
    }
    cores.push_back(from_separation(a, Dims{r_prev, x.dim(K - 1), 1}));
    return TTTensor<Scalar>(std::move(cores), true);
}

// Truncation of a TT to the given ranks without forming the full tensor:
// right-orthogonalize, then truncate left to right. Matches tt_svd of tt_full(t)
// up to the signs of singular vectors.
template <typename Scalar>
TTTensor<Scalar> tt_round(const TTTensor<Scalar>& t, const std::vector<Index>& rank) {
    const std::size_t K = t.modes();
    if (rank.size() + 1 != K)
        throw InvalidArgument("tt_round: rank vector has length " + std::to_string(rank.size()) + ", expected " +
                              std::to_string(K - 1));
    for (Index r : rank)
        if (r < 1) throw InvalidArgument("tt_round: ranks must be positive");
    const Dims dims = t.dims();
    std::vector<Tensor<Scalar>> cores = t.cores();

    for (std::size_t k = K; k-- > 1;) {
        const Index r0 = cores[k].dim(0), d = cores[k].dim(1), r1 = cores[k].dim(2);
        Eigen::HouseholderQR<MatrixX<Scalar>> qr(right_unfold(cores[k]).transpose());
        const Index m = std::min(r0, d * r1);
        const MatrixX<Scalar> q = qr.householderQ() * MatrixX<Scalar>::Identity(d * r1, m);
        const MatrixX<Scalar> r = qr.matrixQR().topRows(m).template triangularView<Eigen::Upper>();
        cores[k] = fold_right(q.transpose(), m, d, r1);
        const Tensor<Scalar>& prev = cores[k - 1];
        cores[k - 1] = fold_left(left_unfold(prev) * r.transpose(), prev.dim(0), prev.dim(1), m);
    }

    Index r_prev = 1;
    for (std::size_t k = 0; k + 1 < K; ++k) {
        const auto a = left_unfold(cores[k]);
        const Index rows = a.rows();
        const Index rk = std::min({rank[k], rows, dims_product(dims, k + 1, K)});
        MatrixX<Scalar> u;
        if (rk <= a.cols()) {
            u = detail::leading_left_singular(MatrixX<Scalar>(a), rk);
        } else {
            Eigen::JacobiSVD<MatrixX<Scalar>> svd(a, Eigen::ComputeFullU);
            u = svd.matrixU().leftCols(rk);
        }
        const MatrixX<Scalar> carry = u.transpose() * a;
        const Tensor<Scalar>& next = cores[k + 1];
        cores[k + 1] = fold_right(carry * right_unfold(next), rk, next.dim(1), next.dim(2));
        cores[k] = fold_left(u, r_prev, dims[k], rk);
        r_prev = rk;
    }
    return TTTensor<Scalar>(std::move(cores), true);
}

}  // namespace ctc
