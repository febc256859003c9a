#pragma once

// Dense K-mode tensors stored first-index-fastest, which is also Eigen's
// column-major order: every separation/unfolding that groups leading modes
// into rows is a zero-copy Eigen::Map over the value buffer.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ctc/error.hpp"

namespace ctc {

using Index = Eigen::Index;
using Dims = std::vector<Index>;
using EntryIndex = std::vector<Index>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

inline constexpr std::size_t kMaxModes = 8;

template <typename Scalar>
constexpr Scalar missing_value() {
    return std::numeric_limits<Scalar>::quiet_NaN();
}

inline std::string dims_to_string(const Dims& dims) {
    std::ostringstream os;
    os << '(';
    for (std::size_t k = 0; k < dims.size(); ++k) os << (k ? "," : "") << dims[k];
    os << ')';
    return os.str();
}

inline Index num_entries(const Dims& dims) {
    return std::accumulate(dims.begin(), dims.end(), Index{1}, std::multiplies<>());
}

// Product of dims[first, last).
inline Index dims_product(const Dims& dims, std::size_t first, std::size_t last) {
    Index p = 1;
    for (std::size_t k = first; k < last; ++k) p *= dims[k];
    return p;
}

inline void validate_dims(const Dims& dims) {
    if (dims.empty() || dims.size() > kMaxModes)
        throw InvalidArgument("tensor must have between 1 and 8 modes, got " +
                              std::to_string(dims.size()));
    for (Index d : dims)
        if (d <= 0) throw InvalidArgument("tensor dims must be positive: " + dims_to_string(dims));
}

inline Index linear_offset(const Dims& dims, const EntryIndex& s) {
    if (s.size() != dims.size())
        throw DimensionMismatch("index has " + std::to_string(s.size()) + " coordinates, tensor has " +
                                std::to_string(dims.size()) + " modes");
    Index offset = 0;
    Index stride = 1;
    for (std::size_t k = 0; k < dims.size(); ++k) {
        if (s[k] < 0 || s[k] >= dims[k])
            throw InvalidArgument("index coordinate " + std::to_string(s[k]) + " out of range for mode " +
                                  std::to_string(k) + " of size " + std::to_string(dims[k]));
        offset += s[k] * stride;
        stride *= dims[k];
    }
    return offset;
}

inline EntryIndex entry_index(const Dims& dims, Index offset) {
    EntryIndex s(dims.size());
    for (std::size_t k = 0; k < dims.size(); ++k) {
        s[k] = offset % dims[k];
        offset /= dims[k];
    }
    return s;
}

template <typename Scalar>
class Tensor {
public:
    using scalar_type = Scalar;

    Tensor() : dims_{1}, values_(VectorX<Scalar>::Zero(1)) {}

    explicit Tensor(Dims dims) : dims_(std::move(dims)) {
        validate_dims(dims_);
        values_ = VectorX<Scalar>::Zero(num_entries(dims_));
    }

    Tensor(Dims dims, VectorX<Scalar> values) : dims_(std::move(dims)), values_(std::move(values)) {
        validate_dims(dims_);
        if (values_.size() != num_entries(dims_))
            throw DimensionMismatch("tensor value count " + std::to_string(values_.size()) +
                                    " does not match dims " + dims_to_string(dims_));
    }

    static Tensor constant(Dims dims, Scalar value) {
        Tensor t(std::move(dims));
        t.values_.setConstant(value);
        return t;
    }
    static Tensor zeros(Dims dims) { return Tensor(std::move(dims)); }
    static Tensor ones(Dims dims) { return constant(std::move(dims), Scalar(1)); }

    const Dims& dims() const noexcept { return dims_; }
    Index dim(std::size_t k) const { return dims_.at(k); }
    std::size_t modes() const noexcept { return dims_.size(); }
    Index size() const noexcept { return values_.size(); }

    const VectorX<Scalar>& values() const noexcept { return values_; }
    VectorX<Scalar>& values() noexcept { return values_; }
    const Scalar* data() const noexcept { return values_.data(); }
    Scalar* data() noexcept { return values_.data(); }

    Scalar operator[](Index offset) const { return values_[offset]; }
    Scalar& operator[](Index offset) { return values_[offset]; }
    Scalar operator()(const EntryIndex& s) const { return values_[linear_offset(dims_, s)]; }
    Scalar& operator()(const EntryIndex& s) { return values_[linear_offset(dims_, s)]; }

    bool has_missing() const { return values_.hasNaN(); }
    bool is_missing(Index offset) const { return std::isnan(values_[offset]); }

    Tensor reshaped(Dims dims) const { return Tensor(std::move(dims), values_); }

    template <typename Other>
    Tensor<Other> cast() const {
        return Tensor<Other>(dims_, values_.template cast<Other>());
    }

    Tensor& operator+=(const Tensor& other) {
        require_same_dims(other, "+=");
        values_ += other.values_;
        return *this;
    }
    Tensor& operator-=(const Tensor& other) {
        require_same_dims(other, "-=");
        values_ -= other.values_;
        return *this;
    }
    Tensor& operator*=(Scalar c) {
        values_ *= c;
        return *this;
    }

    friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
    friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
    friend Tensor operator*(Tensor a, Scalar c) { return a *= c; }
    friend Tensor operator*(Scalar c, Tensor a) { return a *= c; }

    void require_same_dims(const Tensor& other, const char* op) const {
        if (dims_ != other.dims_)
            throw DimensionMismatch(std::string(op) + ": dims " + dims_to_string(dims_) + " vs " +
                                    dims_to_string(other.dims_));
    }

private:
    Dims dims_;
    VectorX<Scalar> values_;
};

using DenseTensor = Tensor<double>;

namespace detail {
template <typename Scalar>
void require_observed(const Tensor<Scalar>& x, const char* op) {
    if (x.has_missing()) throw MissingValueError(std::string(op) + ": tensor contains missing entries");
}
}  // namespace detail

template <typename Scalar>
Scalar inner_product(const Tensor<Scalar>& x, const Tensor<Scalar>& y) {
    x.require_same_dims(y, "inner_product");
    detail::require_observed(x, "inner_product");
    detail::require_observed(y, "inner_product");
    return x.values().dot(y.values());
}

template <typename Scalar>
Scalar frobenius_norm(const Tensor<Scalar>& x) {
    detail::require_observed(x, "frobenius_norm");
    return x.values().norm();
}

template <typename Scalar>
Scalar max_norm(const Tensor<Scalar>& x) {
    detail::require_observed(x, "max_norm");
    return x.values().cwiseAbs().maxCoeff();
}

// k-mode separation: rows enumerate modes [0, split), columns modes [split, K).
template <typename Scalar>
Eigen::Map<const MatrixX<Scalar>> separation(const Tensor<Scalar>& x, std::size_t split) {
    if (split < 1 || split >= x.modes())
        throw InvalidArgument("separation point " + std::to_string(split) + " must lie in [1, " +
                              std::to_string(x.modes() - 1) + "]");
    const Index rows = dims_product(x.dims(), 0, split);
    return {x.data(), rows, x.size() / rows};
}

template <typename Scalar>
Eigen::Map<MatrixX<Scalar>> separation(Tensor<Scalar>& x, std::size_t split) {
    if (split < 1 || split >= x.modes())
        throw InvalidArgument("separation point " + std::to_string(split) + " must lie in [1, " +
                              std::to_string(x.modes() - 1) + "]");
    const Index rows = dims_product(x.dims(), 0, split);
    return {x.data(), rows, x.size() / rows};
}

template <typename Derived>
Tensor<typename Derived::Scalar> from_separation(const Eigen::MatrixBase<Derived>& m, Dims dims) {
    using Scalar = typename Derived::Scalar;
    if (m.size() != num_entries(dims))
        throw DimensionMismatch("matrix of " + std::to_string(m.size()) + " entries cannot reshape to " +
                                dims_to_string(dims));
    VectorX<Scalar> v(m.size());
    Eigen::Map<MatrixX<Scalar>>(v.data(), m.rows(), m.cols()) = m;
    return Tensor<Scalar>(std::move(dims), std::move(v));
}

// x ×_k U with U of shape J × d_k (mode index k is zero-based).
template <typename Scalar, typename Derived>
Tensor<Scalar> mode_product(const Tensor<Scalar>& x, const Eigen::MatrixBase<Derived>& u, std::size_t k) {
    if (k >= x.modes()) throw InvalidArgument("mode " + std::to_string(k) + " out of range");
    if (u.cols() != x.dim(k))
        throw DimensionMismatch("mode_product: matrix has " + std::to_string(u.cols()) +
                                " columns, mode " + std::to_string(k) + " has size " +
                                std::to_string(x.dim(k)));
    const Index inner = dims_product(x.dims(), 0, k);
    const Index outer = dims_product(x.dims(), k + 1, x.modes());
    const Index d = x.dim(k);
    const Index j = u.rows();
    Dims out_dims = x.dims();
    out_dims[k] = j;
    Tensor<Scalar> out(out_dims);
    const MatrixX<Scalar> ut = u.transpose();
    for (Index q = 0; q < outer; ++q) {
        Eigen::Map<const MatrixX<Scalar>> in_slab(x.data() + q * inner * d, inner, d);
        Eigen::Map<MatrixX<Scalar>> out_slab(out.data() + q * inner * j, inner, j);
        out_slab.noalias() = in_slab * ut;
    }
    return out;
}

// Mode-k unfolding d_k × (product of the other dims), remaining modes first-index-fastest.
template <typename Scalar>
MatrixX<Scalar> unfold(const Tensor<Scalar>& x, std::size_t k) {
    if (k >= x.modes()) throw InvalidArgument("mode " + std::to_string(k) + " out of range");
    const Index inner = dims_product(x.dims(), 0, k);
    const Index outer = dims_product(x.dims(), k + 1, x.modes());
    const Index d = x.dim(k);
    MatrixX<Scalar> m(d, inner * outer);
    for (Index q = 0; q < outer; ++q) {
        Eigen::Map<const MatrixX<Scalar>> slab(x.data() + q * inner * d, inner, d);
        m.middleCols(q * inner, inner) = slab.transpose();
    }
    return m;
}

template <typename Derived>
Tensor<typename Derived::Scalar> fold(const Eigen::MatrixBase<Derived>& m, std::size_t k, Dims dims) {
    using Scalar = typename Derived::Scalar;
    validate_dims(dims);
    if (k >= dims.size() || m.rows() != dims[k] || m.size() != num_entries(dims))
        throw DimensionMismatch("fold: matrix shape incompatible with dims " + dims_to_string(dims));
    const Index inner = dims_product(dims, 0, k);
    const Index outer = dims_product(dims, k + 1, dims.size());
    const Index d = dims[k];
    Tensor<Scalar> out(std::move(dims));
    for (Index q = 0; q < outer; ++q) {
        Eigen::Map<MatrixX<Scalar>> slab(out.data() + q * inner * d, inner, d);
        slab = m.middleCols(q * inner, inner).transpose();
    }
    return out;
}

}  // namespace ctc
