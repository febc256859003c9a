#pragma once

// Tensor completion seam plus a low-Tucker-rank least-squares baseline and the
// tangent-space norm used as the local uncertainty of a completion estimate.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ctc/tensor.hpp"

namespace ctc {

struct TuckerTensor {
    DenseTensor core;
    std::vector<MatrixX<double>> factors;  // d_k × r_k, orthonormal columns

    Dims dims() const;
    std::vector<Index> rank() const { return core.dims(); }
    void validate() const;
};

DenseTensor tucker_full(const TuckerTensor& t);

struct CompletionOptions {
    std::vector<Index> rank;
    int max_iter = 1000;
    double tol = 1e-6;
    std::uint64_t seed = 0;
    // Conjugate-gradient sweeps for the core per outer iteration.
    int core_cg_iters = 10;
};

struct TuckerFit {
    TuckerTensor tucker;
    std::vector<double> objective;  // 1/2 sum of squared observed residuals, one per iteration
    bool converged = false;
};

// Least squares over observed (non-NaN) entries at fixed Tucker rank: HOSVD start
// from the zero-filled tensor, then alternating core least squares and
// preconditioned factor gradient steps with backtracking and re-orthonormalization.
TuckerFit tucker_complete(const DenseTensor& x_masked, const CompletionOptions& opts);

// Norm of the projection of the indicator of s onto the Tucker tangent space at t.
double tucker_tangent_norm(const EntryIndex& s, const TuckerTensor& t);
// The same for every entry.
DenseTensor tucker_tangent_norms(const TuckerTensor& t);

class CompletionAlgorithm {
public:
    virtual ~CompletionAlgorithm() = default;
    // Estimate over all entries from data whose unobserved entries are NaN.
    virtual DenseTensor complete(const DenseTensor& x_masked) const = 0;
    virtual std::string name() const = 0;
};

class TuckerCompletion : public CompletionAlgorithm {
public:
    explicit TuckerCompletion(CompletionOptions opts) : opts_(std::move(opts)) {}
    DenseTensor complete(const DenseTensor& x_masked) const override;
    std::string name() const override { return "tucker"; }

private:
    CompletionOptions opts_;
};

// Runs an external program. The command template must contain {input} and
// {output}; both are replaced by DTEN file paths in a scratch directory.
class ExternalCompletion : public CompletionAlgorithm {
public:
    explicit ExternalCompletion(std::string command_template);
    DenseTensor complete(const DenseTensor& x_masked) const override;
    std::string name() const override { return "external"; }

private:
    std::string command_;
};

}  // namespace ctc
