#pragma once

// Missing-propensity model: an Ising/Boltzmann law over ±1 masks on the grid
// lattice, parameterized entrywise by a real tensor B through a symmetric
// coupling g(B_i, B_j) on neighbor pairs and a field h(B_i) per entry.

#include <cstdint>
#include <vector>

#include "ctc/tensor.hpp"

namespace ctc {

// Tensor of ±1 values; +1 marks an observed (or, for a training mask, a training) entry.
class MaskTensor {
public:
    explicit MaskTensor(DenseTensor values);

    static MaskTensor constant(Dims dims, double sign);
    // +1 wherever x is not the missing sentinel.
    static MaskTensor from_observed(const DenseTensor& x);

    const DenseTensor& tensor() const noexcept { return values_; }
    const Dims& dims() const noexcept { return values_.dims(); }
    Index size() const noexcept { return values_.size(); }
    double operator[](Index offset) const { return values_[offset]; }
    bool observed(Index offset) const { return values_[offset] > 0; }
    Index count_observed() const;

    void set(Index offset, bool observed) { values_[offset] = observed ? 1.0 : -1.0; }

private:
    DenseTensor values_;
};

struct PolyTerm {
    double coef;
    int x_power;
    int y_power;
};

// Symmetric bivariate polynomial g(x, y) = sum c_ab x^a y^b with c_ab = c_ba.
class Coupling {
public:
    Coupling() = default;
    explicit Coupling(std::vector<PolyTerm> terms);

    // g(x, y) = theta * x * y; theta = 0 is the independent Bernoulli model.
    static Coupling product(double theta);

    double operator()(double x, double y) const;
    // Partial derivative in the first argument.
    double dx(double x, double y) const;
    bool is_zero() const noexcept { return terms_.empty(); }
    const std::vector<PolyTerm>& terms() const noexcept { return terms_; }

private:
    std::vector<PolyTerm> terms_;
};

// Univariate polynomial field h(x) = sum c_a x^a.
class Field {
public:
    Field() : Field(linear(0.5)) {}
    explicit Field(std::vector<double> coefs) : coefs_(std::move(coefs)) {}

    // h(x) = slope * x. The default slope 1/2 is the logit field of a sigmoid link.
    static Field linear(double slope) { return Field(std::vector<double>{0.0, slope}); }

    double operator()(double x) const;
    double derivative(double x) const;
    const std::vector<double>& coefs() const noexcept { return coefs_; }

private:
    std::vector<double> coefs_;
};

struct PropensityModel {
    Coupling coupling;
    Field field;
    // Probability that an observed entry lands in the training split.
    double q = 0.7;

    void validate() const;
};

double logistic(double z);

// Entries at L1 distance 1 along a single mode, truncated at the boundary.
std::vector<EntryIndex> neighbors(const EntryIndex& s, const Dims& dims);

// out_i = sum_{j in N(i)} x_j.
DenseTensor neighbor_sum(const DenseTensor& x);

// z_i = 2 sum_{j in N(i)} g(b_i, b_j) w_j + 2 h(b_i), so that P(W_i = +1 | rest) = logistic(z_i).
DenseTensor local_field(const MaskTensor& w, const DenseTensor& b, const PropensityModel& m);

// -1/2 sum_{i~j} g(b_i, b_j) w_i w_j - sum_i h(b_i) w_i over ordered neighbor pairs.
double hamiltonian(const MaskTensor& w, const DenseTensor& b, const PropensityModel& m);

// Full conditional P(W_s = +1 | w_{-s}); multiplied by q when include_q.
double conditional_prob(const EntryIndex& s, const MaskTensor& w, const DenseTensor& b, const PropensityModel& m,
                        bool include_q);

// Entrywise full conditionals p~ (without q-thinning).
DenseTensor conditional_probs(const MaskTensor& w, const DenseTensor& b, const PropensityModel& m);

// l = -sum_{w=+1} log(q p~_i) - sum_{w=-1} log(1 - q p~_i).
double neg_pseudo_likelihood(const MaskTensor& w_tr, const DenseTensor& b, const PropensityModel& m);

// Gradient of neg_pseudo_likelihood with respect to b.
DenseTensor pseudo_gradient(const MaskTensor& w_tr, const DenseTensor& b, const PropensityModel& m);

struct PseudoEval {
    double loss = 0.0;
    DenseTensor gradient;
};

// Loss and gradient from one pass over the full conditionals.
PseudoEval pseudo_loss_and_gradient(const MaskTensor& w_tr, const DenseTensor& b, const PropensityModel& m);

struct GibbsSchedule {
    long iters = 8000;
    long burn_in = 2000;
    long thin = 200;

    void validate() const;
    long kept() const { return (iters - burn_in) / thin; }
};

// Checkerboard block-Gibbs chain (odd coordinate sums first, then even); keeps
// the state after every thin-th post-burn-in sweep.
std::vector<MaskTensor> gibbs_sample(const DenseTensor& b, const PropensityModel& m, const GibbsSchedule& schedule,
                                     std::uint64_t seed);

}  // namespace ctc
