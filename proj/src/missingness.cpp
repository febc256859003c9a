#include "ctc/missingness.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "ctc/random.hpp"

namespace ctc {

namespace {

void require_same(const Dims& a, const Dims& b, const char* op) {
    if (a != b) throw DimensionMismatch(std::string(op) + ": dims " + dims_to_string(a) + " vs " + dims_to_string(b));
}

double ipow(double x, int p) {
    double r = 1.0;
    for (int i = 0; i < p; ++i) r *= x;
    return r;
}

// Strides of each mode in the linear offset.
std::vector<Index> mode_strides(const Dims& dims) {
    std::vector<Index> st(dims.size());
    Index s = 1;
    for (std::size_t k = 0; k < dims.size(); ++k) {
        st[k] = s;
        s *= dims[k];
    }
    return st;
}

// out += NS[x], one axis shift per mode and direction.
void add_neighbor_sum(const Dims& dims, const double* x, double* out) {
    const Index n = num_entries(dims);
    const auto st = mode_strides(dims);
    for (std::size_t k = 0; k < dims.size(); ++k) {
        const Index stride = st[k];
        const Index d = dims[k];
        const Index block = stride * d;
        if (d == 1) continue;
        for (Index base = 0; base < n; base += block) {
            // Each slab i along mode k receives slab i-1 and i+1.
            const Index span = stride * (d - 1);
            double* o = out + base;
            const double* xi = x + base;
            for (Index t = 0; t < span; ++t) {
                o[t] += xi[t + stride];
                o[t + stride] += xi[t];
            }
        }
    }
}

ArrayX<double> field_values(const Field& h, const ArrayX<double>& x) {
    const auto& c = h.coefs();
    ArrayX<double> v = ArrayX<double>::Zero(x.size());
    for (std::size_t a = c.size(); a-- > 0;) v = v * x + c[a];
    return v;
}

ArrayX<double> field_derivatives(const Field& h, const ArrayX<double>& x) {
    const auto& c = h.coefs();
    ArrayX<double> v = ArrayX<double>::Zero(x.size());
    for (std::size_t a = c.size(); a-- > 1;) v = v * x + static_cast<double>(a) * c[a];
    return v;
}

// Power tables b^p for every exponent used by the coupling.
std::map<int, VectorX<double>> power_table(const DenseTensor& b, const Coupling& g, bool with_x_minus_one) {
    std::map<int, VectorX<double>> pw;
    auto need = [&](int p) {
        if (p < 0 || pw.count(p)) return;
        VectorX<double> v = VectorX<double>::Ones(b.size());
        for (int i = 0; i < p; ++i) v.array() *= b.values().array();
        pw.emplace(p, std::move(v));
    };
    for (const auto& t : g.terms()) {
        need(t.x_power);
        need(t.y_power);
        if (with_x_minus_one) need(t.x_power - 1);
    }
    return pw;
}

}  // namespace

MaskTensor::MaskTensor(DenseTensor values) : values_(std::move(values)) {
    for (Index i = 0; i < values_.size(); ++i)
        if (values_[i] != 1.0 && values_[i] != -1.0)
            throw InvalidArgument("mask entries must be exactly +1 or -1 (offset " + std::to_string(i) + ")");
}

MaskTensor MaskTensor::constant(Dims dims, double sign) {
    return MaskTensor(DenseTensor::constant(std::move(dims), sign > 0 ? 1.0 : -1.0));
}

MaskTensor MaskTensor::from_observed(const DenseTensor& x) {
    DenseTensor w(x.dims());
    for (Index i = 0; i < x.size(); ++i) w[i] = x.is_missing(i) ? -1.0 : 1.0;
    return MaskTensor(std::move(w));
}

Index MaskTensor::count_observed() const { return (values_.values().array() > 0).count(); }

Coupling::Coupling(std::vector<PolyTerm> terms) {
    std::map<std::pair<int, int>, double> merged;
    for (const auto& t : terms) {
        if (t.x_power < 0 || t.y_power < 0) throw InvalidArgument("coupling exponents must be non-negative");
        if (!std::isfinite(t.coef)) throw InvalidArgument("coupling coefficients must be finite");
        merged[{t.x_power, t.y_power}] += t.coef;
    }
    for (const auto& [ab, c] : merged) {
        const auto it = merged.find({ab.second, ab.first});
        const double c2 = it == merged.end() ? 0.0 : it->second;
        if (std::abs(c - c2) > 1e-12 * std::max(1.0, std::abs(c)))
            throw InvalidArgument("coupling polynomial is not symmetric in its arguments");
    }
    for (const auto& [ab, c] : merged)
        if (c != 0.0) terms_.push_back({c, ab.first, ab.second});
}

Coupling Coupling::product(double theta) {
    if (!(theta >= 0.0) || !std::isfinite(theta)) throw InvalidArgument("coupling theta must be finite and >= 0");
    if (theta == 0.0) return Coupling();
    return Coupling({{theta, 1, 1}});
}

double Coupling::operator()(double x, double y) const {
    double v = 0.0;
    for (const auto& t : terms_) v += t.coef * ipow(x, t.x_power) * ipow(y, t.y_power);
    return v;
}

double Coupling::dx(double x, double y) const {
    double v = 0.0;
    for (const auto& t : terms_)
        if (t.x_power > 0) v += t.coef * t.x_power * ipow(x, t.x_power - 1) * ipow(y, t.y_power);
    return v;
}

double Field::operator()(double x) const {
    double v = 0.0;
    for (std::size_t a = coefs_.size(); a-- > 0;) v = v * x + coefs_[a];
    return v;
}

double Field::derivative(double x) const {
    double v = 0.0;
    for (std::size_t a = coefs_.size(); a-- > 1;) v = v * x + static_cast<double>(a) * coefs_[a];
    return v;
}

void PropensityModel::validate() const {
    if (!(q > 0.0 && q < 1.0)) throw InvalidArgument("train-split probability q must lie in (0, 1)");
}

double logistic(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

std::vector<EntryIndex> neighbors(const EntryIndex& s, const Dims& dims) {
    linear_offset(dims, s);
    std::vector<EntryIndex> out;
    for (std::size_t k = 0; k < dims.size(); ++k) {
        if (s[k] > 0) {
            out.push_back(s);
            --out.back()[k];
        }
        if (s[k] + 1 < dims[k]) {
            out.push_back(s);
            ++out.back()[k];
        }
    }
    return out;
}

DenseTensor neighbor_sum(const DenseTensor& x) {
    DenseTensor out(x.dims());
    add_neighbor_sum(x.dims(), x.data(), out.data());
    return out;
}

DenseTensor local_field(const MaskTensor& w, const DenseTensor& b, const PropensityModel& m) {
    require_same(w.dims(), b.dims(), "local_field");
    const Index n = b.size();
    DenseTensor z(b.dims(), 2.0 * field_values(m.field, b.values().array()).matrix());
    if (m.coupling.is_zero()) return z;
    const auto pw = power_table(b, m.coupling, false);
    VectorX<double> tmp(n), ns(n);
    for (const auto& t : m.coupling.terms()) {
        tmp = pw.at(t.y_power).cwiseProduct(w.tensor().values());
        ns.setZero();
        add_neighbor_sum(b.dims(), tmp.data(), ns.data());
        z.values() += (2.0 * t.coef) * pw.at(t.x_power).cwiseProduct(ns);
    }
    return z;
}

double hamiltonian(const MaskTensor& w, const DenseTensor& b, const PropensityModel& m) {
    require_same(w.dims(), b.dims(), "hamiltonian");
    const Dims& dims = b.dims();
    double pair = 0.0;
    double field = 0.0;
    for (Index i = 0; i < b.size(); ++i) {
        field += m.field(b[i]) * w[i];
        for (const auto& nb : neighbors(entry_index(dims, i), dims)) {
            const Index j = linear_offset(dims, nb);
            pair += m.coupling(b[i], b[j]) * w[i] * w[j];
        }
    }
    return -0.5 * pair - field;
}

double conditional_prob(const EntryIndex& s, const MaskTensor& w, const DenseTensor& b, const PropensityModel& m,
                        bool include_q) {
    require_same(w.dims(), b.dims(), "conditional_prob");
    const Index i = linear_offset(b.dims(), s);
    double z = 2.0 * m.field(b[i]);
    for (const auto& nb : neighbors(s, b.dims())) {
        const Index j = linear_offset(b.dims(), nb);
        z += 2.0 * m.coupling(b[i], b[j]) * w[j];
    }
    const double p = logistic(z);
    return include_q ? m.q * p : p;
}

DenseTensor conditional_probs(const MaskTensor& w, const DenseTensor& b, const PropensityModel& m) {
    DenseTensor p = local_field(w, b, m);
    for (Index i = 0; i < p.size(); ++i) p[i] = logistic(p[i]);
    return p;
}

namespace {

// Gradient from the per-entry factor v = dl/dz, chained through the local field.
DenseTensor gradient_from_factor(const MaskTensor& w_tr, const DenseTensor& b, const PropensityModel& m,
                                 const VectorX<double>& v) {
    const Index n = b.size();
    DenseTensor g(b.dims(), (2.0 * field_derivatives(m.field, b.values().array()) * v.array()).matrix());
    if (m.coupling.is_zero()) return g;

    const auto pw = power_table(b, m.coupling, true);
    const auto& w = w_tr.tensor().values();
    VectorX<double> tmp(n), ns_w(n), ns_v(n);
    for (const auto& t : m.coupling.terms()) {
        if (t.x_power == 0) continue;
        const auto& by = pw.at(t.y_power);
        tmp = by.cwiseProduct(w);
        ns_w.setZero();
        add_neighbor_sum(b.dims(), tmp.data(), ns_w.data());
        tmp = by.cwiseProduct(v);
        ns_v.setZero();
        add_neighbor_sum(b.dims(), tmp.data(), ns_v.data());
        g.values() += (2.0 * t.coef * t.x_power) *
                      pw.at(t.x_power - 1).cwiseProduct(v.cwiseProduct(ns_w) + w.cwiseProduct(ns_v));
    }
    return g;
}

// -log of the thinned conditional likelihood of one entry, and its
// derivative with respect to the local field.
struct EntryTerm {
    double loss;
    double dz;
};

inline EntryTerm entry_term(bool observed, double z, double q) {
    const double p = logistic(z);
    const double qp = q * p;
    if (observed) return {-std::log(qp), p - 1.0};
    return {-std::log1p(-qp), (1.0 - p) * qp / (1.0 - qp)};
}

}  // namespace

double neg_pseudo_likelihood(const MaskTensor& w_tr, const DenseTensor& b, const PropensityModel& m) {
    m.validate();
    const DenseTensor z = local_field(w_tr, b, m);
    double l = 0.0;
    for (Index i = 0; i < z.size(); ++i) l += entry_term(w_tr.observed(i), z[i], m.q).loss;
    return l;
}

DenseTensor pseudo_gradient(const MaskTensor& w_tr, const DenseTensor& b, const PropensityModel& m) {
    return pseudo_loss_and_gradient(w_tr, b, m).gradient;
}

PseudoEval pseudo_loss_and_gradient(const MaskTensor& w_tr, const DenseTensor& b, const PropensityModel& m) {
    m.validate();
    const DenseTensor z = local_field(w_tr, b, m);
    VectorX<double> v(z.size());
    double l = 0.0;
    for (Index i = 0; i < z.size(); ++i) {
        const auto t = entry_term(w_tr.observed(i), z[i], m.q);
        l += t.loss;
        v[i] = t.dz;
    }
    return {l, gradient_from_factor(w_tr, b, m, v)};
}

void GibbsSchedule::validate() const {
    if (iters <= 0 || burn_in < 0 || thin <= 0)
        throw InvalidArgument("Gibbs schedule needs iters > 0, burn_in >= 0, thin > 0");
    if (burn_in >= iters) throw InvalidArgument("Gibbs burn_in must be smaller than iters");
    if ((iters - burn_in) % thin != 0)
        throw InvalidArgument("Gibbs thin must divide iters - burn_in (" + std::to_string(iters - burn_in) + ")");
}

namespace {

// Neighbor lists in CSR form plus the parity blocks of the checkerboard.
struct Lattice {
    std::vector<Index> start;
    std::vector<std::uint32_t> adj;
    std::vector<std::uint32_t> block[2];

    explicit Lattice(const Dims& dims) {
        const Index n = num_entries(dims);
        if (n > static_cast<Index>(std::numeric_limits<std::uint32_t>::max()))
            throw InvalidArgument("Gibbs sampler supports at most 2^32 entries");
        const auto st = mode_strides(dims);
        start.reserve(n + 1);
        adj.reserve(2 * dims.size() * n);
        EntryIndex s(dims.size(), 0);
        for (Index i = 0; i < n; ++i) {
            start.push_back(static_cast<Index>(adj.size()));
            Index parity = 0;
            for (std::size_t k = 0; k < dims.size(); ++k) {
                parity += s[k];
                if (s[k] > 0) adj.push_back(static_cast<std::uint32_t>(i - st[k]));
                if (s[k] + 1 < dims[k]) adj.push_back(static_cast<std::uint32_t>(i + st[k]));
            }
            // Odd coordinate sums are swept first.
            block[parity % 2 == 1 ? 0 : 1].push_back(static_cast<std::uint32_t>(i));
            for (std::size_t k = 0; k < dims.size() && ++s[k] == dims[k]; ++k) s[k] = 0;
        }
        start.push_back(static_cast<Index>(adj.size()));
        check_blocks(n);
    }

    void check_blocks(Index n) const {
        std::vector<char> color(n);
        for (int c = 0; c < 2; ++c)
            for (auto i : block[c]) color[i] = static_cast<char>(c);
        for (Index i = 0; i < n; ++i)
            for (Index e = start[i]; e < start[i + 1]; ++e)
                if (color[adj[e]] == color[i])
                    throw std::logic_error("checkerboard block contains neighboring entries");
    }
};

}  // namespace

std::vector<MaskTensor> gibbs_sample(const DenseTensor& b, const PropensityModel& m, const GibbsSchedule& schedule,
                                     std::uint64_t seed) {
    schedule.validate();
    detail::require_observed(b, "gibbs_sample");
    const Index n = b.size();
    const Lattice lat(b.dims());

    // z_i = field2_i + sum_t coef_t(i) * sum_{j~i} ypow_t(j) w_j
    VectorX<double> field2(n);
    for (Index i = 0; i < n; ++i) field2[i] = 2.0 * m.field(b[i]);
    const auto& terms = m.coupling.terms();
    std::vector<VectorX<double>> xcoef, ypow;
    for (const auto& t : terms) {
        VectorX<double> xc(n), yp(n);
        for (Index i = 0; i < n; ++i) {
            xc[i] = 2.0 * t.coef * ipow(b[i], t.x_power);
            yp[i] = ipow(b[i], t.y_power);
        }
        xcoef.push_back(std::move(xc));
        ypow.push_back(std::move(yp));
    }
    const bool product_form = terms.size() == 1;

    std::vector<double> w(n);
    for (Index i = 0; i < n; ++i) w[i] = counter_uniform(seed, 0, static_cast<std::uint64_t>(i)) < logistic(field2[i]) ? 1.0 : -1.0;
    // Products ypow * w per term; product form keeps one running array.
    std::vector<double> yw(product_form ? n : 0);
    if (product_form)
        for (Index i = 0; i < n; ++i) yw[i] = ypow[0][i] * w[i];

    std::vector<MaskTensor> kept;
    kept.reserve(static_cast<std::size_t>(schedule.kept()));
    for (long it = 1; it <= schedule.iters; ++it) {
        for (int c = 0; c < 2; ++c) {
            const auto& blk = lat.block[c];
            const Index bn = static_cast<Index>(blk.size());
#pragma omp parallel for schedule(static) if (bn > 4096)
            for (Index e = 0; e < bn; ++e) {
                const Index i = blk[e];
                double z = field2[i];
                if (product_form) {
                    double acc = 0.0;
                    for (Index a = lat.start[i]; a < lat.start[i + 1]; ++a) acc += yw[lat.adj[a]];
                    z += xcoef[0][i] * acc;
                } else {
                    for (std::size_t t = 0; t < terms.size(); ++t) {
                        double acc = 0.0;
                        for (Index a = lat.start[i]; a < lat.start[i + 1]; ++a) {
                            const auto j = lat.adj[a];
                            acc += ypow[t][j] * w[j];
                        }
                        z += xcoef[t][i] * acc;
                    }
                }
                const double u = counter_uniform(seed, static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(i));
                w[i] = u < logistic(z) ? 1.0 : -1.0;
                if (product_form) yw[i] = ypow[0][i] * w[i];
            }
        }
        if (it > schedule.burn_in && (it - schedule.burn_in) % schedule.thin == 0)
            kept.emplace_back(DenseTensor(b.dims(), Eigen::Map<const VectorX<double>>(w.data(), n)));
    }
    return kept;
}

}  // namespace ctc
