#include "lsocv/basis.hpp"

#include "lsocv/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lsocv {

namespace {

void validate(const BasisSpec& spec) {
    if (spec.order < 1) throw InvalidArgument("spline order must be >= 1");
    if (spec.interior_knots < 0) throw InvalidArgument("interior knot count must be >= 0");
    if (!(spec.lower < spec.upper)) throw InvalidArgument("basis domain requires lower < upper");
    if (!spec.interior.empty() &&
        static_cast<int>(spec.interior.size()) != spec.interior_knots)
        throw InvalidArgument("explicit interior knots do not match interior_knots");
}

void validate_penalty(const BasisSpec& spec) {
    validate(spec);
    if (spec.penalty_order < 1 || spec.penalty_order >= spec.order)
        throw InvalidArgument("penalty order q must satisfy 1 <= q <= order - 1");
}

// Index of the half-open knot interval containing x; x at the right end maps to
// the last nonempty interval.
std::size_t find_span(std::span<const double> t, double x) {
    std::size_t span = t.size();
    for (std::size_t j = 0; j + 1 < t.size(); ++j) {
        if (t[j] < t[j + 1]) {
            if (t[j] <= x && x < t[j + 1]) return j;
            span = j;  // last nonempty interval seen so far
        }
    }
    if (span < t.size() && x == t[span + 1]) return span;
    return t.size();
}

}  // namespace

TermSpec TermSpec::linear(std::string covariate) {
    TermSpec t;
    t.kind = TermKind::Linear;
    t.covariate = std::move(covariate);
    return t;
}

TermSpec TermSpec::smooth(std::string covariate, BasisSpec basis) {
    TermSpec t;
    t.kind = TermKind::Smooth;
    t.covariate = std::move(covariate);
    t.basis = std::move(basis);
    return t;
}

TermSpec TermSpec::varying(std::string index, std::string modifier, BasisSpec basis) {
    TermSpec t;
    t.kind = TermKind::VaryingCoefficient;
    t.covariate = std::move(index);
    t.modifier = std::move(modifier);
    t.basis = std::move(basis);
    return t;
}

std::vector<double> make_knots(const BasisSpec& spec) {
    validate(spec);
    std::vector<double> t;
    t.reserve(static_cast<std::size_t>(spec.interior_knots + 2 * spec.order));
    t.insert(t.end(), static_cast<std::size_t>(spec.order), spec.lower);
    if (!spec.interior.empty()) {
        double prev = spec.lower;
        for (double k : spec.interior) {
            if (!(k > prev) || !(k < spec.upper))
                throw InvalidArgument("interior knots must be increasing and inside the domain");
            t.push_back(k);
            prev = k;
        }
    } else {
        const double h = (spec.upper - spec.lower) / (spec.interior_knots + 1);
        for (int j = 1; j <= spec.interior_knots; ++j) t.push_back(spec.lower + j * h);
    }
    t.insert(t.end(), static_cast<std::size_t>(spec.order), spec.upper);
    return t;
}

Eigen::VectorXd eval_bspline(std::span<const double> t, int order, double x) {
    const auto m = static_cast<Eigen::Index>(t.size());
    if (order < 1 || m < order + 1) throw InvalidArgument("knot vector too short for spline order");
    Eigen::VectorXd b = Eigen::VectorXd::Zero(m - 1);
    const std::size_t span = find_span(t, x);
    if (span == t.size()) return Eigen::VectorXd::Zero(m - order);
    b(static_cast<Eigen::Index>(span)) = 1.0;
    for (int k = 2; k <= order; ++k) {
        for (Eigen::Index j = 0; j < m - k; ++j) {
            const double d1 = t[j + k - 1] - t[j];
            const double d2 = t[j + k] - t[j + 1];
            double v = 0.0;
            if (d1 > 0.0) v += (x - t[j]) / d1 * b(j);
            if (d2 > 0.0) v += (t[j + k] - x) / d2 * b(j + 1);
            b(j) = v;
        }
    }
    return b.head(m - order);
}

Eigen::VectorXd eval_basis(const BasisSpec& spec, double x) {
    validate(spec);
    if (!(x >= spec.lower && x <= spec.upper))
        throw InvalidArgument("x = " + std::to_string(x) + " outside basis domain [" +
                              std::to_string(spec.lower) + ", " + std::to_string(spec.upper) + "]");
    const auto t = make_knots(spec);
    return eval_bspline(t, spec.order, x);
}

Eigen::MatrixXd basis_matrix(const BasisSpec& spec, const Eigen::VectorXd& x) {
    validate(spec);
    const auto t = make_knots(spec);
    Eigen::MatrixXd B(x.size(), spec.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (!(x(i) >= spec.lower && x(i) <= spec.upper))
            throw InvalidArgument("x = " + std::to_string(x(i)) + " outside basis domain");
        B.row(i) = eval_bspline(t, spec.order, x(i)).transpose();
    }
    return B;
}

void gauss_legendre(int points, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
    if (points < 1) throw InvalidArgument("quadrature needs at least one node");
    nodes.resize(points);
    weights.resize(points);
    for (int i = 0; i < points; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (points + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int k = 1; k <= points; ++k) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
            }
            dp = points * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        nodes(i) = -z;
        weights(i) = 2.0 / ((1.0 - z * z) * dp * dp);
    }
}

Eigen::MatrixXd derivative_operator(const BasisSpec& spec) {
    validate_penalty(spec);
    const auto t = make_knots(spec);
    Eigen::MatrixXd D = Eigen::MatrixXd::Identity(spec.size(), spec.size());
    for (int step = 0; step < spec.penalty_order; ++step) {
        const int k = spec.order - step;          // order of the spline being differentiated
        const Eigen::Index P = spec.size() - step; // its coefficient count
        Eigen::MatrixXd Dk = Eigen::MatrixXd::Zero(P - 1, P);
        for (Eigen::Index j = 0; j + 1 < P; ++j) {
            // knots of the order-k spline are t[step .. ]
            const double span = t[step + j + k] - t[step + j + 1];
            const double w = (k - 1) / span;
            Dk(j, j) = -w;
            Dk(j, j + 1) = w;
        }
        D = Dk * D;
    }
    return D;
}

Eigen::MatrixXd derivative_gram(const BasisSpec& spec) {
    validate_penalty(spec);
    const auto t = make_knots(spec);
    const int q = spec.penalty_order;
    const int low = spec.order - q;
    const std::span<const double> reduced(t.data() + q, t.size() - 2 * static_cast<std::size_t>(q));
    const Eigen::Index P = static_cast<Eigen::Index>(reduced.size()) - low;
    Eigen::VectorXd nodes, weights;
    gauss_legendre(low, nodes, weights);
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(P, P);
    for (std::size_t s = 0; s + 1 < reduced.size(); ++s) {
        const double a = reduced[s], b = reduced[s + 1];
        if (!(b > a)) continue;
        const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
        for (Eigen::Index g = 0; g < nodes.size(); ++g) {
            const Eigen::VectorXd v = eval_bspline(reduced, low, mid + half * nodes(g));
            R.noalias() += (half * weights(g)) * v * v.transpose();
        }
    }
    return R;
}

Eigen::MatrixXd penalty_matrix(const BasisSpec& spec) {
    const Eigen::MatrixXd D = derivative_operator(spec);
    const Eigen::MatrixXd R = derivative_gram(spec);
    Eigen::MatrixXd S = D.transpose() * R * D;
    return 0.5 * (S + S.transpose());
}

Eigen::MatrixXd DesignAssembly::rows_for(std::span<const std::size_t> subjects,
                                         const std::vector<Eigen::Index>& offsets) const {
    Eigen::Index rows = 0;
    for (auto i : subjects) rows += offsets.at(i + 1) - offsets.at(i);
    Eigen::MatrixXd out(rows, X.cols());
    Eigen::Index r = 0;
    for (auto i : subjects) {
        const Eigen::Index len = offsets[i + 1] - offsets[i];
        out.middleRows(r, len) = X.middleRows(offsets[i], len);
        r += len;
    }
    return out;
}

Eigen::MatrixXd DesignAssembly::term_curve_matrix(std::size_t term, const Eigen::VectorXd& grid) const {
    const TermBlock& block = terms.at(term);
    if (!block.has_curve()) throw InvalidArgument("linear terms have no coefficient curve");
    return basis_matrix(block.spec.basis, grid) * block.contrast;
}

Eigen::VectorXd DesignAssembly::term_curve(std::size_t term, const Eigen::VectorXd& beta,
                                           const Eigen::VectorXd& grid) const {
    if (beta.size() != p()) throw InvalidArgument("coefficient vector has wrong length");
    const TermBlock& block = terms.at(term);
    return term_curve_matrix(term, grid) * beta.segment(block.first_column, block.columns);
}

namespace {

bool spans_constants(const TermSpec& t) {
    return (t.kind == TermKind::Linear && t.covariate == "1") ||
           (t.kind == TermKind::VaryingCoefficient && t.modifier == "1");
}

Eigen::VectorXd covariate_or_ones(const LongitudinalDataset& data, const std::string& name) {
    if (name == "1") return Eigen::VectorXd::Ones(data.total_obs());
    if (!data.has_covariate(name)) throw InvalidArgument("missing covariate '" + name + "'");
    return data.column(name);
}

BasisSpec resolve_basis(const TermSpec& term, const Eigen::VectorXd& x) {
    BasisSpec spec = term.basis;
    if (term.domain_from_data) {
        spec.lower = x.minCoeff();
        spec.upper = x.maxCoeff();
        if (!(spec.lower < spec.upper))
            throw InvalidArgument("covariate '" + term.covariate + "' is constant; cannot place knots");
    }
    if (term.placement == KnotPlacement::Quantile && spec.interior.empty() && spec.interior_knots > 0) {
        std::vector<double> sorted(x.data(), x.data() + x.size());
        std::sort(sorted.begin(), sorted.end());
        const auto last = static_cast<double>(sorted.size() - 1);
        for (int k = 1; k <= spec.interior_knots; ++k) {
            const double pos = last * k / (spec.interior_knots + 1);
            const auto lo = static_cast<std::size_t>(std::floor(pos));
            const auto hi = std::min(lo + 1, sorted.size() - 1);
            spec.interior.push_back(sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]));
        }
    }
    for (Eigen::Index i = 0; i < x.size(); ++i)
        if (!(x(i) >= spec.lower && x(i) <= spec.upper))
            throw InvalidArgument("covariate '" + term.covariate + "' value " + std::to_string(x(i)) +
                                  " outside term domain");
    return spec;
}

// Orthonormal basis of {b : 1' B b = 0}, i.e. coefficients whose curve sums
// to zero over the observed covariate values.
Eigen::MatrixXd centering_contrast(const Eigen::MatrixXd& B) {
    const Eigen::VectorXd c = B.colwise().sum().transpose();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(c);
    const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(c.size(), c.size());
    return Q.rightCols(c.size() - 1);
}

}  // namespace

DesignAssembly assemble_design(const LongitudinalDataset& data, std::span<const TermSpec> terms) {
    if (terms.empty()) throw InvalidArgument("model has no terms");
    const Eigen::Index N = data.total_obs();

    std::vector<TermSpec> all;
    const bool any_smooth = std::any_of(terms.begin(), terms.end(),
                                        [](const TermSpec& t) { return t.kind == TermKind::Smooth; });
    const bool has_constant = std::any_of(terms.begin(), terms.end(), spans_constants);
    if (any_smooth && !has_constant) all.push_back(TermSpec::linear("1"));
    all.insert(all.end(), terms.begin(), terms.end());

    std::vector<Eigen::MatrixXd> columns;
    DesignAssembly out;
    Eigen::Index p = 0;
    for (const auto& term : all) {
        TermBlock block;
        block.spec = term;
        block.first_column = p;
        if (term.kind == TermKind::Linear) {
            columns.emplace_back(covariate_or_ones(data, term.covariate));
            block.columns = 1;
        } else {
            if (term.kind == TermKind::VaryingCoefficient && term.covariate == "1")
                throw InvalidArgument("varying-coefficient index variable cannot be the constant");
            const Eigen::VectorXd x = covariate_or_ones(data, term.covariate);
            block.spec.basis = resolve_basis(term, x);
            Eigen::MatrixXd B = basis_matrix(block.spec.basis, x);
            if (term.kind == TermKind::Smooth) {
                block.contrast = centering_contrast(B);
                B = B * block.contrast;
            } else {
                block.contrast = Eigen::MatrixXd::Identity(B.cols(), B.cols());
                B = covariate_or_ones(data, term.modifier).asDiagonal() * B;
            }
            block.columns = B.cols();
            columns.push_back(std::move(B));
        }
        p += block.columns;
        out.terms.push_back(std::move(block));
    }

    out.X.resize(N, p);
    for (std::size_t k = 0; k < columns.size(); ++k)
        out.X.middleCols(out.terms[k].first_column, out.terms[k].columns) = columns[k];

    for (auto& block : out.terms) {
        if (!block.has_curve()) continue;
        const Eigen::MatrixXd S = penalty_matrix(block.spec.basis);
        Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(p, p);
        padded.block(block.first_column, block.first_column, block.columns, block.columns) =
            block.contrast.transpose() * S * block.contrast;
        block.penalty = static_cast<int>(out.penalties.size());
        out.penalties.push_back(std::move(padded));
    }
    return out;
}

}  // namespace lsocv
