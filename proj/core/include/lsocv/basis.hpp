#pragma once

#include "lsocv/dataset.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace lsocv {

// B-spline basis of order `order` (cubic = 4) on [lower, upper] with
// `interior_knots` interior knots, and a penalty on the integrated squared
// derivative of order `penalty_order`.
struct BasisSpec {
    int order = 4;
    int interior_knots = 10;
    double lower = 0.0;
    double upper = 1.0;
    int penalty_order = 2;
    // Explicit interior knot positions; empty means equally spaced.
    std::vector<double> interior;

    int size() const { return interior_knots + order; }
};

std::vector<double> make_knots(const BasisSpec& spec);

// Values of all basis functions at x; x == upper belongs to the last interval.
Eigen::VectorXd eval_basis(const BasisSpec& spec, double x);
Eigen::MatrixXd basis_matrix(const BasisSpec& spec, const Eigen::VectorXd& x);

// Cox-de Boor on an arbitrary nondecreasing knot vector; returns
// knots.size() - order values.
Eigen::VectorXd eval_bspline(std::span<const double> knots, int order, double x);

// Weighted difference operator mapping order-r coefficients to the
// coefficients of the q-th derivative in the order-(r-q) basis.
Eigen::MatrixXd derivative_operator(const BasisSpec& spec);
// Gram matrix of the order-(r-q) basis on the reduced knot vector.
Eigen::MatrixXd derivative_gram(const BasisSpec& spec);
// S = D' R D, so that b' S b = integral of (f^(q))^2.
Eigen::MatrixXd penalty_matrix(const BasisSpec& spec);

// Gauss-Legendre rule on [-1, 1].
void gauss_legendre(int points, Eigen::VectorXd& nodes, Eigen::VectorXd& weights);

enum class TermKind { Linear, Smooth, VaryingCoefficient };
enum class KnotPlacement { Equal, Quantile };

struct TermSpec {
    TermKind kind = TermKind::Smooth;
    // Linear: the covariate ("1" is an intercept). Smooth: the smoothed covariate.
    // VaryingCoefficient: the index variable of the coefficient function, usually "time".
    std::string covariate;
    // VaryingCoefficient only: the multiplying covariate, "1" for the baseline curve.
    std::string modifier = "1";
    BasisSpec basis;
    // Replace basis.lower/upper with the observed covariate range.
    bool domain_from_data = false;
    KnotPlacement placement = KnotPlacement::Equal;

    static TermSpec linear(std::string covariate);
    static TermSpec smooth(std::string covariate, BasisSpec basis);
    static TermSpec varying(std::string index, std::string modifier, BasisSpec basis);
};

struct TermBlock {
    TermSpec spec;  // with the resolved basis domain and knots
    Eigen::Index first_column = 0;
    Eigen::Index columns = 0;
    // Maps the block's coefficients to raw spline coefficients (identity for
    // uncentered blocks, the null space of the sum-to-zero constraint otherwise).
    Eigen::MatrixXd contrast;
    int penalty = -1;  // index into DesignAssembly::penalties, -1 if unpenalized

    bool has_curve() const { return spec.kind != TermKind::Linear; }
};

struct DesignAssembly {
    Eigen::MatrixXd X;
    std::vector<TermBlock> terms;
    std::vector<Eigen::MatrixXd> penalties;  // p x p, zero outside the owning block

    Eigen::Index p() const { return X.cols(); }
    std::size_t penalty_count() const { return penalties.size(); }

    // Design rows for the given subjects (offsets from the source dataset).
    Eigen::MatrixXd rows_for(std::span<const std::size_t> subjects,
                             const std::vector<Eigen::Index>& offsets) const;

    // Evaluates the fitted curve of a smooth or varying-coefficient term.
    Eigen::VectorXd term_curve(std::size_t term, const Eigen::VectorXd& beta,
                               const Eigen::VectorXd& grid) const;
    Eigen::MatrixXd term_curve_matrix(std::size_t term, const Eigen::VectorXd& grid) const;
};

// A global intercept is added when a smooth term exists and no other term
// already spans the constants; every smooth term is then centered.
DesignAssembly assemble_design(const LongitudinalDataset& data, std::span<const TermSpec> terms);

}  // namespace lsocv
