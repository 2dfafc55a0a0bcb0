#pragma once

#include "lsocv/errors.hpp"
#include "lsocv/estimator.hpp"

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lsocv {

// LsoCV* as a function of eta = log(lambda), with exact first and second
// derivatives obtained by differentiating beta(eta) through the penalized
// normal equations. Cost per evaluation is linear in N for fixed p.
class LsocvStarObjective {
public:
    explicit LsocvStarObjective(std::shared_ptr<const PenalizedSystem> system);

    struct Evaluation {
        double value = 0.0;
        Eigen::VectorXd gradient;
        Eigen::MatrixXd hessian;
        bool ridged = false;
    };

    double value(const Eigen::VectorXd& eta) const;
    Evaluation evaluate(const Eigen::VectorXd& eta) const;

    const PenalizedSystem& system() const { return *system_; }

private:
    std::shared_ptr<const PenalizedSystem> system_;
};

struct OptimizerConfig {
    std::optional<Eigen::VectorXd> eta0;  // default: best of the start grid below
    // Start grid: start_points per dimension spanning +-start_span around
    // lambda_k tr(S_k) = tr(X'X) / m, shrunk to stay within start_cap evaluations.
    int start_points = 25;
    double start_span = 12.0;
    double start_cap = 1000.0;
    int max_iter = 50;
    double grad_tol = 1e-6;
    int step_halvings_max = 20;
    double hessian_ridge_floor = 1e-8;  // relative eigenvalue floor
    double fd_step = 1e-4;
    double eta_min = -25.0;
    double eta_max = 25.0;
    // Each eta_k is also kept within eta_span of the trace-balancing point; further
    // out the penalty swamps X'W^{-1}X (or vanishes against it) and LsoCV* is flat
    // up to rounding.
    double eta_span = 15.0;
    double max_step = 5.0;  // cap on |Newton step|_inf in eta units
    bool probe_bounds = true;  // after convergence, move to a bound if that does not raise LsoCV*
};

enum class Termination { Converged, MaxIterations, Stalled };
std::string to_string(Termination t);

struct IterationRecord {
    Eigen::VectorXd eta;
    double value = 0.0;
    double grad_norm = 0.0;
    int halvings = 0;
};

struct OptimizerTrace {
    std::vector<IterationRecord> iterations;
    Termination reason = Termination::Converged;
    Eigen::VectorXd eta_lower, eta_upper;  // effective bounds of the search
    std::vector<bool> at_lower;  // eta_k pinned at its lower bound on exit
    std::vector<bool> at_upper;
    bool boundary_hit() const;
};

struct LambdaFit {
    Eigen::VectorXd lambda;
    Eigen::VectorXd eta;
    double value = 0.0;
    OptimizerTrace trace;
};

class StallError : public NumericalError {
public:
    StallError(const std::string& what, OptimizerTrace trace) : NumericalError(what), trace_(std::move(trace)) {}
    const OptimizerTrace& trace() const { return trace_; }

private:
    OptimizerTrace trace_;
};

Eigen::VectorXd default_eta0(const PenalizedSystem& system);

LambdaFit optimize_lambda(std::shared_ptr<const PenalizedSystem> system, const OptimizerConfig& config = {});
LambdaFit optimize_lambda(const LongitudinalDataset& data, const DesignAssembly& design, const CorrelationModel& model,
                          const OptimizerConfig& config = {});

// Central finite-difference gradient of LsoCV* in eta (verification aid).
Eigen::VectorXd finite_difference_gradient(const LsocvStarObjective& objective, const Eigen::VectorXd& eta,
                                           double step);

enum class GridCriterion { LsocvStar, LsocvExact };

struct GridSpec {
    std::vector<Eigen::VectorXd> values;  // lambda values per penalty
    GridCriterion criterion = GridCriterion::LsocvStar;
    std::size_t cap = 100000;
};

struct GridResult {
    Eigen::VectorXd lambda;
    std::vector<std::size_t> index;  // position of the minimizer in each dimension
    double value = 0.0;
    std::vector<double> values;  // every grid value, first dimension varying slowest
};

// count log-spaced points from lo to hi inclusive.
Eigen::VectorXd log_grid(double lo, double hi, int count);

GridResult grid_search(std::shared_ptr<const PenalizedSystem> system, const GridSpec& grid);
GridResult grid_search(const LongitudinalDataset& data, const DesignAssembly& design, const CorrelationModel& model,
                       const GridSpec& grid);

// Export as CSV rows: iteration, eta_1..eta_m, value, grad_norm, halvings.
std::string trace_csv(const OptimizerTrace& trace);

}  // namespace lsocv
