#pragma once

#include "lsocv/dataset.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <variant>
#include <vector>

namespace lsocv {

struct Independence {};
struct CompoundSymmetry {
    double rho = 0.0;
};
struct Ar1 {
    double rho = 0.0;
};
// Correlation rho at lag one, zero beyond (a truncated compound symmetry).
struct LagOneBand {
    double rho = 0.0;
};
struct Unstructured {
    Eigen::MatrixXd corr;  // common grid: every subject must have corr.rows() observations
};
// gamma(u) = alpha + (1 - alpha) exp(-theta u) for time lag u > 0.
struct ExponentialNugget {
    double alpha = 0.0;
    double theta = 1.0;
};

using CorrelationModel =
    std::variant<Independence, CompoundSymmetry, Ar1, LagOneBand, Unstructured, ExponentialNugget>;

// Short tag: "ind", "cs", "ar1", "lag1", "un", "exp".
std::string structure_name(const CorrelationModel& model);

inline constexpr double kMaxWorkingCondition = 1e10;

// An SPD working correlation block with its Cholesky factor. Immutable once built.
class WorkingBlock {
public:
    explicit WorkingBlock(Eigen::MatrixXd corr);

    Eigen::Index size() const { return w_.rows(); }
    const Eigen::MatrixXd& matrix() const { return w_; }
    const Eigen::MatrixXd& cholesky_lower() const { return l_; }
    double log_det() const { return log_det_; }
    double condition_number() const { return condition_; }
    bool is_identity() const { return identity_; }

    // W^{-1} B via two triangular solves.
    Eigen::MatrixXd solve(const Eigen::MatrixXd& B) const;
    Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
    // L^{-1} B with W = L L'.
    Eigen::MatrixXd whiten(const Eigen::MatrixXd& B) const;
    Eigen::MatrixXd inverse() const;

private:
    Eigen::MatrixXd w_;
    Eigen::MatrixXd l_;
    double log_det_ = 0.0;
    double condition_ = 1.0;
    bool identity_ = false;
};

Eigen::MatrixXd correlation_matrix(const CorrelationModel& model, std::span<const double> times);
WorkingBlock working_block(const CorrelationModel& model, std::span<const double> times);
// Index times 1..size, for structures that only use the position within the subject.
WorkingBlock working_block(const CorrelationModel& model, Eigen::Index size);

Eigen::MatrixXd solve_block(const WorkingBlock& block, const Eigen::MatrixXd& B);

// One block per subject; observation times are used when the dataset has them.
std::vector<WorkingBlock> working_blocks(const CorrelationModel& model, const LongitudinalDataset& data);

struct LagBin {
    double lag = 0.0;          // mean lag of the pairs in the bin
    double correlation = 0.0;  // empirical residual correlation
    std::size_t pairs = 0;
};

struct ExponentialFit {
    double alpha = 0.0;
    double theta = 0.0;
    bool boundary_hit = false;
    std::vector<LagBin> bins;
};

// Empirical lag correlations of residuals, binned with width equal to the
// median gap between distinct observed lags.
std::vector<LagBin> binned_lag_correlations(std::span<const Eigen::VectorXd> residuals,
                                            std::span<const Eigen::VectorXd> times);

// Least-squares fit of gamma(u; alpha, theta) to binned correlations.
ExponentialFit fit_exponential_to_bins(std::vector<LagBin> bins);

ExponentialFit estimate_exponential_params(std::span<const Eigen::VectorXd> residuals,
                                           std::span<const Eigen::VectorXd> times);

}  // namespace lsocv
