#pragma once

#include "lsocv/basis.hpp"
#include "lsocv/correlation.hpp"
#include "lsocv/dataset.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace lsocv {

// Cholesky factor of H = X' W^{-1} X + sum_k lambda_k S_k.
struct NormalFactor {
    Eigen::LLT<Eigen::MatrixXd> llt;
    bool ridged = false;  // a small diagonal ridge was needed to factor H

    Eigen::MatrixXd solve(const Eigen::MatrixXd& B) const { return llt.solve(B); }
    Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return llt.solve(b); }
};

// Everything about a penalized weighted least-squares problem that does not
// depend on lambda: whitened cross products and per-subject blocks. W is never
// formed as an N x N matrix.
class PenalizedSystem {
public:
    PenalizedSystem(Eigen::MatrixXd X, Eigen::VectorXd y, std::vector<Eigen::Index> offsets,
                    std::vector<WorkingBlock> blocks, std::vector<Eigen::MatrixXd> penalties);

    static PenalizedSystem build(const LongitudinalDataset& data, const DesignAssembly& design,
                                 std::vector<WorkingBlock> blocks);

    std::size_t n() const { return blocks_.size(); }
    Eigen::Index N() const { return X_.rows(); }
    Eigen::Index p() const { return X_.cols(); }
    std::size_t m() const { return penalties_.size(); }

    const Eigen::MatrixXd& X() const { return X_; }
    const Eigen::MatrixXd& XW() const { return Xw_; }  // W^{-1} X, stacked
    const Eigen::VectorXd& y() const { return y_; }
    const Eigen::VectorXd& Wy() const { return Wy_; }  // W^{-1} y, stacked
    const Eigen::MatrixXd& gram() const { return gram_; }  // X' W^{-1} X
    const Eigen::VectorXd& cross() const { return cross_; }  // X' W^{-1} y
    double weighted_yy() const { return yWy_; }
    const std::vector<Eigen::Index>& offsets() const { return offsets_; }
    const std::vector<WorkingBlock>& blocks() const { return blocks_; }
    const std::vector<Eigen::MatrixXd>& penalties() const { return penalties_; }
    double log_det_W() const;

    Eigen::Index rows_of(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }

    Eigen::MatrixXd penalized_gram(const Eigen::VectorXd& lambda) const;
    NormalFactor factor(const Eigen::VectorXd& lambda) const;

    // Same design restricted to (possibly repeated) subjects.
    PenalizedSystem subset(std::span<const std::size_t> subjects) const;
    // Same design and weights with a different response vector.
    PenalizedSystem with_response(const Eigen::VectorXd& y) const;

private:
    Eigen::MatrixXd X_, Xw_, gram_;
    Eigen::VectorXd y_, Wy_, cross_;
    double yWy_ = 0.0;
    std::vector<Eigen::Index> offsets_;
    std::vector<WorkingBlock> blocks_;
    std::vector<Eigen::MatrixXd> penalties_;
};

struct FitResult {
    Eigen::VectorXd beta;
    Eigen::VectorXd fitted;
    Eigen::VectorXd residuals;
    std::vector<Eigen::MatrixXd> hat_blocks;  // A_ii = X_i H^{-1} X_i' W_i^{-1}
    double trace_A = 0.0;
    Eigen::VectorXd lambda;
    std::optional<CorrelationModel> correlation;
    bool ridge_applied = false;

    std::shared_ptr<const PenalizedSystem> system;
    std::shared_ptr<const NormalFactor> factor;

    std::size_t n() const { return hat_blocks.size(); }
    Eigen::Index N() const { return fitted.size(); }
    const std::vector<Eigen::Index>& offsets() const { return system->offsets(); }
    // A v, computed as X H^{-1} X' W^{-1} v.
    Eigen::VectorXd apply_hat(const Eigen::VectorXd& v) const;
};

FitResult fit(std::shared_ptr<const PenalizedSystem> system, const Eigen::VectorXd& lambda);
FitResult fit(const LongitudinalDataset& data, const DesignAssembly& design,
              std::vector<WorkingBlock> blocks, const Eigen::VectorXd& lambda);
FitResult fit(const LongitudinalDataset& data, const DesignAssembly& design,
              const CorrelationModel& model, const Eigen::VectorXd& lambda);

inline constexpr double kLeverageWarningRatio = 10.0;

struct LeverageReport {
    Eigen::VectorXd subject_leverage;  // tr(A_ii)
    double mean = 0.0;                 // tr(A) / n
    double max_to_mean = 0.0;
    bool warning = false;              // max_to_mean > kLeverageWarningRatio
};

LeverageReport leverage_diagnostics(const FitResult& fit);

struct BootstrapOptions {
    int replicates = 1000;
    double level = 0.95;
    int grid_points = 100;
    std::uint64_t seed = 1;
    unsigned threads = 1;
};

struct CurveBand {
    std::size_t term = 0;  // index into DesignAssembly::terms
    Eigen::VectorXd grid;
    Eigen::VectorXd estimate;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    Eigen::VectorXd width() const { return upper - lower; }
};

struct BootstrapResult {
    std::vector<CurveBand> bands;
    int replicates_used = 0;
    int dropped = 0;
};

// Pointwise percentile intervals for every curve term from a cluster bootstrap
// (subjects resampled with replacement, lambda and working model held fixed).
BootstrapResult bootstrap_ci(const LongitudinalDataset& data, const DesignAssembly& design,
                             const CorrelationModel& model, const Eigen::VectorXd& lambda,
                             const BootstrapOptions& options);

// Type-7 (linear interpolation) sample quantile.
double empirical_quantile(std::vector<double> values, double prob);

}  // namespace lsocv
