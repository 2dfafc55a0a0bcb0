#include "lsocv/criteria.hpp"

#include "lsocv/errors.hpp"

#include <cmath>
#include <numeric>

namespace lsocv {

double lsocv_exact(const FitResult& fit) {
    double total = 0.0;
    const auto& off = fit.offsets();
    for (std::size_t i = 0; i < fit.n(); ++i) {
        const Eigen::MatrixXd& A = fit.hat_blocks[i];
        const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(A.rows(), A.cols()) - A;
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
        const auto& sv = svd.singularValues();
        if (!(sv(sv.size() - 1) > 0.0) || sv(0) / sv(sv.size() - 1) > kMaxLeverageCondition)
            throw LeverageSaturationError("I - A_ii is singular for subject " + std::to_string(i) +
                                          "; the subject determines its own fit");
        const Eigen::VectorXd r = fit.residuals.segment(off[i], A.rows());
        total += M.partialPivLu().solve(r).squaredNorm();
    }
    return total / static_cast<double>(fit.n());
}

double lsocv_brute(const PenalizedSystem& system, const Eigen::VectorXd& lambda) {
    const std::size_t n = system.n();
    if (n < 2) throw InvalidArgument("leave-subject-out CV needs at least two subjects");
    std::vector<std::size_t> keep(n - 1);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::iota(keep.begin(), keep.begin() + static_cast<std::ptrdiff_t>(i), std::size_t{0});
        std::iota(keep.begin() + static_cast<std::ptrdiff_t>(i), keep.end(), i + 1);
        const PenalizedSystem rest = system.subset(keep);
        const NormalFactor f = rest.factor(lambda);
        if (f.ridged) throw SingularSystemError("leaving out subject " + std::to_string(i) + " makes the fit singular");
        const Eigen::VectorXd beta = f.solve(rest.cross());
        const Eigen::Index o = system.offsets()[i], len = system.rows_of(i);
        total += (system.y().segment(o, len) - system.X().middleRows(o, len) * beta).squaredNorm();
    }
    return total / static_cast<double>(n);
}

double lsocv_brute(const LongitudinalDataset& data, const DesignAssembly& design, const CorrelationModel& model,
                   const Eigen::VectorXd& lambda) {
    return lsocv_brute(PenalizedSystem::build(data, design, working_blocks(model, data)), lambda);
}

double lsocv_star(const FitResult& fit) {
    const auto& off = fit.offsets();
    double inflation = 0.0;
    for (std::size_t i = 0; i < fit.n(); ++i) {
        const Eigen::VectorXd e = fit.residuals.segment(off[i], fit.hat_blocks[i].rows());
        inflation += e.dot(fit.hat_blocks[i] * e);
    }
    return (fit.residuals.squaredNorm() + 2.0 * inflation) / static_cast<double>(fit.n());
}

double v_star(const FitResult& fit) {
    const double N = static_cast<double>(fit.N());
    if (!(fit.trace_A < N * (1.0 - 1e-10))) throw InvalidArgument("V* requires tr(A) < N");
    const auto& sys = *fit.system;
    double weighted_rss = 0.0;
    for (std::size_t i = 0; i < sys.n(); ++i) {
        const Eigen::Index o = sys.offsets()[i], len = sys.rows_of(i);
        weighted_rss += sys.blocks()[i].whiten(Eigen::MatrixXd(fit.residuals.segment(o, len))).squaredNorm();
    }
    return std::log(weighted_rss / N) + sys.log_det_W() / N + 2.0 * fit.trace_A / (N - fit.trace_A);
}

OracleScores oracle_scores(const FitResult& fit, const Eigen::VectorXd& mu_true,
                           const std::vector<Eigen::MatrixXd>& sigma_true) {
    const auto& sys = *fit.system;
    if (mu_true.size() != fit.N()) throw InvalidArgument("true mean has wrong length");
    if (sigma_true.size() != sys.n()) throw InvalidArgument("need one true covariance block per subject");
    const double n = static_cast<double>(fit.n());

    // tr(A Sigma) = tr(H^{-1} sum_i X_i' W_i^{-1} Sigma_i X_i)
    // tr(A' A Sigma) = tr(H^{-1} X'X H^{-1} sum_i X_i' W_i^{-1} Sigma_i W_i^{-1} X_i)
    const Eigen::Index p = sys.p();
    Eigen::MatrixXd M1 = Eigen::MatrixXd::Zero(p, p), M2 = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t i = 0; i < sys.n(); ++i) {
        const Eigen::Index o = sys.offsets()[i], len = sys.rows_of(i);
        if (sigma_true[i].rows() != len || sigma_true[i].cols() != len)
            throw InvalidArgument("true covariance block " + std::to_string(i) + " has wrong size");
        const auto Xw = sys.XW().middleRows(o, len);
        const Eigen::MatrixXd SXw = sigma_true[i] * Xw;
        M1.noalias() += Xw.transpose() * sigma_true[i] * sys.X().middleRows(o, len);
        M2.noalias() += Xw.transpose() * SXw;
    }
    const double tr_A_sigma = fit.factor->solve(M1).trace();
    const Eigen::MatrixXd HiXtX = fit.factor->solve(Eigen::MatrixXd(sys.X().transpose() * sys.X()));
    const double tr_AtA_sigma = (HiXtX * fit.factor->solve(M2)).trace();

    OracleScores s;
    s.loss = (fit.fitted - mu_true).squaredNorm() / n;
    const Eigen::VectorXd bias = mu_true - fit.apply_hat(mu_true);
    s.risk = (bias.squaredNorm() + tr_AtA_sigma) / n;
    s.u_score = (fit.residuals.squaredNorm() + 2.0 * tr_A_sigma) / n;
    return s;
}

CriterionReport criterion_report(const FitResult& fit) {
    CriterionReport r;
    r.lsocv = lsocv_exact(fit);
    r.lsocv_star = lsocv_star(fit);
    if (fit.trace_A < static_cast<double>(fit.N()) * (1.0 - 1e-10)) r.v_star = v_star(fit);
    return r;
}

CriterionReport criterion_report(const FitResult& fit, const Eigen::VectorXd& mu_true,
                                 const std::vector<Eigen::MatrixXd>& sigma_true) {
    CriterionReport r = criterion_report(fit);
    const OracleScores s = oracle_scores(fit, mu_true, sigma_true);
    r.loss = s.loss;
    r.risk = s.risk;
    r.u_score = s.u_score;
    return r;
}

}  // namespace lsocv
