#pragma once

#include "lsocv/estimator.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace lsocv {

inline constexpr double kMaxLeverageCondition = 1e12;

// Leave-subject-out CV through the per-subject shortcut
// (1/n) sum_i |(I - A_ii)^{-1} (y_i - yhat_i)|^2.
double lsocv_exact(const FitResult& fit);

// Literal definition: n refits, each omitting one subject. Verification only.
double lsocv_brute(const PenalizedSystem& system, const Eigen::VectorXd& lambda);
double lsocv_brute(const LongitudinalDataset& data, const DesignAssembly& design, const CorrelationModel& model,
                   const Eigen::VectorXd& lambda);

// First-order approximation (1/n)|e|^2 + (2/n) sum_i e_i' A_ii e_i.
double lsocv_star(const FitResult& fit);

// Gu-Han criterion for a fixed working correlation W:
// log(|W^{-1/2}(I - A) Y|^2 / N) + log|W| / N + 2 tr(A) / (N - tr(A)).
double v_star(const FitResult& fit);

struct OracleScores {
    double loss = 0.0;     // (1/n)|A Y - mu|^2
    double risk = 0.0;     // (1/n)|(I - A) mu|^2 + (1/n) tr(A' A Sigma)
    double u_score = 0.0;  // (1/n)|(I - A) Y|^2 + (2/n) tr(A Sigma)
};

// Simulation-only diagnostics: need the true mean and per-subject covariance blocks.
OracleScores oracle_scores(const FitResult& fit, const Eigen::VectorXd& mu_true,
                           const std::vector<Eigen::MatrixXd>& sigma_true);

struct CriterionReport {
    double lsocv = 0.0;
    double lsocv_star = 0.0;
    std::optional<double> v_star;
    std::optional<double> loss;
    std::optional<double> risk;
    std::optional<double> u_score;
};

CriterionReport criterion_report(const FitResult& fit);
CriterionReport criterion_report(const FitResult& fit, const Eigen::VectorXd& mu_true,
                                 const std::vector<Eigen::MatrixXd>& sigma_true);

}  // namespace lsocv
