#pragma once

#include "lsocv/correlation.hpp"
#include "lsocv/estimator.hpp"
#include "lsocv/optimizer.hpp"

#include <optional>
#include <string>
#include <vector>

namespace lsocv {

enum class LambdaPolicy { Zero, Optimize };
enum class SelectionCriterion { LsocvExact, LsocvStar };

struct CandidateScore {
    CorrelationModel model;
    std::optional<double> lsocv;  // empty when the candidate failed
    std::optional<double> lsocv_star;
    Eigen::VectorXd lambda;
    std::string failure;
};

struct SelectionReport {
    std::vector<CandidateScore> candidates;
    std::size_t chosen = 0;
    bool tie = false;  // another candidate attains exactly the same score
    LambdaPolicy policy = LambdaPolicy::Zero;
    SelectionCriterion criterion = SelectionCriterion::LsocvExact;

    double score(std::size_t c) const;
};

struct SelectionOptions {
    LambdaPolicy policy = LambdaPolicy::Zero;
    SelectionCriterion criterion = SelectionCriterion::LsocvExact;
    OptimizerConfig optimizer;
    unsigned threads = 1;
};

// Scores every candidate (exact LsoCV by default, or LsoCV*) and picks the
// smallest. Candidates that cannot be built or fitted are reported and excluded.
SelectionReport select_correlation(const LongitudinalDataset& data, const DesignAssembly& design,
                                   const std::vector<CorrelationModel>& candidates,
                                   const SelectionOptions& options = {});

// Moment estimates from residual groups (working-independence residuals).
double estimate_cs_rho(std::span<const Eigen::VectorXd> residuals);
double estimate_ar1_rho(std::span<const Eigen::VectorXd> residuals);
Eigen::MatrixXd estimate_unstructured(std::span<const Eigen::VectorXd> residuals);

// {IND, CS, AR(1), UN} with parameters estimated from a working-independence,
// lambda = 0 fit. UN is included only when all subjects have the same size.
std::vector<CorrelationModel> moment_candidates(const LongitudinalDataset& data, const DesignAssembly& design);

}  // namespace lsocv
