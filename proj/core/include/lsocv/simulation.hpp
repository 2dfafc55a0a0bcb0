#pragma once

#include "lsocv/basis.hpp"
#include "lsocv/correlation.hpp"
#include "lsocv/dataset.hpp"
#include "lsocv/optimizer.hpp"
#include "lsocv/selection.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace lsocv {

// Smooth test functions on [-2, 2], with z = (x + 2) / 4.
double true_f1(double x);
double true_f2(double x);

enum class CovariateDesign {
    SubjectLevelX1,   // x1 drawn once per subject, x2 per observation
    ObservationLevel  // both drawn per observation
};

struct SimScenario {
    int n = 100;
    int cluster_size = 5;
    double sigma = 1.0;
    CorrelationModel truth = CompoundSymmetry{0.8};
    CovariateDesign design = CovariateDesign::SubjectLevelX1;
    std::uint64_t seed = 1;
    int replicates = 200;
    unsigned threads = 1;
};

struct SimulatedData {
    LongitudinalDataset data;  // covariates "x1", "x2"; times 1..n_i
    Eigen::VectorXd mu;
    std::vector<Eigen::MatrixXd> sigma;  // true covariance blocks, sigma^2 R_i
};

// y_ij = f1(x1) + f2(x2) + eps_ij with eps_i = sigma chol(R_i) z_i.
SimulatedData gen_dataset(const SimScenario& scenario, std::uint64_t replicate);

// Two centered cubic smooths with `knots` equally spaced interior knots on [-2, 2].
std::vector<TermSpec> simulation_terms(int knots = 10);

// rho12 = rho23 = 0.8, rho13 = 0.3, zero elsewhere.
Eigen::MatrixXd table1_unstructured(int size);

// Nearest-in-spectrum correlation matrix with eigenvalues at least `floor`,
// rescaled to unit diagonal.
Eigen::MatrixXd project_to_correlation(const Eigen::MatrixXd& M, double floor = 1e-2);

// Working model for the truncated compound symmetry: exact when positive
// definite, otherwise projected. `projected` reports whether the SPD guard tripped.
CorrelationModel truncated_working_model(double rho, int size, bool* projected = nullptr);

// ---- Penalty-parameter efficiency (LsoCV* vs V* vs oracle) ----

struct EfficiencyOptions {
    int grid_points = 121;  // per dimension, log-spaced
    double grid_lo = 1e-5;
    double grid_hi = 1e5;
    OptimizerConfig optimizer;
};

struct EfficiencyReplicate {
    int replicate = 0;
    bool failed = false;
    std::string failure;
    double loss_lsocv_star = 0.0;
    double loss_v_star = 0.0;
    double loss_opt = 0.0;
    double lsocv_star_min = 0.0;
    double ratio_v_star() const { return loss_v_star / loss_lsocv_star; }
    double ratio_opt() const { return loss_opt / loss_lsocv_star; }
};

struct EfficiencyResult {
    std::string working;
    std::vector<EfficiencyReplicate> replicates;
    int failures() const;
    double median_ratio_v_star() const;
    double median_ratio_opt() const;
};

std::vector<EfficiencyResult> run_efficiency_experiment(const SimScenario& scenario,
                                                        const std::vector<CorrelationModel>& working,
                                                        const EfficiencyOptions& options = {});

// ---- Working correlation selection (frequency table) ----

enum class TrueStructure { IND, CS, AR, UN };
std::string to_string(TrueStructure s);
TrueStructure parse_true_structure(const std::string& s);

struct SelectionCell {
    int n = 100;
    double rho = 0.5;
    TrueStructure truth = TrueStructure::CS;
};

struct SelectionCellResult {
    SelectionCell cell;
    std::array<int, 4> counts{};  // IND, CS, AR, UN
    int replicates = 0;
    int failures = 0;
    double percent(TrueStructure s) const;
};

// Candidate set for the frequency table: the four generating structures with the
// cell's parameters, or IND plus moment estimates (CS, AR, empirical UN).
enum class CandidateParameters { Design, Moment };

struct SelectionExperimentOptions {
    int replicates = 200;
    std::uint64_t seed = 1;
    int cluster_size = 5;
    double sigma = 1.0;
    unsigned threads = 1;
    bool only_true_structure = false;  // candidate set reduced to the generating structure
    CandidateParameters candidates = CandidateParameters::Design;
    SelectionCriterion criterion = SelectionCriterion::LsocvStar;
};

CorrelationModel true_model(TrueStructure s, double rho, int size);
std::vector<SelectionCell> table1_cells();

std::vector<SelectionCellResult> run_selection_experiment(const std::vector<SelectionCell>& cells,
                                                          const SelectionExperimentOptions& options);

// ---- Function estimation (bias/variance of the additive components) ----

struct CurveSummary {
    Eigen::VectorXd truth;     // centered over the grid
    Eigen::VectorXd mean;      // Monte Carlo mean of centered estimates
    Eigen::VectorXd variance;  // Monte Carlo variance
    Eigen::VectorXd bias() const { return mean - truth; }
};

struct FunctionEstimationResult {
    std::string working;
    Eigen::VectorXd grid;
    std::array<CurveSummary, 2> curves;  // f1, f2
    int replicates_used = 0;
    int failures = 0;
};

std::vector<FunctionEstimationResult> run_function_estimation(const SimScenario& scenario,
                                                              const std::vector<CorrelationModel>& working,
                                                              int grid_points = 100,
                                                              const OptimizerConfig& optimizer = {});

// ---- CSV output ----
std::string efficiency_csv(const std::vector<EfficiencyResult>& results);
std::string selection_csv(const std::vector<SelectionCellResult>& results);
std::string function_estimation_csv(const std::vector<FunctionEstimationResult>& results);

}  // namespace lsocv
