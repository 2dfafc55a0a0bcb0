#pragma once

#include "lsocv/basis.hpp"
#include "lsocv/correlation.hpp"
#include "lsocv/selection.hpp"
#include "lsocv/simulation.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lsocv::cli {

// Correlation given on the command line. `estimate` asks for the parameters to be
// estimated from working-independence residuals.
struct CorrelationSpec {
    std::string structure = "ind";
    std::optional<CorrelationModel> model;
    bool estimate = false;
};

enum class LambdaMode { Fixed, Optimize, Grid, Zero };

struct LambdaSpec {
    LambdaMode mode = LambdaMode::Optimize;
    std::vector<double> fixed;  // one value, or one per penalty
    double grid_lo = 1e-4;
    double grid_hi = 1e4;
    int grid_points = 61;
};

struct RunConfig {
    std::string command;
    std::string input;
    std::vector<std::string> terms;
    std::vector<std::string> corr;
    std::string lambda;
    int min_obs = 1;
    std::uint64_t seed = 1;
    int reps = 200;
    unsigned threads = 0;  // 0: all available cores
    std::string trace;
    std::string out;
    std::string experiment;
    std::string cell;
    std::string criterion;
    std::string candidates;
    int bootstrap = 0;
    double level = 0.95;
    int n = 100;
    double rho = 0.8;
    double sigma = 1.0;
    int cluster_size = 5;
};

TermSpec parse_term(const std::string& text);
CorrelationSpec parse_correlation(const std::string& text);
LambdaSpec parse_lambda(const std::string& text, LambdaMode fallback);
SelectionCell parse_cell(const std::string& text);
double parse_double(const std::string& text, const std::string& what);
long long parse_int(const std::string& text, const std::string& what);

// Reads a JSON object into `cfg` for every key whose flag was not given on the
// command line. Unknown keys throw.
void merge_config_file(const std::string& path, RunConfig& cfg, const std::vector<std::string>& given_flags);

// Full validation before any computation.
void validate(const RunConfig& cfg);

}  // namespace lsocv::cli
