#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace lsocv {

struct Subject {
    std::string id;
    Eigen::VectorXd y;
    Eigen::MatrixXd covariates;  // n_i x (number of covariates), columns named by the dataset
    Eigen::VectorXd times;       // empty when the dataset carries no time column

    Eigen::Index size() const { return y.size(); }
};

// Clustered responses, stored subject-major. The reserved covariate name "time"
// resolves to the observation times.
class LongitudinalDataset {
public:
    LongitudinalDataset() = default;
    LongitudinalDataset(std::vector<std::string> covariate_names, std::vector<Subject> subjects);

    std::size_t n() const { return subjects_.size(); }
    Eigen::Index total_obs() const { return offsets_.back(); }
    bool has_times() const { return has_times_; }

    const std::vector<Subject>& subjects() const { return subjects_; }
    const Subject& subject(std::size_t i) const { return subjects_.at(i); }
    const std::vector<std::string>& covariate_names() const { return covariate_names_; }

    // offsets()[i] is the first stacked row of subject i; offsets().back() == N.
    const std::vector<Eigen::Index>& offsets() const { return offsets_; }
    std::vector<Eigen::Index> cluster_sizes() const;

    bool has_covariate(const std::string& name) const;
    Eigen::VectorXd response() const;
    Eigen::VectorXd column(const std::string& name) const;

    // Subjects at the given positions, duplicates allowed (cluster bootstrap).
    LongitudinalDataset subset(std::span<const std::size_t> indices) const;

private:
    std::vector<std::string> covariate_names_;
    std::vector<Subject> subjects_;
    std::vector<Eigen::Index> offsets_{0};
    bool has_times_ = false;
};

// Splits a stacked N-vector into per-subject segments following `offsets`.
std::vector<Eigen::VectorXd> split_by_subject(const Eigen::VectorXd& stacked,
                                              const std::vector<Eigen::Index>& offsets);

}  // namespace lsocv
