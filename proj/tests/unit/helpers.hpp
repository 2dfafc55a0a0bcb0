#pragma once

#include "lsocv/basis.hpp"
#include "lsocv/correlation.hpp"
#include "lsocv/dataset.hpp"
#include "lsocv/rng.hpp"

#include <Eigen/Dense>

#include <random>
#include <string>
#include <vector>

namespace testutil {

// Small random dataset with covariates x, z and times 1..n_i.
inline lsocv::LongitudinalDataset random_dataset(std::mt19937_64& rng, int n, int min_size, int max_size) {
    std::uniform_int_distribution<int> size(min_size, max_size);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<lsocv::Subject> subjects;
    for (int i = 0; i < n; ++i) {
        lsocv::Subject s;
        const int k = size(rng);
        s.id = "s" + std::to_string(i);
        s.y.resize(k);
        s.covariates.resize(k, 2);
        s.times.resize(k);
        for (int j = 0; j < k; ++j) {
            s.covariates(j, 0) = u(rng);
            s.covariates(j, 1) = g(rng);
            s.times(j) = j + 1.0;
            s.y(j) = std::sin(6.0 * s.covariates(j, 0)) + 0.5 * s.covariates(j, 1) + 0.3 * g(rng);
        }
        subjects.push_back(std::move(s));
    }
    return lsocv::LongitudinalDataset({"x", "z"}, std::move(subjects));
}

inline Eigen::MatrixXd random_correlation(std::mt19937_64& rng, int k) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd A(k, k + 2);
    for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = g(rng);
    Eigen::MatrixXd C = A * A.transpose() + 0.5 * Eigen::MatrixXd::Identity(k, k);
    const Eigen::VectorXd d = C.diagonal().cwiseSqrt().cwiseInverse();
    C = d.asDiagonal() * C * d.asDiagonal();
    C = 0.5 * (C + C.transpose()).eval();
    C.diagonal().setOnes();
    return C;
}

inline std::vector<lsocv::WorkingBlock> random_blocks(std::mt19937_64& rng, const lsocv::LongitudinalDataset& data) {
    std::vector<lsocv::WorkingBlock> blocks;
    for (const auto& s : data.subjects()) blocks.emplace_back(random_correlation(rng, static_cast<int>(s.size())));
    return blocks;
}

inline lsocv::BasisSpec unit_basis(int knots = 5) {
    lsocv::BasisSpec b;
    b.interior_knots = knots;
    return b;
}

}  // namespace testutil
