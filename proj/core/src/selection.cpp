#include "lsocv/selection.hpp"

#include "lsocv/criteria.hpp"
#include "lsocv/errors.hpp"
#include "lsocv/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace lsocv {

namespace {

double pooled_variance(std::span<const Eigen::VectorXd> residuals) {
    double ss = 0.0;
    Eigen::Index count = 0;
    for (const auto& r : residuals) {
        ss += r.squaredNorm();
        count += r.size();
    }
    if (count == 0 || !(ss > 0.0)) throw InvalidArgument("residuals have zero variance");
    return ss / static_cast<double>(count);
}

}  // namespace

double estimate_cs_rho(std::span<const Eigen::VectorXd> residuals) {
    const double var = pooled_variance(residuals);
    double cross = 0.0, pairs = 0.0;
    Eigen::Index largest = 1;
    for (const auto& r : residuals) {
        const double s = r.sum();
        cross += s * s - r.squaredNorm();
        pairs += static_cast<double>(r.size() * (r.size() - 1));
        largest = std::max(largest, r.size());
    }
    if (pairs == 0.0) throw InvalidArgument("compound symmetry needs subjects with at least two observations");
    const double lower = largest > 1 ? -1.0 / static_cast<double>(largest - 1) : -1.0;
    return std::clamp(cross / pairs / var, lower + 1e-3, 0.99);
}

double estimate_ar1_rho(std::span<const Eigen::VectorXd> residuals) {
    const double var = pooled_variance(residuals);
    double cross = 0.0, pairs = 0.0;
    for (const auto& r : residuals) {
        for (Eigen::Index j = 0; j + 1 < r.size(); ++j) cross += r(j) * r(j + 1);
        pairs += static_cast<double>(r.size() - 1);
    }
    if (pairs == 0.0) throw InvalidArgument("AR(1) needs subjects with at least two observations");
    return std::clamp(cross / pairs / var, -0.99, 0.99);
}

Eigen::MatrixXd estimate_unstructured(std::span<const Eigen::VectorXd> residuals) {
    if (residuals.empty()) throw InvalidArgument("no residual groups");
    const Eigen::Index k = residuals.front().size();
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(k, k);
    for (const auto& r : residuals) {
        if (r.size() != k) throw InvalidArgument("unstructured correlation needs equal cluster sizes");
        C.noalias() += r * r.transpose();
    }
    const Eigen::VectorXd d = C.diagonal().cwiseSqrt().cwiseInverse();
    if (!d.allFinite()) throw InvalidArgument("a residual position has zero variance");
    Eigen::MatrixXd R = d.asDiagonal() * C * d.asDiagonal();
    R = 0.5 * (R + R.transpose()).eval();
    R.diagonal().setOnes();
    return R;
}

std::vector<CorrelationModel> moment_candidates(const LongitudinalDataset& data, const DesignAssembly& design) {
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(design.penalty_count()));
    const FitResult ind = fit(data, design, Independence{}, zero);
    const auto groups = split_by_subject(ind.residuals, data.offsets());
    std::vector<CorrelationModel> out{Independence{}, CompoundSymmetry{estimate_cs_rho(groups)},
                                      Ar1{estimate_ar1_rho(groups)}};
    const auto sizes = data.cluster_sizes();
    if (std::all_of(sizes.begin(), sizes.end(), [&](Eigen::Index s) { return s == sizes.front(); }) &&
        sizes.front() > 1)
        out.emplace_back(Unstructured{estimate_unstructured(groups)});
    return out;
}

SelectionReport select_correlation(const LongitudinalDataset& data, const DesignAssembly& design,
                                   const std::vector<CorrelationModel>& candidates, const SelectionOptions& options) {
    if (candidates.empty()) throw InvalidArgument("no candidate correlation structures");
    SelectionReport report;
    report.policy = options.policy;
    report.candidates.resize(candidates.size());
    const auto m = static_cast<Eigen::Index>(design.penalty_count());

    parallel_for(candidates.size(), options.threads, [&](std::size_t c) {
        CandidateScore& score = report.candidates[c];
        score.model = candidates[c];
        score.lambda = Eigen::VectorXd::Zero(m);
        try {
            auto system = std::make_shared<const PenalizedSystem>(
                PenalizedSystem::build(data, design, working_blocks(candidates[c], data)));
            if (options.policy == LambdaPolicy::Optimize && m > 0)
                score.lambda = optimize_lambda(system, options.optimizer).lambda;
            const FitResult f = fit(system, score.lambda);
            score.lsocv_star = lsocv_star(f);
            score.lsocv = lsocv_exact(f);
        } catch (const std::exception& ex) {
            score.failure = ex.what();
        }
    });

    report.criterion = options.criterion;
    bool found = false;
    for (std::size_t c = 0; c < report.candidates.size(); ++c) {
        if (!report.candidates[c].lsocv) continue;
        if (!found || report.score(c) < report.score(report.chosen)) {
            report.chosen = c;
            found = true;
        }
    }
    if (!found) throw NumericalError("every candidate working correlation failed");
    const double best = report.score(report.chosen);
    for (std::size_t c = 0; c < report.candidates.size(); ++c)
        if (c != report.chosen && report.candidates[c].lsocv && report.score(c) == best) report.tie = true;
    return report;
}

double SelectionReport::score(std::size_t c) const {
    const auto& s = candidates.at(c);
    const auto& v = criterion == SelectionCriterion::LsocvStar ? s.lsocv_star : s.lsocv;
    if (!v) throw InvalidArgument("candidate " + std::to_string(c) + " has no score");
    return *v;
}

}  // namespace lsocv
