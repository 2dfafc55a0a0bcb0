#include "lsocv/correlation.hpp"

#include "lsocv/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lsocv {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

std::string structure_name(const CorrelationModel& model) {
    return std::visit(overloaded{
                          [](const Independence&) { return std::string("ind"); },
                          [](const CompoundSymmetry&) { return std::string("cs"); },
                          [](const Ar1&) { return std::string("ar1"); },
                          [](const LagOneBand&) { return std::string("lag1"); },
                          [](const Unstructured&) { return std::string("un"); },
                          [](const ExponentialNugget&) { return std::string("exp"); },
                      },
                      model);
}

WorkingBlock::WorkingBlock(Eigen::MatrixXd corr) : w_(std::move(corr)) {
    const Eigen::Index n = w_.rows();
    if (n < 1 || w_.cols() != n) throw InvalidArgument("working correlation block must be square and nonempty");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (w_(i, i) != 1.0) throw InvalidArgument("working correlation block must have unit diagonal");
        for (Eigen::Index j = 0; j < i; ++j)
            if (std::abs(w_(i, j) - w_(j, i)) > 1e-12)
                throw InvalidArgument("working correlation block must be symmetric");
    }
    identity_ = w_.isIdentity(0.0);
    if (identity_) {
        l_ = w_;
        return;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(w_, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0))
        throw NearSingularError("working correlation block is not positive definite (min eigenvalue " +
                                std::to_string(lo) + ")");
    condition_ = hi / lo;
    if (condition_ > kMaxWorkingCondition)
        throw NearSingularError("working correlation block is nearly singular (condition number " +
                                std::to_string(condition_) + ")");
    Eigen::LLT<Eigen::MatrixXd> llt(w_);
    if (llt.info() != Eigen::Success) throw NearSingularError("Cholesky of working correlation block failed");
    l_ = llt.matrixL();
    log_det_ = 2.0 * l_.diagonal().array().log().sum();
}

Eigen::MatrixXd WorkingBlock::whiten(const Eigen::MatrixXd& B) const {
    if (B.rows() != size()) throw InvalidArgument("dimension mismatch in working block solve");
    if (identity_) return B;
    return l_.triangularView<Eigen::Lower>().solve(B);
}

Eigen::MatrixXd WorkingBlock::solve(const Eigen::MatrixXd& B) const {
    if (B.rows() != size()) throw InvalidArgument("dimension mismatch in working block solve");
    if (identity_) return B;
    Eigen::MatrixXd z = l_.triangularView<Eigen::Lower>().solve(B);
    return l_.transpose().triangularView<Eigen::Upper>().solve(z);
}

Eigen::VectorXd WorkingBlock::solve(const Eigen::VectorXd& b) const {
    return solve(Eigen::MatrixXd(b));
}

Eigen::MatrixXd WorkingBlock::inverse() const {
    return solve(Eigen::MatrixXd(Eigen::MatrixXd::Identity(size(), size())));
}

Eigen::MatrixXd correlation_matrix(const CorrelationModel& model, std::span<const double> times) {
    const auto n = static_cast<Eigen::Index>(times.size());
    if (n < 1) throw InvalidArgument("working correlation block needs at least one observation");
    Eigen::MatrixXd W = Eigen::MatrixXd::Identity(n, n);
    std::visit(overloaded{
                   [&](const Independence&) {},
                   [&](const CompoundSymmetry& m) {
                       const double lower = n > 1 ? -1.0 / static_cast<double>(n - 1) : -1.0;
                       if (!(m.rho > lower && m.rho < 1.0))
                           throw InvalidArgument("compound symmetry rho " + std::to_string(m.rho) +
                                                 " outside (" + std::to_string(lower) + ", 1) for block size " +
                                                 std::to_string(n));
                       W.setConstant(m.rho);
                       W.diagonal().setOnes();
                   },
                   [&](const Ar1& m) {
                       if (!(std::abs(m.rho) < 1.0)) throw InvalidArgument("AR(1) requires |rho| < 1");
                       for (Eigen::Index i = 0; i < n; ++i)
                           for (Eigen::Index j = 0; j < n; ++j)
                               if (i != j) W(i, j) = std::pow(m.rho, static_cast<double>(std::abs(i - j)));
                   },
                   [&](const LagOneBand& m) {
                       if (!(std::abs(m.rho) < 1.0)) throw InvalidArgument("lag-one band requires |rho| < 1");
                       for (Eigen::Index i = 0; i + 1 < n; ++i) W(i, i + 1) = W(i + 1, i) = m.rho;
                   },
                   [&](const Unstructured& m) {
                       if (m.corr.rows() != n || m.corr.cols() != n)
                           throw InvalidArgument("unstructured correlation is " + std::to_string(m.corr.rows()) +
                                                 " x " + std::to_string(m.corr.cols()) +
                                                 " but the subject has " + std::to_string(n) + " observations");
                       W = m.corr;
                   },
                   [&](const ExponentialNugget& m) {
                       if (!(m.alpha > 0.0 && m.alpha < 1.0) || !(m.theta > 0.0))
                           throw InvalidArgument("exponential-nugget requires 0 < alpha < 1 and theta > 0");
                       for (Eigen::Index i = 0; i < n; ++i)
                           for (Eigen::Index j = 0; j < n; ++j)
                               if (i != j) {
                                   const double u = std::abs(times[i] - times[j]);
                                   W(i, j) = m.alpha + (1.0 - m.alpha) * std::exp(-m.theta * u);
                               }
                   },
               },
               model);
    return W;
}

WorkingBlock working_block(const CorrelationModel& model, std::span<const double> times) {
    return WorkingBlock(correlation_matrix(model, times));
}

WorkingBlock working_block(const CorrelationModel& model, Eigen::Index size) {
    std::vector<double> idx(static_cast<std::size_t>(std::max<Eigen::Index>(size, 0)));
    std::iota(idx.begin(), idx.end(), 1.0);
    return working_block(model, idx);
}

Eigen::MatrixXd solve_block(const WorkingBlock& block, const Eigen::MatrixXd& B) {
    return block.solve(B);
}

std::vector<WorkingBlock> working_blocks(const CorrelationModel& model, const LongitudinalDataset& data) {
    if (std::holds_alternative<ExponentialNugget>(model) && !data.has_times())
        throw InvalidArgument("exponential-nugget correlation needs observation times");
    std::vector<WorkingBlock> blocks;
    blocks.reserve(data.n());
    for (const auto& s : data.subjects()) {
        if (data.has_times())
            blocks.push_back(working_block(model, std::span<const double>(s.times.data(), s.times.size())));
        else
            blocks.push_back(working_block(model, s.size()));
    }
    return blocks;
}

std::vector<LagBin> binned_lag_correlations(std::span<const Eigen::VectorXd> residuals,
                                            std::span<const Eigen::VectorXd> times) {
    if (residuals.size() != times.size()) throw InvalidArgument("residual and time groups differ in count");
    double sum = 0.0, sumsq = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < residuals.size(); ++i) {
        if (residuals[i].size() != times[i].size())
            throw InvalidArgument("residual and time vectors differ in length");
        sum += residuals[i].sum();
        count += static_cast<std::size_t>(residuals[i].size());
    }
    if (count < 2) throw InvalidArgument("too few residuals to estimate correlation parameters");
    const double mean = sum / static_cast<double>(count);
    for (const auto& r : residuals) sumsq += (r.array() - mean).square().sum();
    const double var = sumsq / static_cast<double>(count);
    if (!(var > 0.0)) throw InvalidArgument("residuals have zero variance");

    struct Pair {
        double lag, product;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < residuals.size(); ++i) {
        const auto& r = residuals[i];
        const auto& t = times[i];
        for (Eigen::Index j = 0; j < r.size(); ++j)
            for (Eigen::Index k = j + 1; k < r.size(); ++k) {
                const double u = std::abs(t(k) - t(j));
                if (u > 0.0) pairs.push_back({u, (r(j) - mean) * (r(k) - mean)});
            }
    }
    if (pairs.empty()) throw InvalidArgument("no subject has two observations at distinct times");

    std::vector<double> lags;
    lags.reserve(pairs.size());
    for (const auto& p : pairs) lags.push_back(p.lag);
    std::sort(lags.begin(), lags.end());
    const double scale = lags.back();
    std::vector<double> distinct{lags.front()};
    for (double u : lags)
        if (u - distinct.back() > 1e-9 * scale) distinct.push_back(u);
    if (distinct.size() < 2)
        throw InvalidArgument("fewer than two distinct lags; exponential-nugget parameters are underdetermined");
    std::vector<double> gaps;
    for (std::size_t i = 1; i < distinct.size(); ++i) gaps.push_back(distinct[i] - distinct[i - 1]);
    std::nth_element(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2), gaps.end());
    const double width = gaps[gaps.size() / 2];

    const double origin = distinct.front();
    std::vector<LagBin> bins;
    std::vector<double> lag_sum, prod_sum;
    for (const auto& p : pairs) {
        const auto b = static_cast<std::size_t>(std::floor((p.lag - origin) / width + 0.5));
        if (b >= bins.size()) {
            bins.resize(b + 1);
            lag_sum.resize(b + 1, 0.0);
            prod_sum.resize(b + 1, 0.0);
        }
        bins[b].pairs += 1;
        lag_sum[b] += p.lag;
        prod_sum[b] += p.product;
    }
    std::vector<LagBin> used;
    for (std::size_t b = 0; b < bins.size(); ++b) {
        if (bins[b].pairs == 0) continue;
        const auto cnt = static_cast<double>(bins[b].pairs);
        used.push_back({lag_sum[b] / cnt, prod_sum[b] / (cnt * var), bins[b].pairs});
    }
    return used;
}

namespace {

double logistic(double a) { return 1.0 / (1.0 + std::exp(-a)); }

double sse(const std::vector<LagBin>& bins, double alpha, double theta) {
    double s = 0.0;
    for (const auto& b : bins) {
        const double r = b.correlation - (alpha + (1.0 - alpha) * std::exp(-theta * b.lag));
        s += r * r;
    }
    return s;
}

}  // namespace

ExponentialFit fit_exponential_to_bins(std::vector<LagBin> bins) {
    if (bins.size() < 2)
        throw InvalidArgument("fewer than two lag bins; exponential-nugget parameters are underdetermined");
    double min_lag = bins.front().lag, max_lag = bins.front().lag;
    for (const auto& b : bins) {
        min_lag = std::min(min_lag, b.lag);
        max_lag = std::max(max_lag, b.lag);
    }
    constexpr double kLimit = 30.0;

    // Multi-start Levenberg-Marquardt in (logit alpha, log theta).
    double best_a = 0.0, best_s = 0.0, best = std::numeric_limits<double>::infinity();
    for (double alpha0 : {0.05, 0.2, 0.4, 0.6, 0.8}) {
        for (double rate : {0.05, 0.2, 1.0, 3.0, 10.0}) {
            double a = std::log(alpha0 / (1.0 - alpha0));
            double s = std::log(rate / min_lag);
            double mu = 1e-3;
            double f = sse(bins, logistic(a), std::exp(s));
            for (int it = 0; it < 200; ++it) {
                const double alpha = logistic(a), theta = std::exp(s);
                Eigen::Matrix2d JtJ = Eigen::Matrix2d::Zero();
                Eigen::Vector2d Jtr = Eigen::Vector2d::Zero();
                for (const auto& b : bins) {
                    const double e = std::exp(-theta * b.lag);
                    const double r = b.correlation - (alpha + (1.0 - alpha) * e);
                    const Eigen::Vector2d j((1.0 - e) * alpha * (1.0 - alpha), -(1.0 - alpha) * b.lag * e * theta);
                    JtJ += j * j.transpose();
                    Jtr += j * r;
                }
                bool improved = false;
                for (int tries = 0; tries < 30; ++tries) {
                    Eigen::Matrix2d M = JtJ;
                    M.diagonal().array() += mu * (1.0 + JtJ.diagonal().array());
                    const Eigen::Vector2d step = M.ldlt().solve(Jtr);
                    const double na = std::clamp(a + step(0), -kLimit, kLimit);
                    const double ns = std::clamp(s + step(1), -kLimit, kLimit);
                    const double nf = sse(bins, logistic(na), std::exp(ns));
                    if (nf < f) {
                        const double change = std::abs(na - a) + std::abs(ns - s);
                        a = na;
                        s = ns;
                        f = nf;
                        mu = std::max(mu / 3.0, 1e-12);
                        improved = change > 1e-12;
                        break;
                    }
                    mu *= 4.0;
                }
                if (!improved) break;
            }
            if (f < best) {
                best = f;
                best_a = a;
                best_s = s;
            }
        }
    }

    ExponentialFit fit;
    fit.alpha = logistic(best_a);
    fit.theta = std::exp(best_s);
    fit.boundary_hit = fit.alpha < 1e-2 || fit.alpha > 1.0 - 1e-2 || fit.theta * min_lag > 50.0 ||
                       fit.theta * max_lag < 1e-3;
    fit.bins = std::move(bins);
    return fit;
}

ExponentialFit estimate_exponential_params(std::span<const Eigen::VectorXd> residuals,
                                           std::span<const Eigen::VectorXd> times) {
    return fit_exponential_to_bins(binned_lag_correlations(residuals, times));
}

}  // namespace lsocv
