#include "lsocv/estimator.hpp"

#include "lsocv/errors.hpp"
#include "lsocv/parallel.hpp"
#include "lsocv/rng.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace lsocv {

PenalizedSystem::PenalizedSystem(Eigen::MatrixXd X, Eigen::VectorXd y, std::vector<Eigen::Index> offsets,
                                 std::vector<WorkingBlock> blocks, std::vector<Eigen::MatrixXd> penalties)
    : X_(std::move(X)), y_(std::move(y)), offsets_(std::move(offsets)), blocks_(std::move(blocks)),
      penalties_(std::move(penalties)) {
    if (blocks_.empty()) throw InvalidArgument("penalized system needs at least one subject");
    if (offsets_.size() != blocks_.size() + 1 || offsets_.front() != 0 || offsets_.back() != X_.rows() ||
        y_.size() != X_.rows())
        throw InvalidArgument("design rows, response and subject offsets disagree");
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        if (blocks_[i].size() != rows_of(i))
            throw InvalidArgument("working block " + std::to_string(i) + " does not match subject size");
    for (const auto& S : penalties_)
        if (S.rows() != X_.cols() || S.cols() != X_.cols())
            throw InvalidArgument("penalty matrix dimension does not match the design");

    Xw_.resize(X_.rows(), X_.cols());
    Wy_.resize(y_.size());
    gram_ = Eigen::MatrixXd::Zero(X_.cols(), X_.cols());
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const Eigen::Index o = offsets_[i], len = rows_of(i);
        const auto& W = blocks_[i];
        Xw_.middleRows(o, len) = W.solve(Eigen::MatrixXd(X_.middleRows(o, len)));
        Wy_.segment(o, len) = W.solve(Eigen::VectorXd(y_.segment(o, len)));
    }
    gram_.noalias() = X_.transpose() * Xw_;
    gram_ = 0.5 * (gram_ + gram_.transpose()).eval();
    cross_ = X_.transpose() * Wy_;
    yWy_ = y_.dot(Wy_);
}

PenalizedSystem PenalizedSystem::build(const LongitudinalDataset& data, const DesignAssembly& design,
                                       std::vector<WorkingBlock> blocks) {
    if (design.X.rows() != data.total_obs())
        throw InvalidArgument("design has " + std::to_string(design.X.rows()) + " rows but the dataset has " +
                              std::to_string(data.total_obs()) + " observations");
    if (blocks.size() != data.n()) throw InvalidArgument("need one working block per subject");
    return PenalizedSystem(design.X, data.response(), data.offsets(), std::move(blocks), design.penalties);
}

double PenalizedSystem::log_det_W() const {
    double s = 0.0;
    for (const auto& b : blocks_) s += b.log_det();
    return s;
}

Eigen::MatrixXd PenalizedSystem::penalized_gram(const Eigen::VectorXd& lambda) const {
    if (static_cast<std::size_t>(lambda.size()) != penalties_.size())
        throw InvalidArgument("expected " + std::to_string(penalties_.size()) + " penalty parameters, got " +
                              std::to_string(lambda.size()));
    Eigen::MatrixXd H = gram_;
    for (std::size_t k = 0; k < penalties_.size(); ++k) {
        if (!(lambda(static_cast<Eigen::Index>(k)) >= 0.0) || !std::isfinite(lambda(static_cast<Eigen::Index>(k))))
            throw InvalidArgument("penalty parameters must be finite and nonnegative");
        H.noalias() += lambda(static_cast<Eigen::Index>(k)) * penalties_[k];
    }
    return H;
}

namespace {

bool well_factored(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::MatrixXd& H) {
    if (llt.info() != Eigen::Success) return false;
    const Eigen::VectorXd piv = llt.matrixLLT().diagonal();
    if (!piv.allFinite()) return false;
    const double scale = H.diagonal().cwiseAbs().maxCoeff();
    return piv.minCoeff() > 0.0 && piv.array().square().minCoeff() > 1e-13 * scale;
}

}  // namespace

NormalFactor PenalizedSystem::factor(const Eigen::VectorXd& lambda) const {
    Eigen::MatrixXd H = penalized_gram(lambda);
    NormalFactor f;
    f.llt.compute(H);
    if (well_factored(f.llt, H)) return f;
    const double ridge = 1e-10 * H.trace() / static_cast<double>(H.rows());
    if (!(ridge > 0.0)) throw SingularSystemError("penalized normal matrix is singular");
    H.diagonal().array() += ridge;
    f.llt.compute(H);
    f.ridged = true;
    if (f.llt.info() != Eigen::Success || !f.llt.matrixLLT().diagonal().allFinite())
        throw SingularSystemError("penalized normal matrix is singular even after ridge");
    return f;
}

PenalizedSystem PenalizedSystem::subset(std::span<const std::size_t> subjects) const {
    Eigen::Index rows = 0;
    for (auto i : subjects) rows += rows_of(i);
    Eigen::MatrixXd X(rows, p());
    Eigen::VectorXd y(rows);
    std::vector<Eigen::Index> offsets{0};
    std::vector<WorkingBlock> blocks;
    blocks.reserve(subjects.size());
    for (auto i : subjects) {
        if (i >= n()) throw InvalidArgument("subject index out of range");
        const Eigen::Index len = rows_of(i);
        X.middleRows(offsets.back(), len) = X_.middleRows(offsets_[i], len);
        y.segment(offsets.back(), len) = y_.segment(offsets_[i], len);
        offsets.push_back(offsets.back() + len);
        blocks.push_back(blocks_[i]);
    }
    return PenalizedSystem(std::move(X), std::move(y), std::move(offsets), std::move(blocks), penalties_);
}

PenalizedSystem PenalizedSystem::with_response(const Eigen::VectorXd& y) const {
    if (y.size() != N()) throw InvalidArgument("response length does not match the design");
    PenalizedSystem out = *this;
    out.y_ = y;
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        out.Wy_.segment(offsets_[i], rows_of(i)) = blocks_[i].solve(Eigen::VectorXd(y.segment(offsets_[i], rows_of(i))));
    out.cross_ = X_.transpose() * out.Wy_;
    out.yWy_ = y.dot(out.Wy_);
    return out;
}

Eigen::VectorXd FitResult::apply_hat(const Eigen::VectorXd& v) const {
    if (v.size() != N()) throw InvalidArgument("vector length does not match the fit");
    const Eigen::VectorXd g = factor->solve(Eigen::VectorXd(system->XW().transpose() * v));
    return system->X() * g;
}

FitResult fit(std::shared_ptr<const PenalizedSystem> system, const Eigen::VectorXd& lambda) {
    FitResult out;
    auto factor = std::make_shared<NormalFactor>(system->factor(lambda));
    out.beta = factor->solve(system->cross());
    out.fitted = system->X() * out.beta;
    out.residuals = system->y() - out.fitted;
    out.lambda = lambda;
    out.ridge_applied = factor->ridged;

    const auto& X = system->X();
    const auto& XW = system->XW();
    out.hat_blocks.reserve(system->n());
    for (std::size_t i = 0; i < system->n(); ++i) {
        const Eigen::Index o = system->offsets()[i], len = system->rows_of(i);
        // A_ii = X_i H^{-1} (W_i^{-1} X_i)'
        const Eigen::MatrixXd G = factor->solve(Eigen::MatrixXd(XW.middleRows(o, len).transpose()));
        out.hat_blocks.emplace_back(X.middleRows(o, len) * G);
        out.trace_A += out.hat_blocks.back().trace();
    }
    out.system = std::move(system);
    out.factor = std::move(factor);
    return out;
}

FitResult fit(const LongitudinalDataset& data, const DesignAssembly& design, std::vector<WorkingBlock> blocks,
              const Eigen::VectorXd& lambda) {
    return fit(std::make_shared<const PenalizedSystem>(PenalizedSystem::build(data, design, std::move(blocks))),
               lambda);
}

FitResult fit(const LongitudinalDataset& data, const DesignAssembly& design, const CorrelationModel& model,
              const Eigen::VectorXd& lambda) {
    FitResult out = fit(data, design, working_blocks(model, data), lambda);
    out.correlation = model;
    return out;
}

LeverageReport leverage_diagnostics(const FitResult& fit) {
    if (fit.hat_blocks.empty()) throw InvalidArgument("fit has no subjects");
    LeverageReport r;
    r.subject_leverage.resize(static_cast<Eigen::Index>(fit.hat_blocks.size()));
    for (std::size_t i = 0; i < fit.hat_blocks.size(); ++i)
        r.subject_leverage(static_cast<Eigen::Index>(i)) = fit.hat_blocks[i].trace();
    r.mean = r.subject_leverage.sum() / static_cast<double>(fit.hat_blocks.size());
    r.max_to_mean = r.mean > 0.0 ? r.subject_leverage.maxCoeff() / r.mean : 0.0;
    r.warning = r.max_to_mean > kLeverageWarningRatio;
    return r;
}

double empirical_quantile(std::vector<double> values, double prob) {
    if (values.empty()) throw InvalidArgument("quantile of an empty sample");
    if (!(prob >= 0.0 && prob <= 1.0)) throw InvalidArgument("quantile probability outside [0, 1]");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

BootstrapResult bootstrap_ci(const LongitudinalDataset& data, const DesignAssembly& design,
                             const CorrelationModel& model, const Eigen::VectorXd& lambda,
                             const BootstrapOptions& options) {
    if (options.replicates < 2) throw InvalidArgument("bootstrap needs at least 2 replicates");
    if (!(options.level > 0.0 && options.level < 1.0)) throw InvalidArgument("confidence level must be in (0, 1)");
    if (options.grid_points < 2) throw InvalidArgument("evaluation grid needs at least 2 points");

    const auto system =
        std::make_shared<const PenalizedSystem>(PenalizedSystem::build(data, design, working_blocks(model, data)));
    const FitResult full = fit(system, lambda);

    BootstrapResult result;
    std::vector<Eigen::MatrixXd> curve_maps;
    for (std::size_t t = 0; t < design.terms.size(); ++t) {
        const auto& block = design.terms[t];
        if (!block.has_curve()) continue;
        CurveBand band;
        band.term = t;
        band.grid = Eigen::VectorXd::LinSpaced(options.grid_points, block.spec.basis.lower, block.spec.basis.upper);
        curve_maps.push_back(design.term_curve_matrix(t, band.grid));
        band.estimate = curve_maps.back() * full.beta.segment(block.first_column, block.columns);
        result.bands.push_back(std::move(band));
    }

    const auto B = static_cast<std::size_t>(options.replicates);
    std::vector<std::optional<Eigen::VectorXd>> betas(B);
    parallel_for(B, options.threads, [&](std::size_t b) {
        auto engine = replicate_engine(options.seed, b);
        std::uniform_int_distribution<std::size_t> pick(0, data.n() - 1);
        std::vector<std::size_t> idx(data.n());
        for (auto& i : idx) i = pick(engine);
        try {
            const PenalizedSystem sub = system->subset(idx);
            const NormalFactor f = sub.factor(lambda);
            if (f.ridged) return;
            betas[b] = f.solve(sub.cross());
        } catch (const NumericalError&) {
        }
    });

    std::vector<Eigen::VectorXd> kept;
    for (auto& b : betas)
        if (b) kept.push_back(std::move(*b));
    result.replicates_used = static_cast<int>(kept.size());
    result.dropped = options.replicates - result.replicates_used;
    if (result.dropped * 10 > options.replicates)
        throw NumericalError(std::to_string(result.dropped) + " of " + std::to_string(options.replicates) +
                             " bootstrap replicates had a singular design");

    const double tail = 0.5 * (1.0 - options.level);
    for (std::size_t c = 0; c < result.bands.size(); ++c) {
        auto& band = result.bands[c];
        const auto& block = design.terms[band.term];
        Eigen::MatrixXd curves(kept.size(), band.grid.size());
        for (std::size_t r = 0; r < kept.size(); ++r)
            curves.row(static_cast<Eigen::Index>(r)) =
                (curve_maps[c] * kept[r].segment(block.first_column, block.columns)).transpose();
        band.lower.resize(band.grid.size());
        band.upper.resize(band.grid.size());
        for (Eigen::Index g = 0; g < band.grid.size(); ++g) {
            std::vector<double> col(curves.col(g).data(), curves.col(g).data() + curves.rows());
            band.lower(g) = empirical_quantile(col, tail);
            band.upper(g) = empirical_quantile(std::move(col), 1.0 - tail);
        }
    }
    return result;
}

}  // namespace lsocv
