#include "lsocv/optimizer.hpp"

#include "lsocv/criteria.hpp"
#include "lsocv/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

namespace lsocv {

namespace {

// Per-subject projections of an N-vector d: row i of `a` is (X_i' d_i)', row i
// of `c` is (X_i' W_i^{-1} d_i)'.
struct Projection {
    Eigen::MatrixXd a, c;
};

Projection project(const PenalizedSystem& sys, const Eigen::VectorXd& d) {
    Projection pr;
    pr.a.resize(static_cast<Eigen::Index>(sys.n()), sys.p());
    pr.c.resize(static_cast<Eigen::Index>(sys.n()), sys.p());
    for (std::size_t i = 0; i < sys.n(); ++i) {
        const Eigen::Index o = sys.offsets()[i], len = sys.rows_of(i);
        const auto di = d.segment(o, len);
        pr.a.row(static_cast<Eigen::Index>(i)).noalias() = di.transpose() * sys.X().middleRows(o, len);
        pr.c.row(static_cast<Eigen::Index>(i)).noalias() = di.transpose() * sys.XW().middleRows(o, len);
    }
    return pr;
}

// sum_i a_i(u)' M c_i(v)
double bilinear(const Projection& u, const Eigen::MatrixXd& M, const Projection& v) {
    return (u.a * M).cwiseProduct(v.c).sum();
}

struct Box {
    Eigen::VectorXd lo, hi;
};

Eigen::VectorXd clamp_eta(Eigen::VectorXd eta, const Box& box) {
    for (Eigen::Index k = 0; k < eta.size(); ++k) eta(k) = std::clamp(eta(k), box.lo(k), box.hi(k));
    return eta;
}

}  // namespace

LsocvStarObjective::LsocvStarObjective(std::shared_ptr<const PenalizedSystem> system) : system_(std::move(system)) {
    if (!system_) throw InvalidArgument("objective needs a penalized system");
}

double LsocvStarObjective::value(const Eigen::VectorXd& eta) const {
    const auto& sys = *system_;
    const NormalFactor f = sys.factor(eta.array().exp().matrix());
    const Eigen::VectorXd beta = f.solve(sys.cross());
    const Eigen::VectorXd e = sys.y() - sys.X() * beta;
    const Projection pe = project(sys, e);
    const Eigen::MatrixXd HiC = f.solve(Eigen::MatrixXd(pe.c.transpose()));  // p x n
    const double inflation = pe.a.cwiseProduct(HiC.transpose()).sum();
    return (e.squaredNorm() + 2.0 * inflation) / static_cast<double>(sys.n());
}

LsocvStarObjective::Evaluation LsocvStarObjective::evaluate(const Eigen::VectorXd& eta) const {
    const auto& sys = *system_;
    const auto m = static_cast<Eigen::Index>(sys.m());
    if (eta.size() != m) throw InvalidArgument("eta has wrong length");
    const Eigen::VectorXd lambda = eta.array().exp().matrix();
    const NormalFactor f = sys.factor(lambda);
    const Eigen::Index p = sys.p();
    const Eigen::MatrixXd G = f.solve(Eigen::MatrixXd(Eigen::MatrixXd::Identity(p, p)));
    const Eigen::VectorXd beta = G * sys.cross();
    const Eigen::VectorXd e = sys.y() - sys.X() * beta;

    // GS[k] = lambda_k G S_k, the building block of every derivative.
    std::vector<Eigen::MatrixXd> GS(static_cast<std::size_t>(m));
    std::vector<Eigen::VectorXd> db(static_cast<std::size_t>(m));  // d beta / d eta_k
    std::vector<Eigen::MatrixXd> dG(static_cast<std::size_t>(m));  // d G / d eta_k
    for (Eigen::Index k = 0; k < m; ++k) {
        GS[k] = lambda(k) * (G * sys.penalties()[k]);
        db[k] = -GS[k] * beta;
        dG[k] = -GS[k] * G;
    }

    const Projection pe = project(sys, e);
    std::vector<Eigen::VectorXd> de(static_cast<std::size_t>(m));
    std::vector<Projection> pde(static_cast<std::size_t>(m));
    for (Eigen::Index k = 0; k < m; ++k) {
        de[k] = -(sys.X() * db[k]);
        pde[k] = project(sys, de[k]);
    }

    const double n = static_cast<double>(sys.n());
    Evaluation out;
    out.ridged = f.ridged;
    out.value = (e.squaredNorm() + 2.0 * bilinear(pe, G, pe)) / n;
    out.gradient.resize(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        const double dT = bilinear(pde[k], G, pe) + bilinear(pe, dG[k], pe) + bilinear(pe, G, pde[k]);
        out.gradient(k) = (2.0 * e.dot(de[k]) + 2.0 * dT) / n;
    }

    out.hessian.resize(m, m);
    for (Eigen::Index k = 0; k < m; ++k) {
        for (Eigen::Index l = k; l < m; ++l) {
            Eigen::VectorXd dbkl = -GS[l] * db[k] - GS[k] * db[l];
            if (k == l) dbkl += db[k];
            const Eigen::VectorXd dekl = -(sys.X() * dbkl);
            const Projection pdkl = project(sys, dekl);
            Eigen::MatrixXd dGkl = GS[l] * GS[k] * G + GS[k] * GS[l] * G;
            if (k == l) dGkl += dG[k];
            const double d2T = bilinear(pdkl, G, pe) + bilinear(pde[k], dG[l], pe) + bilinear(pde[k], G, pde[l]) +
                               bilinear(pde[l], dG[k], pe) + bilinear(pe, dGkl, pe) + bilinear(pe, dG[k], pde[l]) +
                               bilinear(pde[l], G, pde[k]) + bilinear(pe, dG[l], pde[k]) + bilinear(pe, G, pdkl);
            out.hessian(k, l) = out.hessian(l, k) = (2.0 * (de[l].dot(de[k]) + e.dot(dekl)) + 2.0 * d2T) / n;
        }
    }
    return out;
}

std::string to_string(Termination t) {
    switch (t) {
        case Termination::Converged: return "converged";
        case Termination::MaxIterations: return "max_iterations";
        case Termination::Stalled: return "stalled";
    }
    return "unknown";
}

bool OptimizerTrace::boundary_hit() const {
    return std::any_of(at_lower.begin(), at_lower.end(), [](bool b) { return b; }) ||
           std::any_of(at_upper.begin(), at_upper.end(), [](bool b) { return b; });
}

Eigen::VectorXd default_eta0(const PenalizedSystem& system) {
    const auto m = static_cast<Eigen::Index>(system.m());
    if (m < 1) throw InvalidArgument("model has no penalized terms to tune");
    const double scale = (system.X().transpose() * system.X()).trace() / static_cast<double>(m);
    Eigen::VectorXd eta(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        const double tr = system.penalties()[k].trace();
        eta(k) = tr > 0.0 ? std::log(scale / tr) : 0.0;
    }
    return eta;
}

namespace {

// Best point of a coarse grid centred on `center`; LsoCV* can have several local
// minima in eta, and Newton only finds the one whose basin it starts in.
Eigen::VectorXd start_from_grid(const LsocvStarObjective& objective, const Eigen::VectorXd& center,
                                const Box& box, const OptimizerConfig& cfg) {
    const auto m = center.size();
    int points = cfg.start_points;
    while (points >= 3 && std::pow(static_cast<double>(points), static_cast<double>(m)) > cfg.start_cap) --points;
    if (points < 3 || !(cfg.start_span > 0.0)) return center;

    Eigen::VectorXd best = clamp_eta(center, box);
    double best_value = std::numeric_limits<double>::infinity();
    try {
        best_value = objective.value(best);
    } catch (const NumericalError&) {
    }
    std::vector<int> idx(static_cast<std::size_t>(m), 0);
    const double step = 2.0 * cfg.start_span / (points - 1);
    while (true) {
        Eigen::VectorXd eta(m);
        for (Eigen::Index k = 0; k < m; ++k) eta(k) = center(k) - cfg.start_span + step * idx[k];
        eta = clamp_eta(eta, box);
        try {
            const double v = objective.value(eta);
            if (std::isfinite(v) && v < best_value) {
                best_value = v;
                best = eta;
            }
        } catch (const NumericalError&) {
        }
        std::size_t k = 0;
        while (k < idx.size() && ++idx[k] == points) idx[k++] = 0;
        if (k == idx.size()) break;
    }
    return best;
}

}  // namespace

LambdaFit optimize_lambda(std::shared_ptr<const PenalizedSystem> system, const OptimizerConfig& cfg) {
    if (cfg.max_iter < 1 || !(cfg.grad_tol > 0.0) || cfg.step_halvings_max < 0 || !(cfg.hessian_ridge_floor > 0.0))
        throw InvalidArgument("invalid optimizer configuration");
    const LsocvStarObjective objective(system);
    const auto m = static_cast<Eigen::Index>(system->m());
    if (!(cfg.eta_min < cfg.eta_max) || !(cfg.eta_span > 0.0)) throw InvalidArgument("invalid optimizer bounds");
    const Eigen::VectorXd center = default_eta0(*system);
    Box box{Eigen::VectorXd(m), Eigen::VectorXd(m)};
    for (Eigen::Index k = 0; k < m; ++k) {
        box.lo(k) = std::max(cfg.eta_min, center(k) - cfg.eta_span);
        box.hi(k) = std::min(cfg.eta_max, center(k) + cfg.eta_span);
        if (!(box.lo(k) < box.hi(k))) {
            box.lo(k) = cfg.eta_min;
            box.hi(k) = cfg.eta_max;
        }
    }
    Eigen::VectorXd eta = cfg.eta0 ? *cfg.eta0 : start_from_grid(objective, center, box, cfg);
    if (eta.size() != m) throw InvalidArgument("initial eta has wrong length");
    eta = clamp_eta(eta, box);

    OptimizerTrace trace;
    trace.eta_lower = box.lo;
    trace.eta_upper = box.hi;
    auto ev = objective.evaluate(eta);
    if (!std::isfinite(ev.value)) throw NumericalError("LsoCV* is not finite at the initial point");

    auto free_mask = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
        std::vector<bool> free(static_cast<std::size_t>(m));
        for (Eigen::Index k = 0; k < m; ++k)
            free[k] = !((x(k) <= box.lo(k) && g(k) > 0.0) || (x(k) >= box.hi(k) && g(k) < 0.0));
        return free;
    };
    auto projected_norm = [&](const Eigen::VectorXd& g, const std::vector<bool>& free) {
        double v = 0.0;
        for (Eigen::Index k = 0; k < m; ++k)
            if (free[k]) v = std::max(v, std::abs(g(k)));
        return v;
    };

    std::vector<bool> free = free_mask(eta, ev.gradient);
    trace.iterations.push_back({eta, ev.value, projected_norm(ev.gradient, free), 0});
    trace.reason = Termination::MaxIterations;

    // LsoCV* flattens exponentially as lambda_k -> 0 or infinity, so a small gradient
    // can stop Newton far from a bound the criterion keeps decreasing towards. Try
    // each bound the gradient points at and keep it if the value does not rise.
    std::vector<std::array<bool, 2>> probed(static_cast<std::size_t>(m), {false, false});
    auto probe_bounds = [&] {
        if (!cfg.probe_bounds) return false;
        bool moved = false;
        for (Eigen::Index k = 0; k < m; ++k) {
            const bool lower = ev.gradient(k) > 0.0;
            const double target = lower ? box.lo(k) : box.hi(k);
            bool& seen = probed[static_cast<std::size_t>(k)][lower ? 0 : 1];
            if (ev.gradient(k) == 0.0 || eta(k) == target || seen) continue;
            seen = true;
            Eigen::VectorXd trial = eta;
            trial(k) = target;
            double v = 0.0;
            try {
                v = objective.value(trial);
            } catch (const NumericalError&) {
                continue;
            }
            if (!(std::isfinite(v) && v <= ev.value)) continue;
            eta = trial;
            ev = objective.evaluate(eta);
            free = free_mask(eta, ev.gradient);
            trace.iterations.push_back({eta, ev.value, projected_norm(ev.gradient, free), 0});
            moved = true;
        }
        return moved;
    };

    for (int iter = 0; iter < cfg.max_iter; ++iter) {
        if (trace.iterations.back().grad_norm <= cfg.grad_tol) {
            if (probe_bounds()) continue;
            trace.reason = Termination::Converged;
            break;
        }
        std::vector<Eigen::Index> idx;
        for (Eigen::Index k = 0; k < m; ++k)
            if (free[k]) idx.push_back(k);
        const auto nf = static_cast<Eigen::Index>(idx.size());
        Eigen::MatrixXd Hf(nf, nf);
        Eigen::VectorXd gf(nf);
        for (Eigen::Index a = 0; a < nf; ++a) {
            gf(a) = ev.gradient(idx[a]);
            for (Eigen::Index b = 0; b < nf; ++b) Hf(a, b) = ev.hessian(idx[a], idx[b]);
        }
        Eigen::VectorXd step_f;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Hf);
        const Eigen::VectorXd evals = es.eigenvalues().cwiseAbs();
        const double top = evals.size() ? evals.maxCoeff() : 0.0;
        if (es.info() == Eigen::Success && std::isfinite(top) && top > 0.0) {
            const Eigen::VectorXd floored = evals.cwiseMax(cfg.hessian_ridge_floor * top);
            step_f = -(es.eigenvectors() * (es.eigenvectors().transpose() * gf).cwiseQuotient(floored));
        } else {
            step_f = -gf;  // flooring degenerated
        }
        if (!step_f.allFinite()) step_f = -gf;
        const double big = step_f.cwiseAbs().maxCoeff();
        if (big > cfg.max_step) step_f *= cfg.max_step / big;
        Eigen::VectorXd step = Eigen::VectorXd::Zero(m);
        for (Eigen::Index a = 0; a < nf; ++a) step(idx[a]) = step_f(a);

        int halvings = 0;
        bool accepted = false;
        Eigen::VectorXd trial;
        double trial_value = 0.0;
        for (; halvings <= cfg.step_halvings_max; ++halvings) {
            trial = clamp_eta(eta + std::ldexp(1.0, -halvings) * step, box);
            try {
                trial_value = objective.value(trial);
            } catch (const NumericalError&) {
                continue;
            }
            if (std::isfinite(trial_value) && trial_value < ev.value) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            // No representable decrease left along a descent direction: flat optimum.
            const double decrement = -gf.dot(step_f);
            if (decrement <= 1e-10 * (1.0 + std::abs(ev.value))) {
                if (probe_bounds()) continue;
                trace.reason = Termination::Converged;
                break;
            }
            trace.reason = Termination::Stalled;
            trace.at_lower.resize(static_cast<std::size_t>(m));
            trace.at_upper.resize(static_cast<std::size_t>(m));
            for (Eigen::Index k = 0; k < m; ++k) {
                trace.at_lower[k] = eta(k) <= box.lo(k);
                trace.at_upper[k] = eta(k) >= box.hi(k);
            }
            throw StallError("step halving failed to decrease LsoCV*", std::move(trace));
        }
        eta = trial;
        ev = objective.evaluate(eta);
        free = free_mask(eta, ev.gradient);
        trace.iterations.push_back({eta, ev.value, projected_norm(ev.gradient, free), halvings});
        if (trace.iterations.back().grad_norm <= cfg.grad_tol) {
            if (probe_bounds()) continue;
            trace.reason = Termination::Converged;
            break;
        }
    }

    trace.at_lower.resize(static_cast<std::size_t>(m));
    trace.at_upper.resize(static_cast<std::size_t>(m));
    for (Eigen::Index k = 0; k < m; ++k) {
        trace.at_lower[k] = eta(k) <= box.lo(k);
        trace.at_upper[k] = eta(k) >= box.hi(k);
    }
    LambdaFit out;
    out.eta = eta;
    out.lambda = eta.array().exp().matrix();
    out.value = ev.value;
    out.trace = std::move(trace);
    return out;
}

LambdaFit optimize_lambda(const LongitudinalDataset& data, const DesignAssembly& design, const CorrelationModel& model,
                          const OptimizerConfig& config) {
    return optimize_lambda(
        std::make_shared<const PenalizedSystem>(PenalizedSystem::build(data, design, working_blocks(model, data))),
        config);
}

Eigen::VectorXd finite_difference_gradient(const LsocvStarObjective& objective, const Eigen::VectorXd& eta,
                                           double step) {
    Eigen::VectorXd g(eta.size());
    for (Eigen::Index k = 0; k < eta.size(); ++k) {
        Eigen::VectorXd hi = eta, lo = eta;
        hi(k) += step;
        lo(k) -= step;
        g(k) = (objective.value(hi) - objective.value(lo)) / (2.0 * step);
    }
    return g;
}

Eigen::VectorXd log_grid(double lo, double hi, int count) {
    if (!(lo > 0.0) || !(hi >= lo) || count < 1) throw InvalidArgument("invalid log grid");
    if (count == 1) return Eigen::VectorXd::Constant(1, lo);
    return Eigen::VectorXd::LinSpaced(count, std::log(lo), std::log(hi)).array().exp().matrix();
}

GridResult grid_search(std::shared_ptr<const PenalizedSystem> system, const GridSpec& grid) {
    const std::size_t m = system->m();
    if (grid.values.size() != m) throw InvalidArgument("grid needs one value list per penalty");
    std::size_t total = 1;
    for (const auto& v : grid.values) {
        if (v.size() == 0) throw InvalidArgument("grid dimension is empty");
        if (total > grid.cap / static_cast<std::size_t>(v.size()) + 1) throw InvalidArgument("grid exceeds the point cap");
        total *= static_cast<std::size_t>(v.size());
    }
    if (total > grid.cap) throw InvalidArgument("grid has " + std::to_string(total) + " points, cap is " +
                                                std::to_string(grid.cap));

    const LsocvStarObjective objective(system);
    GridResult out;
    out.values.resize(total);
    out.value = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> pos(m, 0);
    Eigen::VectorXd lambda(static_cast<Eigen::Index>(m));
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rem = flat;
        for (std::size_t d = m; d-- > 0;) {
            const auto len = static_cast<std::size_t>(grid.values[d].size());
            pos[d] = rem % len;
            rem /= len;
            lambda(static_cast<Eigen::Index>(d)) = grid.values[d](static_cast<Eigen::Index>(pos[d]));
        }
        double v = std::numeric_limits<double>::infinity();
        try {
            if (grid.criterion == GridCriterion::LsocvStar)
                v = objective.value(lambda.array().log().matrix());
            else
                v = lsocv_exact(fit(system, lambda));
        } catch (const NumericalError&) {
        }
        out.values[flat] = v;
        if (v < out.value) {
            out.value = v;
            out.index = pos;
            out.lambda = lambda;
        }
    }
    if (out.index.empty()) throw NumericalError("criterion could not be evaluated at any grid point");
    return out;
}

GridResult grid_search(const LongitudinalDataset& data, const DesignAssembly& design, const CorrelationModel& model,
                       const GridSpec& grid) {
    return grid_search(
        std::make_shared<const PenalizedSystem>(PenalizedSystem::build(data, design, working_blocks(model, data))),
        grid);
}

std::string trace_csv(const OptimizerTrace& trace) {
    std::ostringstream os;
    os.precision(17);
    const auto m = trace.iterations.empty() ? 0 : trace.iterations.front().eta.size();
    os << "iteration";
    for (Eigen::Index k = 0; k < m; ++k) os << ",eta_" << (k + 1);
    os << ",value,grad_norm,halvings\n";
    for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
        const auto& it = trace.iterations[i];
        os << i;
        for (Eigen::Index k = 0; k < m; ++k) os << ',' << it.eta(k);
        os << ',' << it.value << ',' << it.grad_norm << ',' << it.halvings << '\n';
    }
    return os.str();
}

}  // namespace lsocv
