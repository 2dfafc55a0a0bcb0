#include "lsocv/simulation.hpp"

#include "lsocv/criteria.hpp"
#include "lsocv/errors.hpp"
#include "lsocv/estimator.hpp"
#include "lsocv/parallel.hpp"
#include "lsocv/rng.hpp"
#include "lsocv/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

namespace lsocv {

double true_f1(double x) {
    const double z = (x + 2.0) / 4.0;
    if (z <= 0.0 || z >= 1.0) return 0.0;
    const double c = std::pow(2.0, -0.6);
    return std::sqrt(z * (1.0 - z)) * std::sin(2.0 * std::numbers::pi * (1.0 + c) / (1.0 + std::pow(z, -0.6)));
}

double true_f2(double x) {
    const double z = (x + 2.0) / 4.0;
    return std::sin(8.0 * z - 4.0) + 2.0 * std::exp(-256.0 * (z - 0.5) * (z - 0.5));
}

SimulatedData gen_dataset(const SimScenario& sc, std::uint64_t replicate) {
    if (sc.n < 1 || sc.cluster_size < 1) throw InvalidArgument("scenario needs n >= 1 and cluster size >= 1");
    if (!(sc.sigma >= 0.0)) throw InvalidArgument("noise level must be nonnegative");
    std::vector<double> times(static_cast<std::size_t>(sc.cluster_size));
    std::iota(times.begin(), times.end(), 1.0);
    const Eigen::MatrixXd R = correlation_matrix(sc.truth, times);
    Eigen::LLT<Eigen::MatrixXd> chol(R);
    if (chol.info() != Eigen::Success) throw InvalidArgument("true correlation is not positive definite");
    const Eigen::MatrixXd L = chol.matrixL();

    auto engine = replicate_engine(sc.seed, replicate);
    std::uniform_real_distribution<double> unif(-2.0, 2.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    const Eigen::Index k = sc.cluster_size;
    std::vector<Subject> subjects;
    subjects.reserve(static_cast<std::size_t>(sc.n));
    SimulatedData out;
    out.mu.resize(static_cast<Eigen::Index>(sc.n) * k);
    for (int i = 0; i < sc.n; ++i) {
        Subject s;
        s.id = std::to_string(i + 1);
        s.covariates.resize(k, 2);
        s.times = Eigen::Map<const Eigen::VectorXd>(times.data(), k);
        const double x1_subject = sc.design == CovariateDesign::SubjectLevelX1 ? unif(engine) : 0.0;
        for (Eigen::Index j = 0; j < k; ++j) {
            s.covariates(j, 0) = sc.design == CovariateDesign::SubjectLevelX1 ? x1_subject : unif(engine);
            s.covariates(j, 1) = unif(engine);
        }
        Eigen::VectorXd z(k);
        for (Eigen::Index j = 0; j < k; ++j) z(j) = normal(engine);
        Eigen::VectorXd mu(k);
        for (Eigen::Index j = 0; j < k; ++j) mu(j) = true_f1(s.covariates(j, 0)) + true_f2(s.covariates(j, 1));
        s.y = mu + sc.sigma * (L * z);
        out.mu.segment(static_cast<Eigen::Index>(i) * k, k) = mu;
        out.sigma.push_back(sc.sigma * sc.sigma * R);
        subjects.push_back(std::move(s));
    }
    out.data = LongitudinalDataset({"x1", "x2"}, std::move(subjects));
    return out;
}

std::vector<TermSpec> simulation_terms(int knots) {
    BasisSpec b;
    b.order = 4;
    b.interior_knots = knots;
    b.lower = -2.0;
    b.upper = 2.0;
    b.penalty_order = 2;
    return {TermSpec::smooth("x1", b), TermSpec::smooth("x2", b)};
}

Eigen::MatrixXd table1_unstructured(int size) {
    Eigen::MatrixXd R = Eigen::MatrixXd::Identity(size, size);
    if (size >= 2) R(0, 1) = R(1, 0) = 0.8;
    if (size >= 3) {
        R(1, 2) = R(2, 1) = 0.8;
        R(0, 2) = R(2, 0) = 0.3;
    }
    return R;
}

Eigen::MatrixXd project_to_correlation(const Eigen::MatrixXd& M, double floor) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
    Eigen::MatrixXd P = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    const Eigen::VectorXd d = P.diagonal().cwiseSqrt().cwiseInverse();
    P = d.asDiagonal() * P * d.asDiagonal();
    P = 0.5 * (P + P.transpose()).eval();
    P.diagonal().setOnes();
    return P;
}

CorrelationModel truncated_working_model(double rho, int size, bool* projected) {
    const LagOneBand band{rho};
    try {
        (void)working_block(band, size);
        if (projected) *projected = false;
        return band;
    } catch (const NearSingularError&) {
        std::vector<double> t(static_cast<std::size_t>(size));
        std::iota(t.begin(), t.end(), 1.0);
        if (projected) *projected = true;
        return Unstructured{project_to_correlation(correlation_matrix(band, t))};
    }
}

// ---------------------------------------------------------------------------

namespace {

double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2) return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

// Cheap per-lambda evaluation of V* and the true loss from p x p quantities.
class GridEvaluator {
public:
    GridEvaluator(const PenalizedSystem& sys, const Eigen::VectorXd& mu)
        : sys_(sys), xtx_(sys.X().transpose() * sys.X()), xtmu_(sys.X().transpose() * mu), mumu_(mu.squaredNorm()),
          logdet_(sys.log_det_W()) {}

    struct Scores {
        double v_star, loss;
    };

    Scores at(const Eigen::VectorXd& lambda) const {
        const NormalFactor f = sys_.factor(lambda);
        const Eigen::VectorXd beta = f.solve(sys_.cross());
        return {v_star(f, beta), loss(beta)};
    }

    double loss(const Eigen::VectorXd& beta) const {
        return (beta.dot(xtx_ * beta) - 2.0 * beta.dot(xtmu_) + mumu_) / static_cast<double>(sys_.n());
    }

private:
    double v_star(const NormalFactor& f, const Eigen::VectorXd& beta) const {
        const double N = static_cast<double>(sys_.N());
        const double tr = f.solve(sys_.gram()).trace();
        const double wrss = sys_.weighted_yy() - 2.0 * beta.dot(sys_.cross()) + beta.dot(sys_.gram() * beta);
        if (!(tr < N) || !(wrss > 0.0)) return std::numeric_limits<double>::infinity();
        return std::log(wrss / N) + logdet_ / N + 2.0 * tr / (N - tr);
    }

    const PenalizedSystem& sys_;
    Eigen::MatrixXd xtx_;
    Eigen::VectorXd xtmu_;
    double mumu_;
    double logdet_;
};

}  // namespace

int EfficiencyResult::failures() const {
    return static_cast<int>(
        std::count_if(replicates.begin(), replicates.end(), [](const EfficiencyReplicate& r) { return r.failed; }));
}

double EfficiencyResult::median_ratio_v_star() const {
    std::vector<double> v;
    for (const auto& r : replicates)
        if (!r.failed) v.push_back(r.ratio_v_star());
    return median(std::move(v));
}

double EfficiencyResult::median_ratio_opt() const {
    std::vector<double> v;
    for (const auto& r : replicates)
        if (!r.failed) v.push_back(r.ratio_opt());
    return median(std::move(v));
}

std::vector<EfficiencyResult> run_efficiency_experiment(const SimScenario& scenario,
                                                        const std::vector<CorrelationModel>& working,
                                                        const EfficiencyOptions& options) {
    if (scenario.replicates < 1) throw InvalidArgument("need at least one replicate");
    if (working.empty()) throw InvalidArgument("need at least one working correlation");
    const auto terms = simulation_terms();
    const Eigen::VectorXd grid = log_grid(options.grid_lo, options.grid_hi, options.grid_points);
    const auto reps = static_cast<std::size_t>(scenario.replicates);

    std::vector<EfficiencyResult> results(working.size());
    for (std::size_t w = 0; w < working.size(); ++w) {
        results[w].working = structure_name(working[w]);
        results[w].replicates.resize(reps);
    }

    parallel_for(reps, scenario.threads, [&](std::size_t r) {
        const SimulatedData sim = gen_dataset(scenario, r);
        const DesignAssembly design = assemble_design(sim.data, terms);
        for (std::size_t w = 0; w < working.size(); ++w) {
            EfficiencyReplicate& out = results[w].replicates[r];
            out.replicate = static_cast<int>(r);
            try {
                auto sys = std::make_shared<const PenalizedSystem>(
                    PenalizedSystem::build(sim.data, design, working_blocks(working[w], sim.data)));
                const GridEvaluator eval(*sys, sim.mu);
                const LambdaFit tuned = optimize_lambda(sys, options.optimizer);
                out.lsocv_star_min = tuned.value;
                out.loss_lsocv_star = eval.loss(sys->factor(tuned.lambda).solve(sys->cross()));

                double best_v = std::numeric_limits<double>::infinity();
                double best_loss = std::numeric_limits<double>::infinity();
                double loss_at_best_v = 0.0;
                Eigen::VectorXd lambda(2);
                for (Eigen::Index a = 0; a < grid.size(); ++a) {
                    for (Eigen::Index b = 0; b < grid.size(); ++b) {
                        lambda << grid(a), grid(b);
                        const auto s = eval.at(lambda);
                        if (s.v_star < best_v) {
                            best_v = s.v_star;
                            loss_at_best_v = s.loss;
                        }
                        best_loss = std::min(best_loss, s.loss);
                    }
                }
                if (!std::isfinite(best_v)) throw NumericalError("V* undefined on the whole grid");
                out.loss_v_star = loss_at_best_v;
                out.loss_opt = best_loss;
            } catch (const std::exception& ex) {
                out.failed = true;
                out.failure = ex.what();
            }
        }
    });
    return results;
}

// ---------------------------------------------------------------------------

std::string to_string(TrueStructure s) {
    switch (s) {
        case TrueStructure::IND: return "IND";
        case TrueStructure::CS: return "CS";
        case TrueStructure::AR: return "AR";
        case TrueStructure::UN: return "UN";
    }
    return "?";
}

TrueStructure parse_true_structure(const std::string& s) {
    std::string u = s;
    std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (u == "IND") return TrueStructure::IND;
    if (u == "CS") return TrueStructure::CS;
    if (u == "AR" || u == "AR1") return TrueStructure::AR;
    if (u == "UN") return TrueStructure::UN;
    throw InvalidArgument("unknown correlation structure '" + s + "' (expected IND, CS, AR or UN)");
}

double SelectionCellResult::percent(TrueStructure s) const {
    const int used = replicates - failures;
    return used > 0 ? 100.0 * counts[static_cast<std::size_t>(s)] / used : 0.0;
}

CorrelationModel true_model(TrueStructure s, double rho, int size) {
    switch (s) {
        case TrueStructure::IND: return Independence{};
        case TrueStructure::CS: return CompoundSymmetry{rho};
        case TrueStructure::AR: return Ar1{rho};
        case TrueStructure::UN: return Unstructured{table1_unstructured(size)};
    }
    return Independence{};
}

std::vector<SelectionCell> table1_cells() {
    std::vector<SelectionCell> cells;
    for (int n : {50, 100, 150})
        for (double rho : {0.3, 0.5, 0.8})
            for (auto t : {TrueStructure::IND, TrueStructure::CS, TrueStructure::AR, TrueStructure::UN})
                cells.push_back({n, rho, t});
    return cells;
}

namespace {

std::size_t structure_column(const CorrelationModel& m) {
    const std::string name = structure_name(m);
    if (name == "ind") return 0;
    if (name == "cs") return 1;
    if (name == "ar1") return 2;
    return 3;
}

std::uint64_t cell_seed(std::uint64_t seed, const SelectionCell& c) {
    // Independent of the cell's position in the table, so a single cell reruns identically.
    auto engine = replicate_engine(seed, (static_cast<std::uint64_t>(c.n) << 32) ^
                                             (static_cast<std::uint64_t>(std::lround(c.rho * 1000.0)) << 8) ^
                                             static_cast<std::uint64_t>(c.truth));
    return engine();
}

}  // namespace

std::vector<SelectionCellResult> run_selection_experiment(const std::vector<SelectionCell>& cells,
                                                          const SelectionExperimentOptions& options) {
    if (options.replicates < 1) throw InvalidArgument("need at least one replicate");
    const auto terms = simulation_terms();
    std::vector<SelectionCellResult> results;
    for (const auto& cell : cells) {
        SimScenario sc;
        sc.n = cell.n;
        sc.cluster_size = options.cluster_size;
        sc.sigma = options.sigma;
        sc.truth = true_model(cell.truth, cell.rho, options.cluster_size);
        sc.design = CovariateDesign::ObservationLevel;
        sc.seed = cell_seed(options.seed, cell);

        const auto reps = static_cast<std::size_t>(options.replicates);
        std::vector<int> chosen(reps, -1);
        parallel_for(reps, options.threads, [&](std::size_t r) {
            try {
                const SimulatedData sim = gen_dataset(sc, r);
                const DesignAssembly design = assemble_design(sim.data, terms);
                auto candidates = options.candidates == CandidateParameters::Moment
                                      ? moment_candidates(sim.data, design)
                                      : std::vector<CorrelationModel>{
                                            Independence{}, CompoundSymmetry{cell.rho}, Ar1{cell.rho},
                                            Unstructured{table1_unstructured(options.cluster_size)}};
                if (options.only_true_structure) {
                    const auto want = static_cast<std::size_t>(cell.truth);
                    std::erase_if(candidates, [&](const CorrelationModel& m) { return structure_column(m) != want; });
                }
                SelectionOptions sel;
                sel.criterion = options.criterion;
                const SelectionReport rep = select_correlation(sim.data, design, candidates, sel);
                chosen[r] = static_cast<int>(structure_column(rep.candidates[rep.chosen].model));
            } catch (const std::exception&) {
                chosen[r] = -1;
            }
        });

        SelectionCellResult res;
        res.cell = cell;
        res.replicates = options.replicates;
        for (int c : chosen) {
            if (c < 0)
                ++res.failures;
            else
                ++res.counts[static_cast<std::size_t>(c)];
        }
        results.push_back(res);
    }
    return results;
}

// ---------------------------------------------------------------------------

std::vector<FunctionEstimationResult> run_function_estimation(const SimScenario& scenario,
                                                              const std::vector<CorrelationModel>& working,
                                                              int grid_points, const OptimizerConfig& optimizer) {
    if (grid_points < 2) throw InvalidArgument("evaluation grid needs at least 2 points");
    if (scenario.replicates < 1) throw InvalidArgument("need at least one replicate");
    const auto terms = simulation_terms();
    const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(grid_points, -2.0, 2.0);
    const auto reps = static_cast<std::size_t>(scenario.replicates);

    // curves[w][r] holds the centered estimates of f1 and f2 side by side.
    std::vector<std::vector<std::optional<Eigen::MatrixXd>>> curves(
        working.size(), std::vector<std::optional<Eigen::MatrixXd>>(reps));

    parallel_for(reps, scenario.threads, [&](std::size_t r) {
        const SimulatedData sim = gen_dataset(scenario, r);
        const DesignAssembly design = assemble_design(sim.data, terms);
        std::array<std::size_t, 2> term_index{};
        for (std::size_t t = 0; t < design.terms.size(); ++t) {
            if (design.terms[t].spec.covariate == "x1" && design.terms[t].has_curve()) term_index[0] = t;
            if (design.terms[t].spec.covariate == "x2" && design.terms[t].has_curve()) term_index[1] = t;
        }
        for (std::size_t w = 0; w < working.size(); ++w) {
            try {
                auto sys = std::make_shared<const PenalizedSystem>(
                    PenalizedSystem::build(sim.data, design, working_blocks(working[w], sim.data)));
                const LambdaFit tuned = optimize_lambda(sys, optimizer);
                const Eigen::VectorXd beta = sys->factor(tuned.lambda).solve(sys->cross());
                Eigen::MatrixXd c(grid.size(), 2);
                for (int k = 0; k < 2; ++k) {
                    const Eigen::VectorXd f = design.term_curve(term_index[k], beta, grid);
                    c.col(k) = f.array() - f.mean();
                }
                curves[w][r] = std::move(c);
            } catch (const std::exception&) {
            }
        }
    });

    std::vector<FunctionEstimationResult> results;
    for (std::size_t w = 0; w < working.size(); ++w) {
        FunctionEstimationResult res;
        res.working = structure_name(working[w]);
        res.grid = grid;
        std::vector<const Eigen::MatrixXd*> ok;
        for (const auto& c : curves[w])
            if (c) ok.push_back(&*c);
        res.replicates_used = static_cast<int>(ok.size());
        res.failures = scenario.replicates - res.replicates_used;
        for (int k = 0; k < 2; ++k) {
            CurveSummary& s = res.curves[static_cast<std::size_t>(k)];
            s.truth.resize(grid.size());
            for (Eigen::Index g = 0; g < grid.size(); ++g) s.truth(g) = k == 0 ? true_f1(grid(g)) : true_f2(grid(g));
            s.truth.array() -= s.truth.mean();
            s.mean = Eigen::VectorXd::Zero(grid.size());
            s.variance = Eigen::VectorXd::Zero(grid.size());
            if (ok.empty()) continue;
            for (const auto* c : ok) s.mean += c->col(k);
            s.mean /= static_cast<double>(ok.size());
            for (const auto* c : ok) s.variance.array() += (c->col(k) - s.mean).array().square();
            if (ok.size() > 1) s.variance /= static_cast<double>(ok.size() - 1);
        }
        results.push_back(std::move(res));
    }
    return results;
}

// ---------------------------------------------------------------------------

std::string efficiency_csv(const std::vector<EfficiencyResult>& results) {
    std::ostringstream os;
    os.precision(10);
    os << "working,replicate,failed,loss_lsocv_star,loss_v_star,loss_opt,ratio_v_star,ratio_opt,lsocv_star_min\n";
    for (const auto& res : results)
        for (const auto& r : res.replicates) {
            os << res.working << ',' << r.replicate << ',' << (r.failed ? 1 : 0) << ',';
            if (r.failed)
                os << ",,,,,\n";
            else
                os << r.loss_lsocv_star << ',' << r.loss_v_star << ',' << r.loss_opt << ',' << r.ratio_v_star() << ','
                   << r.ratio_opt() << ',' << r.lsocv_star_min << '\n';
        }
    return os.str();
}

std::string selection_csv(const std::vector<SelectionCellResult>& results) {
    std::ostringstream os;
    os.precision(10);
    os << "n,rho,truth,IND,CS,AR,UN,replicates,failures\n";
    for (const auto& r : results) {
        os << r.cell.n << ',' << r.cell.rho << ',' << to_string(r.cell.truth);
        for (auto s : {TrueStructure::IND, TrueStructure::CS, TrueStructure::AR, TrueStructure::UN})
            os << ',' << r.percent(s);
        os << ',' << r.replicates << ',' << r.failures << '\n';
    }
    return os.str();
}

std::string function_estimation_csv(const std::vector<FunctionEstimationResult>& results) {
    std::ostringstream os;
    os.precision(10);
    os << "working,function,x,truth,mean,bias,variance\n";
    for (const auto& res : results)
        for (int k = 0; k < 2; ++k) {
            const auto& c = res.curves[static_cast<std::size_t>(k)];
            for (Eigen::Index g = 0; g < res.grid.size(); ++g)
                os << res.working << ",f" << (k + 1) << ',' << res.grid(g) << ',' << c.truth(g) << ',' << c.mean(g)
                   << ',' << (c.mean(g) - c.truth(g)) << ',' << c.variance(g) << '\n';
        }
    return os.str();
}

}  // namespace lsocv
