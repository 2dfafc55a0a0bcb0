#include "commands.hpp"

#include "io.hpp"
#include "log.hpp"
#include "lsocv/criteria.hpp"
#include "lsocv/errors.hpp"
#include "lsocv/estimator.hpp"
#include "lsocv/optimizer.hpp"
#include "lsocv/parallel.hpp"
#include "lsocv/selection.hpp"
#include "lsocv/simulation.hpp"

#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>

namespace lsocv::cli {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

unsigned thread_count(const RunConfig& cfg) {
    return cfg.threads == 0 ? default_threads() : cfg.threads;
}

std::string out_path(const RunConfig& cfg, const std::string& file) {
    std::filesystem::create_directories(cfg.out);
    return (std::filesystem::path(cfg.out) / file).string();
}

json vec(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

json optional_number(const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
}

struct Problem {
    ParsedDataset parsed;
    std::vector<TermSpec> terms;
    DesignAssembly design;
};

Problem load(const RunConfig& cfg) {
    Problem p;
    p.parsed = read_dataset(cfg.input, cfg.min_obs);
    if (!p.parsed.dropped.empty())
        log(LogLevel::Info, std::to_string(p.parsed.dropped.size()) + " subject(s) dropped by --min-obs " +
                                std::to_string(cfg.min_obs));
    for (const auto& t : cfg.terms) p.terms.push_back(parse_term(t));
    p.design = assemble_design(p.parsed.data, p.terms);
    log(LogLevel::Info, "design has " + std::to_string(p.design.p()) + " columns and " +
                            std::to_string(p.design.penalty_count()) + " penalties");
    return p;
}

// Fills in estimated parameters from a working-independence, lambda = 0 fit.
CorrelationModel resolve(const CorrelationSpec& spec, const Problem& p) {
    if (spec.model) return *spec.model;
    const auto& data = p.parsed.data;
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.design.penalty_count()));
    const FitResult ind = fit(data, p.design, Independence{}, zero);
    const auto groups = split_by_subject(ind.residuals, data.offsets());
    if (spec.structure == "cs") return CompoundSymmetry{estimate_cs_rho(groups)};
    if (spec.structure == "ar1") return Ar1{estimate_ar1_rho(groups)};
    if (spec.structure == "un") return Unstructured{estimate_unstructured(groups)};
    if (spec.structure == "exp") {
        if (!data.has_times()) throw InvalidArgument("exp correlation needs a time column");
        std::vector<Eigen::VectorXd> times;
        for (const auto& s : data.subjects()) times.push_back(s.times);
        const ExponentialFit est = estimate_exponential_params(groups, times);
        if (est.boundary_hit) log(LogLevel::Warn, "exponential correlation estimate is at the parameter boundary");
        return ExponentialNugget{est.alpha, est.theta};
    }
    throw InvalidArgument("cannot estimate parameters for '" + spec.structure + "'");
}

CorrelationModel single_correlation(const RunConfig& cfg, const Problem& p) {
    return resolve(parse_correlation(cfg.corr.empty() ? "ind" : cfg.corr.front()), p);
}

Eigen::VectorXd fixed_lambda(const LambdaSpec& spec, std::size_t m) {
    if (spec.fixed.size() == 1) return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m), spec.fixed.front());
    if (spec.fixed.size() != m)
        throw InvalidArgument("--lambda gives " + std::to_string(spec.fixed.size()) + " values for " +
                              std::to_string(m) + " penalties");
    return Eigen::Map<const Eigen::VectorXd>(spec.fixed.data(), static_cast<Eigen::Index>(m));
}

json fit_summary(const RunConfig& cfg, const Problem& p, const FitResult& f) {
    json j;
    j["command"] = cfg.command;
    j["n"] = p.parsed.data.n();
    j["N"] = p.parsed.data.total_obs();
    j["p"] = p.design.p();
    j["dropped_subjects"] = p.parsed.dropped;
    j["correlation"] = correlation_json(*f.correlation);
    j["lambda"] = vec(f.lambda);
    j["beta"] = vec(f.beta);
    j["trace_A"] = f.trace_A;
    j["ridge_applied"] = f.ridge_applied;

    const CriterionReport rep = criterion_report(f);
    json crit;
    crit["lsocv"] = rep.lsocv;
    crit["lsocv_star"] = rep.lsocv_star;
    crit["v_star"] = optional_number(rep.v_star);
    crit["loss"] = optional_number(rep.loss);
    crit["risk"] = optional_number(rep.risk);
    crit["u_score"] = optional_number(rep.u_score);
    j["criteria"] = crit;

    const LeverageReport lev = leverage_diagnostics(f);
    j["leverage"] = {{"mean", lev.mean}, {"max_to_mean", lev.max_to_mean}, {"warning", lev.warning}};
    if (lev.warning) log(LogLevel::Warn, "one subject dominates the fit (leverage ratio above threshold)");
    return j;
}

std::string fitted_csv(const LongitudinalDataset& data, const FitResult& f) {
    std::ostringstream os;
    os.precision(17);
    os << "subject_id," << (data.has_times() ? "time," : "") << "y,fitted,residual\n";
    for (std::size_t i = 0; i < data.n(); ++i) {
        const Subject& s = data.subject(i);
        const Eigen::Index o = data.offsets()[i];
        for (Eigen::Index j = 0; j < s.size(); ++j) {
            os << s.id << ',';
            if (data.has_times()) os << s.times(j) << ',';
            os << s.y(j) << ',' << f.fitted(o + j) << ',' << f.residuals(o + j) << '\n';
        }
    }
    return os.str();
}

std::string bands_csv(const DesignAssembly& design, const BootstrapResult& res) {
    std::ostringstream os;
    os.precision(17);
    os << "term,covariate,modifier,x,estimate,lower,upper\n";
    for (const auto& b : res.bands) {
        const auto& spec = design.terms[b.term].spec;
        for (Eigen::Index g = 0; g < b.grid.size(); ++g)
            os << b.term << ',' << spec.covariate << ',' << spec.modifier << ',' << b.grid(g) << ',' << b.estimate(g)
               << ',' << b.lower(g) << ',' << b.upper(g) << '\n';
    }
    return os.str();
}

json tuning_json(const OptimizerTrace& trace, const Eigen::VectorXd& eta) {
    json j;
    j["method"] = "optimize";
    j["eta"] = vec(eta);
    j["termination"] = to_string(trace.reason);
    j["iterations"] = trace.iterations.size();
    j["boundary_hit"] = trace.boundary_hit();
    j["at_lower"] = trace.at_lower;
    j["at_upper"] = trace.at_upper;
    j["eta_lower"] = vec(trace.eta_lower);
    j["eta_upper"] = vec(trace.eta_upper);
    return j;
}

// Shared by fit and tune: resolves lambda per the policy and fits.
json fit_and_report(const RunConfig& cfg, LambdaMode fallback) {
    const Problem p = load(cfg);
    const CorrelationModel model = single_correlation(cfg, p);
    const LambdaSpec lspec = parse_lambda(cfg.lambda, fallback);
    const auto& data = p.parsed.data;
    auto system = std::make_shared<const PenalizedSystem>(
        PenalizedSystem::build(data, p.design, working_blocks(model, data)));
    const std::size_t m = system->m();

    Eigen::VectorXd lambda;
    json tuning;
    if (lspec.mode == LambdaMode::Fixed) {
        lambda = fixed_lambda(lspec, m);
    } else if (lspec.mode == LambdaMode::Zero || m == 0) {
        lambda = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    } else if (lspec.mode == LambdaMode::Grid) {
        GridSpec grid;
        grid.values.assign(m, log_grid(lspec.grid_lo, lspec.grid_hi, lspec.grid_points));
        const GridResult g = grid_search(system, grid);
        lambda = g.lambda;
        tuning = {{"method", "grid"}, {"value", g.value}, {"index", g.index}};
    } else {
        try {
            const LambdaFit lf = optimize_lambda(system);
            lambda = lf.lambda;
            tuning = tuning_json(lf.trace, lf.eta);
            tuning["value"] = lf.value;
            if (!cfg.trace.empty()) write_text(cfg.trace, trace_csv(lf.trace));
            if (lf.trace.boundary_hit()) log(LogLevel::Warn, "smoothing parameter estimate is at a search bound");
        } catch (const StallError& e) {
            if (!cfg.trace.empty()) write_text(cfg.trace, trace_csv(e.trace()));
            throw;
        }
    }

    FitResult f = fit(system, lambda);
    f.correlation = model;
    json j = fit_summary(cfg, p, f);
    if (!tuning.is_null()) j["tuning"] = tuning;

    if (cfg.bootstrap > 0) {
        BootstrapOptions bo;
        bo.replicates = cfg.bootstrap;
        bo.level = cfg.level;
        bo.seed = cfg.seed;
        bo.threads = thread_count(cfg);
        const BootstrapResult br = bootstrap_ci(data, p.design, model, lambda, bo);
        j["bootstrap"] = {{"replicates", cfg.bootstrap}, {"used", br.replicates_used}, {"dropped", br.dropped},
                          {"level", cfg.level}, {"seed", cfg.seed}};
        if (!cfg.out.empty()) write_text(out_path(cfg, "bands.csv"), bands_csv(p.design, br));
    }
    if (!cfg.out.empty()) write_text(out_path(cfg, "fitted.csv"), fitted_csv(data, f));
    return j;
}

std::string dump(const json& j) {
    return j.dump(2) + "\n";
}

}  // namespace

json correlation_json(const CorrelationModel& model) {
    json j;
    j["structure"] = structure_name(model);
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, CompoundSymmetry> || std::is_same_v<T, Ar1> ||
                          std::is_same_v<T, LagOneBand>) {
                j["params"] = {{"rho", m.rho}};
            } else if constexpr (std::is_same_v<T, ExponentialNugget>) {
                j["params"] = {{"alpha", m.alpha}, {"theta", m.theta}};
            } else if constexpr (std::is_same_v<T, Unstructured>) {
                json rows = json::array();
                for (Eigen::Index r = 0; r < m.corr.rows(); ++r) rows.push_back(vec(m.corr.row(r).transpose()));
                j["params"] = {{"corr", rows}};
            } else {
                j["params"] = json::object();
            }
        },
        model);
    return j;
}

json cmd_fit(const RunConfig& cfg) {
    json j = fit_and_report(cfg, LambdaMode::Fixed);
    if (!cfg.out.empty()) write_text(out_path(cfg, "fit.json"), dump(j));
    return j;
}

json cmd_tune(const RunConfig& cfg) {
    json j = fit_and_report(cfg, LambdaMode::Optimize);
    if (!cfg.out.empty()) write_text(out_path(cfg, "tune.json"), dump(j));
    return j;
}

json cmd_select(const RunConfig& cfg) {
    const Problem p = load(cfg);
    const auto& data = p.parsed.data;
    std::vector<CorrelationModel> candidates;
    if (cfg.corr.empty())
        candidates = moment_candidates(data, p.design);
    else
        for (const auto& c : cfg.corr) candidates.push_back(resolve(parse_correlation(c), p));

    SelectionOptions opt;
    opt.policy = parse_lambda(cfg.lambda, LambdaMode::Zero).mode == LambdaMode::Optimize ? LambdaPolicy::Optimize
                                                                                        : LambdaPolicy::Zero;
    opt.criterion = cfg.criterion == "star" ? SelectionCriterion::LsocvStar : SelectionCriterion::LsocvExact;
    opt.threads = thread_count(cfg);
    const SelectionReport rep = select_correlation(data, p.design, candidates, opt);

    json j;
    j["command"] = "select";
    j["n"] = data.n();
    j["N"] = data.total_obs();
    j["dropped_subjects"] = p.parsed.dropped;
    j["policy"] = rep.policy == LambdaPolicy::Zero ? "zero" : "optimize";
    j["criterion"] = rep.criterion == SelectionCriterion::LsocvExact ? "lsocv" : "lsocv_star";
    json list = json::array();
    for (const auto& c : rep.candidates) {
        json e = correlation_json(c.model);
        e["lsocv"] = optional_number(c.lsocv);
        e["lsocv_star"] = optional_number(c.lsocv_star);
        e["lambda"] = vec(c.lambda);
        if (!c.failure.empty()) {
            e["failure"] = c.failure;
            log(LogLevel::Warn, "candidate " + structure_name(c.model) + " failed: " + c.failure);
        }
        list.push_back(e);
    }
    j["candidates"] = list;
    j["chosen"] = rep.chosen;
    j["chosen_structure"] = structure_name(rep.candidates[rep.chosen].model);
    j["tie"] = rep.tie;
    if (!cfg.out.empty()) write_text(out_path(cfg, "select.json"), dump(j));
    return j;
}

json cmd_simulate(const RunConfig& cfg) {
    json manifest;
    manifest["experiment"] = cfg.experiment;
    manifest["seed"] = cfg.seed;
    manifest["reps"] = cfg.reps;
    manifest["build"] = {{"version", kVersion},
                         {"compiler", __VERSION__},
                         {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                       "." + std::to_string(EIGEN_MINOR_VERSION)}};

    SimScenario sc;
    sc.n = cfg.n;
    sc.cluster_size = cfg.cluster_size;
    sc.sigma = cfg.sigma;
    sc.truth = CompoundSymmetry{cfg.rho};
    sc.seed = cfg.seed;
    sc.replicates = cfg.reps;
    sc.threads = thread_count(cfg);
    const json scenario = {{"n", cfg.n}, {"cluster_size", cfg.cluster_size}, {"sigma", cfg.sigma},
                           {"truth", correlation_json(sc.truth)}};

    std::string table, file;
    if (cfg.experiment == "table1") {
        SelectionExperimentOptions opt;
        opt.replicates = cfg.reps;
        opt.seed = cfg.seed;
        opt.cluster_size = cfg.cluster_size;
        opt.sigma = cfg.sigma;
        opt.threads = thread_count(cfg);
        opt.candidates = cfg.candidates == "moment" ? CandidateParameters::Moment : CandidateParameters::Design;
        opt.criterion = cfg.criterion == "exact" ? SelectionCriterion::LsocvExact : SelectionCriterion::LsocvStar;
        const auto cells = cfg.cell.empty() ? table1_cells() : std::vector<SelectionCell>{parse_cell(cfg.cell)};
        const auto res = run_selection_experiment(cells, opt);
        int failures = 0;
        for (const auto& r : res) failures += r.failures;
        manifest["scenario"] = {{"cluster_size", cfg.cluster_size},
                                {"sigma", cfg.sigma},
                                {"cells", cells.size()},
                                {"candidates", opt.candidates == CandidateParameters::Moment ? "moment" : "design"},
                                {"criterion", opt.criterion == SelectionCriterion::LsocvExact ? "lsocv" : "lsocv_star"}};
        manifest["failures"] = failures;
        table = selection_csv(res);
        file = "table1.csv";
    } else if (cfg.experiment == "efficiency") {
        bool projected = false;
        const CorrelationModel truncated = truncated_working_model(cfg.rho, cfg.cluster_size, &projected);
        if (projected) log(LogLevel::Warn, "truncated working correlation is not positive definite; projected");
        const auto res = run_efficiency_experiment(sc, {sc.truth, truncated});
        json summary = json::array();
        const char* labels[] = {"truth", "truncated"};
        for (std::size_t w = 0; w < res.size(); ++w)
            summary.push_back({{"working", labels[w]},
                               {"structure", res[w].working},
                               {"failures", res[w].failures()},
                               {"median_ratio_v_star", res[w].median_ratio_v_star()},
                               {"median_ratio_opt", res[w].median_ratio_opt()}});
        manifest["scenario"] = scenario;
        manifest["truncated_projected"] = projected;
        manifest["summary"] = summary;
        table = efficiency_csv(res);
        file = "efficiency.csv";
    } else if (cfg.experiment == "functions") {
        const auto res = run_function_estimation(sc, {Independence{}, sc.truth});
        json summary = json::array();
        for (const auto& r : res)
            summary.push_back({{"working", r.working}, {"used", r.replicates_used}, {"failures", r.failures}});
        manifest["scenario"] = scenario;
        manifest["summary"] = summary;
        table = function_estimation_csv(res);
        file = "functions.csv";
    } else {
        const SimulatedData sim = gen_dataset(sc, 0);
        std::ostringstream os;
        write_dataset(os, sim.data);
        manifest["scenario"] = scenario;
        table = os.str();
        file = "data.csv";
    }

    if (!cfg.out.empty()) {
        write_text(out_path(cfg, file), table);
        write_text(out_path(cfg, "manifest.json"), dump(manifest));
    } else {
        manifest["table"] = table;
    }
    return manifest;
}

int run(const RunConfig& cfg) {
    auto fail = [](int code, const char* kind, const std::string& message) {
        json e = {{"error", {{"code", code}, {"kind", kind}, {"message", message}}}};
        std::cerr << e.dump() << '\n';
        return code;
    };
    try {
        validate(cfg);
        json result;
        if (cfg.command == "fit")
            result = cmd_fit(cfg);
        else if (cfg.command == "tune")
            result = cmd_tune(cfg);
        else if (cfg.command == "select")
            result = cmd_select(cfg);
        else
            result = cmd_simulate(cfg);
        if (cfg.out.empty()) {
            if (cfg.command == "simulate")
                std::cout << result["table"].get<std::string>();
            else
                std::cout << dump(result);
        }
        return kExitOk;
    } catch (const InvalidArgument& e) {
        return fail(kExitConfig, "config", e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        return fail(kExitConfig, "config", e.what());
    } catch (const NumericalError& e) {
        return fail(kExitNumerical, "numerical", e.what());
    } catch (const std::exception& e) {
        return fail(kExitNumerical, "numerical", e.what());
    }
}

}  // namespace lsocv::cli
