#include "lsocv/criteria.hpp"
#include "lsocv/errors.hpp"
#include "lsocv/optimizer.hpp"
#include "lsocv/simulation.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <sstream>

using namespace lsocv;

namespace {

std::shared_ptr<const PenalizedSystem> two_smooth_system(std::uint64_t seed, int n, double sigma,
                                                         const CorrelationModel& working) {
    SimScenario sc;
    sc.n = n;
    sc.sigma = sigma;
    sc.seed = seed;
    sc.design = CovariateDesign::ObservationLevel;
    const auto sim = gen_dataset(sc, 0);
    const auto terms = simulation_terms(6);
    const auto design = assemble_design(sim.data, terms);
    return std::make_shared<const PenalizedSystem>(
        PenalizedSystem::build(sim.data, design, working_blocks(working, sim.data)));
}

}  // namespace

TEST_CASE("objective value equals LsoCV* of the fit") {
    const auto sys = two_smooth_system(3, 30, 1.0, CompoundSymmetry{0.5});
    const LsocvStarObjective obj(sys);
    Eigen::VectorXd eta(2);
    eta << -1.0, 2.0;
    const double direct = lsocv_star(fit(sys, eta.array().exp().matrix()));
    CHECK(obj.value(eta) == doctest::Approx(direct).epsilon(1e-12));
    CHECK(obj.evaluate(eta).value == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("analytic gradient and Hessian agree with finite differences") {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(-6.0, 6.0);
    for (int inst = 0; inst < 4; ++inst) {
        const auto sys = two_smooth_system(50 + inst, 25, 0.7, Ar1{0.4});
        const LsocvStarObjective obj(sys);
        for (int k = 0; k < 3; ++k) {
            Eigen::VectorXd eta(2);
            eta << u(rng), u(rng);
            const auto ev = obj.evaluate(eta);
            const Eigen::VectorXd fd = finite_difference_gradient(obj, eta, 1e-4);
            CHECK((ev.gradient - fd).norm() <= 1e-5 * std::max(ev.gradient.norm(), 1e-3 * ev.value));

            const double h = 1e-4;
            for (int j = 0; j < 2; ++j) {
                Eigen::VectorXd ep = eta, em = eta;
                ep(j) += h;
                em(j) -= h;
                const Eigen::VectorXd col = (obj.evaluate(ep).gradient - obj.evaluate(em).gradient) / (2 * h);
                CHECK((ev.hessian.col(j) - col).norm() <= 1e-4 * std::max(ev.hessian.norm(), 1e-3 * ev.value));
            }
            CHECK((ev.hessian - ev.hessian.transpose()).norm() <= 1e-12 * (1.0 + ev.hessian.norm()));
        }
    }
}

TEST_CASE("Newton lands near the grid minimizer with monotone steps") {
    const auto sys = two_smooth_system(8, 40, 1.0, CompoundSymmetry{0.8});
    const auto res = optimize_lambda(sys);
    CHECK(res.trace.reason == Termination::Converged);
    for (std::size_t k = 1; k < res.trace.iterations.size(); ++k)
        CHECK(res.trace.iterations[k].value <= res.trace.iterations[k - 1].value);

    GridSpec grid;
    const Eigen::VectorXd g = log_grid(1e-4, 1e4, 61);
    grid.values = {g, g};
    const auto best = grid_search(sys, grid);
    INFO("newton ", res.eta.transpose(), " grid ", best.lambda.array().log().transpose());
    CHECK(res.value <= best.value + 1e-12);
    for (int k = 0; k < 2; ++k) {
        const double step = std::log(g(1) / g(0));
        const double cell = std::abs(res.eta(k) - std::log(best.lambda(k))) / step;
        // An argmin outside the grid range lands on its edge.
        if (res.eta(k) > std::log(g(0)) && res.eta(k) < std::log(g(60))) CHECK(cell <= 1.0 + 1e-9);
    }
}

TEST_CASE("noiseless data drives lambda to the lower bound") {
    // Responses lie exactly in the spline space, so any smoothing only adds error.
    const BasisSpec basis = testutil::unit_basis(4);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::VectorXd c(basis.size());
    for (Eigen::Index j = 0; j < c.size(); ++j) c(j) = std::sin(3.0 * static_cast<double>(j));
    std::vector<Subject> subjects;
    for (int i = 0; i < 30; ++i) {
        Subject s{std::to_string(i), Eigen::VectorXd(4), Eigen::MatrixXd(4, 1), Eigen::VectorXd()};
        for (int j = 0; j < 4; ++j) {
            s.covariates(j, 0) = u(rng);
            s.y(j) = eval_basis(basis, s.covariates(j, 0)).dot(c);
        }
        subjects.push_back(s);
    }
    const LongitudinalDataset data({"x"}, subjects);
    const std::vector<TermSpec> terms{TermSpec::smooth("x", basis)};
    const auto design = assemble_design(data, terms);
    auto sys = std::make_shared<const PenalizedSystem>(
        PenalizedSystem::build(data, design, working_blocks(Independence{}, data)));
    OptimizerConfig cfg;
    const auto res = optimize_lambda(sys, cfg);
    CHECK(res.trace.boundary_hit());
    CHECK(res.eta(0) <= res.trace.eta_lower(0) + 1e-9);
    for (std::size_t k = 1; k < res.trace.iterations.size(); ++k)
        CHECK(res.trace.iterations[k].value <= res.trace.iterations[k - 1].value);
}

TEST_CASE("log grid endpoints and spacing") {
    const Eigen::VectorXd g = log_grid(1e-5, 1e5, 121);
    CHECK(g.size() == 121);
    CHECK(g(0) == doctest::Approx(1e-5));
    CHECK(g(120) == doctest::Approx(1e5));
    CHECK(g(60) == doctest::Approx(1.0));
    CHECK_THROWS_AS(log_grid(0.0, 1.0, 5), InvalidArgument);
}

TEST_CASE("grid search refuses oversized grids and wrong dimension") {
    const auto sys = two_smooth_system(4, 10, 1.0, Independence{});
    GridSpec grid;
    grid.values = {log_grid(1e-3, 1e3, 500), log_grid(1e-3, 1e3, 500)};
    CHECK_THROWS_AS(grid_search(sys, grid), InvalidArgument);
    grid.values = {log_grid(1e-3, 1e3, 5)};
    CHECK_THROWS_AS(grid_search(sys, grid), InvalidArgument);
}

TEST_CASE("default starting point balances penalty and data scale") {
    const auto sys = two_smooth_system(5, 20, 1.0, Independence{});
    const Eigen::VectorXd eta0 = default_eta0(*sys);
    const double target = sys->X().squaredNorm() / 2.0;
    for (int k = 0; k < 2; ++k)
        CHECK(std::exp(eta0(k)) * sys->penalties()[static_cast<std::size_t>(k)].trace() ==
              doctest::Approx(target));
}

TEST_CASE("trace export has one row per iteration") {
    const auto sys = two_smooth_system(6, 25, 1.0, Independence{});
    const auto res = optimize_lambda(sys);
    const std::string csv = trace_csv(res.trace);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "iteration,eta_1,eta_2,value,grad_norm,halvings");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == res.trace.iterations.size());
}

TEST_CASE("exact-criterion grid search minimizes the shortcut LsoCV") {
    const auto sys = two_smooth_system(12, 40, 1.0, CompoundSymmetry{0.5});
    GridSpec grid;
    const Eigen::VectorXd g = log_grid(1e-3, 1e3, 7);
    grid.values = {g, g};
    grid.criterion = GridCriterion::LsocvExact;
    const auto best = grid_search(sys, grid);
    REQUIRE(best.values.size() == 49);
    double direct = std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < 7; ++a)
        for (Eigen::Index b = 0; b < 7; ++b) {
            const double v = lsocv_exact(fit(sys, Eigen::Vector2d(g(a), g(b))));
            CHECK(best.values[static_cast<std::size_t>(a * 7 + b)] == doctest::Approx(v).epsilon(1e-12));
            direct = std::min(direct, v);
        }
    CHECK(best.value == doctest::Approx(direct).epsilon(1e-12));
    CHECK(lsocv_exact(fit(sys, best.lambda)) == doctest::Approx(direct).epsilon(1e-12));
}
