#include "lsocv/errors.hpp"
#include "lsocv/simulation.hpp"

#include <doctest.h>

#include <cmath>

using namespace lsocv;

TEST_CASE("true functions") {
    CHECK(true_f1(-2.0) == 0.0);
    CHECK(std::isfinite(true_f1(2.0)));
    const double z = 0.3;
    const double c = std::pow(2.0, -0.6);
    CHECK(true_f1(4 * z - 2) ==
          doctest::Approx(std::sqrt(z * (1 - z)) * std::sin(2 * M_PI * (1 + c) / (1 + std::pow(z, -0.6)))));
    CHECK(true_f2(0.0) == doctest::Approx(2.0));
}

TEST_CASE("noiseless scenario returns the mean exactly") {
    SimScenario sc;
    sc.n = 20;
    sc.sigma = 0.0;
    const auto sim = gen_dataset(sc, 3);
    CHECK(sim.data.response() == sim.mu);
    for (const auto& s : sim.data.subjects()) {
        CHECK(s.covariates.col(0).isConstant(s.covariates(0, 0)));
        for (Eigen::Index j = 0; j < s.size(); ++j)
            CHECK(s.y(j) == true_f1(s.covariates(j, 0)) + true_f2(s.covariates(j, 1)));
    }
}

TEST_CASE("within-subject residual correlation matches compound symmetry") {
    SimScenario sc;
    sc.n = 10000;
    sc.truth = CompoundSymmetry{0.8};
    const auto sim = gen_dataset(sc, 0);
    const Eigen::VectorXd eps = sim.data.response() - sim.mu;
    const Eigen::Map<const Eigen::MatrixXd> E(eps.data(), 5, sc.n);
    const Eigen::MatrixXd C = E * E.transpose() / sc.n;
    for (int a = 0; a < 5; ++a)
        for (int b = a + 1; b < 5; ++b) CHECK(std::abs(C(a, b) / std::sqrt(C(a, a) * C(b, b)) - 0.8) <= 0.02);
    CHECK(sim.sigma[0] == Eigen::MatrixXd(correlation_matrix(CompoundSymmetry{0.8}, std::vector<double>{1, 2, 3, 4, 5})));
}

TEST_CASE("unstructured truth reproduces its pairwise correlations") {
    SimScenario sc;
    sc.n = 10000;
    sc.truth = Unstructured{table1_unstructured(5)};
    const auto sim = gen_dataset(sc, 0);
    const Eigen::VectorXd eps = sim.data.response() - sim.mu;
    const Eigen::Map<const Eigen::MatrixXd> E(eps.data(), 5, sc.n);
    const Eigen::MatrixXd C = E * E.transpose() / sc.n;
    auto corr = [&](int a, int b) { return C(a, b) / std::sqrt(C(a, a) * C(b, b)); };
    CHECK(std::abs(corr(0, 1) - 0.8) <= 0.02);
    CHECK(std::abs(corr(1, 2) - 0.8) <= 0.02);
    CHECK(std::abs(corr(0, 2) - 0.3) <= 0.02);
    CHECK(std::abs(corr(3, 4)) <= 0.03);
}

TEST_CASE("datasets depend only on seed and replicate") {
    SimScenario sc;
    sc.n = 30;
    const auto a = gen_dataset(sc, 5);
    const auto b = gen_dataset(sc, 5);
    const auto c = gen_dataset(sc, 6);
    CHECK(a.data.response() == b.data.response());
    CHECK(a.data.column("x2") == b.data.column("x2"));
    CHECK(a.data.response() != c.data.response());
    sc.seed = 2;
    CHECK(gen_dataset(sc, 5).data.response() != a.data.response());
}

TEST_CASE("invalid scenarios are rejected") {
    SimScenario sc;
    sc.sigma = -1.0;
    CHECK_THROWS_AS(gen_dataset(sc, 0), InvalidArgument);
    sc = {};
    sc.truth = CompoundSymmetry{1.5};
    CHECK_THROWS(gen_dataset(sc, 0));
}

TEST_CASE("projection to a correlation matrix") {
    bool projected = false;
    const auto m = truncated_working_model(0.8, 5, &projected);
    CHECK(projected);
    const auto w = working_block(m, 5);
    CHECK(w.matrix().diagonal().isOnes());
    CHECK(w.matrix()(0, 1) > 0.6);
    truncated_working_model(0.4, 5, &projected);
    CHECK_FALSE(projected);
}

TEST_CASE("parallel and serial replicates agree") {
    SimScenario sc;
    sc.n = 30;
    sc.replicates = 4;
    sc.sigma = 0.5;
    EfficiencyOptions opt;
    opt.grid_points = 9;
    sc.threads = 1;
    const auto serial = run_efficiency_experiment(sc, {Independence{}}, opt);
    sc.threads = 3;
    const auto parallel = run_efficiency_experiment(sc, {Independence{}}, opt);
    CHECK(efficiency_csv(serial) == efficiency_csv(parallel));
    for (const auto& r : serial[0].replicates) {
        REQUIRE_FALSE(r.failed);
        CHECK(r.loss_opt <= r.loss_v_star + 1e-12);
    }
}

TEST_CASE("selection restricted to the truth always picks it") {
    SelectionExperimentOptions opt;
    opt.replicates = 3;
    opt.only_true_structure = true;
    const auto res = run_selection_experiment({{50, 0.5, TrueStructure::AR}}, opt);
    CHECK(res[0].percent(TrueStructure::AR) == 100.0);
    CHECK(res[0].failures == 0);
}

TEST_CASE("single-cell and table runs agree") {
    SelectionExperimentOptions opt;
    opt.replicates = 2;
    const SelectionCell a{50, 0.3, TrueStructure::IND}, b{50, 0.5, TrueStructure::CS};
    const auto both = run_selection_experiment({a, b}, opt);
    const auto single = run_selection_experiment({b}, opt);
    CHECK(both[1].counts == single[0].counts);
    CHECK(table1_cells().size() == 36);
}

TEST_CASE("function estimation on noiseless data has no variance") {
    SimScenario sc;
    sc.n = 40;
    sc.sigma = 0.0;
    sc.replicates = 3;
    sc.design = CovariateDesign::ObservationLevel;
    const auto res = run_function_estimation(sc, {Independence{}}, 50);
    REQUIRE(res.size() == 1);
    CHECK(res[0].replicates_used + res[0].failures == 3);
    for (const auto& c : res[0].curves) {
        CHECK(c.mean.size() == 50);
        CHECK(std::abs(c.mean.mean()) <= 1e-10);
    }
    const auto csv = function_estimation_csv(res);
    CHECK(csv.rfind("working,function,x,truth,mean,bias,variance\n", 0) == 0);
}

TEST_CASE("structure names parse") {
    CHECK(parse_true_structure("cs") == TrueStructure::CS);
    CHECK(parse_true_structure("AR1") == TrueStructure::AR);
    CHECK_THROWS_AS(parse_true_structure("toeplitz"), InvalidArgument);
}
