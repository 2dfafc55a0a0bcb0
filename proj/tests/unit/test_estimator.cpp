#include "lsocv/errors.hpp"
#include "lsocv/estimator.hpp"

#include "dense.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <random>

using namespace lsocv;

namespace {

std::vector<TermSpec> smooth_x_linear_z() {
    return {TermSpec::smooth("x", testutil::unit_basis(3)), TermSpec::linear("z")};
}

}  // namespace

TEST_CASE("fit matches dense hat matrix and a stacked least-squares oracle") {
    std::mt19937_64 rng(31);
    for (int rep = 0; rep < 10; ++rep) {
        const auto data = testutil::random_dataset(rng, 5, 3, 3);
        const auto terms = smooth_x_linear_z();
        const auto design = assemble_design(data, terms);
        auto blocks = testutil::random_blocks(rng, data);
        auto sys = std::make_shared<const PenalizedSystem>(PenalizedSystem::build(data, design, blocks));
        Eigen::VectorXd lambda(1);
        lambda << std::exp(std::uniform_real_distribution<double>(-4, 2)(rng));
        const FitResult f = fit(sys, lambda);
        const auto d = testutil::dense(*sys, lambda);

        CHECK((f.fitted - d.A * sys->y()).norm() <= 1e-9 * (1.0 + f.fitted.norm()));
        CHECK(f.trace_A == doctest::Approx(d.A.trace()).epsilon(1e-10));
        double blocks_trace = 0.0;
        for (std::size_t i = 0; i < f.n(); ++i) {
            const auto o = sys->offsets()[i];
            const auto k = sys->rows_of(i);
            CHECK((f.hat_blocks[i] - d.A.block(o, o, k, k)).norm() <= 1e-10);
            blocks_trace += f.hat_blocks[i].trace();
            CHECK(f.hat_blocks[i].trace() >= -1e-12);
        }
        CHECK(blocks_trace == doctest::Approx(f.trace_A).epsilon(1e-10));
        CHECK(f.trace_A <= design.p() + 1e-9);

        // argmin |W^{-1/2}(y - X b)|^2 + lambda b'Sb as one least-squares problem.
        Eigen::LLT<Eigen::MatrixXd> wl(d.W);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> se(sys->penalties()[0]);
        const Eigen::MatrixXd Sroot =
            se.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * se.eigenvectors().transpose();
        const Eigen::Index N = sys->N(), p = sys->p();
        Eigen::MatrixXd M(N + p, p);
        M << wl.matrixL().solve(sys->X()), std::sqrt(lambda(0)) * Sroot;
        Eigen::VectorXd r(N + p);
        r << wl.matrixL().solve(sys->y()), Eigen::VectorXd::Zero(p);
        const Eigen::VectorXd beta = M.colPivHouseholderQr().solve(r);
        CHECK((f.beta - beta).norm() <= 1e-9 * (1.0 + beta.norm()));
        CHECK((f.apply_hat(sys->y()) - f.fitted).norm() <= 1e-10 * (1.0 + f.fitted.norm()));
    }
}

TEST_CASE("square nonsingular design interpolates") {
    std::mt19937_64 rng(4);
    std::vector<Subject> subjects;
    std::normal_distribution<double> g;
    for (int i = 0; i < 4; ++i) {
        Subject s{std::to_string(i), Eigen::VectorXd(1), Eigen::MatrixXd(1, 4), Eigen::VectorXd()};
        for (int j = 0; j < 4; ++j) s.covariates(0, j) = g(rng);
        s.y(0) = g(rng);
        subjects.push_back(s);
    }
    LongitudinalDataset data({"a", "b", "c", "d"}, subjects);
    const std::vector<TermSpec> terms{TermSpec::linear("a"), TermSpec::linear("b"), TermSpec::linear("c"),
                                      TermSpec::linear("d")};
    const auto design = assemble_design(data, terms);
    const auto f = fit(data, design, Independence{}, Eigen::VectorXd());
    CHECK((f.fitted - data.response()).norm() <= 1e-10);
    for (const auto& A : f.hat_blocks) CHECK(A(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("very large lambda approaches the weighted straight-line fit") {
    std::mt19937_64 rng(12);
    const auto data = testutil::random_dataset(rng, 30, 4, 4);
    const std::vector<TermSpec> terms{TermSpec::smooth("x", testutil::unit_basis(6))};
    const auto design = assemble_design(data, terms);
    const CorrelationModel model = CompoundSymmetry{0.5};
    Eigen::VectorXd lambda(1);
    lambda << 1e8;
    const auto f = fit(data, design, model, lambda);

    const std::vector<Subject>& ss = data.subjects();
    const Eigen::Index N = data.total_obs();
    Eigen::MatrixXd Z(N, 2);
    Z.col(0).setOnes();
    Z.col(1) = data.column("x");
    Eigen::MatrixXd ZtWZ = Eigen::MatrixXd::Zero(2, 2);
    Eigen::VectorXd ZtWy = Eigen::VectorXd::Zero(2);
    const auto w = working_block(model, 4);
    for (std::size_t i = 0; i < ss.size(); ++i) {
        const auto o = data.offsets()[i];
        const Eigen::MatrixXd Zi = Z.middleRows(o, 4);
        ZtWZ += Zi.transpose() * w.solve(Zi);
        ZtWy += Zi.transpose() * w.solve(ss[i].y);
    }
    const Eigen::VectorXd line = Z * ZtWZ.ldlt().solve(ZtWy);
    CHECK((f.fitted - line).cwiseAbs().maxCoeff() <= 1e-4);
}

TEST_CASE("negative lambda and wrong length are rejected") {
    std::mt19937_64 rng(1);
    const auto data = testutil::random_dataset(rng, 6, 2, 3);
    const auto terms = smooth_x_linear_z();
    const auto design = assemble_design(data, terms);
    Eigen::VectorXd lambda(1);
    lambda << -1.0;
    CHECK_THROWS_AS(fit(data, design, Independence{}, lambda), InvalidArgument);
    CHECK_THROWS_AS(fit(data, design, Independence{}, Eigen::VectorXd::Ones(2)), InvalidArgument);
}

TEST_CASE("rank-deficient unpenalized system is ridged and flagged") {
    std::vector<Subject> subjects;
    for (int i = 0; i < 4; ++i) {
        Subject s{std::to_string(i), Eigen::VectorXd::Constant(2, i), Eigen::MatrixXd(2, 2), Eigen::VectorXd()};
        s.covariates << 1.0 * i, 2.0 * i, i + 0.5, 2.0 * i + 1.0;
        subjects.push_back(s);
    }
    LongitudinalDataset data({"a", "b"}, subjects);
    const std::vector<TermSpec> terms{TermSpec::linear("1"), TermSpec::linear("a"), TermSpec::linear("b")};
    const auto design = assemble_design(data, terms);
    const auto f = fit(data, design, Independence{}, Eigen::VectorXd());
    CHECK(f.ridge_applied);
}

TEST_CASE("trace of the hat matrix is nonincreasing in lambda") {
    std::mt19937_64 rng(77);
    const auto data = testutil::random_dataset(rng, 8, 2, 4);
    const auto terms = smooth_x_linear_z();
    const auto design = assemble_design(data, terms);
    auto sys = std::make_shared<const PenalizedSystem>(
        PenalizedSystem::build(data, design, working_blocks(Ar1{0.4}, data)));
    double prev = std::numeric_limits<double>::infinity();
    for (double l = 1e-6; l < 1e6; l *= 3.0) {
        const double tr = fit(sys, Eigen::VectorXd::Constant(1, l)).trace_A;
        CHECK(tr <= prev + 1e-10);
        prev = tr;
    }
}

TEST_CASE("fit is invariant to subject order") {
    std::mt19937_64 rng(45);
    const auto data = testutil::random_dataset(rng, 7, 2, 4);
    std::vector<std::size_t> perm(data.n());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto shuffled = data.subset(perm);
    const auto terms = smooth_x_linear_z();
    const Eigen::VectorXd lambda = Eigen::VectorXd::Constant(1, 0.1);
    const auto a = fit(data, assemble_design(data, terms), Ar1{0.3}, lambda);
    const auto b = fit(shuffled, assemble_design(shuffled, terms), Ar1{0.3}, lambda);
    CHECK((a.beta - b.beta).norm() <= 1e-10);
    for (std::size_t i = 0; i < perm.size(); ++i) CHECK((a.hat_blocks[perm[i]] - b.hat_blocks[i]).norm() <= 1e-10);
}

TEST_CASE("leverage diagnostics") {
    SUBCASE("identical designs give equal leverage") {
        std::vector<Subject> subjects;
        std::mt19937_64 rng(3);
        std::normal_distribution<double> g;
        Eigen::MatrixXd cov(3, 1);
        cov << 0.1, 0.5, 0.9;
        for (int i = 0; i < 6; ++i) {
            Subject s{std::to_string(i), Eigen::VectorXd(3), cov, Eigen::VectorXd()};
            for (int j = 0; j < 3; ++j) s.y(j) = g(rng);
            subjects.push_back(s);
        }
        LongitudinalDataset data({"x"}, subjects);
        const std::vector<TermSpec> terms{TermSpec::smooth("x", testutil::unit_basis(2))};
        const auto f = fit(data, assemble_design(data, terms), CompoundSymmetry{0.3}, Eigen::VectorXd::Ones(1));
        const auto rep = leverage_diagnostics(f);
        for (Eigen::Index i = 0; i < rep.subject_leverage.size(); ++i)
            CHECK(rep.subject_leverage(i) == doctest::Approx(f.trace_A / 6.0).epsilon(1e-10));
        CHECK(rep.subject_leverage.sum() == doctest::Approx(f.trace_A).epsilon(1e-10));
        CHECK(rep.max_to_mean == doctest::Approx(1.0));
        CHECK_FALSE(rep.warning);
    }
    SUBCASE("unbalanced instance has ratio above one") {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<Subject> subjects;
        for (int i = 0; i < 10; ++i) {
            const int k = i == 0 ? 20 : 2;
            Subject s{std::to_string(i), Eigen::VectorXd(k), Eigen::MatrixXd(k, 1), Eigen::VectorXd()};
            for (int j = 0; j < k; ++j) {
                s.covariates(j, 0) = u(rng);
                s.y(j) = u(rng);
            }
            subjects.push_back(s);
        }
        LongitudinalDataset data({"x"}, subjects);
        const std::vector<TermSpec> terms{TermSpec::smooth("x", testutil::unit_basis(3))};
        const auto f = fit(data, assemble_design(data, terms), Independence{}, Eigen::VectorXd::Constant(1, 0.01));
        const auto rep = leverage_diagnostics(f);
        CHECK(rep.max_to_mean > 1.0);
        CHECK(rep.mean == doctest::Approx(f.trace_A / 10.0));
    }
}

TEST_CASE("empirical quantile uses linear interpolation") {
    CHECK(empirical_quantile({1, 2, 3, 4}, 0.5) == doctest::Approx(2.5));
    CHECK(empirical_quantile({4, 1, 3, 2}, 0.0) == 1.0);
    CHECK(empirical_quantile({4, 1, 3, 2}, 1.0) == 4.0);
    CHECK(empirical_quantile({0, 10}, 0.975) == doctest::Approx(9.75));
}

TEST_CASE("bootstrap on noiseless data has zero width") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Subject> subjects;
    for (int i = 0; i < 25; ++i) {
        Subject s{std::to_string(i), Eigen::VectorXd(4), Eigen::MatrixXd(4, 1), Eigen::VectorXd()};
        for (int j = 0; j < 4; ++j) {
            s.covariates(j, 0) = u(rng);
            s.y(j) = 1.0 + 2.0 * s.covariates(j, 0);  // in the penalty null space
        }
        subjects.push_back(s);
    }
    LongitudinalDataset data({"x"}, subjects);
    const std::vector<TermSpec> terms{TermSpec::smooth("x", testutil::unit_basis(3))};
    const auto design = assemble_design(data, terms);
    BootstrapOptions opt;
    opt.replicates = 50;
    opt.grid_points = 20;
    const auto res = bootstrap_ci(data, design, CompoundSymmetry{0.5}, Eigen::VectorXd::Ones(1), opt);
    REQUIRE(res.bands.size() == 1);
    CHECK(res.bands[0].width().cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(res.replicates_used + res.dropped == 50);
}

TEST_CASE("bootstrap width shrinks as subjects are added") {
    auto make = [](int n, std::uint64_t seed) {
        auto rng = replicate_engine(seed, 0);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::normal_distribution<double> g;
        std::vector<Subject> subjects;
        for (int i = 0; i < n; ++i) {
            Subject s{std::to_string(i), Eigen::VectorXd(3), Eigen::MatrixXd(3, 1), Eigen::VectorXd()};
            for (int j = 0; j < 3; ++j) {
                s.covariates(j, 0) = u(rng);
                s.y(j) = std::sin(5.0 * s.covariates(j, 0)) + 0.5 * g(rng);
            }
            subjects.push_back(s);
        }
        return LongitudinalDataset({"x"}, subjects);
    };
    const std::vector<TermSpec> terms{TermSpec::smooth("x", testutil::unit_basis(4))};
    BootstrapOptions opt;
    opt.replicates = 100;
    opt.grid_points = 25;
    int smaller = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto a = make(40, seed);
        const auto b = make(160, seed + 100);
        opt.seed = seed;
        const auto wa = bootstrap_ci(a, assemble_design(a, terms), Independence{}, Eigen::VectorXd::Constant(1, 1e-3),
                                     opt);
        const auto wb = bootstrap_ci(b, assemble_design(b, terms), Independence{}, Eigen::VectorXd::Constant(1, 1e-3),
                                     opt);
        if (wb.bands[0].width().mean() < wa.bands[0].width().mean()) ++smaller;
    }
    CHECK(smaller >= 4);
}

TEST_CASE("bootstrap validates its options") {
    std::mt19937_64 rng(2);
    const auto data = testutil::random_dataset(rng, 10, 2, 3);
    const auto terms = smooth_x_linear_z();
    const auto design = assemble_design(data, terms);
    BootstrapOptions opt;
    opt.replicates = 1;
    CHECK_THROWS_AS(bootstrap_ci(data, design, Independence{}, Eigen::VectorXd::Ones(1), opt), InvalidArgument);
    opt.replicates = 10;
    opt.level = 1.0;
    CHECK_THROWS_AS(bootstrap_ci(data, design, Independence{}, Eigen::VectorXd::Ones(1), opt), InvalidArgument);
}
