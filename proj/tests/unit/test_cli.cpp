#include "commands.hpp"
#include "config.hpp"
#include "io.hpp"

#include "lsocv/errors.hpp"
#include "lsocv/simulation.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace lsocv;
using namespace lsocv::cli;

namespace {

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("lsocv_cli_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

void put(const std::filesystem::path& file, const std::string& text) {
    std::ofstream(file) << text;
}

std::string slurp(const std::filesystem::path& file) {
    std::ifstream in(file);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

RunConfig simulation_csv(const std::filesystem::path& dir, double sigma) {
    RunConfig cfg;
    cfg.command = "simulate";
    cfg.experiment = "dataset";
    cfg.n = 60;
    cfg.sigma = sigma;
    cfg.out = dir.string();
    cmd_simulate(cfg);
    return cfg;
}

}  // namespace

TEST_CASE("term parser") {
    const TermSpec t = parse_term("smooth:x1:knots=7:order=3:q=1:lower=-1:upper=2");
    CHECK(t.kind == TermKind::Smooth);
    CHECK(t.covariate == "x1");
    CHECK(t.basis.interior_knots == 7);
    CHECK(t.basis.order == 3);
    CHECK(t.basis.penalty_order == 1);
    CHECK(t.basis.lower == -1.0);
    CHECK(t.basis.upper == 2.0);
    CHECK_FALSE(t.domain_from_data);
    CHECK(parse_term("smooth:x").domain_from_data);
    CHECK(parse_term("linear:x").kind == TermKind::Linear);
    const TermSpec v = parse_term("vc:time:x");
    CHECK(v.kind == TermKind::VaryingCoefficient);
    CHECK(v.modifier == "x");
    CHECK_THROWS_AS(parse_term("smooth:x:knots=abc"), InvalidArgument);
    CHECK_THROWS_AS(parse_term("cubic:x"), InvalidArgument);
    CHECK_THROWS_AS(parse_term("smooth:x:lower=2:upper=1"), InvalidArgument);
}

TEST_CASE("correlation and lambda parsers") {
    CHECK(parse_correlation("cs").estimate);
    const CorrelationSpec cs = parse_correlation("cs:rho=0.4");
    REQUIRE(cs.model);
    CHECK(std::get<CompoundSymmetry>(*cs.model).rho == 0.4);
    CHECK(parse_correlation("ar1:rho=-0.2").model.has_value());
    CHECK(parse_correlation("ind").model.has_value());
    CHECK_THROWS_AS(parse_correlation("cs:rho=1.5"), InvalidArgument);
    CHECK_THROWS_AS(parse_correlation("toeplitz"), InvalidArgument);

    const LambdaSpec f = parse_lambda("fixed=0.5,2", LambdaMode::Optimize);
    CHECK(f.mode == LambdaMode::Fixed);
    CHECK(f.fixed == std::vector<double>{0.5, 2.0});
    const LambdaSpec g = parse_lambda("grid=1e-3:1e3:21", LambdaMode::Optimize);
    CHECK(g.mode == LambdaMode::Grid);
    CHECK(g.grid_points == 21);
    CHECK(parse_lambda("", LambdaMode::Zero).mode == LambdaMode::Zero);
    CHECK_THROWS_AS(parse_lambda("fixed=-1", LambdaMode::Fixed), InvalidArgument);
    CHECK_THROWS_AS(parse_lambda("grid=1:0.1:5", LambdaMode::Fixed), InvalidArgument);

    const SelectionCell c = parse_cell("n=100,rho=0.5,truth=CS");
    CHECK(c.n == 100);
    CHECK(c.rho == 0.5);
    CHECK(c.truth == TrueStructure::CS);
    CHECK_THROWS_AS(parse_cell("n=100,rho=0.5,truth=XYZ"), InvalidArgument);
}

TEST_CASE("dataset reader groups rows by subject") {
    std::istringstream in("subject_id,time,y,x\na,1,1.0,0.1\nb,1,2.0,0.2\na,2,1.5,0.3\nb,2,2.5,0.4\na,3,1.2,0.5\nb,3,2.2,0.6\n");
    const ParsedDataset p = read_dataset(in);
    REQUIRE(p.data.n() == 2);
    CHECK(p.data.cluster_sizes() == std::vector<Eigen::Index>{3, 3});
    CHECK(p.data.subject(0).id == "a");
    CHECK(p.data.subject(0).y(1) == 1.5);
    CHECK(p.data.subject(1).covariates(2, 0) == 0.6);
    CHECK(p.data.has_times());
    CHECK(p.dropped.empty());
}

TEST_CASE("dataset reader drops small subjects and rejects bad files") {
    std::istringstream in("subject_id,y,x\na,1,0\na,2,1\nb,3,2\nc,1,1\nc,2,2\n");
    const ParsedDataset p = read_dataset(in, 2);
    CHECK(p.data.n() == 2);
    CHECK(p.dropped == std::vector<std::string>{"b"});

    std::istringstream missing("id,y,x\na,1,0\n");
    CHECK_THROWS_AS(read_dataset(missing), InvalidArgument);
    std::istringstream no_y("subject_id,x\na,1\n");
    CHECK_THROWS_AS(read_dataset(no_y), InvalidArgument);
    std::istringstream text("subject_id,y,x\na,high,0\n");
    CHECK_THROWS_AS(read_dataset(text), InvalidArgument);
    std::istringstream ragged("subject_id,y,x\na,1\n");
    CHECK_THROWS_AS(read_dataset(ragged), InvalidArgument);
    std::istringstream empty("");
    CHECK_THROWS_AS(read_dataset(empty), InvalidArgument);
    CHECK_THROWS_AS(read_dataset("/nonexistent/data.csv"), InvalidArgument);
}

TEST_CASE("dataset round trip is exact") {
    SimScenario sc;
    sc.n = 25;
    const SimulatedData sim = gen_dataset(sc, 3);
    std::ostringstream first;
    write_dataset(first, sim.data);
    std::istringstream in(first.str());
    const ParsedDataset back = read_dataset(in);
    REQUIRE(back.data.n() == sim.data.n());
    CHECK(back.data.response() == sim.data.response());
    CHECK(back.data.column("x1") == sim.data.column("x1"));
    CHECK(back.data.column("x2") == sim.data.column("x2"));
    std::ostringstream second;
    write_dataset(second, back.data);
    CHECK(first.str() == second.str());
}

TEST_CASE("config file merge") {
    const auto dir = scratch("config");
    put(dir / "good.json", R"({"input": "data.csv", "terms": ["smooth:x"], "seed": 9, "corr": {"structure": "cs", "rho": 0.3}})");
    RunConfig cfg;
    cfg.seed = 4;
    merge_config_file((dir / "good.json").string(), cfg, {"seed"});
    CHECK(cfg.input == "data.csv");
    CHECK(cfg.terms == std::vector<std::string>{"smooth:x"});
    CHECK(cfg.seed == 4);
    REQUIRE(cfg.corr.size() == 1);
    CHECK(parse_correlation(cfg.corr[0]).model.has_value());

    put(dir / "bad.json", R"({"input": "data.csv", "smoothing": 3})");
    RunConfig other;
    CHECK_THROWS_AS(merge_config_file((dir / "bad.json").string(), other, {}), InvalidArgument);
    put(dir / "broken.json", "{");
    CHECK_THROWS_AS(merge_config_file((dir / "broken.json").string(), other, {}), InvalidArgument);
}

TEST_CASE("exit codes") {
    const auto dir = scratch("exit");
    put(dir / "sat.csv", "subject_id,y,x\na,1,0\nb,2,1\n");
    RunConfig cfg;
    cfg.command = "fit";
    cfg.input = (dir / "sat.csv").string();
    cfg.terms = {"linear:1", "linear:x"};
    cfg.lambda = "zero";
    CHECK(run(cfg) == kExitNumerical);

    cfg.terms.clear();
    CHECK(run(cfg) == kExitConfig);
    cfg.terms = {"linear:x"};
    cfg.input = (dir / "missing.csv").string();
    CHECK(run(cfg) == kExitConfig);
    RunConfig sim;
    sim.command = "simulate";
    sim.experiment = "table2";
    CHECK(run(sim) == kExitConfig);
}

TEST_CASE("select reports every candidate") {
    const auto dir = scratch("select");
    simulation_csv(dir, 1.0);
    RunConfig cfg;
    cfg.command = "select";
    cfg.input = (dir / "data.csv").string();
    cfg.terms = {"smooth:x1:knots=10:lower=-2:upper=2", "smooth:x2:knots=10:lower=-2:upper=2"};
    cfg.threads = 1;
    const auto j = cmd_select(cfg);
    REQUIRE(j["candidates"].size() == 4);
    for (const auto& c : j["candidates"]) {
        CHECK(c["lsocv"].is_number());
        CHECK(std::isfinite(c["lsocv"].get<double>()));
        CHECK(c["lsocv_star"].is_number());
    }
    const auto chosen = j["chosen"].get<std::size_t>();
    for (const auto& c : j["candidates"]) CHECK(j["candidates"][chosen]["lsocv"].get<double>() <= c["lsocv"].get<double>());
}

TEST_CASE("tune on noiseless spline data reports the lower bound") {
    const auto dir = scratch("tune");
    const TermSpec term = parse_term("smooth:x:knots=4:lower=0:upper=1");
    Eigen::VectorXd c(term.basis.size());
    for (Eigen::Index j = 0; j < c.size(); ++j) c(j) = std::sin(3.0 * static_cast<double>(j));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::ostringstream csv;
    csv.precision(17);
    csv << "subject_id,y,x\n";
    for (int i = 0; i < 30; ++i)
        for (int j = 0; j < 4; ++j) {
            const double x = u(rng);
            csv << "s" << i << ',' << eval_basis(term.basis, x).dot(c) << ',' << x << '\n';
        }
    put(dir / "data.csv", csv.str());

    RunConfig cfg;
    cfg.command = "tune";
    cfg.input = (dir / "data.csv").string();
    cfg.terms = {"smooth:x:knots=4:lower=0:upper=1"};
    cfg.out = dir.string();
    const auto j = cmd_tune(cfg);
    CHECK(j["tuning"]["boundary_hit"].get<bool>());
    CHECK(j["tuning"]["at_lower"][0].get<bool>());
    CHECK(std::filesystem::exists(dir / "tune.json"));
    CHECK(std::filesystem::exists(dir / "fitted.csv"));
}

TEST_CASE("simulation output does not depend on the thread count") {
    RunConfig cfg;
    cfg.command = "simulate";
    cfg.experiment = "table1";
    cfg.cell = "n=50,rho=0.3,truth=AR";
    cfg.reps = 12;
    cfg.seed = 3;
    cfg.threads = 1;
    const std::string serial = cmd_simulate(cfg)["table"].get<std::string>();
    cfg.threads = 3;
    const std::string parallel = cmd_simulate(cfg)["table"].get<std::string>();
    CHECK(serial == parallel);
    CHECK(serial.rfind("n,rho,truth,IND,CS,AR,UN,replicates,failures\n", 0) == 0);

    const auto a = scratch("repro_a"), b = scratch("repro_b");
    simulation_csv(a, 1.0);
    simulation_csv(b, 1.0);
    CHECK(slurp(a / "data.csv") == slurp(b / "data.csv"));
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
}
