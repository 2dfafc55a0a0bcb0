#include "config.hpp"

#include "lsocv/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace lsocv::cli {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) out.push_back(item);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

// key=value options after the leading positional fields.
std::map<std::string, std::string> options(const std::vector<std::string>& parts, std::size_t first,
                                           const std::string& context) {
    std::map<std::string, std::string> out;
    for (std::size_t i = first; i < parts.size(); ++i) {
        const auto eq = parts[i].find('=');
        const std::string key = lower(parts[i].substr(0, eq));
        if (key.empty()) throw InvalidArgument("empty option in '" + context + "'");
        if (out.count(key)) throw InvalidArgument("option '" + key + "' repeated in '" + context + "'");
        out[key] = eq == std::string::npos ? "" : parts[i].substr(eq + 1);
    }
    return out;
}

void reject_unknown(const std::map<std::string, std::string>& opts, std::initializer_list<const char*> allowed,
                    const std::string& context) {
    for (const auto& [k, v] : opts)
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
            throw InvalidArgument("unknown option '" + k + "' in '" + context + "'");
}

}  // namespace

double parse_double(const std::string& text, const std::string& what) {
    if (text.empty()) throw InvalidArgument(what + " needs a value");
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size() || errno == ERANGE || !std::isfinite(v))
        throw InvalidArgument(what + ": '" + text + "' is not a finite number");
    return v;
}

long long parse_int(const std::string& text, const std::string& what) {
    if (text.empty()) throw InvalidArgument(what + " needs a value");
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(text.c_str(), &end, 10);
    if (end != text.c_str() + text.size() || errno == ERANGE)
        throw InvalidArgument(what + ": '" + text + "' is not an integer");
    return v;
}

TermSpec parse_term(const std::string& text) {
    const auto parts = split(text, ':');
    if (parts.size() < 2 || parts[1].empty()) throw InvalidArgument("term '" + text + "': expected kind:covariate[...]");
    const std::string kind = lower(parts[0]);
    TermSpec t;
    std::size_t first_option = 2;
    if (kind == "linear") {
        if (parts.size() > 2) throw InvalidArgument("term '" + text + "': linear terms take no options");
        return TermSpec::linear(parts[1]);
    } else if (kind == "smooth") {
        t.kind = TermKind::Smooth;
        t.covariate = parts[1];
    } else if (kind == "vc") {
        t.kind = TermKind::VaryingCoefficient;
        t.covariate = parts[1];
        if (parts.size() > 2 && parts[2].find('=') == std::string::npos) {
            t.modifier = parts[2];
            first_option = 3;
        }
    } else {
        throw InvalidArgument("term '" + text + "': kind must be linear, smooth or vc");
    }
    const auto opts = options(parts, first_option, text);
    reject_unknown(opts, {"knots", "order", "q", "lower", "upper", "placement"}, text);
    if (opts.count("knots")) t.basis.interior_knots = static_cast<int>(parse_int(opts.at("knots"), "knots"));
    if (opts.count("order")) t.basis.order = static_cast<int>(parse_int(opts.at("order"), "order"));
    if (opts.count("q")) t.basis.penalty_order = static_cast<int>(parse_int(opts.at("q"), "q"));
    const bool has_lo = opts.count("lower"), has_hi = opts.count("upper");
    if (has_lo != has_hi) throw InvalidArgument("term '" + text + "': give both lower and upper, or neither");
    if (has_lo) {
        t.basis.lower = parse_double(opts.at("lower"), "lower");
        t.basis.upper = parse_double(opts.at("upper"), "upper");
        if (!(t.basis.lower < t.basis.upper)) throw InvalidArgument("term '" + text + "': need lower < upper");
    } else {
        t.domain_from_data = true;
    }
    if (opts.count("placement")) {
        const auto p = lower(opts.at("placement"));
        if (p == "equal")
            t.placement = KnotPlacement::Equal;
        else if (p == "quantile")
            t.placement = KnotPlacement::Quantile;
        else
            throw InvalidArgument("term '" + text + "': placement must be equal or quantile");
    }
    if (t.basis.order < 1) throw InvalidArgument("term '" + text + "': order must be >= 1");
    if (t.basis.interior_knots < 0) throw InvalidArgument("term '" + text + "': knots must be >= 0");
    if (t.basis.penalty_order < 1 || t.basis.penalty_order > t.basis.order - 1)
        throw InvalidArgument("term '" + text + "': need 1 <= q <= order - 1");
    return t;
}

CorrelationSpec parse_correlation(const std::string& text) {
    const auto parts = split(text, ':');
    CorrelationSpec c;
    c.structure = lower(parts.empty() ? std::string() : parts[0]);
    const auto opts = options(parts, 1, text);
    auto need = [&](const char* key) { return parse_double(opts.at(key), std::string(key) + " in '" + text + "'"); };
    const bool estimate = opts.count("estimate") > 0 || parts.size() == 1;
    if (c.structure == "ind") {
        reject_unknown(opts, {}, text);
        c.model = Independence{};
    } else if (c.structure == "cs" || c.structure == "ar1" || c.structure == "lag1") {
        reject_unknown(opts, {"rho", "estimate"}, text);
        if (opts.count("rho")) {
            const double rho = need("rho");
            if (c.structure == "cs")
                c.model = CompoundSymmetry{rho};
            else if (c.structure == "ar1")
                c.model = Ar1{rho};
            else
                c.model = LagOneBand{rho};
        } else if (c.structure == "lag1") {
            throw InvalidArgument("correlation '" + text + "': lag1 needs rho");
        } else if (estimate) {
            c.estimate = true;
        }
    } else if (c.structure == "exp") {
        reject_unknown(opts, {"alpha", "theta", "estimate"}, text);
        if (opts.count("alpha") || opts.count("theta")) {
            if (!opts.count("alpha") || !opts.count("theta"))
                throw InvalidArgument("correlation '" + text + "': exp needs both alpha and theta");
            c.model = ExponentialNugget{need("alpha"), need("theta")};
        } else {
            c.estimate = true;
        }
    } else if (c.structure == "un") {
        reject_unknown(opts, {"estimate"}, text);
        c.estimate = true;
    } else {
        throw InvalidArgument("correlation '" + text + "': structure must be ind, cs, ar1, lag1, exp or un");
    }
    if (c.model) {
        // Validate ranges now so bad parameters fail before any data is read.
        std::visit(
            [&](const auto& m) {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, CompoundSymmetry>) {
                    if (!(m.rho < 1.0 && m.rho > -1.0)) throw InvalidArgument("cs rho must lie in (-1, 1)");
                } else if constexpr (std::is_same_v<T, Ar1> || std::is_same_v<T, LagOneBand>) {
                    if (!(std::abs(m.rho) < 1.0)) throw InvalidArgument("rho must lie in (-1, 1)");
                } else if constexpr (std::is_same_v<T, ExponentialNugget>) {
                    if (!(m.alpha > 0.0 && m.alpha < 1.0)) throw InvalidArgument("exp alpha must lie in (0, 1)");
                    if (!(m.theta > 0.0)) throw InvalidArgument("exp theta must be positive");
                }
            },
            *c.model);
    }
    return c;
}

LambdaSpec parse_lambda(const std::string& text, LambdaMode fallback) {
    LambdaSpec s;
    s.mode = fallback;
    if (text.empty()) return s;
    const auto eq = text.find('=');
    const std::string head = lower(text.substr(0, eq));
    const std::string rest = eq == std::string::npos ? "" : text.substr(eq + 1);
    if (head == "optimize" && eq == std::string::npos) {
        s.mode = LambdaMode::Optimize;
    } else if (head == "zero" && eq == std::string::npos) {
        s.mode = LambdaMode::Zero;
    } else if (head == "fixed") {
        s.mode = LambdaMode::Fixed;
        for (const auto& v : split(rest, ',')) {
            const double x = parse_double(v, "lambda");
            if (x < 0.0) throw InvalidArgument("lambda must be nonnegative");
            s.fixed.push_back(x);
        }
        if (s.fixed.empty()) throw InvalidArgument("fixed lambda needs at least one value");
    } else if (head == "grid") {
        s.mode = LambdaMode::Grid;
        const auto parts = split(rest, ':');
        if (parts.size() != 3) throw InvalidArgument("grid lambda must look like grid=lo:hi:count");
        s.grid_lo = parse_double(parts[0], "grid lower end");
        s.grid_hi = parse_double(parts[1], "grid upper end");
        s.grid_points = static_cast<int>(parse_int(parts[2], "grid count"));
        if (!(s.grid_lo > 0.0 && s.grid_hi > s.grid_lo) || s.grid_points < 2)
            throw InvalidArgument("grid lambda needs 0 < lo < hi and count >= 2");
    } else {
        throw InvalidArgument("lambda '" + text + "': expected fixed=..., optimize, grid=lo:hi:count or zero");
    }
    return s;
}

SelectionCell parse_cell(const std::string& text) {
    SelectionCell c;
    const auto opts = options(split(text, ','), 0, text);
    reject_unknown(opts, {"n", "rho", "truth"}, text);
    if (!opts.count("n") || !opts.count("rho") || !opts.count("truth"))
        throw InvalidArgument("cell '" + text + "' must give n, rho and truth");
    c.n = static_cast<int>(parse_int(opts.at("n"), "cell n"));
    c.rho = parse_double(opts.at("rho"), "cell rho");
    c.truth = parse_true_structure(opts.at("truth"));
    if (c.n < 2) throw InvalidArgument("cell n must be >= 2");
    return c;
}

void merge_config_file(const std::string& path, RunConfig& cfg, const std::vector<std::string>& given) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidArgument("config file '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw InvalidArgument("config file must hold a JSON object");
    const std::set<std::string> flags(given.begin(), given.end());
    auto want = [&](const std::string& key) { return flags.count(key) == 0; };

    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "input") {
                if (want(key)) cfg.input = value.get<std::string>();
            } else if (key == "terms") {
                if (want("term")) {
                    cfg.terms.clear();
                    if (value.is_string())
                        cfg.terms.push_back(value.get<std::string>());
                    else
                        cfg.terms = value.get<std::vector<std::string>>();
                }
            } else if (key == "corr") {
                if (!want(key)) continue;
                cfg.corr.clear();
                auto one = [](const nlohmann::json& v) -> std::string {
                    if (v.is_string()) return v.get<std::string>();
                    if (!v.is_object()) throw InvalidArgument("corr entries must be strings or objects");
                    std::string s = v.at("structure").get<std::string>();
                    for (const auto& [k, x] : v.items()) {
                        if (k == "structure") continue;
                        if (k == "estimate") {
                            if (x.get<bool>()) s += ":estimate";
                            continue;
                        }
                        if (k != "rho" && k != "alpha" && k != "theta")
                            throw InvalidArgument("unknown correlation key '" + k + "'");
                        std::ostringstream os;
                        os.precision(17);
                        os << x.get<double>();
                        s += ":" + k + "=" + os.str();
                    }
                    return s;
                };
                if (value.is_array())
                    for (const auto& v : value) cfg.corr.push_back(one(v));
                else
                    cfg.corr.push_back(one(value));
            } else if (key == "lambda") {
                if (want(key)) cfg.lambda = value.get<std::string>();
            } else if (key == "min_obs") {
                if (want("min-obs")) cfg.min_obs = value.get<int>();
            } else if (key == "seed") {
                if (want(key)) cfg.seed = value.get<std::uint64_t>();
            } else if (key == "reps") {
                if (want(key)) cfg.reps = value.get<int>();
            } else if (key == "threads") {
                if (want(key)) cfg.threads = value.get<unsigned>();
            } else if (key == "trace") {
                if (want(key)) cfg.trace = value.get<std::string>();
            } else if (key == "out") {
                if (want(key)) cfg.out = value.get<std::string>();
            } else if (key == "experiment") {
                if (want(key)) cfg.experiment = value.get<std::string>();
            } else if (key == "cell") {
                if (want(key)) cfg.cell = value.get<std::string>();
            } else if (key == "criterion") {
                if (want(key)) cfg.criterion = value.get<std::string>();
            } else if (key == "candidates") {
                if (want(key)) cfg.candidates = value.get<std::string>();
            } else if (key == "bootstrap") {
                if (want(key)) cfg.bootstrap = value.get<int>();
            } else if (key == "level") {
                if (want(key)) cfg.level = value.get<double>();
            } else if (key == "n") {
                if (want(key)) cfg.n = value.get<int>();
            } else if (key == "rho") {
                if (want(key)) cfg.rho = value.get<double>();
            } else if (key == "sigma") {
                if (want(key)) cfg.sigma = value.get<double>();
            } else if (key == "cluster_size") {
                if (want("cluster-size")) cfg.cluster_size = value.get<int>();
            } else {
                throw InvalidArgument("unknown config key '" + key + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw InvalidArgument("config key '" + key + "' has the wrong type: " + e.what());
        }
    }
}

void validate(const RunConfig& cfg) {
    const std::string& c = cfg.command;
    if (c == "fit" || c == "tune" || c == "select") {
        if (cfg.input.empty()) throw InvalidArgument(c + " needs --input");
        if (cfg.terms.empty()) throw InvalidArgument(c + " needs at least one --term");
        for (const auto& t : cfg.terms) (void)parse_term(t);
        for (const auto& s : cfg.corr) (void)parse_correlation(s);
        if (c != "select" && cfg.corr.size() > 1) throw InvalidArgument(c + " takes a single --corr");
        const auto lam = parse_lambda(cfg.lambda, c == "fit" ? LambdaMode::Fixed : LambdaMode::Optimize);
        if (c == "fit" && cfg.lambda.empty()) throw InvalidArgument("fit needs --lambda (fixed=..., optimize or grid=...)");
        if (c == "select" && lam.mode != LambdaMode::Zero && lam.mode != LambdaMode::Optimize && !cfg.lambda.empty())
            throw InvalidArgument("select supports --lambda zero or optimize");
        if (!cfg.criterion.empty() && cfg.criterion != "exact" && cfg.criterion != "star")
            throw InvalidArgument("--criterion must be exact or star");
        if (cfg.min_obs < 1) throw InvalidArgument("--min-obs must be >= 1");
        if (cfg.bootstrap < 0 || cfg.bootstrap == 1) throw InvalidArgument("--bootstrap needs 0 or at least 2 replicates");
        if (!(cfg.level > 0.0 && cfg.level < 1.0)) throw InvalidArgument("--level must lie in (0, 1)");
    } else if (c == "simulate") {
        const std::string& e = cfg.experiment;
        if (e != "table1" && e != "efficiency" && e != "functions" && e != "dataset")
            throw InvalidArgument("--experiment must be table1, efficiency, functions or dataset");
        if (!cfg.cell.empty()) {
            if (e != "table1") throw InvalidArgument("--cell only applies to --experiment table1");
            (void)parse_cell(cfg.cell);
        }
        if (cfg.reps < 1) throw InvalidArgument("--reps must be >= 1");
        if (cfg.n < 2) throw InvalidArgument("--n must be >= 2");
        if (cfg.cluster_size < 1) throw InvalidArgument("--cluster-size must be >= 1");
        if (!(cfg.sigma >= 0.0)) throw InvalidArgument("--sigma must be nonnegative");
        if (!(cfg.rho > -1.0 && cfg.rho < 1.0)) throw InvalidArgument("--rho must lie in (-1, 1)");
        if (!cfg.candidates.empty() && cfg.candidates != "design" && cfg.candidates != "moment")
            throw InvalidArgument("--candidates must be design or moment");
        if (!cfg.criterion.empty() && cfg.criterion != "exact" && cfg.criterion != "star")
            throw InvalidArgument("--criterion must be exact or star");
        if (e == "dataset" && cfg.out.empty()) throw InvalidArgument("--experiment dataset needs --out");
    } else {
        throw InvalidArgument("unknown command '" + c + "'");
    }
}

}  // namespace lsocv::cli
