#pragma once

#include "config.hpp"

#include <json.hpp>

namespace lsocv::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

// Each command returns its main JSON document and writes any files under cfg.out.
nlohmann::json cmd_fit(const RunConfig& cfg);
nlohmann::json cmd_tune(const RunConfig& cfg);
nlohmann::json cmd_select(const RunConfig& cfg);
// Returns the manifest; the experiment table goes to cfg.out or, without it, into
// the "table" field.
nlohmann::json cmd_simulate(const RunConfig& cfg);

nlohmann::json correlation_json(const CorrelationModel& model);

// Validates, dispatches and maps exceptions to exit codes with a JSON error on stderr.
int run(const RunConfig& cfg);

}  // namespace lsocv::cli
