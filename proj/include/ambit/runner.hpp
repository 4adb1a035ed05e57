#pragma once

#include <string>

#include <json.hpp>

#include "ambit/measures.hpp"

namespace ambit {

// Parses and fully validates a run configuration; throws ConfigError naming
// the offending key on unknown keys, bad types, or out-of-range values.
// Returns the config with all defaults filled in (the "echo" form).
nlohmann::json validate_config(const nlohmann::json& config);

struct RunOutcome {
  nlohmann::json record;          // persisted result document
  std::string trajectory_table;   // dense-sampled worst trajectory (TSV)
  bool negative_verdict = false;  // infeasible / unreachable
};

// Executes a validated configuration.
RunOutcome execute_config(const nlohmann::json& config);

// Serializes a result document with every number at 17 significant digits.
std::string dump_record(const nlohmann::json& record);

// Atomic persistence: write to `<path>.tmp`, then rename onto `path`.
void write_atomic(const std::string& path, const std::string& content);

// Output directory: $AMBIT_OUT_DIR if set, else the current directory.
std::string output_directory();

// Full command-line interface (verbs: run, reproduce, list-models, validate).
// Returns the process exit code: 0 converged, 2 infeasible/unreachable
// verdicts, 1 errors.
int cli_main(int argc, const char* const* argv);

}  // namespace ambit
