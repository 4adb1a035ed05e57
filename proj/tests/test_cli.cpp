#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ambit/errors.hpp"
#include "ambit/runner.hpp"

using namespace ambit;
using nlohmann::json;

namespace {

json small_obs_config() {
  json c;
  c["model"] = {{"name", "chain"}, {"n", 2}};
  c["measure"] = {{"kind", "obs_ambiguity"},
                  {"tube", "linf"},
                  {"epsilon", 1e-3},
                  {"z_metric", {{"kind", "initial_value_norm"}}}};
  c["horizon"] = {{"t0", 0.0}, {"t1", 2.0}};
  c["grid"] = {{"node_count", 13}};
  c["solver"] = {{"starts", 1}, {"seed", 7}};
  return c;
}

}  // namespace

TEST_CASE("config validation fills defaults and round-trips") {
  json c = small_obs_config();
  json echo = validate_config(c);
  CHECK(echo["grid"]["node_count"] == 13);
  CHECK(echo["horizon"]["t1"] == 2.0);
  CHECK(echo["solver"]["starts"] == 1);
  CHECK(echo["measure"]["fix_initial_state"] == false);
  // Defaults made explicit: validating the echo is a fixed point.
  CHECK(validate_config(echo) == echo);

  json minimal;
  minimal["model"] = {{"name", "chain"}};
  minimal["measure"] = {{"kind", "obs_ambiguity"}, {"epsilon", 1e-6}};
  json e2 = validate_config(minimal);
  CHECK(e2["model"]["n"] == 2);
  CHECK(e2["horizon"]["t1"] == 15.0);  // chain default horizon
  CHECK(e2["grid"]["node_count"] == 15);
}

TEST_CASE("unknown keys are rejected with the offending key named") {
  json c = small_obs_config();
  c["measure"]["epsilonn"] = 1e-3;
  try {
    validate_config(c);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "measure.epsilonn");
  }

  json bad_model = small_obs_config();
  bad_model["model"]["name"] = "pendulum";
  CHECK_THROWS_AS(validate_config(bad_model), ConfigError);

  json bad_kind = small_obs_config();
  bad_kind["measure"]["kind"] = "observability";
  try {
    validate_config(bad_kind);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "measure.kind");
  }

  json bad_channel = small_obs_config();
  bad_channel["model"] = {{"name", "vehicles"}};
  bad_channel["measure"]["variation_bounds"] = {{7, 3.0}};
  try {
    validate_config(bad_channel);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "measure.variation_bounds");
  }
}

TEST_CASE("execution is deterministic for a fixed seed") {
  json c = small_obs_config();
  RunOutcome a = execute_config(c);
  RunOutcome b = execute_config(c);
  CHECK(a.record["report"]["value"].get<double>() ==
        b.record["report"]["value"].get<double>());
  // The whole report (which excludes wall clock) serializes identically.
  CHECK(dump_record(a.record["report"]) == dump_record(b.record["report"]));
  CHECK(a.record["verdict"] == "converged");
  CHECK(!a.negative_verdict);
  CHECK(!a.trajectory_table.empty());
  CHECK(a.trajectory_table.substr(0, 6) == "t\tx1\tx");
}

TEST_CASE("unreachable verdicts are flagged for persistence/exit codes") {
  json c;
  c["model"] = {{"name", "chain"}, {"n", 2}};
  c["measure"] = {{"kind", "control_ambiguity"}, {"x1", {5.0, 5.0}}};
  c["horizon"] = {{"t0", 0.0}, {"t1", 1.0}};
  c["grid"] = {{"node_count", 9}};
  c["solver"] = {{"starts", 1}, {"seed", 1}};
  RunOutcome out = execute_config(c);
  CHECK(out.negative_verdict);
  CHECK(out.record["verdict"] == "unreachable");
  CHECK(out.record["report"]["value"].get<double>() > 1.0);
}

TEST_CASE("records serialize with 17-significant-digit round-trip numbers") {
  json j;
  j["a"] = 0.1 + 0.2;  // not exactly 0.3
  j["b"] = 1.0 / 3.0;
  std::string s = dump_record(j);
  json back = json::parse(s);
  CHECK(back["a"].get<double>() == j["a"].get<double>());
  CHECK(back["b"].get<double>() == j["b"].get<double>());
  CHECK(s.find("0.33333333333333331") != std::string::npos);
}

TEST_CASE("atomic write creates parents and replaces content") {
  namespace fs = std::filesystem;
  const std::string dir = "/tmp/ambit-test-out";
  fs::remove_all(dir);
  const std::string path = dir + "/nested/file.txt";
  write_atomic(path, "one\n");
  write_atomic(path, "two\n");
  std::ifstream f(path);
  std::string content((std::istreambuf_iterator<char>(f)),
                      std::istreambuf_iterator<char>());
  CHECK(content == "two\n");
  CHECK(!fs::exists(path + ".tmp"));
  fs::remove_all(dir);
}
