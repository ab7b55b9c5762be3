#include <cstdlib>

#include "config.hpp"
#include "doctest.h"

using namespace mclstm::cli;
using nlohmann::json;

TEST_CASE("defaults resolve for every task") {
  for (const auto& task : known_tasks()) {
    const json cfg = resolve_config(json::object(), task);
    CHECK(cfg["task"] == task);
    CHECK(cfg.contains("optim"));
    CHECK(cfg["seeds"].size() == 5);
  }
  CHECK(resolve_config(json::object(), "pendulum")["optim"]["lr"] == 0.01);
  CHECK(resolve_config(json::object())["optim"]["lr"].is_null());
  CHECK_THROWS_AS(resolve_config({{"task", "sorting"}}), ConfigError);
}

TEST_CASE("unknown keys and type mismatches are rejected with their path") {
  try {
    resolve_config({{"optim", {{"momentum", 0.9}}}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("optim.momentum") != std::string::npos);
  }
  CHECK_THROWS_AS(resolve_config({{"optim", {{"epochs", "ten"}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_config({{"seeds", {-1}}}), ConfigError);
  CHECK_THROWS_AS(resolve_config({{"seeds", json::array()}}), ConfigError);
  CHECK(resolve_config({{"optim", {{"lr", 0.02}}}})["optim"]["lr"] == 0.02);
}

TEST_CASE("dotted overrides") {
  json user = json::object();
  apply_override(user, "optim.epochs=7");
  apply_override(user, "model.variant=lstm");
  apply_override(user, "data.scenarios=[\"combo\"]");
  const json cfg = resolve_config(user);
  CHECK(cfg["optim"]["epochs"] == 7);
  CHECK(cfg["model"]["variant"] == "lstm");
  CHECK(cfg["data"]["scenarios"].size() == 1);
  CHECK_THROWS_AS(apply_override(user, "noequals"), ConfigError);
  CHECK_THROWS_AS(apply_override(user, "a..b=1"), ConfigError);
}

TEST_CASE("config hash is stable and sensitive") {
  const json a = resolve_config(json::object());
  json b = a;
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b["optim"]["epochs"] = 101;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("relative output directories honour the output root") {
  json cfg = resolve_config(json::object());
  setenv("MCLSTM_OUTPUT_ROOT", "/tmp/root", 1);
  CHECK(output_dir(cfg) == std::filesystem::path("/tmp/root/runs/addition"));
  cfg["output_dir"] = "/abs/dir";
  CHECK(output_dir(cfg) == std::filesystem::path("/abs/dir"));
  unsetenv("MCLSTM_OUTPUT_ROOT");
}
