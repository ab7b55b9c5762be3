#include "config.hpp"

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>

namespace mclstm::cli {

using nlohmann::json;

namespace {

json task_data(const std::string& task) {
  if (task == "addition") {
    return {{"seed", 0},
            {"total", 20000},
            {"test_count", 1000},
            {"scenarios", {"reference", "seq-length", "input-range", "count", "combo"}}};
  }
  if (task == "recurrent-arithmetic") {
    return {{"seed", 0},  {"op", "+"},       {"steps", 10},    {"width", 10},
            {"count", 1000}, {"test_count", 1000}, {"subsets", {{"a", 6}, {"b", 7}, {"c", 1}}},
            {"train_range", {1.0, 2.0}}, {"test_range", {2.0, 6.0}}};
  }
  if (task == "static-arithmetic") {
    return {{"seed", 0}, {"op", "+"}, {"width", 100}, {"train_count", 1000}, {"test_count", 1000}};
  }
  if (task == "pendulum") {
    return {{"theta0", 0.2}, {"length", 1.0}, {"gamma", 0.0}, {"noise_sigma", 0.0},
            {"steps", 200},  {"dt", 0.08},    {"seed", 0}};
  }
  throw ConfigError("unknown task '" + task + "'");
}

json task_model(const std::string& task) {
  if (task == "pendulum") {
    return {{"variant", "mclstm-hypernet"}, {"hidden", 2}, {"readout", "sum"},
            {"hypernet_hidden", {50, 100}}};
  }
  if (task == "static-arithmetic") {
    return {{"variant", "mcfc"}, {"hidden", 2}, {"readout", "linear"}, {"hypernet_hidden", {50, 100}}};
  }
  return {{"variant", "mclstm-basic"}, {"hidden", 10}, {"readout", "sum"},
          {"hypernet_hidden", {50, 100}}};
}

bool same_kind(const json& def, const json& val) {
  if (def.is_number()) return val.is_number();
  if (def.is_null()) return val.is_null() || val.is_number();
  return def.type() == val.type();
}

void overlay(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("'" + path + "' must be an object");
  for (const auto& [key, val] : user.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + where + "'");
    json& def = base[key];
    // Subsets and similar small records are objects with fixed keys.
    if (def.is_object()) {
      overlay(def, val, where);
      continue;
    }
    if (!same_kind(def, val)) {
      throw ConfigError("config key '" + where + "' expects " + std::string(def.type_name()) +
                        ", got " + std::string(val.type_name()));
    }
    def = val;
  }
}

}  // namespace

std::vector<std::string> known_tasks() {
  return {"addition", "recurrent-arithmetic", "static-arithmetic", "pendulum"};
}

json default_config(const std::string& task) {
  json cfg = {{"task", task},
          {"data", task_data(task)},
          {"model", task_model(task)},
          {"optim",
           {{"lr", nullptr},
            {"lr_grid", {0.1, 0.05, 0.01, 0.005, 0.001}},
            {"epochs", 100},
            {"batch_size", 64},
            {"l2", 0.0},
            {"clip_norm", 0.0},
            {"valid_every", 10},
            {"max_iterations", 3000},
            {"full_window_iterations", 400},
            {"affine_offset", false}}},
          {"seeds", {0, 1, 2, 3, 4}},
          {"parallel_seeds", 1},
          {"verify", {{"fraction", 0.01}, {"tol", 1e-10}, {"every_batch", false}}},
          {"output_dir", "runs/" + task}};
  // The autoregressive loop has no validation split to select a rate on.
  if (task == "pendulum") cfg["optim"]["lr"] = 0.01;
  return cfg;
}

json resolve_config(const json& user, const std::string& fallback_task) {
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  std::string task = fallback_task;
  if (user.contains("task")) {
    if (!user["task"].is_string()) throw ConfigError("config key 'task' expects string");
    task = user["task"].get<std::string>();
  }
  json cfg = default_config(task);
  overlay(cfg, user, "");
  for (const auto& s : cfg["seeds"]) {
    if (!s.is_number_integer() || s.get<long long>() < 0) throw ConfigError("'seeds' must hold non-negative integers");
  }
  if (cfg["seeds"].empty()) throw ConfigError("'seeds' must not be empty");
  return cfg;
}

json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

void apply_override(json& user, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like key.path=value");
  }
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &user;
  std::size_t begin = 0;
  while (true) {
    const auto dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = json::object();
    node = &(*node)[key];
    begin = dot + 1;
  }
}

std::string config_hash(const json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::filesystem::path output_dir(const json& config) {
  std::filesystem::path dir = config.at("output_dir").get<std::string>();
  if (dir.is_relative()) {
    if (const char* root = std::getenv("MCLSTM_OUTPUT_ROOT"); root && *root) dir = root / dir;
  }
  return dir;
}

}  // namespace mclstm::cli
