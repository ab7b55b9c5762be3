#include "mclstm/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include "mclstm/random.hpp"

namespace mclstm::training {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::json number(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

double median(std::vector<double> values) {
  std::erase_if(values, [](double v) { return !std::isfinite(v); });
  if (values.empty()) return kNaN;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

AdditionData make_addition_data(std::size_t total, std::size_t test_count, std::uint64_t seed,
                                const std::vector<std::string>& scenarios) {
  tasks::AdditionSplits splits = tasks::gen_addition_reference(total, test_count, seed);
  AdditionData data{std::move(splits.train), std::move(splits.valid), {}};
  for (const std::string& name : scenarios) {
    data.tests[name] = name == "reference" ? splits.test
                                           : tasks::gen_addition_scenario(name, test_count, seed);
  }
  return data;
}

nlohmann::json AdditionExperiment::to_json() const {
  nlohmann::json j;
  j["lr_candidates"] = nlohmann::json::array();
  for (const auto& c : lr_candidates) {
    j["lr_candidates"].push_back(
        {{"lr", c.lr}, {"diverged", c.diverged}, {"valid_mse", number(c.valid_mse)}});
  }
  j["selected_lr"] = selected_lr ? nlohmann::json(*selected_lr) : nlohmann::json(nullptr);
  j["runs"] = nlohmann::json::array();
  for (const auto& r : runs) {
    nlohmann::json run = summary_json(r.result);
    run["seed"] = r.seed;
    run["lr"] = r.lr;
    for (const auto& [name, v] : r.test_mse) run["test_mse"][name] = number(v);
    j["runs"].push_back(run);
  }
  for (const auto& [name, v] : median_mse) j["median_test_mse"][name] = number(v);
  j["non_converged"] = non_converged;
  return j;
}

AdditionExperiment run_addition_experiment(const AdditionExperimentConfig& config,
                                           const AdditionData& data, const Progress& progress) {
  if (config.seeds.empty()) throw ContractError("run_addition_experiment: no seeds given");
  std::mutex log_mutex;
  auto log = [&](const std::string& msg) {
    if (!progress) return;
    std::lock_guard lock(log_mutex);
    progress(msg);
  };

  cells::InitOptions options;
  options.readout = config.readout;
  const cells::Dims dims{config.hidden, data.train.mass_width(), data.train.aux_width()};
  auto init_for = [&](std::uint64_t seed) {
    return cells::init_params(dims, config.variant, derive_seed(seed, kInitSeedTag), options);
  };
  auto train_config = [&](std::uint64_t seed, double lr) {
    TrainConfig c;
    c.epochs = config.epochs;
    c.batch_size = config.batch_size;
    c.lr = lr;
    c.l2 = config.l2;
    c.clip_norm = config.clip_norm;
    c.verify_fraction = config.verify_fraction;
    c.verify_tol = config.verify_tol;
    c.valid_every = config.valid_every;
    c.seed = seed;
    return c;
  };
  auto finish = [&](AdditionRun& run) {
    for (const auto& [name, test] : data.tests) {
      run.test_mse[name] = run.result.diverged ? kNaN : evaluate_mse(run.result.params, test);
    }
    std::string line = "seed " + std::to_string(run.seed) + " lr " + fmt(run.lr);
    if (run.result.diverged) line += " diverged: " + run.result.divergence_reason;
    for (const auto& [name, v] : run.test_mse) line += " " + name + "=" + fmt(v);
    log(line);
  };

  AdditionExperiment exp;
  std::vector<AdditionRun> runs(config.seeds.size());
  for (std::size_t i = 0; i < runs.size(); ++i) runs[i].seed = config.seeds[i];

  // Learning rate: fixed, or searched on the first seed.
  if (config.lr) {
    exp.selected_lr = *config.lr;
  } else {
    const std::uint64_t seed = config.seeds.front();
    for (double lr : config.lr_grid) {
      TrainResult r = train_sequence_to_one(train_config(seed, lr), data.train, data.valid,
                                            init_for(seed));
      exp.lr_candidates.push_back({lr, r.diverged, r.final_valid_mse});
      log("lr " + fmt(lr) + (r.diverged ? " diverged" : " valid_mse=" + fmt(r.final_valid_mse)));
      const bool usable = !r.diverged && std::isfinite(r.final_valid_mse);
      if (usable && (!exp.selected_lr || r.final_valid_mse < runs[0].result.final_valid_mse)) {
        exp.selected_lr = lr;
        runs[0].lr = lr;
        runs[0].result = std::move(r);
      }
    }
    if (!exp.selected_lr) {
      // Nothing converged: record every seed as diverged at the first grid entry.
      for (auto& run : runs) {
        run.lr = config.lr_grid.empty() ? kNaN : config.lr_grid.front();
        run.result.diverged = true;
        run.result.divergence_reason = "every learning rate in the grid diverged";
        run.result.final_train_mse = run.result.final_valid_mse = kNaN;
        finish(run);
      }
    } else {
      finish(runs[0]);
    }
  }

  if (exp.selected_lr) {
    const std::size_t first = config.lr ? 0 : 1;
    std::atomic<std::size_t> next{first};
    auto worker = [&] {
      for (std::size_t i = next++; i < runs.size(); i = next++) {
        AdditionRun& run = runs[i];
        run.lr = *exp.selected_lr;
        run.result = train_sequence_to_one(train_config(run.seed, run.lr), data.train, data.valid,
                                           init_for(run.seed));
        finish(run);
      }
    };
    const std::size_t threads =
        std::clamp<std::size_t>(config.parallel_seeds, 1, std::max<std::size_t>(runs.size(), 1));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
  }

  for (const auto& run : runs) exp.non_converged += run.result.diverged;
  for (const auto& [name, test] : data.tests) {
    std::vector<double> values;
    for (const auto& run : runs) values.push_back(run.test_mse.at(name));
    exp.median_mse[name] = median(values);
  }
  exp.runs = std::move(runs);
  return exp;
}

nlohmann::json PendulumExperiment::to_json() const {
  return {{"rollout_mse", number(rollout_mse)},
          {"pearson_e_pot", number(pearson[0])},
          {"pearson_e_kin", number(pearson[1])},
          {"iterations", train.history.size()},
          {"final_window", train.history.empty() ? 0 : train.history.back().window},
          {"final_loss", train.history.empty() ? nlohmann::json(nullptr)
                                               : number(train.history.back().loss)},
          {"diverged", train.diverged},
          {"divergence_reason", train.divergence_reason},
          {"zero_variance_flagged", train.zero_variance_flagged}};
}

PendulumExperiment run_pendulum_experiment(const PendulumExperimentConfig& config) {
  const tasks::Dataset series = tasks::pendulum_dataset(config.series);
  cells::InitOptions options;
  options.hypernet_hidden = config.hypernet_hidden;
  cells::CellParams init =
      cells::init_params({2, 1, tasks::kEmbeddingSize}, cells::CellVariant::McLstmHypernet,
                         derive_seed(config.seed, kInitSeedTag), options);
  PendulumTrainConfig tc = config.train;
  tc.seed = config.seed;

  PendulumExperiment exp;
  exp.train = train_autoregressive_pendulum(tc, series, std::move(init));
  const std::size_t steps = series.steps();
  exp.target = Tensor({steps, 2});
  std::copy_n(&series.targets[0], steps * 2, &exp.target[0]);
  if (exp.train.diverged) {
    exp.rollout_mse = kNaN;
    exp.pearson = {kNaN, kNaN};
    return exp;
  }
  exp.rollout = rollout_pendulum(exp.train.params, series, steps, tc.affine_offset);
  PendulumLossInfo info;
  pendulum_loss(exp.rollout, exp.target, &info);
  exp.rollout_mse = info.mse;
  exp.pearson = info.r;
  return exp;
}

}  // namespace mclstm::training
