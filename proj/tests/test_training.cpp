#include <cmath>
#include <limits>

#include "doctest.h"
#include "mclstm/training.hpp"

using namespace mclstm;
using namespace mclstm::training;
using cells::CellVariant;

TEST_CASE("adam matches a hand-computed update") {
  std::map<std::string, Tensor> params{{"w", Tensor::vector({1.0, -2.0})}};
  OptimizerState opt = make_adam(params, {0.1, 0.9, 0.999, 1e-8});
  const std::map<std::string, Tensor> g1{{"w", Tensor::vector({0.5, -1.0})}};
  adam_step(opt, params, g1);
  // Step one: m_hat = g, v_hat = g^2, so the update is lr * sign(g) up to eps.
  CHECK(params["w"][0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(params["w"][1] == doctest::Approx(-2.0 + 0.1 * 1.0 / (1.0 + 1e-8)).epsilon(1e-14));
  const std::map<std::string, Tensor> g2{{"w", Tensor::vector({0.1, 0.0})}};
  adam_step(opt, params, g2);
  const double m = 0.9 * 0.05 + 0.1 * 0.1, v = 0.999 * 0.00025 + 0.001 * 0.01;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  CHECK(params["w"][0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-13));
  CHECK(opt.step == 2);
}

TEST_CASE("a non-finite gradient leaves parameters and state untouched") {
  std::map<std::string, Tensor> params{{"a", Tensor::vector({1.0})}, {"b", Tensor::vector({2.0})}};
  OptimizerState opt = make_adam(params, {});
  const auto before = params;
  const std::map<std::string, Tensor> bad{{"a", Tensor::vector({0.3})},
                                          {"b", Tensor::vector({std::numeric_limits<double>::quiet_NaN()})}};
  try {
    adam_step(opt, params, bad);
    FAIL("expected NonFiniteGradient");
  } catch (const NonFiniteGradient& e) {
    CHECK(e.parameter() == "b");
  }
  CHECK(params == before);
  CHECK(opt.step == 0);
  CHECK(opt.m["a"][0] == 0.0);
}

TEST_CASE("global norm clipping") {
  std::map<std::string, Tensor> g{{"a", Tensor::vector({3.0})}, {"b", Tensor::vector({4.0})}};
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g["a"][0] == doctest::Approx(0.6));
  CHECK(g["b"][0] == doctest::Approx(0.8));
  CHECK(clip_global_norm(g, 10.0) == doctest::Approx(1.0));
  CHECK(g["a"][0] == doctest::Approx(0.6));
}

TEST_CASE("losses and correlation") {
  CHECK(mse_loss(Tensor::vector({1, 2}), Tensor::vector({2, 4})) == doctest::Approx(2.5));
  CHECK(*pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
  CHECK(*pearson({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
  CHECK_FALSE(pearson({1, 1, 1}, {1, 2, 3}).has_value());

  const Tensor target({4, 2}, std::vector<double>{0, 1, 1, 0, 2, 1, 3, 0});
  PendulumLossInfo info;
  CHECK(pendulum_loss(target, target, &info) == doctest::Approx(-1.0));
  CHECK(info.r[0] == doctest::Approx(1.0));
  // Variable and tensor forms agree.
  const Tensor pred({4, 2}, std::vector<double>{0.5, 0.2, 1, 0.3, 1.5, 0.9, 2, 0.1});
  CHECK(pendulum_loss(engine::constant(pred), target).value().item() ==
        doctest::Approx(pendulum_loss(pred, target)).epsilon(1e-14));
  const Tensor flat({4, 2}, std::vector<double>{1, 0, 1, 1, 1, 0, 1, 1});
  pendulum_loss(pred, flat, &info);
  CHECK(info.zero_variance[0]);
  CHECK_FALSE(info.zero_variance[1]);
}

TEST_CASE("curriculum grows the window only below the threshold") {
  CurriculumState s;
  CHECK(curriculum_advance(s, -0.5).window == 11);
  CHECK(curriculum_advance(s, -0.95).window == 16);
  s.window = 198;
  CHECK(curriculum_advance(s, -1.0).window == 200);
  s.window = 200;
  CHECK(curriculum_advance(s, -1.0).window == 200);
}

TEST_CASE("sequence-to-one training") {
  const tasks::AdditionSplits data = [] {
    tasks::AdditionSplits sp;
    const tasks::Dataset all = tasks::gen_addition({256, 12, 0.5, 2, 1, "all"});
    sp.train = tasks::subset(all, 0, 192, "train");
    sp.valid = tasks::subset(all, 192, 256, "valid");
    return sp;
  }();
  const cells::CellParams init = cells::init_params({6, 1, 2}, CellVariant::McLstmBasic, 3);

  SUBCASE("lr = 0 leaves the model untouched") {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.lr = 0.0;
    cfg.batch_size = 32;
    const TrainResult r = train_sequence_to_one(cfg, data.train, data.valid, init);
    for (const auto& [name, t] : init.tensors) CHECK(r.params.get(name) == t);
    CHECK(r.final_valid_mse == evaluate_mse(init, data.valid));
  }
  SUBCASE("training lowers the loss and conserves mass") {
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.lr = 0.05;
    cfg.batch_size = 32;
    cfg.verify_fraction = 1.0;
    const double before = evaluate_mse(init, data.valid);
    const TrainResult r = train_sequence_to_one(cfg, data.train, data.valid, init);
    CHECK_FALSE(r.diverged);
    CHECK(r.final_valid_mse < before);
    CHECK(r.conservation_checks > 0);
    CHECK(r.conservation_violations == 0);
    CHECK(r.final_train_mse == doctest::Approx(evaluate_mse(r.params, data.train)).epsilon(1e-12));
    const auto summary = summary_json(r);
    CHECK(summary["epochs_completed"] == 8);
    // Same seed, same result.
    const TrainResult again = train_sequence_to_one(cfg, data.train, data.valid, init);
    CHECK(again.final_valid_mse == r.final_valid_mse);
  }
  SUBCASE("valid_every thins the validation rows") {
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.valid_every = 2;
    cfg.batch_size = 64;
    const TrainResult r = train_sequence_to_one(cfg, data.train, data.valid, init);
    std::vector<std::size_t> valid_epochs;
    for (const auto& row : r.history)
      if (row.split == "valid") valid_epochs.push_back(row.epoch);
    CHECK(valid_epochs == std::vector<std::size_t>{2, 4, 5});
  }
  SUBCASE("learning-rate selection keeps the best finite run") {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 64;
    const LrSearchResult s = select_learning_rate(cfg, {0.05, 0.0}, data.train, data.valid, init);
    REQUIRE(s.best.has_value());
    CHECK(s.candidates.size() == 2);
    for (const auto& c : s.candidates) CHECK(s.candidates[*s.best].valid_mse <= c.valid_mse);
  }
  SUBCASE("mismatched data is rejected") {
    const cells::CellParams wrong = cells::init_params({6, 2, 2}, CellVariant::McLstmBasic, 3);
    CHECK_THROWS_AS(evaluate_mse(wrong, data.valid), DimensionError);
  }
}

TEST_CASE("arithmetic success threshold") {
  tasks::RecurrentArithmeticSpec spec;
  spec.count = 1;
  spec.steps = 1;
  spec.width = 3;
  spec.subsets = {1, 2, 1};
  tasks::Dataset d = tasks::gen_recurrent_arithmetic(spec);
  d.mass[0] = 2.0;
  d.mass[1] = 3.0;
  d.mass[2] = 4.0;
  // Sums are 5 and 7; the worst perturbation shifts both the same way.
  CHECK(arithmetic_success_threshold(tasks::ArithmeticOp::Add, spec.subsets, d) ==
        doctest::Approx(12e-5 * 12e-5));
  const double mul_err = 35.0 * ((1 + 1e-5) * (1 + 1e-5) - 1);
  CHECK(arithmetic_success_threshold(tasks::ArithmeticOp::Mul, spec.subsets, d) ==
        doctest::Approx(mul_err * mul_err));
}

TEST_CASE("pendulum rollout starts from the initial energies") {
  const tasks::Dataset series = tasks::pendulum_dataset(tasks::PendulumConfig{});
  cells::InitOptions opt;
  opt.hypernet_hidden = {8};
  const cells::CellParams p = cells::init_params({2, 1, tasks::kEmbeddingSize}, CellVariant::McLstmHypernet, 1, opt);
  const Tensor roll = rollout_pendulum(p, series, 50);
  CHECK(roll.shape() == Shape{50, 2});
  CHECK(roll.at(0, 0) == series.targets[0]);
  CHECK(roll.at(0, 1) == series.targets[1]);
  // Mass never grows along the rollout.
  const double total0 = roll.at(0, 0) + roll.at(0, 1);
  for (std::size_t t = 1; t < 50; ++t) CHECK(roll.at(t, 0) + roll.at(t, 1) <= total0 * (1 + 1e-12));
}
