import numpy as np
import pytest

import mclstm


def test_variants_listed():
    assert "mclstm-basic" in mclstm.variants()
    assert len(mclstm.variants()) == 10


def test_step_conserves_mass():
    model = mclstm.Model("mclstm-timedep", K=6, M=2, L=3, seed=1)
    c = np.array([0.1, 2.0, 0.0, 0.5, 1.0, 0.3])
    x = np.array([0.7, 1.4])
    out = model.step(c, x, np.array([0.2, -0.4, 1.0]))
    assert out["c"].sum() + out["h"].sum() == pytest.approx(c.sum() + x.sum(), rel=1e-13)
    np.testing.assert_allclose(out["r"].sum(axis=0), 1.0, rtol=1e-14)
    assert out["i"].shape == (6, 2)


def test_run_and_conservation_report():
    rng = np.random.default_rng(0)
    model = mclstm.Model("mclstm-hydro", K=4, M=1, L=2, seed=3)
    xs = rng.uniform(0, 1, size=(20, 1))
    as_ = rng.normal(size=(20, 2))
    run = model.run(np.zeros(4), xs, as_)
    assert run["h"].shape == (20, 4)
    rep = mclstm.check_conservation(model, np.zeros(4), xs, as_)
    assert rep["pass"]


def test_bad_shapes_raise():
    model = mclstm.Model("mclstm-basic", K=3, M=1, L=1)
    with pytest.raises(ValueError):
        model.step(np.zeros(4), np.zeros(1), np.zeros(1))
    with pytest.raises(ValueError):
        mclstm.Model("gru")


def test_addition_training_and_checkpoint(tmp_path):
    data = mclstm.gen_addition(count=128, seq_len=10, seed=2)
    again = mclstm.regenerate(data["descriptor"])
    np.testing.assert_array_equal(again["mass"], data["mass"])
    model = mclstm.Model("mclstm-basic", K=4, M=1, L=2, seed=0)
    before = model.evaluate_mse(data)
    trained, summary = mclstm.train(model, data, data, epochs=3, batch_size=32, lr=0.05)
    assert summary["conservation_violations"] == 0
    assert trained.evaluate_mse(data) < before
    path = tmp_path / "m.json"
    trained.save(path)
    loaded = mclstm.load_model(path)
    np.testing.assert_array_equal(loaded.predict(data), trained.predict(data))


def test_pendulum_energy_and_markov():
    s = mclstm.pendulum_series(gamma=0.0, steps=50)
    total = np.array(s["e_pot"]) + np.array(s["e_kin"])
    np.testing.assert_allclose(total, total[0], rtol=1e-12)
    with pytest.raises(ValueError):
        mclstm.pendulum_series(gamma=100.0)
    r = mclstm.random_column_stochastic(5, 1)
    pi = mclstm.stationary_distribution(r, np.full(5, 0.2))
    np.testing.assert_allclose(r @ pi, pi, atol=1e-10)
    assert 1.0 - 1e-9 <= mclstm.spectral_norm(r) <= np.sqrt(5)


def test_gradcheck_and_suites():
    model = mclstm.Model("mclstm-basic", K=3, M=1, L=2, seed=0)
    assert mclstm.gradcheck(model)["max_error"] < 1e-5
    assert mclstm.markov_suite(seeds=3)["pass"]
    assert mclstm.conservation_suite(configs=10)["pass"]
