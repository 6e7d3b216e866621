import time

import numpy as np
import pytest

from poemlab.errors import ConfigError
from poemlab.runner import RunConfig, build_data, early_stop_variant, run

SMALL = dict(epochs=4, pool_size=400, mined=40, id_train=300, id_test=300, ood_test=300, aux_size=2000)


def test_zero_epochs():
    model, logs = run(RunConfig(epochs=0))
    assert logs == []
    assert model.feature_dim == 32 and model.num_classes == 3


def test_log_fields_and_count():
    _, logs = run(RunConfig(**SMALL))
    assert [r["epoch"] for r in logs] == [1, 2, 3, 4]
    need = {"mined_score_mean", "mined_score_min", "mined_score_max", "train_loss", "id_energy_mean",
            "mined_energy_mean", "metrics", "queue_len", "mined_this_epoch"}
    assert need <= set(logs[0])
    for r in logs:
        assert r["mined_score_min"] <= r["mined_score_mean"] <= r["mined_score_max"] <= 0
        assert 0 <= r["metrics"]["fpr95"] <= 1


def test_queue_accounting():
    cfg = RunConfig(**{**SMALL, "epochs": 6, "queue_capacity": 200})
    _, logs = run(cfg)
    assert [r["queue_len"] for r in logs] == [min(200, 2 * 40 * e) for e in range(1, 7)]


def test_reproducible():
    a = run(RunConfig(**SMALL, seed=3)).logs
    b = run(RunConfig(**SMALL, seed=3)).logs
    assert a == b
    c = run(RunConfig(**SMALL, seed=4)).logs
    assert a != c


def test_samplers_share_everything_but_the_mined_set():
    ts = run(RunConfig(**{**SMALL, "epochs": 1}, sampler="thompson"))
    rnd = run(RunConfig(**{**SMALL, "epochs": 1}, sampler="random"))
    assert np.array_equal(ts.data.train.x, rnd.data.train.x)
    assert np.array_equal(ts.data.aux, rnd.data.aux)
    m0 = run(RunConfig(**{**SMALL, "epochs": 0}, sampler="thompson")).model
    m1 = run(RunConfig(**{**SMALL, "epochs": 0}, sampler="random")).model
    assert all(np.array_equal(p, q) for p, q in zip(m0.params(), m1.params()))
    assert ts.logs[0]["mined_score_mean"] != rnd.logs[0]["mined_score_mean"]


def test_early_stop_full_equals_run():
    cfg = RunConfig(**SMALL)
    assert early_stop_variant(cfg, cfg.epochs).logs == run(cfg).logs


def test_early_stop_zero_freezes_first_mined_set():
    res = early_stop_variant(RunConfig(**SMALL), 0)
    assert [r["mined_this_epoch"] for r in res.logs] == [True, False, False, False]
    assert all(r["queue_len"] == 0 for r in res.logs)
    assert len({r["mined_score_mean"] for r in res.logs}) == 1


def test_early_stop_bounds():
    with pytest.raises(ConfigError):
        early_stop_variant(RunConfig(**SMALL), 5)


def test_early_stop_is_cheaper():
    cfg = RunConfig(epochs=12)

    def best(f):
        times = []
        for _ in range(3):
            t = time.perf_counter()
            f()
            times.append(time.perf_counter() - t)
        return min(times)
    assert best(lambda: early_stop_variant(cfg, 8)) < best(lambda: run(cfg))


@pytest.mark.parametrize("dataset", ["theory", "generalized"])
def test_gaussian_datasets_run(dataset):
    cfg = RunConfig(**{**SMALL, "epochs": 2}, dataset=dataset, theory_d=5, theory_r0=3.0)
    model, logs = run(cfg)
    assert model.input_dim == 5 and model.num_classes == 2
    assert len(logs) == 2


def test_toy_data_geometry():
    cfg = RunConfig(**SMALL)
    data = build_data(cfg, np.random.default_rng(0))
    assert np.max(np.abs(data.aux)) > 8.0  # wider auxiliary box
    assert np.max(np.abs(data.test_ood)) <= 8.0


def test_snapshots():
    res = run(RunConfig(**{**SMALL, "epochs": 5}), keep_snapshots=True)
    assert [s.epoch for s in res.snapshots] == [1, 4, 5]
    assert all(s.mined_x.shape == (40, 2) for s in res.snapshots)


@pytest.mark.parametrize("bad, field", [
    (dict(mined=500, pool_size=100), "mined"),
    (dict(queue_capacity=10, mined=40), "queue_capacity"),
    (dict(dataset="cifar"), "dataset"),
    (dict(sampler="ucb"), "sampler"),
    (dict(noise_var=0.0), "noise_var"),
    (dict(toy_aux_box=4.0), "toy_aux_box"),
    (dict(epochs=-1), "epochs"),
    (dict(stop_epoch=9), "stop_epoch"),
])
def test_validation_names_field(bad, field):
    with pytest.raises(ConfigError) as err:
        RunConfig(**{**SMALL, **bad}).validate()
    assert err.value.field == field
    assert field in str(err.value)
