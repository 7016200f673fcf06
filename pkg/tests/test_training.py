import csv
import json

import numpy as np
import pytest

from powergnn import training
from powergnn.dataset import Dataset
from powergnn.models import ModelKind, build_model
from powergnn.netsim import NetworkConfig
from powergnn.training import (Adam, DivergenceError, EvalReport, LabelPlayback, RMSprop, SweepCell,
                               TrainConfig, default_train_config, evaluate_cell, minimal_sizes,
                               optimizer_step, performance_ratio, runtime_bench, sample_complexity, train)

from .conftest import SMALL


class TestOptimizers:
    def test_rmsprop_first_step_value(self):
        p = RMSprop().step({"w": np.array([1.0])}, {"w": np.array([1.0])}, lr=5e-4)
        # 1 - 5e-4 / (sqrt(0.1) + 1e-8)
        assert p["w"][0] == pytest.approx(0.99841886, abs=1e-8)

    def test_rmsprop_zero_gradient_is_noop(self):
        p = RMSprop().step({"w": np.array([1.0, -2.0])}, {"w": np.zeros(2)}, lr=1.0)
        assert p["w"].tolist() == [1.0, -2.0]

    def test_rmsprop_second_step_smaller(self):
        opt = RMSprop()
        p = opt.step({"w": np.array([1.0])}, {"w": np.array([1.0])}, lr=5e-4)
        first = 1.0 - p["w"][0]
        before = p["w"][0]
        p = opt.step(p, {"w": np.array([1.0])}, lr=5e-4)
        assert 0 < before - p["w"][0] < first

    def test_adam_first_step_is_lr_times_sign(self):
        p = Adam().step({"w": np.array([0.0, 0.0])}, {"w": np.array([3.0, -0.01])}, lr=1e-3)
        assert np.allclose(p["w"], [-1e-3, 1e-3], atol=1e-9)

    def test_schedule_decays_every_100_epochs(self):
        tc = TrainConfig()
        assert tc.lr_at(0) == tc.lr_at(99) == 5e-4
        assert tc.lr_at(100) == pytest.approx(4.5e-4)
        assert tc.lr_at(999) == pytest.approx(5e-4 * 0.9**9)

    def test_fcdnn_defaults_use_adam_without_decay(self):
        tc = default_train_config("fcdnn")
        assert tc.optimizer == "adam" and tc.lr0 == 1e-3
        params, state = optimizer_step({"w": np.zeros(1)}, {"w": np.ones(1)}, None, tc, epoch=500)
        assert params["w"][0] == pytest.approx(-1e-3, abs=1e-9)

    def test_bad_train_config(self):
        for bad in (dict(epochs=0), dict(lr0=0.0), dict(lr_decay=1.5), dict(optimizer="sgd")):
            with pytest.raises(ValueError):
                TrainConfig(**bad)


class TestTrain:
    def test_single_epoch_history(self, tiny_data):
        m = build_model("pgnn", SMALL, seed=0)
        _, hist = train(m, tiny_data, TrainConfig(epochs=1))
        assert hist.shape == (1,)

    def test_same_seeds_same_history(self, tiny_data):
        tc = TrainConfig(epochs=20)
        h1 = train(build_model("hetgnn", SMALL, seed=4), tiny_data, tc)[1]
        h2 = train(build_model("hetgnn", SMALL, seed=4), tiny_data, tc)[1]
        assert np.array_equal(h1, h2)

    def test_overfits_one_sample(self, tiny_data):
        one = tiny_data.subset([0])
        tc = default_train_config("fcdnn", epochs=600, lr0=1e-2)
        _, hist = train(build_model("fcdnn", SMALL, 1, 16, seed=0), one, tc)
        assert hist[-1] < 1e-3

    def test_loss_decreases(self, tiny_data):
        _, hist = train(build_model("pgnn", SMALL, seed=1), tiny_data, TrainConfig(epochs=200, lr0=5e-3))
        assert hist[-1] < hist[0]

    def test_mismatched_network_rejected(self, tiny_data):
        with pytest.raises(ValueError):
            train(build_model("pgnn", NetworkConfig(M_S=2, N_S_tx=2, N_S=1)), tiny_data, TrainConfig(epochs=1))

    def test_divergence_raises(self, tiny_data, monkeypatch):
        monkeypatch.setattr(training, "loss_and_grads", lambda *a, **k: (float("nan"), {}))
        with pytest.raises(DivergenceError) as exc:
            train(build_model("pgnn", SMALL), tiny_data, TrainConfig(epochs=3))
        assert exc.value.epoch == 0


def diagonal_dataset(n=30, M=3, seed=0):
    # one single-antenna user per cell and no cross links
    cfg = NetworkConfig(M_S=M, N_S_tx=1, N_S=1)
    rng = np.random.default_rng(seed)
    H = np.zeros((n, M, M))
    idx = np.arange(M)
    H[:, idx, idx] = rng.uniform(0.2, 3.0, size=(n, M))
    p_max = rng.uniform(0.5, 4.0, size=(n, M))
    return Dataset(cfg, p_max, H, p_max.copy(), np.arange(n))


class TestEvaluation:
    def test_playback_ratio_is_one(self, tiny_data):
        assert performance_ratio(LabelPlayback(tiny_data), tiny_data) == 1.0

    def test_half_budget_closed_form(self):
        ds = diagonal_dataset()
        g = np.einsum("nkk->nk", ds.H) ** 2
        expect = np.mean(np.log2(1 + g * ds.p_max / 2).sum(1) / np.log2(1 + g * ds.p_max).sum(1))
        assert performance_ratio(lambda p, H: 0.5 * p, ds) == pytest.approx(expect, rel=1e-12)

    def test_per_sample_ratios(self, tiny_data):
        value, per = performance_ratio(LabelPlayback(tiny_data), tiny_data, return_per_sample=True)
        assert per.shape == (len(tiny_data),) and value == per.mean()

    def test_runtime_bench(self, tiny_data):
        m = build_model("pgnn", SMALL)
        assert runtime_bench(m, tiny_data, n=0) == 0.0
        assert runtime_bench(m, tiny_data, n=20) > 0.0

    def test_report_files(self, tmp_path):
        rep = EvalReport([0.5, 0.25], 0.9, 63, None, {"kind": "pgnn"})
        d = json.loads(rep.write_json(tmp_path / "r.json").read_text())
        assert d["perf_ratio"] == 0.9 and d["mse_history"] == [0.5, 0.25] and d["version"] == 1
        rows = list(csv.reader(open(rep.write_history_csv(tmp_path / "h.csv"))))
        assert rows == [["epoch", "mse"], ["0", "0.5"], ["1", "0.25"]]

    def test_train_and_evaluate_metadata(self, tiny_data):
        model, rep = training.train_and_evaluate("pgnn", tiny_data.subset(slice(0, 20)),
                                                 tiny_data.subset(slice(20, 40)), TrainConfig(epochs=5))
        assert rep.metadata["train_samples"] == 20 and rep.metadata["test_samples"] == 20
        assert len(rep.mse_history) == 5 and 0 < rep.perf_ratio <= 1.5
        assert rep.param_count == 63


class TestSampleComplexity:
    def test_playback_factory_finds_smallest_size(self, tiny_data):
        test = tiny_data.subset(slice(0, 10))

        def memorizer(subset, tc):
            # perfect on test samples it has seen, half budget elsewhere
            seen = LabelPlayback(subset)
            return lambda p, H: np.array([seen._map.get(h.tobytes(), 0.5 * q) for q, h in zip(p, H)])

        first = performance_ratio(memorizer(tiny_data.subset(slice(0, 5)), None), test)
        assert first < 0.99
        cells = []
        n = sample_complexity(memorizer, tiny_data, test, TrainConfig(), [5, 10, 20], target=0.999,
                              seeds=(0, 1), cells=cells)
        assert n == 10
        assert [c.size for c in cells] == [5, 5, 10, 10]

    def test_none_when_unreachable(self, tiny_data):
        half = lambda subset, tc: (lambda p, H: 0.01 * p)
        assert sample_complexity(half, tiny_data, tiny_data, TrainConfig(), [5, 10], target=0.9) is None

    def test_bad_grids(self, tiny_data):
        f = lambda s, tc: LabelPlayback(s)
        for sizes in ([], [10, 5], [10_000]):
            with pytest.raises(ValueError):
                sample_complexity(f, tiny_data, tiny_data, TrainConfig(), sizes)

    def test_evaluate_cell_trains_a_model(self, tiny_data):
        cell = evaluate_cell("pgnn", tiny_data, tiny_data.subset(slice(30, 40)), TrainConfig(epochs=3), 10, 2)
        assert (cell.kind, cell.size, cell.seed) == ("pgnn", 10, 2)

    def test_minimal_sizes(self):
        cells = [SweepCell("pgnn", 10, 0, 0.8), SweepCell("pgnn", 10, 1, 0.95), SweepCell("pgnn", 20, 0, 0.91),
                 SweepCell("pgnn", 20, 1, 0.92), SweepCell("fcdnn", 10, 0, 0.5)]
        assert minimal_sizes(cells, 0.9) == {"pgnn": 20, "fcdnn": None}
        assert minimal_sizes(cells, 0.85) == {"pgnn": 10, "fcdnn": None}


class TestTrainingProperties:
    def test_trained_pgnn_keeps_its_symmetries(self, tiny_data):
        from powergnn.checks import equivariance_suite
        m, _ = train(build_model("pgnn", SMALL, seed=2), tiny_data, TrainConfig(epochs=100, lr0=5e-3))
        assert all(r.status == "pass" for r in equivariance_suite(m, trials=20))

    @pytest.mark.parametrize("kind", ["pgnn", "hetgnn", "homognn", "fcdnn"])
    def test_loss_mostly_non_increasing_over_50_epochs(self, tiny_data, kind):
        from powergnn.training import ARCH_DEFAULTS
        t = ARCH_DEFAULTS[ModelKind.parse(kind)]
        m = build_model(kind, SMALL, t["hidden_layers"], t["hidden_dim"], seed=0)
        _, hist = train(m, tiny_data, default_train_config(kind))
        ok = hist[50:] <= hist[:-50]
        assert ok.mean() >= 0.9
