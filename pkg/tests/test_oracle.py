import hashlib
import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from powergnn.dataset import Dataset, concat
from powergnn.netsim import NetworkConfig, generate_channels, sum_rate
from powergnn.oracle import (WmmseError, WmmseOptions, generate_dataset, grid_search, wmmse_iterate,
                             wmmse_solve)

from .conftest import HETNET, SMALL
from .test_netsim import direct_sum_rate

WEAK = np.array([[1.0, 0.1], [0.1, 1.0]])


def brute_grid(H, p_max, sizes, n):
    axes = [np.linspace(0, pm, n) for pm in p_max]
    best, arg = -1.0, None
    for p in itertools.product(*axes):
        r = direct_sum_rate(H, p, sizes)
        if r > best:
            best, arg = r, np.array(p)
    return arg, best


class TestWmmse:
    def test_single_cell_full_power(self):
        res = wmmse_solve(np.array([[0.7]]), [3.0], [1])
        assert res.p_star[0] == 3.0

    def test_diagonal_full_power(self):
        res = wmmse_solve(np.diag([1.0, 2.0]), [1.0, 2.0], [1, 1])
        assert np.allclose(res.p_star, [1.0, 2.0])

    def test_weak_interference_matches_grid(self):
        res = wmmse_solve(WEAK, [1.0, 1.0], [1, 1])
        _, g = brute_grid(WEAK, [1.0, 1.0], [1, 1], 101)
        assert res.rate >= 0.99 * g

    def test_trace_monotone_and_feasible(self):
        H = generate_channels(SMALL, 2).H
        res = wmmse_solve(H, np.full(4, 2.0), SMALL.cell_sizes, opts=WmmseOptions(restarts=4), seed=1)
        assert np.all(np.diff(res.iter_trace) >= -1e-12 * np.abs(res.iter_trace[:-1]))
        assert np.all((res.p_star >= 0) & (res.p_star <= 2.0))
        assert res.rate == pytest.approx(sum_rate(H, res.p_star, SMALL.cell_sizes), rel=1e-12)

    def test_restart_seed_determinism(self):
        H = generate_channels(SMALL, 4).H
        opts = WmmseOptions(restarts=3, init_mode="random")
        a = wmmse_solve(H, np.ones(4), SMALL.cell_sizes, opts=opts, seed=9)
        b = wmmse_solve(H, np.ones(4), SMALL.cell_sizes, opts=opts, seed=9)
        assert np.array_equal(a.p_star, b.p_star)

    def test_options_validated(self):
        with pytest.raises(ValueError):
            WmmseOptions(restarts=0)
        with pytest.raises(ValueError):
            WmmseOptions(init_mode="zeros")

    def test_non_finite_input_raises(self):
        H = np.array([[[np.nan, 0.1], [0.1, 1.0]]])
        with pytest.raises(WmmseError):
            wmmse_iterate(H, np.ones((1, 2)), [1, 1], 1.0, np.ones((1, 2)))

    @given(st.integers(0, 100_000), st.floats(0.1, 20.0))
    def test_never_worse_than_full_power(self, seed, pmax):
        H = generate_channels(SMALL, seed).H
        p_max = np.full(4, pmax)
        res = wmmse_solve(H, p_max, SMALL.cell_sizes)
        assert res.rate >= sum_rate(H, p_max, SMALL.cell_sizes) * (1 - 1e-12)
        diffs = np.diff(res.iter_trace)
        assert np.all(diffs >= -1e-12 * np.abs(res.iter_trace[:-1]))


class TestGrid:
    def test_single_cell(self):
        p, _ = grid_search(np.array([[1.3]]), [2.0], [1])
        assert p.tolist() == [2.0]

    def test_diagonal(self):
        p, _ = grid_search(np.diag([1.0, 3.0]), [1.0, 2.0], [1, 1])
        assert p.tolist() == [1.0, 2.0]

    def test_matches_enumeration(self):
        p, r = grid_search(WEAK, [1.0, 1.0], [1, 1], points_per_dim=101)
        bp, br = brute_grid(WEAK, [1.0, 1.0], [1, 1], 101)
        assert r == pytest.approx(br, rel=1e-12)
        assert np.allclose(p, bp)

    def test_three_cells_matches_enumeration(self):
        H = generate_channels(NetworkConfig(M_S=3, N_S_tx=2, N_S=1), 8).H
        p, r = grid_search(H, [1.0, 2.0, 0.5], [1, 1, 1], points_per_dim=11)
        _, br = brute_grid(H, [1.0, 2.0, 0.5], [1, 1, 1], 11)
        assert r == pytest.approx(br, rel=1e-12)

    def test_refuses_large_m(self):
        with pytest.raises(ValueError):
            grid_search(np.eye(4), np.ones(4), [1, 1, 1, 1])


class TestDataset:
    def test_single_sample_single_cell(self):
        ds = generate_dataset(NetworkConfig(M_S=1, N_S_tx=1, N_S=1, p_max=2.5), 1, seed=0)
        assert len(ds) == 1 and ds.p_star[0, 0] == 2.5

    def test_hetnet_shape(self):
        ds = generate_dataset(HETNET, 3, seed=1)
        assert ds.H.shape == (3, 60, 8) and ds.p_star.shape == (3, 8)
        assert np.all(ds.p_star <= ds.p_max + 1e-12)

    def test_files_byte_identical(self, tmp_path):
        a = generate_dataset(SMALL, 5, seed=3, path=tmp_path / "a.bin")
        generate_dataset(SMALL, 5, seed=3, path=tmp_path / "b.bin")
        da = hashlib.sha256((tmp_path / "a.bin").read_bytes()).hexdigest()
        db = hashlib.sha256((tmp_path / "b.bin").read_bytes()).hexdigest()
        assert da == db
        assert len(a.seeds) == 5

    def test_roundtrip(self, tmp_path, tiny_data):
        path = tiny_data.save(tmp_path / "d.bin")
        back = Dataset.load(path)
        assert back.cfg == tiny_data.cfg
        for f in ("p_max", "H", "p_star", "seeds", "channel_seeds", "iterations"):
            assert np.array_equal(getattr(back, f), getattr(tiny_data, f))
        assert back.wmmse == tiny_data.wmmse

    def test_header_fields(self, tiny_data):
        h = tiny_data.header()
        assert {"format", "version", "network", "n_samples", "seeds"} <= set(h)
        assert h["n_samples"] == 40

    def test_corrupt_files(self, tmp_path, tiny_data):
        path = tiny_data.save(tmp_path / "d.bin")
        raw = path.read_bytes()
        (tmp_path / "t.bin").write_bytes(raw[:-8])
        with pytest.raises(ValueError, match="truncated"):
            Dataset.load(tmp_path / "t.bin")
        (tmp_path / "m.bin").write_bytes(b"XXXXXXXX" + raw[8:])
        with pytest.raises(ValueError):
            Dataset.load(tmp_path / "m.bin")
        with pytest.raises(OSError, match="missing.bin"):
            Dataset.load(tmp_path / "missing.bin")

    def test_json_export(self, tmp_path, tiny_data):
        small = tiny_data.subset(slice(0, 2))
        doc = json.loads(small.to_json(tmp_path / "d.json"))
        assert len(doc["samples"]) == 2
        s = doc["samples"][1]
        assert s["achieved_rate"] == pytest.approx(float(small.rates[1]))
        assert np.array_equal(np.array(s["H"]), small.H[1])

    def test_subset_and_concat(self, tiny_data):
        a, b = tiny_data.subset(slice(0, 10)), tiny_data.subset(slice(10, None))
        c = concat(a, b)
        assert np.array_equal(c.H, tiny_data.H) and len(c) == 40
        with pytest.raises(ValueError):
            concat(a, generate_dataset(NetworkConfig(M_S=1), 1, 0))

    def test_iteration(self, tiny_data):
        s = next(iter(tiny_data))
        assert s.achieved_rate == pytest.approx(sum_rate(s.H, s.p_star, SMALL.cell_sizes))


@pytest.mark.parametrize("seed", range(5))
def test_labels_covariant_under_relabeling(seed):
    from powergnn.perm import NestedPermutation
    rng = np.random.default_rng(seed)
    H = generate_channels(SMALL, seed).H
    p_max = rng.uniform(0.5, 3.0, SMALL.M)
    pi = NestedPermutation.random(SMALL.cell_sizes, rng)
    opts = WmmseOptions(restarts=1)
    a = wmmse_solve(H, p_max, SMALL.cell_sizes, 1.0, opts)
    b = wmmse_solve(pi.apply(H), pi.cells.apply(p_max), pi.permuted_sizes(), 1.0, opts)
    assert abs(a.rate - b.rate) <= 1e-6
    assert np.allclose(pi.cells.apply(a.p_star), b.p_star, atol=1e-8)
