"""Supervised training, optimizers, evaluation and benchmarks."""
from __future__ import annotations

import csv
import json
import logging
import platform
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import Dataset
from .models import Model, ModelKind, build_model, loss_and_grads, param_count
from .netsim import NetworkConfig, sum_rate
from .oracle import WmmseOptions, generate_dataset, wmmse_solve
from .seeding import derive_seed

log = logging.getLogger(__name__)

REPORT_VERSION = 1


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, msg: str = "non-finite training loss"):
        super().__init__(f"{msg} at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    optimizer: str = "rmsprop"
    lr0: float = 5e-4
    lr_decay: float = 0.9
    decay_every: int = 100
    seed: int = 0
    train_size: int = 100
    test_size: int = 500
    standardize_inputs: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.optimizer.lower() not in ("rmsprop", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def lr_at(self, epoch: int) -> float:
        return self.lr0 * self.lr_decay ** (epoch // self.decay_every)

    def to_dict(self) -> dict:
        return asdict(self)


# Default layer sizes and optimizer settings per architecture.
ARCH_DEFAULTS = {
    ModelKind.PGNN: dict(hidden_layers=1, hidden_dim=5, optimizer="rmsprop", lr0=5e-4, lr_decay=0.9),
    ModelKind.HETGNN: dict(hidden_layers=1, hidden_dim=5, optimizer="rmsprop", lr0=5e-4, lr_decay=0.9),
    ModelKind.HOMOGNN: dict(hidden_layers=1, hidden_dim=10, optimizer="rmsprop", lr0=5e-4, lr_decay=0.9),
    ModelKind.FCDNN: dict(hidden_layers=1, hidden_dim=200, optimizer="adam", lr0=1e-3, lr_decay=1.0),
}


def default_train_config(kind, **overrides) -> TrainConfig:
    t = dict(ARCH_DEFAULTS[ModelKind.parse(kind)])
    t.pop("hidden_layers"), t.pop("hidden_dim")
    t.update(overrides)
    return TrainConfig(**t)


# -- optimizers ----------------------------------------------------------------

class RMSprop:
    def __init__(self, rho=0.9, eps=1e-8):
        self.rho, self.eps = rho, eps
        self.s: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        for k, g in grads.items():
            s = self.s.get(k)
            s = (1 - self.rho) * g * g if s is None else self.rho * s + (1 - self.rho) * g * g
            self.s[k] = s
            params[k] = params[k] - lr * g / (np.sqrt(s) + self.eps)
        return params


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            m = b1 * self.m.get(k, 0.0) + (1 - b1) * g
            v = b2 * self.v.get(k, 0.0) + (1 - b2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            params[k] = params[k] - lr * mhat / (np.sqrt(vhat) + self.eps)
        return params


def make_optimizer(name: str):
    return {"rmsprop": RMSprop, "adam": Adam}[name.lower()]()


def optimizer_step(params: dict, grads: dict, state, tc: TrainConfig, epoch: int = 0):
    """One update; ``state`` is an optimizer object (``None`` creates one)."""
    if state is None:
        state = make_optimizer(tc.optimizer)
    return state.step(dict(params), grads, tc.lr_at(epoch) if tc.optimizer.lower() == "rmsprop" else tc.lr0), state


# -- training ------------------------------------------------------------------

def _check_cfg(model: Model, data: Dataset):
    if model.cfg != data.cfg:
        raise ValueError("dataset network config does not match the model's")


def train(model: Model, train_set: Dataset, tc: TrainConfig):
    """Full-batch training on the normalized-power MSE.

    Returns ``(model, mse_history)``; ``model`` is updated in place and
    ``mse_history[e]`` is the loss evaluated before the update of epoch ``e``.
    """
    _check_cfg(model, train_set)
    if tc.standardize_inputs:
        model.input_shift = float(np.mean(train_set.H))
        model.input_scale = float(np.std(train_set.H)) or 1.0
    opt = make_optimizer(tc.optimizer)
    adam = tc.optimizer.lower() == "adam"
    names = [n for n in model.params if n not in model.ties()]
    history = np.empty(tc.epochs)
    for epoch in range(tc.epochs):
        loss, grads = loss_and_grads(model, train_set.p_max, train_set.H, train_set.p_star)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise DivergenceError(epoch)
        history[epoch] = loss
        lr = tc.lr0 if adam else tc.lr_at(epoch)
        values = {n: model.params[n].value for n in names}
        values = opt.step(values, grads, lr)
        for n in names:
            model.params[n].value = values[n]
    return model, history


def performance_ratio(model, test_set: Dataset, return_per_sample: bool = False):
    """Mean ratio of the model's sum rate to the label sum rate.

    ``model`` is anything callable as ``model(p_max, H)`` on batches.
    Samples whose label rate is zero are dropped with a warning.
    """
    cfg = test_set.cfg
    p = np.asarray(model(test_set.p_max, test_set.H))
    num = np.atleast_1d(sum_rate(test_set.H, p, cfg.cell_sizes, cfg.noise_power))
    den = test_set.rates
    ok = den > 0
    if not ok.all():
        log.warning("excluding %d samples with zero label rate", int((~ok).sum()))
    ratios = num[ok] / den[ok]
    value = float(ratios.mean())
    return (value, ratios) if return_per_sample else value


class LabelPlayback:
    """Policy that returns the stored label of each known sample."""

    def __init__(self, ds: Dataset):
        self._map = {ds.H[i].tobytes(): ds.p_star[i] for i in range(len(ds))}

    def __call__(self, p_max, H):
        H = np.asarray(H)
        if H.ndim == 2:
            return self._map[H.tobytes()]
        return np.array([self._map[h.tobytes()] for h in H])


# -- benchmarks ----------------------------------------------------------------

def hardware_note() -> str:
    return f"{platform.processor() or platform.machine()} / {platform.system()} / numpy {np.__version__}"


def runtime_bench(model: Model, test_set: Optional[Dataset] = None, n: int = 1000) -> float:
    """Wall-clock seconds for ``n`` sequential single-instance inferences."""
    if n <= 0:
        return 0.0
    if test_set is None:
        test_set = generate_dataset(model.cfg, 1, 0, WmmseOptions(max_iters=1, restarts=1))
    m = len(test_set)
    model(test_set.p_max[0], test_set.H[0])
    t0 = time.perf_counter()
    for i in range(n):
        model(test_set.p_max[i % m], test_set.H[i % m])
    return time.perf_counter() - t0


def wmmse_bench(cfg: NetworkConfig, test_set: Optional[Dataset] = None, n: int = 1000,
                opts: Optional[WmmseOptions] = None) -> float:
    """Wall-clock seconds for ``n`` sequential WMMSE solves."""
    if n <= 0:
        return 0.0
    if test_set is None:
        test_set = generate_dataset(cfg, min(n, 100), 0, WmmseOptions(max_iters=1, restarts=1))
    m = len(test_set)
    sizes, noise = cfg.cell_sizes, cfg.noise_power
    wmmse_solve(test_set.H[0], test_set.p_max[0], sizes, noise, opts)
    t0 = time.perf_counter()
    for i in range(n):
        wmmse_solve(test_set.H[i % m], test_set.p_max[i % m], sizes, noise, opts, seed=i)
    return time.perf_counter() - t0


# -- reports -------------------------------------------------------------------

@dataclass
class EvalReport:
    mse_history: list
    perf_ratio: float
    param_count: int
    inference_time_1000: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["version"] = REPORT_VERSION
        d["mse_history"] = [float(x) for x in self.mse_history]
        return d

    def write_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    def write_history_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mse"])
            for e, v in enumerate(self.mse_history):
                w.writerow([e, repr(float(v))])
        return path


def train_and_evaluate(kind, train_set: Dataset, test_set: Dataset, tc: TrainConfig,
                       hidden_layers: Optional[int] = None, hidden_dim: Optional[int] = None,
                       bench: bool = False):
    kind = ModelKind.parse(kind)
    hl = hidden_layers or ARCH_DEFAULTS[kind]["hidden_layers"]
    hd = hidden_dim or ARCH_DEFAULTS[kind]["hidden_dim"]
    model = build_model(kind, train_set.cfg, hl, hd, derive_seed(tc.seed, "model", kind.value))
    model, hist = train(model, train_set, tc)
    ratio = performance_ratio(model, test_set)
    rep = EvalReport(
        mse_history=list(hist), perf_ratio=ratio, param_count=param_count(model),
        inference_time_1000=runtime_bench(model, test_set) if bench else None,
        metadata={"kind": kind.value, "network": train_set.cfg.to_dict(), "train": tc.to_dict(),
                  "hidden_layers": hl, "hidden_dim": hd, "model_seed": model.seed,
                  "train_samples": len(train_set), "test_samples": len(test_set),
                  "hardware": hardware_note()},
    )
    return model, rep


@dataclass
class SweepCell:
    kind: str
    size: int
    seed: int
    perf_ratio: float


def evaluate_cell(kind, train_pool: Dataset, test_set: Dataset, tc: TrainConfig, size: int, seed: int,
                  **model_kw) -> SweepCell:
    """Train on the first ``size`` samples of ``train_pool`` with training seed ``seed``.

    ``kind`` is a model kind, or a factory ``kind(train_subset, tc)``
    returning any policy callable as ``policy(p_max, H)``.
    """
    run_tc = TrainConfig(**{**tc.to_dict(), "seed": int(seed), "train_size": int(size)})
    subset = train_pool.subset(slice(0, size))
    if callable(kind):
        ratio = performance_ratio(kind(subset, run_tc), test_set)
        return SweepCell(getattr(kind, "__name__", "custom"), int(size), int(seed), ratio)
    kind = ModelKind.parse(kind)
    _, rep = train_and_evaluate(kind, subset, test_set, run_tc, **model_kw)
    return SweepCell(kind.value, int(size), int(seed), rep.perf_ratio)


def minimal_sizes(cells: Sequence[SweepCell], target: float = 0.9) -> dict[str, Optional[int]]:
    """Per model, the smallest size whose mean ratio over seeds reaches ``target``."""
    by: dict[str, dict[int, list[float]]] = {}
    for c in cells:
        by.setdefault(c.kind, {}).setdefault(c.size, []).append(c.perf_ratio)
    out = {}
    for kind, sizes in by.items():
        ok = [n for n in sorted(sizes) if np.mean(sizes[n]) >= target]
        out[kind] = ok[0] if ok else None
    return out


def sample_complexity(kind, train_pool: Dataset, test_set: Dataset, tc: TrainConfig,
                      sizes: Sequence[int], target: float = 0.9, seeds: Sequence[int] = (0, 1, 2),
                      cells: Optional[list] = None, **model_kw):
    """Smallest training size whose mean performance ratio over ``seeds`` reaches ``target``.

    Training sets are prefixes of ``train_pool`` and sizes are tried in
    ascending order, stopping at the first that qualifies. Returns ``None``
    when none does. Every trained cell is appended to ``cells`` if given.
    """
    sizes = list(sizes)
    if not sizes:
        raise ValueError("empty size grid")
    if sizes != sorted(sizes):
        raise ValueError("size grid must be ascending")
    if sizes[-1] > len(train_pool):
        raise ValueError(f"training pool has {len(train_pool)} samples, grid needs {sizes[-1]}")
    if not callable(kind):
        kind = ModelKind.parse(kind)
    for n in sizes:
        run = [evaluate_cell(kind, train_pool, test_set, tc, n, s, **model_kw) for s in seeds]
        if cells is not None:
            cells.extend(run)
        mean = float(np.mean([c.perf_ratio for c in run]))
        log.info("%s n=%d mean ratio %.4f", run[0].kind, n, mean)
        if mean >= target:
            return n
    return None
