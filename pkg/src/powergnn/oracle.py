"""Label oracle: scalar WMMSE power control and a brute-force grid check."""
from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .netsim import NetworkConfig, draw_budgets, generate_channels, serving_cells, sum_rate
from .seeding import derive_seed

log = logging.getLogger(__name__)

E_FLOOR = 1e-12


class WmmseError(ArithmeticError):
    pass


@dataclass(frozen=True)
class WmmseOptions:
    max_iters: int = 500
    rel_obj_tol: float = 1e-6
    restarts: int = 3
    init_mode: str = "full-power"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_obj_tol > 0:
            raise ValueError("rel_obj_tol must be > 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.init_mode not in ("full-power", "random"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class WmmseResult(NamedTuple):
    p_star: np.ndarray
    rate: float
    iter_trace: np.ndarray


def wmmse_iterate(H, p_max, cell_sizes, noise_power, v0, max_iters=500, rel_obj_tol=1e-6):
    """Run scalar WMMSE on a batch of instances.

    ``H`` is ``B x K x M``, ``p_max`` and ``v0`` are ``B x M`` (``v0`` holds
    amplitudes, i.e. square roots of powers). Each instance stops on its own
    once the relative sum-rate change drops below ``rel_obj_tol``.

    Returns ``(p, rates, traces)`` where ``traces[b]`` is the sum rate after
    every iteration of instance ``b``.
    """
    H = np.asarray(H, dtype=float)
    B, K, M = H.shape
    if not np.all(np.isfinite(H)):
        bad = np.flatnonzero(~np.all(np.isfinite(H), axis=(1, 2)))
        raise WmmseError(f"non-finite channel gains in batch entries {bad.tolist()}")
    sizes = np.asarray(cell_sizes, dtype=float)
    serve = serving_cells(cell_sizes)
    idx = np.arange(K)
    pmax = np.broadcast_to(np.asarray(p_max, dtype=float), (B, M))
    vmax = np.sqrt(pmax)
    c = H**2 / sizes                      # B x K x M
    sc = np.sqrt(c[:, idx, serve])        # B x K, serving link amplitude gain
    own = np.zeros((K, M))
    own[idx, serve] = 1.0

    v = np.array(v0, dtype=float)
    rate = sum_rate(H, v**2, cell_sizes, noise_power)
    done = np.zeros(B, dtype=bool)
    traces: list[list[float]] = [[] for _ in range(B)]
    for _ in range(max_iters):
        act = ~done
        va, ca, sca = v[act], c[act], sc[act]
        vs = va[:, serve]
        u = sca * vs / (np.einsum("bkm,bm->bk", ca, va**2) + noise_power)
        e = np.maximum(1.0 - u * sca * vs, E_FLOOR)
        w = 1.0 / e
        num = (w * u * sca) @ own                       # B x M, own-cell users only
        den = np.einsum("bk,bkm->bm", w * u**2, ca)
        vn = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        vn = np.clip(vn, 0.0, vmax[act])
        if not np.all(np.isfinite(vn)):
            bad = np.flatnonzero(act)[~np.all(np.isfinite(vn), axis=1)]
            raise WmmseError(f"non-finite WMMSE update for batch entries {bad.tolist()}")
        new_rate = sum_rate(H[act], vn**2, cell_sizes, noise_power)
        v[act] = vn
        old = rate[act]
        rate[act] = new_rate
        for b, r in zip(np.flatnonzero(act), new_rate):
            traces[b].append(float(r))
        conv = np.abs(new_rate - old) <= rel_obj_tol * np.maximum(np.abs(old), 1e-300)
        done[np.flatnonzero(act)[conv]] = True
        if done.all():
            break
    # amplitudes at the cap map back to the budget exactly, not to sqrt(P)**2
    p = np.where(v >= vmax, pmax, np.minimum(v**2, pmax))
    return p, sum_rate(H, p, cell_sizes, noise_power), [np.asarray(t) for t in traces]


def _initial_points(p_max, opts: WmmseOptions, rng: np.random.Generator) -> np.ndarray:
    p_max = np.asarray(p_max, dtype=float)
    pts = []
    for r in range(opts.restarts):
        if r == 0 and opts.init_mode == "full-power":
            pts.append(np.sqrt(p_max))
        else:
            pts.append(np.sqrt(rng.uniform(0.0, p_max)))
    return np.array(pts)


def wmmse_solve_batch(H, p_max, cell_sizes, noise_power=1.0, opts: Optional[WmmseOptions] = None,
                      seeds: Optional[Sequence[int]] = None) -> list[WmmseResult]:
    """Solve many instances at once; instance ``b`` uses restart seed ``seeds[b]``."""
    opts = opts or WmmseOptions()
    H = np.asarray(H, dtype=float)
    p_max = np.asarray(p_max, dtype=float)
    n, R = H.shape[0], opts.restarts
    seeds = list(range(n)) if seeds is None else list(seeds)
    v0 = np.concatenate([_initial_points(p_max[b], opts, np.random.default_rng(seeds[b]))
                         for b in range(n)])
    Hr = np.repeat(H, R, axis=0)
    pr = np.repeat(p_max, R, axis=0)
    try:
        p, rates, traces = wmmse_iterate(Hr, pr, cell_sizes, noise_power, v0,
                                         opts.max_iters, opts.rel_obj_tol)
    except WmmseError as exc:
        raise WmmseError(f"{exc} (sample = entry // {R}, restart = entry % {R})") from None
    out = []
    for b in range(n):
        sl = slice(b * R, (b + 1) * R)
        best = int(np.argmax(rates[sl]))
        k = b * R + best
        out.append(WmmseResult(p[k], float(rates[k]), traces[k]))
    return out


def wmmse_solve(H, p_max, cell_sizes, noise_power=1.0, opts: Optional[WmmseOptions] = None,
                seed: int = 0) -> WmmseResult:
    """WMMSE power control for a single ``K x M`` instance, best over restarts."""
    H = np.asarray(H, dtype=float)
    return wmmse_solve_batch(H[None], np.asarray(p_max, dtype=float)[None], cell_sizes,
                             noise_power, opts, [seed])[0]


def grid_search(H, p_max, cell_sizes, noise_power=1.0, points_per_dim=101):
    """Exhaustive search on a uniform grid over the power box (M <= 3).

    Ties go to the first maximizer in lexicographic scan order.
    """
    H = np.asarray(H, dtype=float)
    p_max = np.asarray(p_max, dtype=float)
    M = p_max.shape[0]
    if M > 3:
        raise ValueError(f"grid search refused for M={M} > 3")
    axes = [np.linspace(0.0, p_max[m], points_per_dim) for m in range(M)]
    if M == 1:
        rates = sum_rate(H, axes[0][:, None], cell_sizes, noise_power)
        i = int(np.argmax(rates))
        return np.array([axes[0][i]]), float(rates[i])
    best_rate, best_p = -np.inf, None
    rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, M - 1)
    for p0 in axes[0]:
        P = np.concatenate([np.full((rest.shape[0], 1), p0), rest], axis=1)
        rates = sum_rate(H, P, cell_sizes, noise_power)
        i = int(np.argmax(rates))
        if rates[i] > best_rate:
            best_rate, best_p = float(rates[i]), P[i].copy()
    return best_p, best_rate


def generate_dataset(cfg: NetworkConfig, n_samples: int, seed: int,
                     opts: Optional[WmmseOptions] = None, path: Optional[str | Path] = None,
                     chunk: int = 256):
    """Simulate ``n_samples`` networks and label them with WMMSE.

    Sample ``i`` draws its channel from ``derive_seed(seed, i)``; the output
    is a pure function of ``(cfg, n_samples, seed, opts)``. When ``path`` is
    given the dataset is also written there.
    """
    from .dataset import Dataset

    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    opts = opts or WmmseOptions()
    sizes = cfg.cell_sizes
    seeds, used, Hs, pms = [], [], [], []
    for i in range(n_samples):
        s = derive_seed(seed, i)
        real = generate_channels(cfg, s)
        seeds.append(s)
        used.append(real.seed)
        Hs.append(real.H)
        pms.append(draw_budgets(cfg, np.random.default_rng(derive_seed(seed, i, "budget"))))
    H = np.array(Hs)
    p_max = np.array(pms)
    labels = np.empty_like(p_max)
    rates = np.empty(n_samples)
    iters = np.empty(n_samples, dtype=int)
    wseeds = [derive_seed(seed, i, "wmmse") for i in range(n_samples)]
    for lo in range(0, n_samples, chunk):
        sl = slice(lo, min(lo + chunk, n_samples))
        res = wmmse_solve_batch(H[sl], p_max[sl], sizes, cfg.noise_power, opts, wseeds[sl])
        for j, r in enumerate(res):
            labels[lo + j] = r.p_star
            rates[lo + j] = r.rate
            iters[lo + j] = len(r.iter_trace)
    log.info("labelled %d samples: mean %.1f WMMSE iterations, mean rate %.4f",
             n_samples, iters.mean(), rates.mean())
    ds = Dataset(cfg=cfg, p_max=p_max, H=H, p_star=labels, seeds=np.array(seeds, dtype=np.int64),
                 channel_seeds=np.array(used, dtype=np.int64), master_seed=int(seed),
                 wmmse=opts.to_dict(), iterations=iters)
    if path is not None:
        ds.save(path)
    return ds
