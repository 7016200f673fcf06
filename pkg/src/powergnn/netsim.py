"""Multi-cell downlink network simulator.

Cells are ordered macro first, then pico. ``H`` is a ``K x M`` matrix of
equivalent channel magnitudes whose row blocks are cells (in cell order)
and whose columns are base stations.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)


class DegenerateChannelError(ValueError):
    """Raised when a zero-forcing system is rank deficient."""


@dataclass(frozen=True)
class NetworkConfig:
    M_S: int
    M_P: int = 0
    N_S_tx: int = 1
    N_P_tx: int = 1
    N_S: int = 1
    N_P: int = 1
    p_max: float | tuple[float, ...] = 1.0
    noise_power: float = 1.0
    # uniform range for per-sample random budgets; None keeps p_max fixed
    p_max_range: Optional[tuple[float, float]] = None
    # (M, M) power gains between the users of cell m and BS m'
    link_gain: Optional[tuple[tuple[float, ...], ...]] = None

    def __post_init__(self):
        if self.M_S < 0 or self.M_P < 0 or self.M_S + self.M_P < 1:
            raise ValueError("need at least one cell")
        if self.M_S and (self.N_S < 1 or self.N_S_tx < self.N_S):
            raise ValueError(f"macro cells are ZF-infeasible: N_S={self.N_S} > N_S_tx={self.N_S_tx}")
        if self.M_P and (self.N_P < 1 or self.N_P_tx < self.N_P):
            raise ValueError(f"pico cells are ZF-infeasible: N_P={self.N_P} > N_P_tx={self.N_P_tx}")
        if not self.noise_power > 0:
            raise ValueError("noise_power must be strictly positive")
        pm = np.broadcast_to(np.asarray(self.p_max, dtype=float), (self.M,))
        if not np.all(pm > 0):
            raise ValueError("power budgets must be strictly positive")
        if self.p_max_range is not None:
            lo, hi = self.p_max_range
            if not 0 < lo <= hi:
                raise ValueError("p_max_range must satisfy 0 < lo <= hi")
        if self.link_gain is not None:
            g = np.asarray(self.link_gain, dtype=float)
            if g.shape != (self.M, self.M) or np.any(g < 0):
                raise ValueError("link_gain must be a nonnegative (M, M) matrix")

    @property
    def M(self) -> int:
        return self.M_S + self.M_P

    @property
    def cell_sizes(self) -> tuple[int, ...]:
        return (self.N_S,) * self.M_S + (self.N_P,) * self.M_P

    @property
    def antennas(self) -> tuple[int, ...]:
        return (self.N_S_tx,) * self.M_S + (self.N_P_tx,) * self.M_P

    @property
    def K(self) -> int:
        return sum(self.cell_sizes)

    @property
    def p_max_vec(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.p_max, dtype=float), (self.M,)).copy()

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["p_max"], tuple):
            d["p_max"] = list(d["p_max"])
        if d["p_max_range"] is not None:
            d["p_max_range"] = list(d["p_max_range"])
        if d["link_gain"] is not None:
            d["link_gain"] = [list(r) for r in d["link_gain"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        if isinstance(d.get("p_max"), list):
            d["p_max"] = tuple(float(x) for x in d["p_max"])
        if d.get("p_max_range") is not None:
            d["p_max_range"] = tuple(float(x) for x in d["p_max_range"])
        if d.get("link_gain") is not None:
            d["link_gain"] = tuple(tuple(float(x) for x in r) for r in d["link_gain"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown network fields: {sorted(unknown)}")
        return cls(**d)


def serving_cells(cell_sizes: Sequence[int]) -> np.ndarray:
    """Serving cell index of every flattened user."""
    return np.repeat(np.arange(len(cell_sizes)), cell_sizes)


def assignment_matrix(cell_sizes: Sequence[int]) -> np.ndarray:
    """One-hot ``K x M`` user-to-cell association matrix."""
    sizes = list(cell_sizes)
    A = np.zeros((sum(sizes), len(sizes)))
    A[np.arange(A.shape[0]), serving_cells(sizes)] = 1.0
    return A


def draw_budgets(cfg: NetworkConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.p_max_range is None:
        return cfg.p_max_vec
    lo, hi = cfg.p_max_range
    return rng.uniform(lo, hi, size=cfg.M)


@dataclass
class ChannelRealization:
    """One Rayleigh draw plus the derived beamformers and equivalent channels.

    ``raw[m][j]`` is an ``(N_m, N_tx(j))`` array whose rows are the channel
    vectors from BS ``j`` to the users of cell ``m``; ``beamformers[j]`` is
    ``(N_tx(j), N_j)`` with one unit-norm column per served user.
    """
    raw: list[list[np.ndarray]]
    beamformers: list[np.ndarray]
    H: np.ndarray
    seed: int
    cell_sizes: tuple[int, ...] = field(default=())


def zf_beamformers(G: np.ndarray) -> np.ndarray:
    """Unit-norm zero-forcing beamformers for the columns of ``G``.

    ``G`` is ``N_tx x N`` with column ``n`` the channel of user ``n``. The
    result has the same shape and satisfies ``g_j^H w_n = 0`` for ``j != n``.
    """
    G = np.asarray(G, dtype=complex)
    if G.ndim != 2 or G.shape[0] < G.shape[1]:
        raise DegenerateChannelError(f"need N_tx >= N, got shape {G.shape}")
    gram = G.conj().T @ G
    s = np.linalg.svd(G, compute_uv=False)
    if s[-1] <= s[0] * 1e-10:
        raise DegenerateChannelError("channel matrix is rank deficient")
    W = G @ np.linalg.inv(gram)
    return W / np.linalg.norm(W, axis=0, keepdims=True)


def equivalent_channels(raw: list[list[np.ndarray]], beamformers: list[np.ndarray]) -> np.ndarray:
    """Equivalent channel magnitudes ``h[k, j] = ||W_j^H g_{k j}||``."""
    M = len(beamformers)
    rows = []
    for m in range(M):
        block = np.empty((raw[m][0].shape[0], M))
        for j in range(M):
            # row vectors g: g^H w = conj(g) @ w
            proj = raw[m][j].conj() @ beamformers[j]
            block[:, j] = np.sqrt(np.sum(np.abs(proj) ** 2, axis=1))
        rows.append(block)
    return np.vstack(rows)


def generate_channels(cfg: NetworkConfig, seed: int) -> ChannelRealization:
    """Draw one realization; degenerate draws are retried with ``seed + 1``."""
    s = int(seed)
    while True:
        try:
            return _generate_once(cfg, s)
        except DegenerateChannelError:
            log.warning("degenerate channel draw for seed %d, resampling with %d", s, s + 1)
            s += 1


def _generate_once(cfg: NetworkConfig, seed: int) -> ChannelRealization:
    rng = np.random.default_rng(seed)
    sizes, ants = cfg.cell_sizes, cfg.antennas
    gain = None if cfg.link_gain is None else np.sqrt(np.asarray(cfg.link_gain, dtype=float))
    raw = []
    for m in range(cfg.M):
        row = []
        for j in range(cfg.M):
            shape = (sizes[m], ants[j])
            g = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
            if gain is not None:
                g = g * gain[m, j]
            row.append(g)
        raw.append(row)
    beams = [zf_beamformers(raw[j][j].T) for j in range(cfg.M)]
    H = equivalent_channels(raw, beams)
    return ChannelRealization(raw=raw, beamformers=beams, H=H, seed=seed, cell_sizes=sizes)


def sum_rate(H, p, cell_sizes: Sequence[int], noise_power: float = 1.0):
    """Sum rate in bit/s/Hz with equal per-user power split inside each cell.

    ``H`` may carry leading batch dimensions (``... x K x M``) that broadcast
    against ``p`` (``... x M``); a scalar is returned for unbatched input.
    """
    H = np.asarray(H, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValueError("transmit powers must be nonnegative")
    sizes = np.asarray(cell_sizes)
    if H.shape[-2:] != (sizes.sum(), len(sizes)) or p.shape[-1] != len(sizes):
        raise ValueError(f"shape mismatch: H {H.shape}, p {p.shape}, cells {tuple(sizes)}")
    c = H**2
    q = p / sizes
    serve = serving_cells(sizes)
    total = np.einsum("...km,...m->...k", c, q)
    signal = c[..., np.arange(serve.size), serve] * q[..., serve]
    interference = np.maximum(total - signal, 0.0)
    r = np.log2(1.0 + signal / (interference + noise_power)).sum(-1)
    return float(r) if r.ndim == 0 else r
