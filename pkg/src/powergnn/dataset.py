"""Labelled dataset container and its on-disk format.

Binary layout (all integers and floats little-endian)::

    magic      8 bytes   b"PCGNNDS\\0"
    hlen       uint32    length of the JSON header in bytes
    header     hlen      UTF-8 JSON, keys sorted
    samples    n * (M + K*M + M) float64
               per sample: p_max (M), H row-major (K*M), p_star (M)

The header carries ``format``, ``version``, ``network`` (NetworkConfig
fields), ``n_samples``, ``seeds`` (derived per-sample seeds),
``channel_seeds`` (seed actually used after any degenerate resampling),
``master_seed``, ``wmmse`` (solver options) and ``wmmse_iterations``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .netsim import NetworkConfig, sum_rate

MAGIC = b"PCGNNDS\0"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class LabeledSample:
    p_max: np.ndarray
    H: np.ndarray
    p_star: np.ndarray
    achieved_rate: float


@dataclass
class Dataset:
    cfg: NetworkConfig
    p_max: np.ndarray      # n x M
    H: np.ndarray          # n x K x M
    p_star: np.ndarray     # n x M
    seeds: np.ndarray
    channel_seeds: Optional[np.ndarray] = None
    master_seed: Optional[int] = None
    wmmse: dict = field(default_factory=dict)
    iterations: Optional[np.ndarray] = None

    def __post_init__(self):
        n, K, M = self.H.shape
        if (K, M) != (self.cfg.K, self.cfg.M):
            raise ValueError(f"H blocks {K}x{M} do not match network {self.cfg.K}x{self.cfg.M}")
        if self.p_max.shape != (n, M) or self.p_star.shape != (n, M):
            raise ValueError("p_max / p_star shapes inconsistent with H")
        if self.channel_seeds is None:
            self.channel_seeds = np.asarray(self.seeds)

    def __len__(self) -> int:
        return self.H.shape[0]

    @property
    def rates(self) -> np.ndarray:
        return np.atleast_1d(sum_rate(self.H, self.p_star, self.cfg.cell_sizes, self.cfg.noise_power))

    def __iter__(self) -> Iterator[LabeledSample]:
        rates = self.rates
        for i in range(len(self)):
            yield LabeledSample(self.p_max[i], self.H[i], self.p_star[i], float(rates[i]))

    def subset(self, index) -> "Dataset":
        index = np.arange(len(self))[index]
        it = None if self.iterations is None else self.iterations[index]
        return Dataset(self.cfg, self.p_max[index], self.H[index], self.p_star[index],
                       self.seeds[index], self.channel_seeds[index], self.master_seed,
                       dict(self.wmmse), it)

    def header(self) -> dict:
        return {
            "format": "powergnn-dataset",
            "version": FORMAT_VERSION,
            "network": self.cfg.to_dict(),
            "n_samples": len(self),
            "seeds": [int(s) for s in self.seeds],
            "channel_seeds": [int(s) for s in self.channel_seeds],
            "master_seed": self.master_seed,
            "wmmse": self.wmmse,
            "wmmse_iterations": None if self.iterations is None else [int(i) for i in self.iterations],
        }

    def save(self, path) -> Path:
        path = Path(path)
        head = json.dumps(self.header(), sort_keys=True).encode("utf-8")
        body = np.concatenate([self.p_max, self.H.reshape(len(self), -1), self.p_star], axis=1)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "wb") as fh:
                fh.write(MAGIC)
                fh.write(struct.pack("<I", len(head)))
                fh.write(head)
                fh.write(body.astype("<f8").tobytes(order="C"))
        except OSError as exc:
            raise OSError(f"cannot write dataset {path}: {exc}") from exc
        return path

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise OSError(f"cannot read dataset {path}: {exc}") from exc
        if raw[:8] != MAGIC:
            raise ValueError(f"{path} is not a dataset file")
        (hlen,) = struct.unpack("<I", raw[8:12])
        head = json.loads(raw[12:12 + hlen].decode("utf-8"))
        if head.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {head.get('version')}")
        cfg = NetworkConfig.from_dict(head["network"])
        n, K, M = head["n_samples"], cfg.K, cfg.M
        body = np.frombuffer(raw[12 + hlen:], dtype="<f8")
        if body.size != n * (2 * M + K * M):
            raise ValueError(f"{path}: truncated sample block")
        body = body.reshape(n, 2 * M + K * M).astype(float)
        it = head.get("wmmse_iterations")
        return cls(cfg, body[:, :M].copy(), body[:, M:M + K * M].reshape(n, K, M).copy(),
                   body[:, M + K * M:].copy(), np.array(head["seeds"], dtype=np.int64),
                   np.array(head["channel_seeds"], dtype=np.int64), head.get("master_seed"),
                   head.get("wmmse") or {}, None if it is None else np.array(it))

    def to_json(self, path=None) -> str:
        doc = self.header()
        doc["samples"] = [
            {"p_max": s.p_max.tolist(), "H": s.H.tolist(), "p_star": s.p_star.tolist(),
             "achieved_rate": s.achieved_rate}
            for s in self
        ]
        text = json.dumps(doc, indent=1, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text


def concat(a: Dataset, b: Dataset) -> Dataset:
    if a.cfg != b.cfg:
        raise ValueError("cannot concatenate datasets of different networks")
    it = None if a.iterations is None or b.iterations is None else np.concatenate([a.iterations, b.iterations])
    return Dataset(a.cfg, np.concatenate([a.p_max, b.p_max]), np.concatenate([a.H, b.H]),
                   np.concatenate([a.p_star, b.p_star]), np.concatenate([a.seeds, b.seeds]),
                   np.concatenate([a.channel_seeds, b.channel_seeds]), a.master_seed, dict(a.wmmse), it)
