"""Power-control policies: FC-DNN, HomoGNN, vanilla HetGNN and PGNN.

All four map ``(p_max, H)`` to a power vector ``p`` with ``0 < p < p_max``.
Inputs may be single instances (``p_max: M``, ``H: K x M``) or batches
(``B x M`` and ``B x K x M``).

The two heterogeneous GNNs share one layer implementation. In every layer
base station ``i`` and user ``n`` (served by cell ``c(n)``) update as::

    b_i <- relu(S b_i + sum_{n in cell i} (B_V u_n + B_P h[n, i])
                     + sum_{n not in cell i} (C_V u_n + C_P h[n, i]) + bias_b)
    u_n <- relu(T u_n + B_U b_c(n) + B_Q h[n, c(n)]
                     + sum_{j != c(n)} (C_U b_j + C_Q h[n, j]) + bias_u)

PGNN learns separate ``B_*`` (own cell) and ``C_*`` (other cells) blocks.
HetGNN ties ``C_* is B_*`` so every neighbour of a type is aggregated with
the same weights. The last layer only updates base stations, has width one
and ends in a sigmoid scaled by ``p_max``.

Neighbour aggregation is a plain sum. Because channel gains are positive,
such sums grow with the neighbourhood, so aggregation weights start at a
Xavier draw divided by the neighbourhood size (``K`` users per base
station, ``M`` base stations per user, ``M - 1`` cells in the HomoGNN).
The first forward pass then sees O(1) pre-activations, while gradient
steps still act on the full sums.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .netsim import NetworkConfig, assignment_matrix, serving_cells

log = logging.getLogger(__name__)

CKPT_MAGIC = b"PCGNNCK\0"
CKPT_VERSION = 1

_AGG_PAIRS = (("B_V", "C_V"), ("B_P", "C_P"), ("B_U", "C_U"), ("B_Q", "C_Q"))


class ModelKind(str, Enum):
    FCDNN = "fcdnn"
    HOMOGNN = "homognn"
    HETGNN = "hetgnn"
    PGNN = "pgnn"

    @classmethod
    def parse(cls, kind) -> "ModelKind":
        if isinstance(kind, cls):
            return kind
        try:
            return cls(str(kind).lower().replace("-", ""))
        except ValueError:
            raise ValueError(f"unknown model kind {kind!r}; expected one of "
                             f"{[k.value for k in cls]}") from None


@dataclass
class Model:
    kind: ModelKind
    cfg: NetworkConfig
    hidden_layers: int
    hidden_dim: int
    seed: int
    params: dict[str, Tensor] = field(default_factory=dict)
    # H is fed to the network as (H - input_shift) / input_scale
    input_shift: float = 0.0
    input_scale: float = 1.0

    def parameters(self) -> list[Tensor]:
        """Distinct parameter tensors (aliases listed once)."""
        seen, out = set(), []
        for t in self.params.values():
            if id(t) not in seen:
                seen.add(id(t))
                out.append(t)
        return out

    def ties(self) -> dict[str, str]:
        """Map alias name -> first name carrying the same tensor."""
        first: dict[int, str] = {}
        out = {}
        for name, t in self.params.items():
            if id(t) in first:
                out[name] = first[id(t)]
            else:
                first[id(t)] = name
        return out

    def forward(self, p_max, H, cell_sizes: Optional[Sequence[int]] = None) -> np.ndarray:
        p_max = np.asarray(p_max, dtype=float)
        return normalized_output(self, p_max, H, cell_sizes, grad=False) * p_max

    __call__ = forward

    def copy(self) -> "Model":
        params, remap = {}, {}
        for name, t in self.params.items():
            if id(t) not in remap:
                remap[id(t)] = Tensor(t.value.copy(), requires_grad=True, name=name)
            params[name] = remap[id(t)]
        return Model(self.kind, self.cfg, self.hidden_layers, self.hidden_dim, self.seed,
                     params, self.input_shift, self.input_scale)


def param_count(model: Model) -> int:
    return int(sum(t.value.size for t in model.parameters()))


def _xavier(rng, fan_in, fan_out, shape) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def build_model(kind, cfg: NetworkConfig, hidden_layers: int = 1, hidden_dim: int = 5,
                seed: int = 0) -> Model:
    """Construct and initialize a model for network ``cfg``.

    Weights are Xavier-uniform (aggregation blocks shrunk by the
    neighbourhood size), biases start at zero.
    """
    kind = ModelKind.parse(kind)
    if hidden_layers < 1 or hidden_dim < 1:
        raise ValueError("hidden_layers and hidden_dim must be >= 1")
    rng = np.random.default_rng(seed)
    model = Model(kind, cfg, hidden_layers, hidden_dim, seed)
    P = model.params

    def new(name, shape, fan_in, fan_out, bias=False, count=1):
        value = np.zeros(shape) if bias else _xavier(rng, fan_in, fan_out, shape) / count
        P[name] = Tensor(value, requires_grad=True, name=name)

    if kind is ModelKind.FCDNN:
        dims = [cfg.M + cfg.K * cfg.M] + [hidden_dim] * hidden_layers + [cfg.M]
        for l in range(len(dims) - 1):
            new(f"l{l}.W", (dims[l], dims[l + 1]), dims[l], dims[l + 1])
            new(f"l{l}.b", (dims[l + 1],), 0, 0, bias=True)
    elif kind is ModelKind.HOMOGNN:
        nmax = max(cfg.cell_sizes)
        din = 1 + nmax
        for l in range(hidden_layers + 1):
            dout = 1 if l == hidden_layers else hidden_dim
            new(f"l{l}.W_self", (din, dout), din, dout)
            new(f"l{l}.W_nbr", (din, dout), din, dout, count=max(cfg.M - 1, 1))
            new(f"l{l}.W_edge", (nmax, dout), nmax, dout, count=max(cfg.M - 1, 1))
            new(f"l{l}.bias", (dout,), 0, 0, bias=True)
            din = hidden_dim
    else:
        tied = kind is ModelKind.HETGNN
        cK, cM = cfg.K, cfg.M
        db, du = 1, 0
        for l in range(hidden_layers + 1):
            last = l == hidden_layers
            d = 1 if last else hidden_dim
            pre = f"l{l}."
            new(pre + "S", (db, d), db, d)
            if du:
                new(pre + "B_V", (du, d), du, d, count=cK)
                new(pre + "C_V", (du, d), du, d, count=cK)
            new(pre + "B_P", (1, d), 1, d, count=cK)
            new(pre + "C_P", (1, d), 1, d, count=cK)
            new(pre + "bias_b", (d,), 0, 0, bias=True)
            if not last:
                if du:
                    new(pre + "T", (du, d), du, d)
                new(pre + "B_U", (db, d), db, d, count=cM)
                new(pre + "C_U", (db, d), db, d, count=cM)
                new(pre + "B_Q", (1, d), 1, d, count=cM)
                new(pre + "C_Q", (1, d), 1, d, count=cM)
                new(pre + "bias_u", (d,), 0, 0, bias=True)
            if tied:
                for b_name, c_name in _AGG_PAIRS:
                    if pre + b_name in P:
                        P[pre + c_name] = P[pre + b_name]
            db, du = d, d
        # keep aliases adjacent to their source in the parameter listing
        model.params = dict(sorted(P.items(), key=lambda kv: _sort_key(kv[0])))
    return model


def _sort_key(name: str):
    layer, block = name.split(".", 1)
    return int(layer[1:]), block


def _prep(model: Model, p_max, H, cell_sizes):
    p_max = np.asarray(p_max, dtype=float)
    H = np.asarray(H, dtype=float)
    single = H.ndim == 2
    if single:
        p_max, H = p_max[None], H[None]
    sizes = tuple(model.cfg.cell_sizes if cell_sizes is None else (int(s) for s in cell_sizes))
    if H.shape[1:] != (sum(sizes), len(sizes)) or p_max.shape != (H.shape[0], len(sizes)):
        raise ValueError(f"inputs H {H.shape}, p_max {p_max.shape} inconsistent with cells {sizes}")
    return p_max, (H - model.input_shift) / model.input_scale, sizes, single


def _check_finite(t, layer: int):
    if not np.all(np.isfinite(t.value if isinstance(t, Tensor) else t)):
        raise FloatingPointError(f"non-finite activations in layer {layer}")


def _layers(model: Model, grad: bool) -> list[dict]:
    """Per layer, block name -> parameter (tensor, or its array when ``grad`` is off)."""
    out = [dict() for _ in range(model.hidden_layers + 1)]
    for name, t in model.params.items():
        layer, block = name.split(".", 1)
        out[int(layer[1:])][block] = t if grad else t.value
    return out


def normalized_output(model: Model, p_max, H, cell_sizes=None, grad: bool = True):
    """Sigmoid output ``p / p_max``.

    With ``grad`` the result is a tensor recorded on the active tape,
    otherwise a plain array.
    """
    p_max, H, sizes, single = _prep(model, p_max, H, cell_sizes)
    kind, P = model.kind, _layers(model, grad)
    if kind is ModelKind.FCDNN:
        y = _fcdnn(P, p_max, H)
    elif kind is ModelKind.HOMOGNN:
        y = _homognn(model, P, p_max, H, sizes)
    else:
        y = _hetero(P, p_max, H, sizes)
    if single:
        y = ad.reshape(y, y.shape[1:])
    return y


def _fcdnn(layers, p_max, H):
    n = H.shape[0]
    x = np.concatenate([p_max, H.reshape(n, -1)], axis=1)
    L = len(layers) - 1
    for l, P in enumerate(layers):
        z = x @ P["W"] + P["b"]
        x = ad.sigmoid(z) if l == L else ad.relu(z)
        _check_finite(x, l)
    return x


def _homognn(model, layers, p_max, H, sizes):
    """Each cell (BS plus its users) is one vertex; interference links are edges."""
    n, K, M = H.shape
    nmax = max(model.cfg.cell_sizes)
    if max(sizes) > nmax:
        raise ValueError("cell larger than the padding width the model was built for")
    serve = serving_cells(sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    slot = np.arange(K) - offsets[serve]
    own = H[:, np.arange(K), serve]                  # n x K, serving links
    cross = H.sum(axis=2) - own                      # interference received from other BSs
    vert = np.zeros((n, M, 1 + nmax))
    vert[:, :, 0] = p_max
    vert[:, serve, 1 + slot] = own
    edge = np.zeros((n, M, nmax))
    edge[:, serve, slot] = cross
    x = vert
    L = len(layers) - 1
    for l, P in enumerate(layers):
        others = x.sum(axis=1, keepdims=True) - x
        z = x @ P["W_self"] + others @ P["W_nbr"] + edge @ P["W_edge"] + P["bias"]
        x = ad.sigmoid(z) if l == L else ad.relu(z)
        _check_finite(x, l)
    return ad.reshape(x, (n, M))


def _hetero(layers, p_max, H, sizes):
    n, K, M = H.shape
    A = assignment_matrix(sizes)                    # K x M
    At = np.ascontiguousarray(A.T)
    h_own_bs = (H * A).sum(axis=1)[..., None]        # n x M x 1: own users' links to BS i
    h_oth_bs = H.sum(axis=1)[..., None] - h_own_bs
    h_own_ue = (H * A).sum(axis=2)[..., None]        # n x K x 1: link to serving BS
    h_oth_ue = H.sum(axis=2)[..., None] - h_own_ue
    b = p_max[..., None]
    u = None
    L = len(layers) - 1
    for l, P in enumerate(layers):
        zb = b @ P["S"] + h_own_bs * P["B_P"] + h_oth_bs * P["C_P"] + P["bias_b"]
        if u is not None:
            u_own = At @ u
            u_oth = u.sum(axis=1, keepdims=True) - u_own
            zb = zb + u_own @ P["B_V"] + u_oth @ P["C_V"]
        if l == L:
            y = ad.sigmoid(zb)
            _check_finite(y, l)
            return ad.reshape(y, (n, M))
        b_own = A @ b
        b_oth = b.sum(axis=1, keepdims=True) - b_own
        zu = b_own @ P["B_U"] + b_oth @ P["C_U"] + h_own_ue * P["B_Q"] + h_oth_ue * P["C_Q"] + P["bias_u"]
        if u is not None:
            zu = zu + u @ P["T"]
        b, u = ad.relu(zb), ad.relu(zu)
        _check_finite(b, l)
        _check_finite(u, l)


def _require(model: Model, kind: ModelKind):
    if model.kind is not kind:
        raise ValueError(f"expected a {kind.value} model, got {model.kind.value}")


def pgnn_forward(model: Model, p_max, H, cell_sizes=None) -> np.ndarray:
    _require(model, ModelKind.PGNN)
    return model.forward(p_max, H, cell_sizes)


def hetgnn_forward(model: Model, p_max, H, cell_sizes=None) -> np.ndarray:
    _require(model, ModelKind.HETGNN)
    return model.forward(p_max, H, cell_sizes)


def homognn_forward(model: Model, p_max, H, cell_sizes=None) -> np.ndarray:
    _require(model, ModelKind.HOMOGNN)
    return model.forward(p_max, H, cell_sizes)


def fcdnn_forward(model: Model, p_max, H, cell_sizes=None) -> np.ndarray:
    _require(model, ModelKind.FCDNN)
    return model.forward(p_max, H, cell_sizes)


def mse_loss(model: Model, p_max, H, p_star, cell_sizes=None) -> Tensor:
    """Mean squared error between normalized outputs and normalized labels."""
    target = np.asarray(p_star, dtype=float) / np.asarray(p_max, dtype=float)
    y = normalized_output(model, p_max, H, cell_sizes)
    return ad.square(y - target).mean()


def backward(model: Model, tape: ad.Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of ``loss`` for every distinct parameter block, keyed by name.

    Aliased (shared) blocks appear once, under their first name.
    """
    for t in model.parameters():
        t.grad = None
    tape.backward(loss)
    aliases = model.ties()
    return {name: (np.zeros_like(t.value) if t.grad is None else t.grad)
            for name, t in model.params.items() if name not in aliases}


def loss_and_grads(model: Model, p_max, H, p_star, cell_sizes=None):
    with ad.Tape() as tape:
        loss = mse_loss(model, p_max, H, p_star, cell_sizes)
    return float(loss.value), backward(model, tape, loss)


def flat_params(model: Model) -> np.ndarray:
    return np.concatenate([t.value.ravel() for t in model.parameters()])


def set_flat_params(model: Model, theta: np.ndarray):
    i = 0
    for t in model.parameters():
        t.value = np.asarray(theta[i:i + t.value.size], dtype=float).reshape(t.value.shape)
        i += t.value.size


def assemble_aggregator(model: Model, layer: int, which: str, cell_sizes=None) -> np.ndarray:
    """Dense aggregation matrix of one heterogeneous-GNN layer.

    ``which="V"`` gives the ``(M*d) x (K*d_u)`` map from stacked user states
    to base-station pre-activations; ``which="U"`` the ``(K*d) x (M*d_b)``
    map from stacked base-station states to user pre-activations.
    """
    if model.kind not in (ModelKind.PGNN, ModelKind.HETGNN):
        raise ValueError("aggregators exist only for heterogeneous GNNs")
    sizes = tuple(model.cfg.cell_sizes if cell_sizes is None else cell_sizes)
    serve = serving_cells(sizes)
    M, K = len(sizes), len(serve)
    Bm = model.params[f"l{layer}.B_{which}"].value.T
    Cm = model.params[f"l{layer}.C_{which}"].value.T
    d, din = Bm.shape
    if which == "V":
        W = np.zeros((M * d, K * din))
        for i in range(M):
            for k in range(K):
                W[i * d:(i + 1) * d, k * din:(k + 1) * din] = Bm if serve[k] == i else Cm
    elif which == "U":
        W = np.zeros((K * d, M * din))
        for k in range(K):
            for j in range(M):
                W[k * d:(k + 1) * d, j * din:(j + 1) * din] = Bm if serve[k] == j else Cm
    else:
        raise ValueError("which must be 'V' or 'U'")
    return W


# -- checkpoints -------------------------------------------------------------
#
# Layout (little-endian): magic b"PCGNNCK\0", uint32 header length, UTF-8
# JSON header (sorted keys), then every named block in header order as
# float64, C order. Tied blocks are written under each of their names; the
# header's "ties" maps alias -> source. A loaded alias whose values differ
# from its source is kept as an independent block.

def save_checkpoint(model: Model, path, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    blocks = [{"name": n, "shape": list(t.value.shape)} for n, t in model.params.items()]
    head = {
        "format": "powergnn-checkpoint",
        "version": CKPT_VERSION,
        "kind": model.kind.value,
        "network": model.cfg.to_dict(),
        "hidden_layers": model.hidden_layers,
        "hidden_dim": model.hidden_dim,
        "seed": model.seed,
        "input_scale": model.input_scale,
        "input_shift": model.input_shift,
        "blocks": blocks,
        "ties": model.ties(),
        "extra": extra or {},
    }
    data = b"".join(t.value.astype("<f8").tobytes(order="C") for t in model.params.values())
    hb = json.dumps(head, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<I", len(hb)) + hb + data)
    return path


def _read_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    (hlen,) = struct.unpack("<I", raw[8:12])
    head = json.loads(raw[12:12 + hlen].decode("utf-8"))
    if head.get("version") != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version")
    return head, raw[12 + hlen:]


def load_checkpoint(path) -> Model:
    head, data = _read_checkpoint(path)
    cfg = NetworkConfig.from_dict(head["network"])
    model = build_model(head["kind"], cfg, head["hidden_layers"], head["hidden_dim"], head["seed"])
    model.input_scale = float(head.get("input_scale", 1.0))
    model.input_shift = float(head.get("input_shift", 0.0))
    flat = np.frombuffer(data, dtype="<f8")
    values, i = {}, 0
    for blk in head["blocks"]:
        size = int(np.prod(blk["shape"]))
        if i + size > flat.size:
            raise ValueError(f"{path}: truncated parameter block {blk['name']}")
        values[blk["name"]] = flat[i:i + size].reshape(blk["shape"]).astype(float)
        i += size
    if set(values) != set(model.params):
        raise ValueError(f"{path}: parameter blocks do not match a {head['kind']} model")
    ties = head.get("ties", {})
    params = {}
    for name in model.params:
        src = ties.get(name)
        if src is not None and np.array_equal(values[name], values[src]):
            params[name] = params[src]
        else:
            if src is not None:
                log.warning("checkpoint block %s differs from its tied source %s; loading untied", name, src)
            params[name] = Tensor(values[name], requires_grad=True, name=name)
    model.params = params
    return model


def checkpoint_header(path) -> dict:
    return _read_checkpoint(path)[0]
