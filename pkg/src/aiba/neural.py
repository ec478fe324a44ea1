"""Gated recurrent classifier for approximate influence points.

Each d-set record is a token. The cell reads tokens one step at a time and a
softmax head predicts y_src at every step, so a single pass over a trajectory
scores all of its prefixes. Forward and backward passes are plain numpy.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .influence import Influence
from .simulator import InfluenceDataset

MAGIC = b"AIBAGRU\x00"
VERSION = 1
PARAM_NAMES = ("E", "b", "Uzr", "Un", "Wo", "bo")


class NumericError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    hidden: int = 32
    epochs: int = 15
    batch: int = 64
    lr: float = 0.01
    decay: float = 0.5
    decay_every: int = 5
    optimizer: str = "sgd"
    momentum: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def init_params(n_tokens: int, hidden: int, n_y: int, rng: np.random.Generator) -> dict:
    s = 1.0 / np.sqrt(hidden)
    u = lambda *shape: rng.uniform(-s, s, size=shape)  # noqa: E731
    return {"E": u(n_tokens, 3 * hidden), "b": np.zeros(3 * hidden),
            "Uzr": u(hidden, 2 * hidden), "Un": u(hidden, hidden),
            "Wo": u(hidden, n_y), "bo": np.zeros(n_y)}


def forward(params: dict, X: np.ndarray):
    """Log-probabilities (B, T, n_y) and the cache needed for backprop."""
    E, b, Uzr, Un, Wo, bo = (params[k] for k in PARAM_NAMES)
    B, T = X.shape
    H = Un.shape[0]
    h = np.zeros((B, H))
    cache = []
    logp = np.empty((B, T, Wo.shape[1]))
    for t in range(T):
        xe = E[X[:, t]] + b
        zr = _sigmoid(xe[:, :2 * H] + h @ Uzr)
        z, r = zr[:, :H], zr[:, H:]
        rh = r * h
        n = np.tanh(xe[:, 2 * H:] + rh @ Un)
        h_new = (1.0 - z) * n + z * h
        o = h_new @ Wo + bo
        o = o - o.max(axis=1, keepdims=True)
        logp[:, t] = o - np.log(np.exp(o).sum(axis=1, keepdims=True))
        cache.append((h, z, r, rh, n, h_new))
        h = h_new
    return logp, cache


def loss_and_grad(params: dict, X: np.ndarray, Y: np.ndarray):
    """Mean cross-entropy over all (trajectory, step) pairs and its gradient."""
    logp, cache = forward(params, X)
    B, T = X.shape
    H = params["Un"].shape[0]
    bi = np.arange(B)
    loss = -logp[bi[:, None], np.arange(T)[None, :], Y].mean()
    g = {k: np.zeros_like(v) for k, v in params.items()}
    Wo, Uzr, Un = params["Wo"], params["Uzr"], params["Un"]
    dh_next = np.zeros((B, H))
    scale = 1.0 / (B * T)
    for t in reversed(range(T)):
        h, z, r, rh, n, h_new = cache[t]
        dlog = np.exp(logp[:, t])
        dlog[bi, Y[:, t]] -= 1.0
        dlog *= scale
        g["Wo"] += h_new.T @ dlog
        g["bo"] += dlog.sum(axis=0)
        dh = dlog @ Wo.T + dh_next
        dz = dh * (h - n)
        dn_pre = dh * (1.0 - z) * (1.0 - n * n)
        dh_prev = dh * z
        g["Un"] += rh.T @ dn_pre
        drh = dn_pre @ Un.T
        dh_prev += drh * r
        dzr_pre = np.concatenate([dz * z * (1.0 - z), drh * h * r * (1.0 - r)], axis=1)
        g["Uzr"] += h.T @ dzr_pre
        dh_prev += dzr_pre @ Uzr.T
        dxe = np.concatenate([dzr_pre, dn_pre], axis=1)
        g["b"] += dxe.sum(axis=0)
        np.add.at(g["E"], X[:, t], dxe)
        dh_next = dh_prev
    return float(loss), g


class Vocab:
    """Record tuple -> token id; id 0 is reserved for unseen records."""

    def __init__(self, records: list[tuple]):
        self.records = list(records)
        self.index = {r: i + 1 for i, r in enumerate(self.records)}

    def __len__(self):
        return len(self.records) + 1

    @classmethod
    def from_dataset(cls, ds: InfluenceDataset) -> "Vocab":
        flat = ds.records.reshape(-1, ds.records.shape[2])
        return cls([tuple(r) for r in np.unique(flat, axis=0).tolist()])

    def encode_dataset(self, ds: InfluenceDataset) -> np.ndarray:
        flat = ds.records.reshape(-1, ds.records.shape[2])
        uniq, inv = np.unique(flat, axis=0, return_inverse=True)
        ids = np.array([self.index.get(tuple(u), 0) for u in uniq.tolist()], dtype=np.int64)
        return ids[inv.reshape(-1)].reshape(ds.n, ds.horizon)

    def encode(self, dset: tuple) -> np.ndarray:
        return np.array([self.index.get(tuple(r), 0) for r in dset], dtype=np.int64)


@dataclass
class NeuralInfluence(Influence):
    params: dict
    vocab: Vocab
    n_y: int
    horizon: int
    seed: int = 0
    epoch: int = 0

    def predict(self, t, dset):
        if not 1 <= t <= self.horizon or len(dset) != t:
            raise ValueError(f"bad influence query: t={t}, d-set length {len(dset)}")
        logp, _ = forward(self.params, self.vocab.encode(dset)[None, :])
        p = np.exp(logp[0, -1])
        return p / p.sum()

    def predict_dataset(self, ds: InfluenceDataset, chunk: int = 8192) -> np.ndarray:
        X = self.vocab.encode_dataset(ds)
        out = np.concatenate([forward(self.params, X[i:i + chunk])[0]
                              for i in range(0, ds.n, chunk)])
        p = np.exp(out)
        return p / p.sum(axis=2, keepdims=True)

    # -- checkpoint blob --

    def to_bytes(self) -> bytes:
        head = {"n_y": self.n_y, "horizon": self.horizon, "seed": self.seed,
                "epoch": self.epoch, "vocab": [list(r) for r in self.vocab.records],
                "shapes": {k: list(self.params[k].shape) for k in PARAM_NAMES}}
        hb = json.dumps(head, sort_keys=True).encode()
        body = b"".join(np.ascontiguousarray(self.params[k], dtype="<f8").tobytes()
                        for k in PARAM_NAMES)
        return MAGIC + struct.pack("<II", VERSION, len(hb)) + hb + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "NeuralInfluence":
        if blob[:len(MAGIC)] != MAGIC:
            raise ValueError("not a recurrent influence checkpoint")
        off = len(MAGIC)
        version, hlen = struct.unpack_from("<II", blob, off)
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        off += 8
        head = json.loads(blob[off:off + hlen])
        off += hlen
        params = {}
        for k in PARAM_NAMES:
            shape = tuple(head["shapes"][k])
            n = int(np.prod(shape))
            params[k] = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).copy()
            off += 8 * n
        if off != len(blob):
            raise ValueError("checkpoint has trailing bytes")
        vocab = Vocab([tuple(r) for r in head["vocab"]])
        return cls(params, vocab, head["n_y"], head["horizon"], head["seed"], head["epoch"])

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "NeuralInfluence":
        return cls.from_bytes(Path(path).read_bytes())


def train_neural(ds: InfluenceDataset, cfg: TrainConfig | None = None, seed: int = 0,
                 callback=None) -> list[NeuralInfluence]:
    """Mini-batch descent on mean cross-entropy; one checkpoint per epoch."""
    cfg = cfg or TrainConfig()
    if cfg.optimizer not in ("sgd", "adam"):
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
    if ds.n < 1 or cfg.epochs < 1:
        raise ValueError("need a nonempty dataset and at least one epoch")
    vocab = Vocab.from_dataset(ds)
    X = vocab.encode_dataset(ds)
    Y = ds.y
    params = init_params(len(vocab), cfg.hidden, ds.n_y, np.random.default_rng(seed))
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(v) for k, v in params.items()}
    step = 0
    out = []
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr * cfg.decay ** ((epoch - 1) // cfg.decay_every)
        order = np.random.default_rng([seed, epoch]).permutation(ds.n)
        for i in range(0, ds.n, cfg.batch):
            idx = order[i:i + cfg.batch]
            loss, g = loss_and_grad(params, X[idx], Y[idx])
            if not np.isfinite(loss) or not all(np.isfinite(a).all() for a in g.values()):
                bad = [k for k, a in g.items() if not np.isfinite(a).all()]
                raise NumericError(f"non-finite training state at epoch {epoch}, step {step}: "
                                   f"loss={loss}, bad gradients {bad}")
            step += 1
            if cfg.optimizer == "adam":
                c1 = 1.0 - cfg.beta1 ** step
                c2 = 1.0 - cfg.beta2 ** step
                for k in PARAM_NAMES:
                    m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k]
                    v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] ** 2
                    params[k] -= lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + cfg.eps)
            else:
                for k in PARAM_NAMES:
                    m[k] = cfg.momentum * m[k] + g[k]
                    params[k] -= lr * m[k]
        ckpt = NeuralInfluence({k: a.copy() for k, a in params.items()}, vocab, ds.n_y,
                               ds.horizon, seed, epoch)
        out.append(ckpt)
        if callback is not None:
            callback(ckpt)
    return out


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
