"""Walk classifier / imitating network: FC lift -> stacked GRU -> FC head.

Each walk step (a 3D coordinate) is lifted by ReLU dense layers, the GRU
stack aggregates the sequence, and a dense head maps the top hidden state after
the last step to class logits.  Reverse-mode gradients are derived by hand and
reach the input coordinates, which is what the attack consumes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .kernels import gru_backward, gru_forward

PROB_FLOOR = 1e-12
FEATURES = ("xyz", "dxdydz")


@dataclass(frozen=True)
class Arch:
    """Layer widths.  Defaults follow the reference design: 3->128->256, two GRU layers of 256."""

    n_classes: int
    lift: tuple = (128, 256)
    hidden: int = 256
    layers: int = 2
    features: str = "xyz"

    def __post_init__(self):
        object.__setattr__(self, "lift", tuple(int(x) for x in self.lift))
        if self.n_classes < 2 or self.hidden < 1 or self.layers < 1 or any(w < 1 for w in self.lift):
            raise DimensionMismatch(f"invalid architecture {self}")
        if self.features not in FEATURES:
            raise DimensionMismatch(f"unknown feature mode {self.features!r}")

    def shapes(self) -> dict:
        out = {}
        width = 3
        for i, w in enumerate(self.lift):
            out[f"lift{i}.W"] = (width, w)
            out[f"lift{i}.b"] = (w,)
            width = w
        H = self.hidden
        for i in range(self.layers):
            out[f"gru{i}.W"] = (width, 3 * H)
            out[f"gru{i}.U"] = (H, 3 * H)
            out[f"gru{i}.bx"] = (3 * H,)
            out[f"gru{i}.bh"] = (3 * H,)
            width = H
        out["out.W"] = (H, self.n_classes)
        out["out.b"] = (self.n_classes,)
        return out


@dataclass
class ImitatorParams:
    arch: Arch
    tensors: dict
    seed: int | None = None

    def __post_init__(self):
        for name, shape in self.arch.shapes().items():
            if name not in self.tensors:
                raise DimensionMismatch(f"missing tensor {name}")
            if self.tensors[name].shape != shape:
                raise DimensionMismatch(f"{name}: shape {self.tensors[name].shape} != {shape}")

    @property
    def n_classes(self) -> int:
        return self.arch.n_classes

    def copy(self) -> "ImitatorParams":
        return ImitatorParams(self.arch, {k: v.copy() for k, v in self.tensors.items()}, self.seed)

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


def _orthogonal(rng, n, m):
    a = rng.normal(size=(max(n, m), min(n, m)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if n >= m else q.T


def init_params(arch: Arch, seed: int = 0) -> ImitatorParams:
    """Glorot-uniform input kernels, orthogonal recurrent kernels, zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in arch.shapes().items():
        if len(shape) == 1:
            tensors[name] = np.zeros(shape)
        elif name.endswith(".U"):
            H = shape[0]
            tensors[name] = np.concatenate([_orthogonal(rng, H, H) for _ in range(3)], axis=1)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
    return ImitatorParams(arch, tensors, seed)


# ---------------------------------------------------------------- losses


@dataclass(frozen=True)
class KLDLoss:
    """Divergence of the network output from a reference distribution (one row per walk)."""

    ref: np.ndarray

    def target(self, batch: int, n_classes: int) -> np.ndarray:
        ref = np.asarray(self.ref, dtype=np.float64)
        if ref.ndim == 1:
            ref = np.broadcast_to(ref, (batch, ref.shape[0]))
        if ref.shape != (batch, n_classes):
            raise DimensionMismatch(f"reference shape {ref.shape} != {(batch, n_classes)}")
        return ref


@dataclass(frozen=True)
class CrossEntropyLoss:
    label: object  # int or per-walk int array

    def target(self, batch: int, n_classes: int) -> np.ndarray:
        labels = np.broadcast_to(np.asarray(self.label, dtype=np.int64), (batch,))
        if np.any(labels < 0) or np.any(labels >= n_classes):
            raise DimensionMismatch(f"label out of range for {n_classes} classes")
        out = np.zeros((batch, n_classes))
        out[np.arange(batch), labels] = 1.0
        return out


def one_hot(label: int, n_classes: int) -> np.ndarray:
    out = np.zeros(n_classes)
    out[label] = 1.0
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def kld(ref, pred, floor: float = PROB_FLOOR):
    """sum_i ref_i * ln(ref_i / pred_i), with 0 * ln(0 / x) = 0 and pred clamped at ``floor``.

    Works row-wise on 2-D input.
    """
    ref = np.asarray(ref, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if ref.shape != pred.shape:
        raise DimensionMismatch(f"kld: shapes {ref.shape} and {pred.shape} differ")
    pos = ref > 0
    safe_ref = np.where(pos, ref, 1.0)
    terms = np.where(pos, ref * (np.log(safe_ref) - np.log(np.maximum(pred, floor))), 0.0)
    return terms.sum(axis=-1)


def _dlogits(probs, ref, floor=PROB_FLOOR):
    """Gradient of kld(ref, softmax(logits)) w.r.t. logits, per row.

    Clamped entries do not pass gradient to the probability, so with
    S = sum of ref over unclamped entries the result is p*S - ref on unclamped
    entries and p*S on clamped ones.
    """
    live = probs >= floor
    S = np.where(live, ref, 0.0).sum(axis=1, keepdims=True)
    return probs * S - np.where(live, ref, 0.0)


def loss_value(probs: np.ndarray, loss) -> float:
    probs = np.atleast_2d(probs)
    ref = loss.target(*probs.shape)
    return float(kld(ref, probs).mean())


# ---------------------------------------------------------------- forward / backward


@dataclass
class ForwardTrace:
    coords: np.ndarray
    feats: np.ndarray
    lift_pre: list
    lift_in: list
    gru_in: list
    gru_cache: list
    logits: np.ndarray
    probs: np.ndarray
    batched: bool = True
    extras: dict = field(default_factory=dict)

    @property
    def prediction(self) -> np.ndarray:
        return self.probs if self.batched else self.probs[0]

    @property
    def hidden_states(self) -> np.ndarray:
        """Top-layer hidden state after every step, ``(B, L, H)``."""
        return self.gru_cache[-1][0]

    def __len__(self):
        return self.coords.shape[1]


def _features(coords, mode):
    if mode == "xyz":
        return coords
    feats = np.zeros_like(coords)
    feats[:, 1:] = coords[:, 1:] - coords[:, :-1]
    return feats


def _features_backward(dfeats, mode):
    if mode == "xyz":
        return dfeats
    dx = np.zeros_like(dfeats)
    dx[:, 1:] += dfeats[:, 1:]
    dx[:, :-1] -= dfeats[:, 1:]
    return dx


def forward(params: ImitatorParams, coords) -> ForwardTrace:
    """Run walk coordinates ``(L, 3)`` or ``(B, L, 3)`` through the network."""
    coords = np.asarray(coords, dtype=np.float64)
    batched = coords.ndim == 3
    if not batched:
        coords = coords[None]
    if coords.ndim != 3 or coords.shape[2] != 3 or coords.shape[1] < 1:
        raise DimensionMismatch(f"expected (L, 3) or (B, L, 3) coordinates, got {coords.shape}")
    if not np.all(np.isfinite(coords)):
        raise DimensionMismatch("non-finite walk coordinates")
    arch, T = params.arch, params.tensors
    B, L, _ = coords.shape
    feats = _features(coords, arch.features)
    a = feats.reshape(B * L, 3)
    lift_pre, lift_in = [], []
    for i in range(len(arch.lift)):
        lift_in.append(a)
        pre = a @ T[f"lift{i}.W"] + T[f"lift{i}.b"]
        lift_pre.append(pre)
        a = np.maximum(pre, 0.0)
    gru_in, gru_cache = [], []
    for i in range(arch.layers):
        gru_in.append(a)
        xp = (a @ T[f"gru{i}.W"] + T[f"gru{i}.bx"]).reshape(B, L, -1)
        cache = gru_forward(xp, T[f"gru{i}.U"], T[f"gru{i}.bh"])
        gru_cache.append(cache)
        a = cache[0].reshape(B * L, -1)
    last = gru_cache[-1][0][:, -1]
    logits = last @ T["out.W"] + T["out.b"]
    return ForwardTrace(coords, feats, lift_pre, lift_in, gru_in, gru_cache, logits, softmax(logits), batched)


def backward(params: ImitatorParams, trace: ForwardTrace, loss, upstream: float = 1.0,
             need_param_grads: bool = True):
    """Gradients of ``upstream * mean_b loss_b`` w.r.t. parameters and coordinates.

    Returns ``(param_grads, coord_grads)``; ``param_grads`` is ``None`` when
    ``need_param_grads`` is false.  ``coord_grads`` has the shape of the
    coordinates passed to :func:`forward`.
    """
    arch, T = params.arch, params.tensors
    B, L, _ = trace.coords.shape
    ref = loss.target(B, arch.n_classes)
    dlogits = _dlogits(trace.probs, ref) * (upstream / B)
    grads = {} if need_param_grads else None

    last = trace.gru_cache[-1][0][:, -1]
    if need_param_grads:
        grads["out.W"] = last.T @ dlogits
        grads["out.b"] = dlogits.sum(axis=0)
    dhs = np.zeros((B, L, arch.hidden))
    dhs[:, -1] = dlogits @ T["out.W"].T

    da = None
    for i in reversed(range(arch.layers)):
        dxp, dU, dbh = gru_backward(dhs, trace.gru_cache[i], T[f"gru{i}.U"], need_param_grads)
        dxp2 = dxp.reshape(B * L, -1)
        if need_param_grads:
            grads[f"gru{i}.W"] = trace.gru_in[i].T @ dxp2
            grads[f"gru{i}.bx"] = dxp2.sum(axis=0)
            grads[f"gru{i}.U"] = dU
            grads[f"gru{i}.bh"] = dbh
        da = dxp2 @ T[f"gru{i}.W"].T
        if i > 0:
            dhs = da.reshape(B, L, -1)
    for i in reversed(range(len(arch.lift))):
        dpre = da * (trace.lift_pre[i] > 0)
        if need_param_grads:
            grads[f"lift{i}.W"] = trace.lift_in[i].T @ dpre
            grads[f"lift{i}.b"] = dpre.sum(axis=0)
        da = dpre @ T[f"lift{i}.W"].T
    dcoords = _features_backward(da.reshape(B, L, 3), arch.features)
    if not trace.batched:
        dcoords = dcoords[0]
    return grads, dcoords


def predict(params: ImitatorParams, coords) -> np.ndarray:
    return forward(params, coords).prediction

