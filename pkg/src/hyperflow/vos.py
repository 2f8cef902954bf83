"""One-shot and zero-shot video object segmentation on encoder feature frames.

Keys are seeded orthogonal projections of flattened P x P feature patches,
L2-normalized per patch. Query/memory affinity is a row softmax over memory
positions; mask values are carried to the query frame by that affinity.
The zero-shot path feeds [memory correlation | self correlation | keys]
into a trained linear softmax readout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from ._interp import lattice_interp
from .errors import DataError, DimensionError, InputError, StateError, TrainingError, UsageError
from .reconstruct import FeatureFrame
from .spectral import SpectralCube

_NORM_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class KeyMap:
    data: np.ndarray  # Hp x Wp x C_k
    frame: int = 0
    patch: int = 1

    @property
    def grid_shape(self):
        return self.data.shape[:2]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1, self.data.shape[2])


@dataclass(frozen=True, eq=False)
class ValueMap:
    data: np.ndarray  # Hp x Wp x C_v

    @property
    def grid_shape(self):
        return self.data.shape[:2]

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1, self.data.shape[2])


@dataclass(frozen=True, eq=False)
class AffinityMatrix:
    """Row-stochastic (query positions) x (memory positions) matrix."""

    matrix: np.ndarray
    query_shape: tuple


def make_projection(in_dim: int, out_dim: int, seed: int = 0) -> np.ndarray:
    """in_dim x out_dim matrix with orthonormal columns, fixed by ``seed``."""
    if not 1 <= out_dim <= in_dim:
        raise InputError(f"projection needs 1 <= C_k <= {in_dim}, got {out_dim}")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((in_dim, out_dim)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def _feature_array(features) -> np.ndarray:
    if isinstance(features, FeatureFrame):
        return features.data
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def patchify(data: np.ndarray, patch: int) -> np.ndarray:
    """Hp x Wp x (P*P*C) patch vectors; flattened row, column, channel; zero-padded edges."""
    h, w, c = data.shape
    hp, wp = -(-h // patch), -(-w // patch)
    padded = np.zeros((hp * patch, wp * patch, c))
    padded[:h, :w] = data
    blocks = padded.reshape(hp, patch, wp, patch, c).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(hp, wp, patch * patch * c)


def extract_keys(features, patch: int, projection: np.ndarray, frame: int = 0) -> KeyMap:
    """Project each P x P patch and normalize it to unit length.

    All-zero patches stay zero vectors instead of being normalized.
    """
    data = _feature_array(features)
    dim = patch * patch * data.shape[2]
    if projection.shape[0] != dim:
        raise DimensionError(
            f"projection expects {projection.shape[0]} inputs, patch gives {dim}"
        )
    vecs = patchify(data, patch) @ projection
    norms = np.linalg.norm(vecs, axis=-1, keepdims=True)
    keys = np.where(norms > _NORM_EPS, vecs / np.where(norms > _NORM_EPS, norms, 1.0), 0.0)
    return KeyMap(keys, frame, patch)


def _stack_keys(keys) -> np.ndarray:
    if isinstance(keys, KeyMap):
        return keys.flat
    if isinstance(keys, np.ndarray):
        return keys.reshape(-1, keys.shape[-1])
    return np.concatenate([k.flat for k in keys], axis=0)


def _stack_values(values) -> np.ndarray:
    if isinstance(values, ValueMap):
        return values.flat
    if isinstance(values, np.ndarray):
        return values.reshape(-1, values.shape[-1])
    return np.concatenate([v.flat for v in values], axis=0)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def affinity(kQ, kM, temperature: float = 1.0) -> AffinityMatrix:
    """W[i, j] = softmax_j(temperature * <kQ_i, kM_j>).

    ``kM`` may be a list of key maps, which are concatenated along the
    memory axis.
    """
    q = _stack_keys(kQ)
    m = _stack_keys(kM)
    if q.shape[1] != m.shape[1]:
        raise DimensionError(f"query keys have {q.shape[1]} channels, memory keys {m.shape[1]}")
    shape = kQ.grid_shape if isinstance(kQ, KeyMap) else (q.shape[0], 1)
    return AffinityMatrix(softmax_rows(temperature * (q @ m.T)), tuple(shape))


def project_mask(W: AffinityMatrix, vM) -> ValueMap:
    """v^Q = W v^M over flattened memory positions."""
    v = _stack_values(vM)
    if W.matrix.shape[1] != v.shape[0]:
        raise DimensionError(
            f"affinity has {W.matrix.shape[1]} memory columns, values have {v.shape[0]} rows"
        )
    out = W.matrix @ v
    return ValueMap(out.reshape(W.query_shape + (v.shape[1],)))


def qmcm_softmax(kIn, kQ, faithful: bool = True) -> np.ndarray:
    """Correlation softmax rows before the 1/C_k scaling."""
    a = _stack_keys(kIn)
    b = _stack_keys(kQ)
    if a.shape != b.shape:
        raise DimensionError(f"QMCM needs equal key grids, got {a.shape} and {b.shape}")
    logits = a @ b.T
    if not faithful:
        logits = logits / np.sqrt(b.shape[1])
    return softmax_rows(logits)


def qmcm(kIn, kQ, C_k: Optional[int] = None, faithful: bool = True) -> ValueMap:
    """Query-memory correlation: v[a] = sum_b W_corr[a, b] kQ[b].

    Faithful mode scales the softmax by 1/C_k outside the exponent;
    otherwise the logits are divided by sqrt(C_k) and no outer scale is used.
    """
    b = _stack_keys(kQ)
    c = b.shape[1] if C_k is None else C_k
    w = qmcm_softmax(kIn, kQ, faithful)
    if faithful:
        w = w / c
    out = w @ b
    shape = kIn.grid_shape if isinstance(kIn, KeyMap) else (out.shape[0], 1)
    return ValueMap(out.reshape(tuple(shape) + (b.shape[1],)))


# --- memory ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MemoryEntry:
    frame: int
    key: KeyMap
    value: Optional[ValueMap]


@dataclass
class MemoryBank:
    """Past key/value maps: the anchor frame plus every ``stride``-th frame.

    When full, the oldest non-anchor entry is evicted.
    """

    capacity: int = 8
    stride: int = 5
    entries: List[MemoryEntry] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1 or self.stride < 1:
            raise InputError("memory capacity and stride must be at least 1")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def frames(self) -> List[int]:
        return [e.frame for e in self.entries]

    def wants(self, t: int) -> bool:
        return not self.entries or t % self.stride == 0

    def insert(self, t: int, key: KeyMap, value: Optional[ValueMap]) -> None:
        if self.entries and t <= self.entries[-1].frame:
            raise StateError(f"frame {t} is not newer than memory frame {self.entries[-1].frame}")
        self.entries.append(MemoryEntry(t, key, value))
        if len(self.entries) > self.capacity:
            if self.capacity == 1:
                self.entries.pop()
            else:
                del self.entries[1]

    def offer(self, t: int, key: KeyMap, value: Optional[ValueMap]) -> bool:
        if self.wants(t):
            self.insert(t, key, value)
            return True
        return False

    def keys(self) -> List[KeyMap]:
        return [e.key for e in self.entries]

    def values(self) -> List[ValueMap]:
        return [e.value for e in self.entries]

    def clone(self) -> "MemoryBank":
        return MemoryBank(self.capacity, self.stride, list(self.entries))


# --- masks <-> patch grids ---------------------------------------------------

def mask_to_fractions(mask: np.ndarray, patch: int, n_channels: int) -> np.ndarray:
    """Hp x Wp x n_channels fraction of each class among the patch's real pixels."""
    mask = np.asarray(mask)
    h, w = mask.shape
    if mask.size and mask.max() >= n_channels:
        raise DataError(f"mask holds class {mask.max()} but only {n_channels} channels exist")
    onehot = np.zeros((h, w, n_channels))
    onehot[np.arange(h)[:, None], np.arange(w)[None, :], mask] = 1.0
    counts = patchify(onehot, patch)
    hp, wp = counts.shape[:2]
    counts = counts.reshape(hp, wp, patch * patch, n_channels).sum(axis=2)
    total = counts.sum(axis=-1, keepdims=True)
    return counts / np.where(total > 0, total, 1.0)


def upsample_patches(values: np.ndarray, height: int, width: int, patch: int) -> np.ndarray:
    """Bilinear interpolation from patch centres to pixels, edge-clamped."""
    centre = (patch - 1) / 2.0
    return lattice_interp(values, height, width, centre, patch, centre, patch)


def decode_mask(values: np.ndarray, height: int, width: int, patch: int) -> np.ndarray:
    up = upsample_patches(values, height, width, patch)
    return np.argmax(up, axis=-1).astype(np.uint8)


# --- one-shot segmentation ---------------------------------------------------

@dataclass
class OvosState:
    """Engine state for mask propagation. ``n_channels`` counts background as channel 0."""

    projection: np.ndarray
    patch: int
    n_channels: int
    temperature: float = 50.0
    bank: MemoryBank = field(default_factory=MemoryBank)
    shape: Optional[tuple] = None

    def clone(self) -> "OvosState":
        return replace(self, bank=self.bank.clone())


def ovos_step(state: OvosState, frame, t: int, seed_mask=None):
    """Segment frame ``t``; returns the H x W mask and the next state."""
    data = _feature_array(frame)
    h, w = data.shape[:2]
    state = state.clone()
    keys = extract_keys(data, state.patch, state.projection, frame=t)
    if t == 0:
        if seed_mask is None:
            raise UsageError("frame 0 needs a seed mask")
        mask = np.asarray(seed_mask).astype(np.uint8)
        if mask.shape != (h, w):
            raise DimensionError(f"seed mask is {mask.shape}, frame is {(h, w)}")
        state.bank = MemoryBank(state.bank.capacity, state.bank.stride)
        state.shape = (h, w)
        state.bank.insert(0, keys, ValueMap(mask_to_fractions(mask, state.patch, state.n_channels)))
        return mask.copy(), state
    if seed_mask is not None:
        raise UsageError("a seed mask is only accepted at frame 0")
    if not state.bank.entries:
        raise StateError("memory bank is empty; run frame 0 first")
    W = affinity(keys, state.bank.keys(), state.temperature)
    vq = project_mask(W, state.bank.values())
    mask = decode_mask(vq.data, h, w, state.patch)
    if state.bank.wants(t):
        state.bank.insert(t, keys, ValueMap(mask_to_fractions(mask, state.patch, state.n_channels)))
    return mask, state


def seed_mask_from_signature(cube: SpectralCube, anchor, angle_threshold: float) -> np.ndarray:
    """Binary mask of pixels within ``angle_threshold`` radians of the anchor's spectrum."""
    i, j = anchor
    if not (0 <= i < cube.height and 0 <= j < cube.width):
        raise InputError(f"anchor {anchor} lies outside the {cube.height}x{cube.width} cube")
    data = cube.data.astype(np.float64)
    ref = data[i, j]
    ref_norm = np.linalg.norm(ref)
    if ref_norm == 0:
        raise InputError("anchor pixel has a zero spectrum")
    norms = np.linalg.norm(data, axis=-1)
    valid = norms > 0
    cos = np.zeros(norms.shape)
    cos[valid] = (data[valid] @ ref) / (norms[valid] * ref_norm)
    angle = np.arccos(np.clip(cos, -1.0, 1.0))
    return (valid & (angle <= angle_threshold)).astype(np.uint8)


# --- readout -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReadoutModel:
    weights: np.ndarray  # C_in x n_classes
    bias: np.ndarray
    trained: bool = True
    loss_trace: tuple = ()

    @property
    def n_inputs(self) -> int:
        return self.weights.shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]

    def probabilities(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return softmax_rows(x @ self.weights + self.bias)

    def predict(self, x) -> np.ndarray:
        return np.argmax(np.asarray(x, dtype=np.float64) @ self.weights + self.bias, axis=1)


def readout_loss_and_grad(weights, bias, x, y):
    """Mean softmax cross-entropy and its gradient with respect to weights and bias."""
    n = x.shape[0]
    logits = x @ weights + bias
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(n), y]))
    p = np.exp(z - log_norm[:, None])
    p[np.arange(n), y] -= 1.0
    p /= n
    return loss, x.T @ p, p.sum(axis=0)


def train_readout(features, labels, epochs: int = 500, learning_rate: float = 0.5,
                  seed: int = 0, n_classes: Optional[int] = None,
                  standardize: bool = True) -> ReadoutModel:
    """Full-batch gradient descent on softmax cross-entropy.

    With ``standardize`` the inputs are z-scored during training and the
    transform is folded back into the returned weights and bias.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise DimensionError(f"features {x.shape} do not match {y.size} labels")
    if np.unique(y).size < 2:
        raise TrainingError("readout training needs at least two classes")
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    if standardize:
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        sd[sd < 1e-12] = 1.0
    else:
        mu = np.zeros(x.shape[1])
        sd = np.ones(x.shape[1])
    xs = (x - mu) / sd
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, (x.shape[1], n_classes))
    b = np.zeros(n_classes)
    trace = []
    for _ in range(epochs):
        loss, gw, gb = readout_loss_and_grad(w, b, xs, y)
        trace.append(loss)
        w -= learning_rate * gw
        b -= learning_rate * gb
    trace.append(readout_loss_and_grad(w, b, xs, y)[0])
    w_fold = w / sd[:, None]
    b_fold = b - (mu / sd) @ w
    return ReadoutModel(w_fold, b_fold, True, tuple(trace))


# --- zero-shot segmentation --------------------------------------------------

@dataclass
class ZvosState:
    projection: np.ndarray
    patch: int
    readout: Optional[ReadoutModel] = None
    bank: MemoryBank = field(default_factory=MemoryBank)
    faithful: bool = True

    def clone(self) -> "ZvosState":
        return replace(self, bank=self.bank.clone())


def zvos_features(state: ZvosState, keys: KeyMap) -> np.ndarray:
    """Per-position [v_mem | v_self | k^Q], shape (Hp*Wp) x 3 C_k.

    The memory branch averages the correlation output over every stored
    frame; with an empty bank the query keys stand in for the memory.
    """
    memory = state.bank.keys() or [keys]
    v_mem = np.mean([qmcm(mk, keys, faithful=state.faithful).flat for mk in memory], axis=0)
    v_self = qmcm(keys, keys, faithful=state.faithful).flat
    return np.concatenate([v_mem, v_self, keys.flat], axis=1)


def zvos_step(state: ZvosState, frame, t: int):
    """Classify every pixel of frame ``t``; returns the class map and the next state."""
    if state.readout is None or not state.readout.trained:
        raise UsageError("zero-shot segmentation needs a trained readout")
    data = _feature_array(frame)
    h, w = data.shape[:2]
    state = state.clone()
    if t == 0:
        state.bank = MemoryBank(state.bank.capacity, state.bank.stride)
    keys = extract_keys(data, state.patch, state.projection, frame=t)
    x = zvos_features(state, keys)
    if x.shape[1] != state.readout.n_inputs:
        raise DimensionError(f"readout expects {state.readout.n_inputs} inputs, got {x.shape[1]}")
    probs = state.readout.probabilities(x).reshape(keys.grid_shape + (-1,))
    classes = decode_mask(probs, h, w, state.patch)
    if state.bank.wants(t):
        state.bank.insert(t, keys, ValueMap(probs))
    return classes, state


def collect_zvos_training(state: ZvosState, frames: Sequence, masks: Sequence):
    """Readout inputs and labels, gathered exactly as inference sees them.

    Every pixel contributes one sample: its patch's feature vector paired
    with its own class id. Cross-entropy over these samples fits the
    per-patch class fractions, which keeps boundaries unbiased after
    upsampling.
    """
    state = state.clone()
    state.bank = MemoryBank(state.bank.capacity, state.bank.stride)
    xs, ys = [], []
    n_classes = int(max(np.max(m) for m in masks)) + 1
    for t, (frame, mask) in enumerate(zip(frames, masks)):
        data = _feature_array(frame)
        h, w = data.shape[:2]
        keys = extract_keys(data, state.patch, state.projection, frame=t)
        x = zvos_features(state, keys)
        wp = keys.grid_shape[1]
        rows = np.arange(h) // state.patch
        cols = np.arange(w) // state.patch
        owner = (rows[:, None] * wp + cols[None, :]).reshape(-1)
        xs.append(x[owner])
        ys.append(np.asarray(mask, dtype=np.int64).reshape(-1))
        if state.bank.wants(t):
            frac = mask_to_fractions(np.asarray(mask), state.patch, n_classes)
            state.bank.insert(t, keys, ValueMap(frac))
    return np.concatenate(xs), np.concatenate(ys)
