"""Dense/GRU network engine and model serialization.

The model is six layers in a fixed wiring: an input dense layer feeds a
small GRU whose state drives the voice-activity head; two further GRUs
consume concatenations of earlier activations plus the raw features (skip
connections) and the largest one drives the 22-gain head. Hidden widths
24+24+48+96 plus output widths 22+1 give 215 units total, asserted at
construction.

GRU convention, gate order [update z, reset r, candidate c]:

    z = sigmoid(Wz x + Uz h + bz)
    r = sigmoid(Wr x + Ur h + br)
    c = act(Wc x + Uc (r * h) + bc)
    h' = z * h + (1 - z) * c

Weights live in float64 in memory and as float32 in the model file; fresh
models are rounded through float32 at init so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from rnx.features import EXTENDED_DIM, REFERENCE_DIM, FeatureStats

MAGIC = b"RNXM"
FORMAT_VERSION = 1

HIDDEN_WIDTHS = (24, 24, 48, 96)
NUM_GAINS = 22
TOTAL_UNITS = sum(HIDDEN_WIDTHS) + NUM_GAINS + 1

_KIND_CODES = {"dense": 0, "gru": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_ACT_CODES = {"tanh": 0, "relu": 1, "sigmoid": 2}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


class ModelFormatError(ValueError):
    """Raised for malformed model files or inconsistent layer wiring."""


def _activation(name: str):
    if name == "tanh":
        return np.tanh
    if name == "relu":
        return lambda x: np.maximum(x, 0.0)
    if name == "sigmoid":
        return expit
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class LayerParams:
    name: str
    kind: str  # dense | gru
    activation: str  # tanh | relu | sigmoid
    in_dim: int
    out_dim: int
    weights: np.ndarray  # dense: (out, in); gru: (3*out, in), blocks [z, r, c]
    recurrent: np.ndarray | None  # gru only: (3*out, out)
    bias: np.ndarray  # dense: (out,); gru: (3*out,)

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in _ACT_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")
        rows = self.out_dim if self.kind == "dense" else 3 * self.out_dim
        if self.weights.shape != (rows, self.in_dim) or self.bias.shape != (rows,):
            raise ModelFormatError(f"layer {self.name}: parameter shapes inconsistent with dims")
        if self.kind == "gru" and (
            self.recurrent is None or self.recurrent.shape != (rows, self.out_dim)
        ):
            raise ModelFormatError(f"layer {self.name}: bad recurrent weight shape")
        if self.kind == "dense" and self.recurrent is not None:
            raise ModelFormatError(f"layer {self.name}: dense layer with recurrent weights")


@dataclass
class NetworkModel:
    feature_dim: int
    dense_in: LayerParams
    vad_gru: LayerParams
    noise_gru: LayerParams
    denoise_gru: LayerParams
    vad_out: LayerParams
    gains_out: LayerParams
    stats: FeatureStats | None = None
    version: int = FORMAT_VERSION

    @property
    def extended(self) -> bool:
        return self.feature_dim == EXTENDED_DIM

    @property
    def total_units(self) -> int:
        hidden = self.dense_in.out_dim + self.vad_gru.out_dim + self.noise_gru.out_dim + self.denoise_gru.out_dim
        return hidden + self.gains_out.out_dim + self.vad_out.out_dim

    @property
    def hidden_layer_count(self) -> int:
        return 4

    def layers(self):
        return [self.dense_in, self.vad_gru, self.noise_gru, self.denoise_gru, self.vad_out, self.gains_out]

    def parameters(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed by '<layer>.<tensor>'."""
        out = {}
        for layer in self.layers():
            out[f"{layer.name}.W"] = layer.weights
            if layer.recurrent is not None:
                out[f"{layer.name}.U"] = layer.recurrent
            out[f"{layer.name}.b"] = layer.bias
        return out

    def validate_wiring(self):
        d, vg, ng, dg = self.dense_in, self.vad_gru, self.noise_gru, self.denoise_gru
        f = self.feature_dim
        checks = [
            (d.in_dim == f, "dense_in input width"),
            (vg.in_dim == d.out_dim, "vad_gru input width"),
            (ng.in_dim == d.out_dim + vg.out_dim + f, "noise_gru input width"),
            (dg.in_dim == vg.out_dim + ng.out_dim + f, "denoise_gru input width"),
            (self.vad_out.in_dim == vg.out_dim and self.vad_out.out_dim == 1, "vad head dims"),
            (self.gains_out.in_dim == dg.out_dim and self.gains_out.out_dim == NUM_GAINS, "gain head dims"),
        ]
        for ok, what in checks:
            if not ok:
                raise ModelFormatError(f"dim inconsistency: {what}")


@dataclass
class HiddenState:
    h_vad: np.ndarray
    h_noise: np.ndarray
    h_denoise: np.ndarray

    @classmethod
    def zeros(cls, model: NetworkModel) -> "HiddenState":
        return cls(
            np.zeros(model.vad_gru.out_dim),
            np.zeros(model.noise_gru.out_dim),
            np.zeros(model.denoise_gru.out_dim),
        )


def dense_forward(layer: LayerParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise ValueError(f"layer {layer.name}: input width {x.shape[-1]} != {layer.in_dim}")
    return _activation(layer.activation)(x @ layer.weights.T + layer.bias)


def gru_step(layer: LayerParams, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """One recurrence step; works on single vectors or batched rows."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.shape[-1] != layer.in_dim or h.shape[-1] != layer.out_dim:
        raise ValueError(f"layer {layer.name}: step dims mismatch")
    u = layer.out_dim
    gates_x = x @ layer.weights.T + layer.bias
    uz, ur, uc = layer.recurrent[:u], layer.recurrent[u : 2 * u], layer.recurrent[2 * u :]
    z = expit(gates_x[..., :u] + h @ uz.T)
    r = expit(gates_x[..., u : 2 * u] + h @ ur.T)
    c = _activation(layer.activation)(gates_x[..., 2 * u :] + (r * h) @ uc.T)
    return z * h + (1.0 - z) * c


def network_forward(model: NetworkModel, features: np.ndarray, state: HiddenState):
    """Run the full wiring for one frame.

    Returns (mask, vad, new_state). Extended-mode features must already be
    standardized. Pure: neither the model nor the passed state is mutated.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (model.feature_dim,):
        raise ValueError(
            f"feature width {features.shape} does not match model feature_dim {model.feature_dim}"
        )
    dense = dense_forward(model.dense_in, features)
    h_vad = gru_step(model.vad_gru, dense, state.h_vad)
    vad = float(dense_forward(model.vad_out, h_vad)[0])
    h_noise = gru_step(model.noise_gru, np.concatenate((dense, h_vad, features)), state.h_noise)
    h_denoise = gru_step(
        model.denoise_gru, np.concatenate((h_vad, h_noise, features)), state.h_denoise
    )
    mask = dense_forward(model.gains_out, h_denoise)
    return mask, vad, HiddenState(h_vad, h_noise, h_denoise)


def _glorot(rng: np.random.Generator, rows: int, cols: int, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-limit, limit, size=(rows, cols))
    # round through f32 so a fresh model survives serialization bit-exactly
    return w.astype(np.float32).astype(np.float64)


def build_model(feature_dim: int, widths=HIDDEN_WIDTHS, seed=0) -> NetworkModel:
    """Construct the six-layer wiring with Glorot-uniform weights.

    `widths` other than the standard (24, 24, 48, 96) are for small test
    instances; standard widths are asserted to hit the 215-unit budget.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    w_dense, w_vad, w_noise, w_denoise = widths

    def dense(name, activation, in_dim, out_dim):
        return LayerParams(
            name, "dense", activation, in_dim, out_dim,
            _glorot(rng, out_dim, in_dim, in_dim, out_dim),
            None, np.zeros(out_dim),
        )

    def gru(name, in_dim, out_dim):
        w = np.vstack([_glorot(rng, out_dim, in_dim, in_dim, out_dim) for _ in range(3)])
        u = np.vstack([_glorot(rng, out_dim, out_dim, out_dim, out_dim) for _ in range(3)])
        return LayerParams(name, "gru", "relu", in_dim, out_dim, w, u, np.zeros(3 * out_dim))

    model = NetworkModel(
        feature_dim=feature_dim,
        dense_in=dense("dense_in", "tanh", feature_dim, w_dense),
        vad_gru=gru("vad_gru", w_dense, w_vad),
        noise_gru=gru("noise_gru", w_dense + w_vad + feature_dim, w_noise),
        denoise_gru=gru("denoise_gru", w_vad + w_noise + feature_dim, w_denoise),
        vad_out=dense("vad_out", "sigmoid", w_vad, 1),
        gains_out=dense("gains_out", "sigmoid", w_denoise, NUM_GAINS),
    )
    if feature_dim == EXTENDED_DIM:
        # neutral standardization until training freezes real statistics
        model.stats = FeatureStats(np.zeros(3), np.ones(3))
    model.validate_wiring()
    if widths == HIDDEN_WIDTHS:
        assert model.total_units == TOTAL_UNITS, model.total_units
    return model


def init_weights(seed: int, feature_dim: int) -> NetworkModel:
    """Fresh standard-topology model, reproducible from the seed."""
    if feature_dim not in (REFERENCE_DIM, EXTENDED_DIM):
        raise ValueError(f"feature_dim must be {REFERENCE_DIM} or {EXTENDED_DIM}, got {feature_dim}")
    return build_model(feature_dim, HIDDEN_WIDTHS, seed)


def save_model(model: NetworkModel, path) -> None:
    stats = model.stats
    means = stats.mean if stats is not None else np.zeros(3)
    stds = stats.std if stats is not None else np.zeros(3)
    flags = 1 if model.extended else 0
    blob = [struct.pack("<4sIII", MAGIC, FORMAT_VERSION, model.feature_dim, flags)]
    blob.append(np.asarray(means, dtype="<f4").tobytes())
    blob.append(np.asarray(stds, dtype="<f4").tobytes())
    blob.append(struct.pack("<I", 6))
    for layer in model.layers():
        name = layer.name.encode()
        blob.append(
            struct.pack(
                "<B%dsBBII" % len(name),
                len(name), name,
                _KIND_CODES[layer.kind], _ACT_CODES[layer.activation],
                layer.in_dim, layer.out_dim,
            )
        )
        blob.append(np.ascontiguousarray(layer.weights, dtype="<f4").tobytes())
        if layer.recurrent is not None:
            blob.append(np.ascontiguousarray(layer.recurrent, dtype="<f4").tobytes())
        blob.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blob))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError("truncated model file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float64).reshape(shape)


def load_model(path) -> NetworkModel:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    magic, version, feature_dim, flags = r.unpack("<4sIII")
    if magic != MAGIC:
        raise ModelFormatError("bad magic")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    means = r.array((3,))
    stds = r.array((3,))
    (layer_count,) = r.unpack("<I")
    if layer_count != 6:
        raise ModelFormatError(f"expected 6 layers, file declares {layer_count}")
    layers = []
    for _ in range(layer_count):
        (name_len,) = r.unpack("<B")
        name = r.take(name_len).decode()
        kind_code, act_code, in_dim, out_dim = r.unpack("<BBII")
        if kind_code not in _KIND_NAMES or act_code not in _ACT_NAMES:
            raise ModelFormatError(f"layer {name}: unknown kind/activation code")
        kind = _KIND_NAMES[kind_code]
        rows = out_dim if kind == "dense" else 3 * out_dim
        weights = r.array((rows, in_dim))
        recurrent = r.array((rows, out_dim)) if kind == "gru" else None
        bias = r.array((rows,))
        layers.append(LayerParams(name, kind, _ACT_NAMES[act_code], in_dim, out_dim, weights, recurrent, bias))
    if r.pos != len(r.data):
        raise ModelFormatError("trailing bytes after last layer")
    expected = ["dense_in", "vad_gru", "noise_gru", "denoise_gru", "vad_out", "gains_out"]
    got = [l.name for l in layers]
    if got != expected:
        raise ModelFormatError(f"unexpected layer order {got}")
    extended = bool(flags & 1)
    if extended != (feature_dim == EXTENDED_DIM):
        raise ModelFormatError("extended flag does not match feature_dim")
    stats = FeatureStats(means, stds) if extended else None
    model = NetworkModel(feature_dim, *layers, stats=stats, version=version)
    model.validate_wiring()
    return model
