"""Proximity-regularized convolutional autoencoder, hand-rolled in numpy.

The encoder is two strided 3x3 convolutions (16 then 32 filters) followed by a
dense bottleneck; the decoder mirrors it, using the exact adjoint of each
strided convolution for upsampling. Hidden activations are softplus and the
output is logistic, so the whole loss is smooth and analytic gradients can be
validated against central finite differences to tight tolerances.

The training loss adds a spatial proximity penalty to the reconstruction MSE:
tiles collected close together on the seafloor are pulled toward nearby latent
vectors, with a Gaussian distance weighting and a hard cutoff.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, TrainingDivergedError, ValidationError
from .synth import SeafloorClass

TILE_SHAPE = (30, 30)
_CONV1_OUT = 14  # (30 - 3) // 2 + 1
_CONV2_OUT = 6  # (14 - 3) // 2 + 1
_FLAT = 32 * _CONV2_OUT * _CONV2_OUT  # 1152
_STRIDE = 2
_INIT_RANGE = 0.05

AE_MAGIC = "CPAE"
AE_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 2
    learning_rate: float = 4.0
    proximity_weight: float = 0.1
    proximity_scale_m: float = 1.0
    proximity_cutoff_m: float = 3.0
    latent_dim: int = 16
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValidationError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        # learning_rate 0 is allowed: it freezes the model, which is useful
        # for no-update baselines.
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be non-negative")
        if self.proximity_weight < 0:
            raise ValidationError("proximity_weight must be non-negative")
        if self.proximity_scale_m <= 0:
            raise ValidationError("proximity_scale_m must be positive")
        if self.proximity_cutoff_m <= 0:
            raise ValidationError("proximity_cutoff_m must be positive")
        if self.latent_dim < 1:
            raise ValidationError("latent_dim must be at least 1")


def _param_shapes(latent_dim: int) -> list[tuple[str, tuple[int, ...]]]:
    return [
        ("enc_conv1_w", (16, 1, 3, 3)),
        ("enc_conv1_b", (16,)),
        ("enc_conv2_w", (32, 16, 3, 3)),
        ("enc_conv2_b", (32,)),
        ("enc_dense_w", (_FLAT, latent_dim)),
        ("enc_dense_b", (latent_dim,)),
        ("dec_dense_w", (latent_dim, _FLAT)),
        ("dec_dense_b", (_FLAT,)),
        ("dec_deconv1_w", (32, 16, 3, 3)),
        ("dec_deconv1_b", (16,)),
        ("dec_deconv2_w", (16, 1, 3, 3)),
        ("dec_deconv2_b", (1,)),
    ]


@dataclass
class AutoencoderModel:
    latent_dim: int
    config: TrainConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def validate_finite(self) -> None:
        for name, value in self.params.items():
            if not np.all(np.isfinite(value)):
                raise ValidationError(f"parameter block {name} contains non-finite values")


def init_model(config: TrainConfig) -> AutoencoderModel:
    """Seeded uniform initialization in [-0.05, 0.05]."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = {
        name: rng.uniform(-_INIT_RANGE, _INIT_RANGE, size=shape)
        for name, shape in _param_shapes(config.latent_dim)
    }
    return AutoencoderModel(latent_dim=config.latent_dim, config=config, params=params)


# ---------------------------------------------------------------------------
# Strided convolution primitives and their adjoints
# ---------------------------------------------------------------------------


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    # x (N,C,H,W), w (O,C,k,k) -> (N,O,Ho,Wo), valid padding.
    k = w.shape[2]
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("nchwij,ocij->nohw", win, w, optimize=True)


def _conv_grad_w(x: np.ndarray, grad_out: np.ndarray, k: int, stride: int) -> np.ndarray:
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("nchwij,nohw->ocij", win, grad_out, optimize=True)


def _conv_grad_x(
    grad_out: np.ndarray, w: np.ndarray, in_hw: tuple[int, int], stride: int
) -> np.ndarray:
    # Adjoint of _conv_forward with respect to x; doubles as the decoder's
    # transposed-convolution forward pass.
    n, _, ho, wo = grad_out.shape
    _, c, k, _ = w.shape
    gx = np.zeros((n, c, in_hw[0], in_hw[1]), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            contrib = np.einsum("nohw,oc->nchw", grad_out, w[:, :, i, j], optimize=True)
            gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += contrib
    return gx


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _as_batch(tiles: np.ndarray) -> np.ndarray:
    t = np.asarray(tiles, dtype=np.float64)
    if t.ndim == 2:
        t = t[None, :, :]
    if t.ndim != 3 or t.shape[1:] != TILE_SHAPE:
        raise ValidationError(f"tiles must be (N, 30, 30), got {t.shape}")
    return t


def _forward(model: AutoencoderModel, x: np.ndarray) -> dict[str, np.ndarray]:
    p = model.params
    n = x.shape[0]
    xb = x[:, None, :, :]
    a1 = _conv_forward(xb, p["enc_conv1_w"], _STRIDE) + p["enc_conv1_b"][None, :, None, None]
    h1 = _softplus(a1)
    a2 = _conv_forward(h1, p["enc_conv2_w"], _STRIDE) + p["enc_conv2_b"][None, :, None, None]
    h2 = _softplus(a2)
    f = h2.reshape(n, _FLAT)
    z = f @ p["enc_dense_w"] + p["enc_dense_b"]
    g = z @ p["dec_dense_w"] + p["dec_dense_b"]
    h3 = _softplus(g).reshape(n, 32, _CONV2_OUT, _CONV2_OUT)
    u1 = _conv_grad_x(h3, p["dec_deconv1_w"], (_CONV1_OUT, _CONV1_OUT), _STRIDE)
    u1 += p["dec_deconv1_b"][None, :, None, None]
    h4 = _softplus(u1)
    u2 = _conv_grad_x(h4, p["dec_deconv2_w"], TILE_SHAPE, _STRIDE)
    u2 += p["dec_deconv2_b"][None, :, None, None]
    xhat = _sigmoid(u2)
    return {
        "x": xb, "a1": a1, "h1": h1, "a2": a2, "h2": h2, "f": f, "z": z,
        "g": g, "h3": h3, "u1": u1, "h4": h4, "u2": u2, "xhat": xhat,
    }


class LossBreakdown(NamedTuple):
    total: float
    reconstruction: float
    proximity: float


def proximity_penalty(
    latents: np.ndarray, positions: np.ndarray, scale_m: float, cutoff_m: float
) -> float:
    """Mean Gaussian-weighted squared latent distance over in-range pairs.

    Pairs (i, j) whose seafloor positions are closer than cutoff_m contribute
    exp(-d^2 / (2 scale^2)) * ||z_i - z_j||^2; batches with no qualifying pair
    contribute zero.
    """
    value, _ = _proximity_value_grad(
        np.asarray(latents, dtype=np.float64),
        np.asarray(positions, dtype=np.float64),
        scale_m,
        cutoff_m,
        want_grad=False,
    )
    return value


def _proximity_value_grad(
    z: np.ndarray, positions: np.ndarray, scale_m: float, cutoff_m: float, want_grad: bool = True
) -> tuple[float, Optional[np.ndarray]]:
    n = z.shape[0]
    if n < 2:
        return 0.0, (np.zeros_like(z) if want_grad else None)
    diff = positions[:, None, :] - positions[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    mask = d2 < cutoff_m**2
    np.fill_diagonal(mask, False)
    n_pairs = int(mask.sum()) // 2
    if n_pairs == 0:
        return 0.0, (np.zeros_like(z) if want_grad else None)
    weights = np.where(mask, np.exp(-d2 / (2.0 * scale_m**2)), 0.0)
    zdiff = z[:, None, :] - z[None, :, :]
    zsq = np.einsum("ijk,ijk->ij", zdiff, zdiff)
    value = float((weights * zsq).sum() / 2.0 / n_pairs)
    if not want_grad:
        return value, None
    row = weights.sum(axis=1)
    grad = (2.0 / n_pairs) * (row[:, None] * z - weights @ z)
    return value, grad


def loss(
    model: AutoencoderModel,
    tiles: np.ndarray,
    positions: np.ndarray,
    config: Optional[TrainConfig] = None,
) -> LossBreakdown:
    """Total, reconstruction, and proximity loss over one batch."""
    cfg = config or model.config
    x = _as_batch(tiles)
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape != (x.shape[0], 2):
        raise ValidationError(f"positions must be (N, 2), got {positions.shape}")
    if not np.all(np.isfinite(positions)):
        raise ValidationError("positions must be finite")
    cache = _forward(model, x)
    recon = float(np.mean((cache["xhat"] - cache["x"]) ** 2))
    prox, _ = _proximity_value_grad(
        cache["z"], positions, cfg.proximity_scale_m, cfg.proximity_cutoff_m, want_grad=False
    )
    return LossBreakdown(recon + cfg.proximity_weight * prox, recon, prox)


def _gradients(
    model: AutoencoderModel,
    x: np.ndarray,
    positions: np.ndarray,
    cfg: TrainConfig,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    p = model.params
    n = x.shape[0]
    cache = _forward(model, x)
    xhat, xb = cache["xhat"], cache["x"]

    recon = float(np.mean((xhat - xb) ** 2))
    prox, prox_grad_z = _proximity_value_grad(
        cache["z"], positions, cfg.proximity_scale_m, cfg.proximity_cutoff_m
    )
    total = recon + cfg.proximity_weight * prox

    grads: dict[str, np.ndarray] = {}
    d_xhat = 2.0 * (xhat - xb) / xhat.size
    d_u2 = d_xhat * xhat * (1.0 - xhat)
    grads["dec_deconv2_w"] = _conv_grad_w(d_u2, cache["h4"], 3, _STRIDE)
    grads["dec_deconv2_b"] = d_u2.sum(axis=(0, 2, 3))
    d_h4 = _conv_forward(d_u2, p["dec_deconv2_w"], _STRIDE)
    d_u1 = d_h4 * _sigmoid(cache["u1"])
    grads["dec_deconv1_w"] = _conv_grad_w(d_u1, cache["h3"], 3, _STRIDE)
    grads["dec_deconv1_b"] = d_u1.sum(axis=(0, 2, 3))
    d_h3 = _conv_forward(d_u1, p["dec_deconv1_w"], _STRIDE)
    d_g = d_h3.reshape(n, _FLAT) * _sigmoid(cache["g"])
    grads["dec_dense_w"] = cache["z"].T @ d_g
    grads["dec_dense_b"] = d_g.sum(axis=0)

    d_z = d_g @ p["dec_dense_w"].T
    d_z = d_z + cfg.proximity_weight * prox_grad_z
    grads["enc_dense_w"] = cache["f"].T @ d_z
    grads["enc_dense_b"] = d_z.sum(axis=0)
    d_f = d_z @ p["enc_dense_w"].T
    d_a2 = d_f.reshape(n, 32, _CONV2_OUT, _CONV2_OUT) * _sigmoid(cache["a2"])
    grads["enc_conv2_w"] = _conv_grad_w(cache["h1"], d_a2, 3, _STRIDE)
    grads["enc_conv2_b"] = d_a2.sum(axis=(0, 2, 3))
    d_h1 = _conv_grad_x(d_a2, p["enc_conv2_w"], (_CONV1_OUT, _CONV1_OUT), _STRIDE)
    d_a1 = d_h1 * _sigmoid(cache["a1"])
    grads["enc_conv1_w"] = _conv_grad_w(xb, d_a1, 3, _STRIDE)
    grads["enc_conv1_b"] = d_a1.sum(axis=(0, 2, 3))

    return LossBreakdown(total, recon, prox), grads


def encode(model: AutoencoderModel, tiles: np.ndarray) -> np.ndarray:
    """Forward pass of the encoder only; order-preserving and deterministic."""
    x = _as_batch(tiles)
    p = model.params
    a1 = _conv_forward(x[:, None, :, :], p["enc_conv1_w"], _STRIDE)
    a1 += p["enc_conv1_b"][None, :, None, None]
    h1 = _softplus(a1)
    a2 = _conv_forward(h1, p["enc_conv2_w"], _STRIDE) + p["enc_conv2_b"][None, :, None, None]
    h2 = _softplus(a2)
    return h2.reshape(x.shape[0], _FLAT) @ p["enc_dense_w"] + p["enc_dense_b"]


def reconstruct(model: AutoencoderModel, tiles: np.ndarray) -> np.ndarray:
    """Full encode-decode pass; returns reconstructions in (0, 1)."""
    x = _as_batch(tiles)
    return _forward(model, x)["xhat"][:, 0, :, :]


def train(
    tiles: np.ndarray,
    positions: np.ndarray,
    config: TrainConfig,
) -> tuple[AutoencoderModel, list[LossBreakdown]]:
    """Mini-batch SGD from seeded initialization.

    Deterministic for a fixed seed. The returned log has epochs + 1 entries:
    entry 0 is the full-dataset loss of the freshly initialized model and
    entry e the full-dataset loss after epoch e, evaluated in dataset order
    (so learning_rate = 0 yields a constant log).
    """
    config.validate()
    x = _as_batch(tiles)
    positions = np.asarray(positions, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValidationError("training needs at least 2 tiles")
    if positions.shape != (x.shape[0], 2):
        raise ValidationError(f"positions must be (N, 2), got {positions.shape}")

    model = init_model(config)
    rng = np.random.default_rng(config.seed)
    log = [loss(model, x, positions, config)]

    n = x.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            _, grads = _gradients(model, x[batch], positions[batch], config)
            for name, grad in grads.items():
                model.params[name] -= config.learning_rate * grad
        entry = loss(model, x, positions, config)
        if not all(math.isfinite(v) for v in entry):
            raise TrainingDivergedError(epoch)
        log.append(entry)
    return model, log


def grad_check(
    model: AutoencoderModel,
    tiles: np.ndarray,
    positions: np.ndarray,
    epsilon: float = 1e-4,
    n_params: int = 64,
    seed: int = 0,
    config: Optional[TrainConfig] = None,
) -> float:
    """Max relative error of analytic vs central finite-difference gradients.

    Checks a seeded random subset of parameters. Entries where both gradients
    vanish count as zero error (constant region of the loss surface). The
    default step balances truncation against roundoff: much smaller steps make
    the comparison roundoff-limited on near-zero gradient entries.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValidationError("epsilon must lie in [1e-7, 1e-3]")
    cfg = config or model.config
    x = _as_batch(tiles)
    positions = np.asarray(positions, dtype=np.float64)
    _, grads = _gradients(model, x, positions, cfg)

    names = [name for name, _ in _param_shapes(model.latent_dim)]
    sizes = [model.params[name].size for name in names]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_params, total), replace=False)

    bounds = np.cumsum([0] + sizes)
    max_rel = 0.0
    for flat_idx in sorted(int(i) for i in picks):
        block = int(np.searchsorted(bounds, flat_idx, side="right") - 1)
        name = names[block]
        local = flat_idx - bounds[block]
        param = model.params[name]
        view = param.reshape(-1)
        original = view[local]

        view[local] = original + epsilon
        up = loss(model, x, positions, cfg).total
        view[local] = original - epsilon
        down = loss(model, x, positions, cfg).total
        view[local] = original

        numeric = (up - down) / (2.0 * epsilon)
        analytic = grads[name].reshape(-1)[local]
        denom = max(abs(analytic), abs(numeric), 1e-8)
        max_rel = max(max_rel, abs(analytic - numeric) / denom)
    return max_rel


# ---------------------------------------------------------------------------
# Model file (versioned text; decimal floats round-trip bit-exactly)
# ---------------------------------------------------------------------------

_CONFIG_FIELDS = [
    "epochs", "batch_size", "learning_rate", "proximity_weight",
    "proximity_scale_m", "proximity_cutoff_m", "latent_dim", "seed",
]


def save_model(model: AutoencoderModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{AE_MAGIC} {AE_VERSION}\n")
        for name in _CONFIG_FIELDS:
            fh.write(f"{name} {getattr(model.config, name)!r}\n")
        for name, shape in _param_shapes(model.latent_dim):
            fh.write(f"param {name} {' '.join(str(s) for s in shape)}\n")
            flat = model.params[name].reshape(-1)
            for start in range(0, flat.size, 8):
                fh.write(" ".join(repr(float(v)) for v in flat[start : start + 8]) + "\n")
        fh.write("end\n")


def load_model(path) -> AutoencoderModel:
    with open(path) as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0].split() != [AE_MAGIC, str(AE_VERSION)]:
        raise FormatError(f"bad autoencoder model header in {path}: {lines[:1]!r}")

    cfg_values: dict[str, float] = {}
    pos = 1
    while pos < len(lines) and not lines[pos].startswith("param "):
        parts = lines[pos].split()
        if len(parts) == 2 and parts[0] in _CONFIG_FIELDS:
            cfg_values[parts[0]] = float(parts[1])
        elif lines[pos].strip():
            raise FormatError(f"unexpected model header line {pos + 1}: {lines[pos]!r}")
        pos += 1
    missing = [f for f in _CONFIG_FIELDS if f not in cfg_values]
    if missing:
        raise FormatError(f"model file missing config fields: {missing}")
    config = TrainConfig(
        epochs=int(cfg_values["epochs"]),
        batch_size=int(cfg_values["batch_size"]),
        learning_rate=cfg_values["learning_rate"],
        proximity_weight=cfg_values["proximity_weight"],
        proximity_scale_m=cfg_values["proximity_scale_m"],
        proximity_cutoff_m=cfg_values["proximity_cutoff_m"],
        latent_dim=int(cfg_values["latent_dim"]),
        seed=int(cfg_values["seed"]),
    )

    params: dict[str, np.ndarray] = {}
    expected = dict(_param_shapes(config.latent_dim))
    while pos < len(lines):
        line = lines[pos].strip()
        if line == "end":
            break
        if not line:
            pos += 1
            continue
        parts = line.split()
        if parts[0] != "param":
            raise FormatError(f"expected a param block at line {pos + 1}, got {line!r}")
        name = parts[1]
        shape = tuple(int(v) for v in parts[2:])
        if name not in expected or expected[name] != shape:
            raise FormatError(f"unexpected parameter block {name} {shape} at line {pos + 1}")
        count = int(np.prod(shape))
        values: list[float] = []
        pos += 1
        while len(values) < count:
            if pos >= len(lines):
                raise FormatError(f"model file ended inside parameter block {name}")
            values.extend(float(tok) for tok in lines[pos].split())
            pos += 1
        if len(values) != count:
            raise FormatError(f"parameter block {name} has {len(values)} values, expected {count}")
        params[name] = np.array(values, dtype=np.float64).reshape(shape)
    else:
        raise FormatError("model file missing 'end' terminator")

    missing_params = [n for n in expected if n not in params]
    if missing_params:
        raise FormatError(f"model file missing parameter blocks: {missing_params}")
    return AutoencoderModel(latent_dim=config.latent_dim, config=config, params=params)


# ---------------------------------------------------------------------------
# Latent vector CSV
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatentRecord:
    center_ping: int
    x: float
    y: float
    label: Optional[SeafloorClass]
    values: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, LatentRecord):
            return NotImplemented
        return (
            self.center_ping == other.center_ping
            and self.x == other.x
            and self.y == other.y
            and self.label == other.label
            and np.array_equal(self.values, other.values)
        )


def write_latents(records: Sequence[LatentRecord], path) -> None:
    if not records:
        raise ValidationError("no latent records to write")
    dim = records[0].values.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["center_ping", "x", "y", "label"] + [f"z{i}" for i in range(dim)])
        for rec in records:
            label = "" if rec.label is None else int(rec.label)
            writer.writerow(
                [rec.center_ping, repr(rec.x), repr(rec.y), label]
                + [repr(float(v)) for v in rec.values]
            )


def read_latents(path) -> list[LatentRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:4] != ["center_ping", "x", "y", "label"]:
            raise FormatError(f"unexpected latent CSV header in {path}")
        for row in reader:
            records.append(
                LatentRecord(
                    center_ping=int(row[0]),
                    x=float(row[1]),
                    y=float(row[2]),
                    label=None if row[3] == "" else SeafloorClass(int(row[3])),
                    values=np.array([float(v) for v in row[4:]], dtype=np.float64),
                )
            )
    return records
