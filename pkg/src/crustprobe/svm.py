"""Multiclass support vector machine over latent features.

Binary machines are trained by sequential minimal optimization (SMO, Platt
1998) on the dual problem and combined one-vs-one with majority voting.
Features are z-scored with statistics from the training set only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np

from .errors import FormatError, StateError, ValidationError
from .synth import SeafloorClass

SVM_MAGIC = "CPSM"
SVM_VERSION = 1

_MIN_ALPHA_STEP = 1e-12
# Relative slack for deciding whether an alpha sits on a box bound; float
# error can leave converged values a few ulps inside the bound.
_BOUND_EPS = 1e-8


@dataclass(frozen=True)
class SvmConfig:
    kernel: str = "rbf"  # "linear" | "rbf"
    gamma: Optional[float] = None  # rbf width; None -> 1 / n_features at fit time
    C: float = 1.0
    tolerance: float = 1e-3
    max_passes: int = 1000
    seed: int = 0

    def validate(self) -> None:
        if self.kernel not in ("linear", "rbf"):
            raise ValidationError(f"unknown kernel {self.kernel!r}")
        if self.kernel == "rbf" and self.gamma is not None and self.gamma <= 0:
            raise ValidationError("gamma must be positive for the rbf kernel")
        if self.C <= 0:
            raise ValidationError("C must be positive")
        if self.tolerance <= 0:
            raise ValidationError("tolerance must be positive")
        if self.max_passes < 1:
            raise ValidationError("max_passes must be at least 1")


def kernel_matrix(a: np.ndarray, b: np.ndarray, kernel: str, gamma: float) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if kernel == "linear":
        return a @ b.T
    if kernel == "rbf":
        d2 = (
            np.sum(a**2, axis=1)[:, None]
            + np.sum(b**2, axis=1)[None, :]
            - 2.0 * (a @ b.T)
        )
        return np.exp(-gamma * np.maximum(d2, 0.0))
    raise ValidationError(f"unknown kernel {kernel!r}")


class FeatureScaler:
    """Per-dimension z-scoring with training statistics.

    Zero-variance dimensions map to zero instead of dividing by zero.
    """

    def __init__(self) -> None:
        self.mean: Optional[np.ndarray] = None
        self.std: Optional[np.ndarray] = None

    def fit(self, features: np.ndarray) -> "FeatureScaler":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 2:
            raise ValidationError("scaler fit requires a 2-D array with at least 2 samples")
        self.mean = features.mean(axis=0)
        self.std = features.std(axis=0)
        return self

    def transform(self, features: np.ndarray) -> np.ndarray:
        if self.mean is None or self.std is None:
            raise StateError("scaler used before fitting")
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != self.mean.shape[0]:
            raise ValidationError(
                f"feature dimension {features.shape[-1]} does not match "
                f"fitted dimension {self.mean.shape[0]}"
            )
        centered = features - self.mean
        safe = np.where(self.std > 0, self.std, 1.0)
        out = centered / safe
        return np.where(self.std > 0, out, 0.0)


@dataclass
class BinaryMachine:
    """One trained max-margin separator: f(x) = sum coef_i K(sv_i, x) + bias."""

    support_vectors: np.ndarray  # (m, d)
    coef: np.ndarray  # (m,) alpha_i * y_i for support vectors
    bias: float
    dual_objective: float
    converged: bool
    passes_run: int
    max_equality_violation: float
    # Training-time diagnostics (full dual variables and decision values on
    # the training set), kept for audits; not serialized.
    alpha: Optional[np.ndarray] = field(default=None, repr=False)
    train_margins: Optional[np.ndarray] = field(default=None, repr=False)

    def decision_function(self, features: np.ndarray, kernel: str, gamma: float) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if self.support_vectors.shape[0] == 0:
            return np.full(features.shape[0], self.bias)
        k = kernel_matrix(self.support_vectors, features, kernel, gamma)
        return self.coef @ k + self.bias


def train_binary(
    features: np.ndarray, labels: np.ndarray, config: SvmConfig, gamma: Optional[float] = None
) -> BinaryMachine:
    """SMO over the soft-margin dual until KKT holds within tolerance.

    labels must be in {-1, +1} with both classes present. The second working
    index starts at a seeded random offset and then scans deterministically,
    so a fixed seed reproduces the exact same machine.
    """
    config.validate()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValidationError("features must be (n, d) with one label per row")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValidationError("binary labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise ValidationError("both classes must be present in the training set")

    n = x.shape[0]
    if gamma is None:
        gamma = config.gamma if config.gamma is not None else 1.0 / x.shape[1]
    k = kernel_matrix(x, x, config.kernel, gamma)
    c, tol = config.C, config.tolerance

    alpha = np.zeros(n)
    b = 0.0
    rng = np.random.default_rng(config.seed)
    max_eq_violation = 0.0
    converged = False
    passes = 0

    def decision(i: int) -> float:
        return float((alpha * y) @ k[:, i] + b)

    def try_update(i: int, j: int, e_i: float) -> bool:
        nonlocal b, max_eq_violation
        if i == j:
            return False
        e_j = decision(j) - y[j]
        a_i, a_j = alpha[i], alpha[j]
        if y[i] == y[j]:
            lo, hi = max(0.0, a_i + a_j - c), min(c, a_i + a_j)
        else:
            lo, hi = max(0.0, a_j - a_i), min(c, c + a_j - a_i)
        if hi - lo < _MIN_ALPHA_STEP:
            return False
        eta = 2.0 * k[i, j] - k[i, i] - k[j, j]
        if eta >= 0:
            return False
        a_j_new = min(max(a_j - y[j] * (e_i - e_j) / eta, lo), hi)
        if abs(a_j_new - a_j) < _MIN_ALPHA_STEP:
            return False
        a_i_new = a_i + y[i] * y[j] * (a_j - a_j_new)
        b1 = b - e_i - y[i] * (a_i_new - a_i) * k[i, i] - y[j] * (a_j_new - a_j) * k[i, j]
        b2 = b - e_j - y[i] * (a_i_new - a_i) * k[i, j] - y[j] * (a_j_new - a_j) * k[j, j]
        alpha[i], alpha[j] = a_i_new, a_j_new
        if 0 < a_i_new < c:
            b = b1
        elif 0 < a_j_new < c:
            b = b2
        else:
            b = (b1 + b2) / 2.0
        max_eq_violation = max(max_eq_violation, abs(float(alpha @ y)))
        return True

    def canonical_bias() -> float:
        # Interior alphas pin the bias exactly; otherwise the KKT inequalities
        # only bound it to an interval and the midpoint is used. Alphas within
        # float fuzz of a bound count as on the bound.
        g = (alpha * y) @ k
        b_exact = y - g
        eps = _BOUND_EPS * c
        interior = (alpha > eps) & (alpha < c - eps)
        if interior.any():
            return float(b_exact[interior].mean())
        at_zero = alpha <= eps
        at_c = alpha >= c - eps
        lower = b_exact[(at_zero & (y > 0)) | (at_c & (y < 0))]
        upper = b_exact[(at_zero & (y < 0)) | (at_c & (y > 0))]
        lo = lower.max() if lower.size else -np.inf
        hi = upper.min() if upper.size else np.inf
        if np.isfinite(lo) and np.isfinite(hi):
            return float(0.5 * (lo + hi))
        if np.isfinite(lo):
            return float(lo)
        if np.isfinite(hi):
            return float(hi)
        return 0.0

    def max_violation() -> float:
        yf = y * ((alpha * y) @ k + b)
        eps = _BOUND_EPS * c
        v = np.where(
            alpha <= eps,
            np.maximum(0.0, 1.0 - yf),
            np.where(alpha >= c - eps, np.maximum(0.0, yf - 1.0), np.abs(yf - 1.0)),
        )
        return float(v.max())

    for passes in range(1, config.max_passes + 1):
        changed = 0
        for i in range(n):
            e_i = decision(i) - y[i]
            r = y[i] * e_i
            if (r < -tol and alpha[i] < c) or (r > tol and alpha[i] > 0):
                # Try a seeded random partner first, then scan the rest so a
                # lone unlucky draw cannot stall convergence.
                start = int(rng.integers(n))
                for offset in range(n):
                    if try_update(i, (start + offset) % n, e_i):
                        changed += 1
                        break
        if changed == 0:
            # The running bias can drift from the value the alphas imply,
            # hiding residual violators; settle it and re-check before
            # declaring convergence.
            b = canonical_bias()
            if max_violation() <= tol:
                converged = True
                break

    b = canonical_bias()
    sv_mask = alpha > 0
    margins = (alpha * y) @ k + b
    dual = float(alpha.sum() - 0.5 * (alpha * y) @ k @ (alpha * y))
    return BinaryMachine(
        support_vectors=x[sv_mask].copy(),
        coef=(alpha * y)[sv_mask].copy(),
        bias=float(b),
        dual_objective=dual,
        converged=converged,
        passes_run=passes,
        max_equality_violation=max_eq_violation,
        alpha=alpha,
        train_margins=margins,
    )


@dataclass
class SvmModel:
    config: SvmConfig
    gamma: float
    classes: list[SeafloorClass]
    scaler: FeatureScaler
    machines: dict[tuple[SeafloorClass, SeafloorClass], BinaryMachine]

    @property
    def n_features(self) -> int:
        return int(self.scaler.mean.shape[0])


def train_multiclass(
    latents: np.ndarray, labels: np.ndarray, config: SvmConfig
) -> SvmModel:
    """One-vs-one machines over every class pair, on standardized features."""
    config.validate()
    x = np.asarray(latents, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValidationError("latents must be (n, d) with one label per row")
    present = sorted(set(int(v) for v in y))
    if len(present) < 2:
        raise ValidationError("training needs at least 2 classes")
    classes = [SeafloorClass(v) for v in present]

    scaler = FeatureScaler().fit(x)
    xs = scaler.transform(x)
    gamma = config.gamma if config.gamma is not None else 1.0 / x.shape[1]

    machines = {}
    for a, b in combinations(classes, 2):
        mask = (y == int(a)) | (y == int(b))
        pair_y = np.where(y[mask] == int(a), 1.0, -1.0)
        try:
            machines[(a, b)] = train_binary(xs[mask], pair_y, config, gamma=gamma)
        except ValidationError as exc:
            raise ValidationError(
                f"training pair ({a.display_name}, {b.display_name}) failed: {exc}"
            ) from exc
    return SvmModel(config=config, gamma=gamma, classes=classes, scaler=scaler, machines=machines)


def predict(model: SvmModel, latents: np.ndarray) -> np.ndarray:
    """Majority vote over the pairwise machines; ties go to the lowest class."""
    x = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    if x.shape[1] != model.n_features:
        raise ValidationError(
            f"latent dimension {x.shape[1]} does not match model dimension {model.n_features}"
        )
    xs = model.scaler.transform(x)
    votes = np.zeros((x.shape[0], len(SeafloorClass)), dtype=np.int64)
    for (a, b), machine in model.machines.items():
        f = machine.decision_function(xs, model.config.kernel, model.gamma)
        votes[f >= 0, int(a)] += 1
        votes[f < 0, int(b)] += 1
    # argmax picks the first maximum, which is the lowest class value.
    return np.array([SeafloorClass(int(i)) for i in np.argmax(votes, axis=1)])


def kkt_violations(
    machine: BinaryMachine, labels: np.ndarray, config: SvmConfig
) -> np.ndarray:
    """Per-point violation of the KKT conditions, for audits.

    alpha = 0 requires y f >= 1, alpha = C requires y f <= 1, interior alpha
    requires y f = 1; returns max(0, violation) per training point.
    """
    if machine.alpha is None or machine.train_margins is None:
        raise StateError("machine lacks training diagnostics")
    y = np.asarray(labels, dtype=np.float64)
    yf = y * machine.train_margins
    alpha = machine.alpha
    c = config.C
    eps = _BOUND_EPS * c
    v = np.zeros_like(alpha)
    at_zero = alpha <= eps
    at_c = alpha >= c - eps
    interior = ~at_zero & ~at_c
    v[at_zero] = np.maximum(0.0, 1.0 - yf[at_zero])
    v[at_c] = np.maximum(0.0, yf[at_c] - 1.0)
    v[interior] = np.abs(yf[interior] - 1.0)
    return v


# ---------------------------------------------------------------------------
# Model file (versioned text; decimal floats round-trip bit-exactly)
# ---------------------------------------------------------------------------


def _fmt_floats(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).reshape(-1))


def save_model(model: SvmModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{SVM_MAGIC} {SVM_VERSION}\n")
        fh.write(f"kernel {model.config.kernel}\n")
        fh.write(f"gamma {model.gamma!r}\n")
        fh.write(f"C {model.config.C!r}\n")
        fh.write(f"tolerance {model.config.tolerance!r}\n")
        fh.write(f"max_passes {model.config.max_passes}\n")
        fh.write(f"seed {model.config.seed}\n")
        fh.write(f"classes {' '.join(str(int(c)) for c in model.classes)}\n")
        fh.write(f"n_features {model.n_features}\n")
        fh.write(f"scaler_mean {_fmt_floats(model.scaler.mean)}\n")
        fh.write(f"scaler_std {_fmt_floats(model.scaler.std)}\n")
        for (a, b), machine in sorted(model.machines.items()):
            fh.write(f"machine {int(a)} {int(b)}\n")
            fh.write(f"n_support {machine.support_vectors.shape[0]}\n")
            fh.write(f"bias {machine.bias!r}\n")
            fh.write(f"dual_objective {machine.dual_objective!r}\n")
            fh.write(f"coef {_fmt_floats(machine.coef)}\n")
            for row in machine.support_vectors:
                fh.write(f"sv {_fmt_floats(row)}\n")
        fh.write("end\n")


def _parse_kv(line: str, key: str, path) -> str:
    parts = line.split(maxsplit=1)
    if len(parts) != 2 or parts[0] != key:
        raise FormatError(f"expected '{key} ...' in {path}, got {line!r}")
    return parts[1]


def load_model(path) -> SvmModel:
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or lines[0].split() != [SVM_MAGIC, str(SVM_VERSION)]:
        raise FormatError(f"bad svm model header in {path}: {lines[:1]!r}")

    kernel = _parse_kv(lines[1], "kernel", path)
    gamma = float(_parse_kv(lines[2], "gamma", path))
    c = float(_parse_kv(lines[3], "C", path))
    tolerance = float(_parse_kv(lines[4], "tolerance", path))
    max_passes = int(_parse_kv(lines[5], "max_passes", path))
    seed = int(_parse_kv(lines[6], "seed", path))
    classes = [SeafloorClass(int(v)) for v in _parse_kv(lines[7], "classes", path).split()]
    n_features = int(_parse_kv(lines[8], "n_features", path))
    mean = np.array([float(v) for v in _parse_kv(lines[9], "scaler_mean", path).split()])
    std = np.array([float(v) for v in _parse_kv(lines[10], "scaler_std", path).split()])
    if mean.shape[0] != n_features or std.shape[0] != n_features:
        raise FormatError(f"scaler vectors in {path} do not match n_features={n_features}")

    config = SvmConfig(
        kernel=kernel, gamma=gamma, C=c, tolerance=tolerance, max_passes=max_passes, seed=seed
    )
    scaler = FeatureScaler()
    scaler.mean = mean
    scaler.std = std

    machines: dict[tuple[SeafloorClass, SeafloorClass], BinaryMachine] = {}
    pos = 11
    while pos < len(lines):
        line = lines[pos].strip()
        if line == "end":
            break
        if not line:
            pos += 1
            continue
        parts = line.split()
        if parts[0] != "machine" or len(parts) != 3:
            raise FormatError(f"expected a machine block at line {pos + 1} of {path}")
        pair = (SeafloorClass(int(parts[1])), SeafloorClass(int(parts[2])))
        n_support = int(_parse_kv(lines[pos + 1], "n_support", path))
        bias = float(_parse_kv(lines[pos + 2], "bias", path))
        dual = float(_parse_kv(lines[pos + 3], "dual_objective", path))
        coef_text = _parse_kv(lines[pos + 4], "coef", path) if n_support else ""
        if n_support:
            coef = np.array([float(v) for v in coef_text.split()])
        else:
            coef = np.zeros(0)
        if coef.shape[0] != n_support:
            raise FormatError(f"machine {pair} has {coef.shape[0]} coefs, expected {n_support}")
        pos += 5
        svs = np.zeros((n_support, n_features))
        for row in range(n_support):
            values = _parse_kv(lines[pos + row], "sv", path).split()
            if len(values) != n_features:
                raise FormatError(f"support vector row {row} of machine {pair} has wrong width")
            svs[row] = [float(v) for v in values]
        pos += n_support
        machines[pair] = BinaryMachine(
            support_vectors=svs,
            coef=coef,
            bias=bias,
            dual_objective=dual,
            converged=True,
            passes_run=0,
            max_equality_violation=0.0,
        )
    else:
        raise FormatError(f"svm model file {path} missing 'end' terminator")

    return SvmModel(config=config, gamma=gamma, classes=classes, scaler=scaler, machines=machines)


# ---------------------------------------------------------------------------
# Prediction CSV
# ---------------------------------------------------------------------------

PREDICTIONS_HEADER = ["center_ping", "x", "y", "true_label", "predicted_label"]


def write_predictions(rows, path) -> None:
    """rows: iterable of (center_ping, x, y, true_label or None, predicted)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_HEADER)
        for center_ping, x, y, true_label, predicted in rows:
            writer.writerow(
                [
                    center_ping,
                    repr(float(x)),
                    repr(float(y)),
                    "" if true_label is None else int(true_label),
                    int(predicted),
                ]
            )


def read_predictions(path) -> list[tuple[int, float, float, Optional[SeafloorClass], SeafloorClass]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PREDICTIONS_HEADER:
            raise FormatError(f"unexpected predictions header {header!r} in {path}")
        for row in reader:
            rows.append(
                (
                    int(row[0]),
                    float(row[1]),
                    float(row[2]),
                    None if row[3] == "" else SeafloorClass(int(row[3])),
                    SeafloorClass(int(row[4])),
                )
            )
    return rows
