"""Synthetic regression scenarios and CSV ingestion.

Scenario kinds
--------------
``additive1``
    ``f1(x1) + f2(x2) + f3(x3) + f4(x4)`` on the correlated design
    ``X_j = (E_j + t U) / (1 + t)``.
``interaction2``
    ``a1 f1(x1) + sum_{j=2..4} a_j(x1) f_j(x_j)`` on ``U[0, 1]^d``.
``trigsin3``
    Sum of per-coordinate trigonometric polynomials, sin-ratios or a half/half
    mix, on ``U[-2, 2]^d`` or ``N(0, Sigma)`` with ``Sigma_jk = 0.5^|j-k|``.
``exp4``
    ``sum_j x_j + 2 exp(-16 x_j^2)`` over the first ``active`` coordinates of
    ``U[0, 1]^d``.
``constant``
    ``f = value`` everywhere on ``U[0, 1]^d``; a sanity target.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import IncompatibleScenario, ParseError

KINDS = ("additive1", "interaction2", "trigsin3", "exp4", "constant")
STREAMS = {"train": 0, "test": 1, "coef": 2}


class ConstantColumnWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Scenario:
    kind: str
    d: int
    n: int
    noise: float = 1.0
    seed: int = 0
    t: float = 1.0
    sub_kind: str = "trig"
    design: str = "uniform"
    active: int | None = None
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise IncompatibleScenario(f"unknown scenario kind {self.kind!r}")
        if self.d < 1 or self.n < 1:
            raise IncompatibleScenario("d and n must be positive")
        if self.noise < 0:
            raise IncompatibleScenario("noise sigma must be >= 0")
        if self.kind in ("additive1", "interaction2") and self.d < 4:
            raise IncompatibleScenario(f"{self.kind} needs d >= 4, got {self.d}")
        if self.kind == "additive1" and self.t < 0:
            raise IncompatibleScenario("design parameter t must be >= 0")
        if self.kind == "trigsin3":
            if self.sub_kind not in ("trig", "sin", "mix"):
                raise IncompatibleScenario(f"unknown trigsin3 sub-kind {self.sub_kind!r}")
            if self.design not in ("uniform", "normal"):
                raise IncompatibleScenario(f"unknown design {self.design!r}")
            if self.sub_kind == "mix" and self.d < 2:
                raise IncompatibleScenario("mix sub-kind needs d >= 2")
        if self.kind == "exp4" and self.active is not None and not 1 <= self.active <= self.d:
            raise IncompatibleScenario(f"active={self.active} must lie in [1, d={self.d}]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    f_true: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64).reshape(-1)
        if self.X.ndim != 2 or self.X.shape[0] != self.Y.shape[0]:
            raise ValueError(f"X {self.X.shape} and Y {self.Y.shape} disagree")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        f = None if self.f_true is None else self.f_true[idx]
        return Dataset(self.X[idx], self.Y[idx], f, dict(self.provenance))


def _rng(scenario: Scenario, stream: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([scenario.seed, STREAMS[stream]]))


def trigsin_coefficients(scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """``(u, c)`` of shapes ``(d, 3)`` and ``(d, 2)``, fixed by the scenario seed."""
    rng = _rng(scenario, "coef")
    u = rng.uniform(1.0, 2.0, size=(scenario.d, 3))
    c = rng.uniform(1.0, 2.0, size=(scenario.d, 2))
    return u, c


def additive1_components(X):
    x1, x2, x3, x4 = (X[:, j] for j in range(4))
    s1, c1 = np.sin(2 * np.pi * x1), np.cos(2 * np.pi * x1)
    f1 = 6 * (0.1 * s1 + 0.2 * c1 + 0.3 * s1**2 + 0.4 * c1**3 + 0.5 * s1**3)
    f2 = 3 * (2 * x2 - 1) ** 2
    f3 = 5 * x3
    s4 = np.sin(2 * np.pi * x4)
    f4 = 4 * s4 / (2 - s4)
    return f1, f2, f3, f4


def true_function(scenario: Scenario, X):
    """Noise-free regression function; accepts ``(d,)`` or ``(n, d)``."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != scenario.d:
        raise IncompatibleScenario(f"scenario has d={scenario.d}, inputs have {X.shape[1]} columns")
    kind = scenario.kind
    if kind == "additive1":
        out = sum(additive1_components(X))
    elif kind == "interaction2":
        x1, x2, x3, x4 = (X[:, j] for j in range(4))
        f1 = -2 * np.sin(2 * np.pi * x1)
        f2 = x2**2 - 1 / 3
        f3 = x3 - 0.5
        f4 = np.exp(x4) + math.exp(-1) - 1
        a2 = math.sqrt(2 / math.pi) * np.exp(-((x1 - 1) ** 2) / 2)
        a3 = 3 * np.cos(2 * np.pi * x1)
        out = f1 + a2 * f2 + a3 * f3 + 4 * f4
    elif kind == "trigsin3":
        u, c = trigsin_coefficients(scenario)
        trig = u[:, 0] * np.sin(X) + u[:, 1] * np.cos(X) + u[:, 2] * np.sin(X) ** 2
        ratio = np.sin(c[:, 0] * X) / (2 - np.sin(c[:, 1] * X))
        if scenario.sub_kind == "trig":
            comp = trig
        elif scenario.sub_kind == "sin":
            comp = ratio
        else:
            half = scenario.d // 2
            comp = np.concatenate([trig[:, :half], ratio[:, half:]], axis=1)
        out = comp.sum(axis=1)
    elif kind == "exp4":
        k = scenario.active or scenario.d
        Xa = X[:, :k]
        out = (Xa + 2 * np.exp(-16 * Xa**2)).sum(axis=1)
    else:
        out = np.full(X.shape[0], float(scenario.value))
    return float(out[0]) if single else out


def sample_design(scenario: Scenario, n: int, rng: np.random.Generator) -> np.ndarray:
    d = scenario.d
    if scenario.kind == "additive1":
        E = rng.uniform(size=(n, d))
        U = rng.uniform(size=(n, 1))
        return (E + scenario.t * U) / (1 + scenario.t)
    if scenario.kind == "trigsin3":
        if scenario.design == "uniform":
            return rng.uniform(-2.0, 2.0, size=(n, d))
        idx = np.arange(d)
        cov = 0.5 ** np.abs(idx[:, None] - idx[None, :])
        return rng.standard_normal((n, d)) @ np.linalg.cholesky(cov).T
    return rng.uniform(size=(n, d))


def generate(scenario: Scenario, n: int | None = None, stream: str = "train") -> Dataset:
    """Draw ``n`` (default ``scenario.n``) samples from the scenario.

    ``stream`` selects an independent sub-seed, so ``"train"`` and ``"test"``
    draws never share random numbers.
    """
    if stream not in ("train", "test"):
        raise ValueError(f"stream must be 'train' or 'test', got {stream!r}")
    n = scenario.n if n is None else n
    rng = _rng(scenario, stream)
    X = sample_design(scenario, n, rng)
    f = true_function(scenario, X)
    Y = f + scenario.noise * rng.standard_normal(n)
    return Dataset(X, Y, f, {"scenario": scenario.to_dict(), "stream": stream})


def _parse_float(text, row, column):
    if text is None:
        raise ParseError(f"row {row}, column {column!r}: missing value", row, column)
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise ParseError(f"row {row}, column {column!r}: cannot parse {text!r} as a number", row, column) from None
    if not math.isfinite(v):
        raise ParseError(f"row {row}, column {column!r}: non-finite value {text!r}", row, column)
    return v


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a header-plus-numeric-rows CSV. Row numbers in errors count the header as row 1."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file", 1, None) from None
        rows = []
        for rownum, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(f"row {rownum}: expected {len(header)} fields, got {len(rec)}", rownum, None)
            rows.append([_parse_float(c.strip() or None, rownum, h) for c, h in zip(rec, header)])
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


def minmax_bounds(X: np.ndarray, columns) -> dict:
    return {c: (float(lo), float(hi)) for c, lo, hi in zip(columns, X.min(axis=0), X.max(axis=0))}


def apply_bounds(X, columns, bounds: dict) -> np.ndarray:
    """Min-max scale with stored bounds; constant columns map to 0.5."""
    X = np.asarray(X, dtype=np.float64)
    out = np.empty_like(X)
    for j, c in enumerate(columns):
        lo, hi = bounds[c]
        out[:, j] = 0.5 if hi == lo else (X[:, j] - lo) / (hi - lo)
    return out


def load_csv(path, target_column: str, normalize: bool = True) -> Dataset:
    header, data = read_csv(path)
    if target_column not in header:
        raise ParseError(f"target column {target_column!r} not in header {header}", 1, target_column)
    t = header.index(target_column)
    columns = [h for i, h in enumerate(header) if i != t]
    X = np.delete(data, t, axis=1)
    prov = {"path": str(path), "target": target_column, "columns": columns}
    if normalize and X.shape[0]:
        bounds = minmax_bounds(X, columns)
        constant = [c for c, (lo, hi) in bounds.items() if lo == hi]
        for c in constant:
            warnings.warn(f"column {c!r} is constant; normalised value set to 0.5", ConstantColumnWarning)
        X = apply_bounds(X, columns, bounds)
        prov.update(bounds=bounds, constant_columns=constant)
    return Dataset(X, data[:, t], None, prov)


def save_bounds(dataset: Dataset, path):
    """Write the normalisation bounds sidecar (JSON)."""
    with open(path, "w") as fh:
        json.dump({"columns": dataset.provenance["columns"], "bounds": dataset.provenance["bounds"]}, fh, indent=2)


def load_bounds(path) -> tuple[list[str], dict]:
    with open(path) as fh:
        d = json.load(fh)
    return d["columns"], {c: tuple(v) for c, v in d["bounds"].items()}
