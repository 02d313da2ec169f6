"""Shift-invariant kernels and their random Fourier feature maps.

Every kernel is normalised so that ``K(x, x) = 1`` and frequencies are drawn
from the corresponding spectral probability density, which makes
``E[phi(x) . phi(y)] = K(x, y)`` hold exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import special
from scipy.spatial import distance

from .errors import DimMismatch, InvalidDim, InvalidWidth


class KernelFamily(str, Enum):
    GAUSSIAN = "gaussian"
    MATERN = "matern"
    LAPLACIAN = "laplacian"
    CAUCHY = "cauchy"


@dataclass(frozen=True)
class KernelSpec:
    """A shift-invariant kernel with bandwidth ``scale``.

    Closed forms, with ``r = x - y``:

    * gaussian: ``exp(-|r|_2^2 / (2 scale^2))``
    * matern: ``2^(1-nu)/Gamma(nu) * u^nu * K_nu(u)``, ``u = sqrt(2 nu) |r|_2 / scale``
    * laplacian: ``exp(-|r|_1 / scale)``
    * cauchy: ``prod_i 1 / (1 + r_i^2 / scale^2)``
    """

    family: KernelFamily = KernelFamily.GAUSSIAN
    scale: float = 1.0
    nu: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        object.__setattr__(self, "scale", float(self.scale))
        if not self.scale > 0 or not math.isfinite(self.scale):
            raise ValueError(f"kernel scale must be positive, got {self.scale}")
        if self.family is KernelFamily.MATERN:
            if self.nu is None or not self.nu > 0:
                raise ValueError("matern kernel needs nu > 0")
            object.__setattr__(self, "nu", float(self.nu))
        elif self.nu is not None:
            raise ValueError(f"nu is only meaningful for the matern family, not {self.family.value}")

    @property
    def holder_q(self) -> float:
        """Hoelder smoothness index of the kernel's RKHS."""
        return {
            KernelFamily.GAUSSIAN: math.inf,
            KernelFamily.MATERN: self.nu,
            KernelFamily.LAPLACIAN: 0.5,
            KernelFamily.CAUCHY: 1.0,
        }[self.family]

    def to_dict(self) -> dict:
        out = {"family": self.family.value, "scale": self.scale}
        if self.nu is not None:
            out["nu"] = self.nu
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(family=d["family"], scale=d["scale"], nu=d.get("nu"))


def gaussian(scale=1.0) -> KernelSpec:
    return KernelSpec(KernelFamily.GAUSSIAN, scale)


def matern(nu, scale=1.0) -> KernelSpec:
    return KernelSpec(KernelFamily.MATERN, scale, nu)


def laplacian(scale=1.0) -> KernelSpec:
    return KernelSpec(KernelFamily.LAPLACIAN, scale)


def cauchy(scale=1.0) -> KernelSpec:
    return KernelSpec(KernelFamily.CAUCHY, scale)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Frozen random cosine features ``sqrt(2/D) cos(omega_k . x + b_k)``.

    Attributes
    ----------
    kernel : KernelSpec
        Kernel the frequencies were drawn for.
    omegas : np.ndarray
        ``(D, input_dim)`` frequency matrix.
    phases : np.ndarray
        ``(D,)`` phases in ``[0, 2 pi)``.
    seed : int
        Seed used by :func:`spectral_sample` (``-1`` for hand-built maps).
    """

    kernel: KernelSpec
    omegas: np.ndarray
    phases: np.ndarray
    seed: int = -1
    _amp: float = field(init=False, repr=False)

    def __post_init__(self):
        omegas = _readonly(self.omegas)
        phases = _readonly(self.phases)
        if omegas.ndim != 2 or phases.ndim != 1 or omegas.shape[0] != phases.shape[0]:
            raise DimMismatch(f"omegas {omegas.shape} and phases {phases.shape} are inconsistent")
        if omegas.shape[0] == 0:
            raise InvalidWidth("feature map needs at least one feature")
        if omegas.shape[1] == 0:
            raise InvalidDim("feature map needs input_dim >= 1")
        object.__setattr__(self, "omegas", omegas)
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "_amp", math.sqrt(2.0 / omegas.shape[0]))

    @property
    def num_features(self) -> int:
        return self.omegas.shape[0]

    @property
    def input_dim(self) -> int:
        return self.omegas.shape[1]

    @property
    def amplitude(self) -> float:
        """Per-feature amplitude ``sqrt(2/D)``."""
        return self._amp

    def project(self, X: np.ndarray) -> np.ndarray:
        """Pre-activation ``X @ omegas.T + phases``."""
        return X @ self.omegas.T + self.phases

    def __call__(self, X) -> np.ndarray:
        return apply(self, X)

    def __eq__(self, other):
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return (
            self.kernel == other.kernel
            and self.seed == other.seed
            and np.array_equal(self.omegas, other.omegas)
            and np.array_equal(self.phases, other.phases)
        )

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(),
            "input_dim": self.input_dim,
            "num_features": self.num_features,
            "seed": int(self.seed),
            "omegas": self.omegas.tolist(),
            "phases": self.phases.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMap":
        omegas = np.asarray(d["omegas"], dtype=np.float64).reshape(d["num_features"], d["input_dim"])
        return cls(KernelSpec.from_dict(d["kernel"]), omegas, np.asarray(d["phases"]), int(d["seed"]))

    def to_json(self) -> str:
        # float repr round-trips exactly, so reloaded maps are bit-identical
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "FeatureMap":
        return cls.from_dict(json.loads(text))


def sample_frequencies(kernel: KernelSpec, input_dim: int, D: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a ``(D, input_dim)`` matrix from the kernel's spectral density."""
    inv = 1.0 / kernel.scale
    shape = (D, input_dim)
    fam = kernel.family
    if fam is KernelFamily.GAUSSIAN:
        return rng.normal(0.0, inv, size=shape)
    if fam is KernelFamily.LAPLACIAN:
        return inv * rng.standard_cauchy(size=shape)
    if fam is KernelFamily.CAUCHY:
        return rng.laplace(0.0, inv, size=shape)
    # matern: multivariate t with 2 nu degrees of freedom, one chi-square per row
    dof = 2.0 * kernel.nu
    z = rng.normal(size=shape)
    g = rng.chisquare(dof, size=(D, 1))
    return inv * z * np.sqrt(dof / g)


def spectral_sample(kernel: KernelSpec, input_dim: int, D: int, seed: int) -> FeatureMap:
    """Sample a random Fourier feature map for ``kernel``.

    The result is a pure function of ``(kernel, input_dim, D, seed)``.

    Raises
    ------
    InvalidWidth
        If ``D < 1``.
    InvalidDim
        If ``input_dim < 1``.
    """
    if D < 1:
        raise InvalidWidth(f"number of features must be >= 1, got {D}")
    if input_dim < 1:
        raise InvalidDim(f"input_dim must be >= 1, got {input_dim}")
    rng = np.random.default_rng(seed)
    omegas = sample_frequencies(kernel, input_dim, D, rng)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=D)
    return FeatureMap(kernel, omegas, phases, int(seed))


def _check_input(fm: FeatureMap, X) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = X.reshape(1, -1) if single else X
    if X2.ndim != 2 or X2.shape[1] != fm.input_dim:
        raise DimMismatch(f"expected inputs of dimension {fm.input_dim}, got shape {X.shape}")
    return X2, single


def apply(fm: FeatureMap, X) -> np.ndarray:
    """Evaluate the feature map on a vector ``(d,)`` or a batch ``(n, d)``."""
    X2, single = _check_input(fm, X)
    out = fm.amplitude * np.cos(fm.project(X2))
    return out[0] if single else out


def kernel_matrix(kernel: KernelSpec, X, Y) -> np.ndarray:
    """Closed-form kernel values between rows of ``X`` and rows of ``Y``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise DimMismatch(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    s = kernel.scale
    fam = kernel.family
    if fam is KernelFamily.LAPLACIAN:
        K = distance.cdist(X, Y, "cityblock")
        K *= -1.0 / s
        return np.exp(K, out=K)
    if fam is KernelFamily.CAUCHY:
        K = np.ones((X.shape[0], Y.shape[0]))
        for j in range(X.shape[1]):
            K /= 1.0 + ((X[:, j, None] - Y[None, :, j]) / s) ** 2
        return K
    sq = distance.cdist(X, Y, "sqeuclidean")
    if fam is KernelFamily.GAUSSIAN:
        sq *= -0.5 / s**2
        return np.exp(sq, out=sq)
    nu = kernel.nu
    u = math.sqrt(2.0 * nu) * np.sqrt(sq) / s
    with np.errstate(invalid="ignore"):
        K = (2.0 ** (1.0 - nu) / special.gamma(nu)) * u**nu * special.kv(nu, u)
    # u -> 0 limit; kv overflows to inf * 0 there
    K[u < 1e-12] = 1.0
    return K


def kernel_eval(kernel: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimMismatch(f"kernel_eval needs two vectors of equal length, got {x.shape} and {y.shape}")
    return float(kernel_matrix(kernel, x[None], y[None])[0, 0])


def mc_kernel_error(kernel: KernelSpec, fm: FeatureMap, pairs) -> float:
    """Largest ``|phi(x).phi(y) - K(x, y)|`` over the given ``(x, y)`` pairs."""
    xs = np.array([np.asarray(p[0], dtype=np.float64) for p in pairs])
    ys = np.array([np.asarray(p[1], dtype=np.float64) for p in pairs])
    if xs.ndim != 2 or xs.shape != ys.shape:
        raise DimMismatch("pairs must hold vectors of a common dimension")
    approx = np.einsum("ij,ij->i", apply(fm, xs), apply(fm, ys))
    exact = np.array([kernel_eval(kernel, x, y) for x, y in zip(xs, ys)])
    return float(np.max(np.abs(approx - exact)))
