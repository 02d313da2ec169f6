"""Multi-layer and residual kernel machine architectures.

MLKM mode computes ``W_L phi_L(W_{L-1} phi_{L-1}(... W_1 phi_1(x)))`` with
``W_l`` of shape ``(D_{l+1}, D_l)`` and ``D_{L+1} = 1``.  The layer-1 feature
map reads ``d`` inputs, every deeper map reads and emits ``D_l`` values.

RKM mode replaces each deeper layer with the residual block
``T_l(z) = W2_l phi_l(W1_l z) + W1_l z`` (``W1_l``: ``D_l x D_{l-1}``,
``W2_l``: ``D_l x D_l``) applied to ``phi_1(x)`` and closes with a ``1 x D_L``
linear readout.

Parameters are kept as an ordered list of matrices.  The canonical flat order
is layer ascending, row-major within a matrix, ``W1`` before ``W2`` inside a
residual block, readout last.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, InvalidWidth, NonFiniteInput
from .kernels import FeatureMap, KernelSpec, gaussian, spectral_sample


def scale_schedule(c0: float, gamma: float, L: int) -> list[float]:
    """Per-layer bandwidths ``c0 * gamma**l`` for ``l = 1..L``."""
    return [c0 * gamma**l for l in range(1, L + 1)]


def parse_layers(spec: str) -> tuple[int, tuple[int, ...]]:
    """Parse ``"4-32-8-1"`` into ``(4, (32, 8))``."""
    try:
        sizes = [int(tok) for tok in spec.strip().split("-")]
    except ValueError as exc:
        raise InvalidWidth(f"bad layer string {spec!r}") from exc
    if len(sizes) < 3 or sizes[-1] != 1:
        raise InvalidWidth(f"layer string {spec!r} must look like d-D1-...-DL-1")
    return sizes[0], tuple(sizes[1:-1])


@dataclass(frozen=True)
class Architecture:
    """Layer bookkeeping for an MLKM or RKM.

    Attributes
    ----------
    input_dim : int
        Covariate dimension ``d``.
    widths : tuple of int
        Random-feature counts ``D_1 > D_2 > ... > D_L >= 1``.
    kernels : tuple of KernelSpec
        One kernel per layer.
    residual : bool
        Build the residual-kernel machine instead of the plain MLKM.
    """

    input_dim: int
    widths: tuple[int, ...]
    kernels: tuple[KernelSpec, ...]
    residual: bool = False

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "kernels", tuple(self.kernels))
        if self.input_dim < 1:
            raise InvalidWidth(f"input_dim must be >= 1, got {self.input_dim}")
        if not widths or widths[-1] < 1:
            raise InvalidWidth(f"widths must be nonempty and positive, got {widths}")
        if any(a <= b for a, b in zip(widths, widths[1:])):
            raise InvalidWidth(f"widths must be strictly decreasing, got {widths}")
        if len(self.kernels) != len(widths):
            raise InvalidWidth(f"{len(widths)} layers but {len(self.kernels)} kernels")

    @classmethod
    def from_string(cls, spec: str, scales=None, kernels=None, residual=False) -> "Architecture":
        """Build from a layer string; Gaussian kernels with ``scales`` unless ``kernels`` is given."""
        d, widths = parse_layers(spec)
        if kernels is None:
            scales = [1.0] * len(widths) if scales is None else list(scales)
            kernels = [gaussian(s) for s in scales]
        return cls(d, widths, tuple(kernels), residual)

    @property
    def L(self) -> int:
        return len(self.widths)

    @property
    def layer_string(self) -> str:
        return "-".join(str(v) for v in (self.input_dim, *self.widths, 1))

    def feature_dims(self) -> list[tuple[int, int]]:
        """``(input_dim, num_features)`` of each layer's feature map."""
        return [(self.input_dim if l == 0 else w, w) for l, w in enumerate(self.widths)]

    def param_shapes(self) -> list[tuple[int, int]]:
        D = self.widths
        if not self.residual:
            return [(D[l + 1] if l + 1 < self.L else 1, D[l]) for l in range(self.L)]
        shapes = []
        for l in range(1, self.L):
            shapes += [(D[l], D[l - 1]), (D[l], D[l])]
        return shapes + [(1, D[-1])]

    def layer_groups(self) -> list[list[int]]:
        """Matrix indices updated together when training layer ``l`` (0-based).

        RKM group ``l < L-1`` is residual block ``l+2`` (1-based) and the last
        group is the readout, so both modes expose ``L`` groups.
        """
        if not self.residual:
            return [[l] for l in range(self.L)]
        return [[2 * l, 2 * l + 1] for l in range(self.L - 1)] + [[2 * (self.L - 1)]]

    @property
    def num_params(self) -> int:
        return sum(r * c for r, c in self.param_shapes())

    @property
    def storage_count(self) -> int:
        """Parameters and gradients for the layer-1 projection and all weights, plus feature counts.

        For ``d-256-16-1`` with ``d = 128`` this is
        ``(128*256 + 256*16 + 16*1) * 2 + (256 + 16) = 74032``.
        """
        return 2 * (self.input_dim * self.widths[0] + self.num_params) + sum(self.widths)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "widths": list(self.widths),
            "kernels": [k.to_dict() for k in self.kernels],
            "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(d["input_dim"], tuple(d["widths"]), tuple(KernelSpec.from_dict(k) for k in d["kernels"]),
                   bool(d.get("residual", False)))


def layer_seeds(seed: int, L: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(L, dtype=np.uint64) >> np.uint64(1)]


@dataclass(frozen=True)
class Network:
    """An architecture together with its frozen per-layer feature maps."""

    arch: Architecture
    feature_maps: tuple[FeatureMap, ...]

    def __post_init__(self):
        fms = tuple(self.feature_maps)
        object.__setattr__(self, "feature_maps", fms)
        if len(fms) != self.arch.L:
            raise DimMismatch(f"{self.arch.L} layers but {len(fms)} feature maps")
        for l, (fm, (din, dout)) in enumerate(zip(fms, self.arch.feature_dims())):
            if fm.input_dim != din or fm.num_features != dout:
                raise DimMismatch(
                    f"layer {l + 1} feature map is {fm.input_dim}->{fm.num_features}, expected {din}->{dout}")

    @classmethod
    def sample(cls, arch: Architecture, seed: int) -> "Network":
        maps = [spectral_sample(k, din, dout, s)
                for k, (din, dout), s in zip(arch.kernels, arch.feature_dims(), layer_seeds(seed, arch.L))]
        return cls(arch, tuple(maps))

    def to_dict(self) -> dict:
        return {"arch": self.arch.to_dict(), "feature_maps": [fm.to_dict() for fm in self.feature_maps]}

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        return cls(Architecture.from_dict(d["arch"]), tuple(FeatureMap.from_dict(f) for f in d["feature_maps"]))


class Weights:
    """Ordered weight matrices of one model (see module docstring for the order)."""

    def __init__(self, arch: Architecture, matrices):
        mats = [np.array(m, dtype=np.float64) for m in matrices]
        shapes = arch.param_shapes()
        if len(mats) != len(shapes) or any(m.shape != s for m, s in zip(mats, shapes)):
            raise DimMismatch(f"weight shapes {[m.shape for m in mats]} do not match {shapes}")
        self.arch = arch
        self.matrices = mats

    def __len__(self):
        return len(self.matrices)

    def __getitem__(self, i) -> np.ndarray:
        return self.matrices[i]

    @property
    def num_params(self) -> int:
        return sum(m.size for m in self.matrices)

    def copy(self) -> "Weights":
        return Weights(self.arch, [m.copy() for m in self.matrices])

    def flatten(self) -> np.ndarray:
        return np.concatenate([m.ravel() for m in self.matrices])

    @classmethod
    def from_flat(cls, arch: Architecture, vec) -> "Weights":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (arch.num_params,):
            raise DimMismatch(f"expected {arch.num_params} parameters, got {vec.shape}")
        mats, k = [], 0
        for r, c in arch.param_shapes():
            mats.append(vec[k:k + r * c].reshape(r, c).copy())
            k += r * c
        return cls(arch, mats)

    @classmethod
    def zeros(cls, arch: Architecture) -> "Weights":
        return cls(arch, [np.zeros(s) for s in arch.param_shapes()])

    def sq_norm(self) -> float:
        return float(sum(np.sum(m * m) for m in self.matrices))

    def equal(self, other: "Weights") -> bool:
        return self.arch == other.arch and all(np.array_equal(a, b) for a, b in zip(self.matrices, other.matrices))

    def to_dict(self) -> dict:
        raw = self.flatten().astype("<f8").tobytes()
        return {
            "arch": self.arch.to_dict(),
            "num_params": self.num_params,
            "data": base64.b64encode(raw).decode("ascii"),
            "sha256": hashlib.sha256(raw).hexdigest(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Weights":
        raw = base64.b64decode(d["data"])
        if hashlib.sha256(raw).hexdigest() != d["sha256"]:
            raise ValueError("weight checksum mismatch")
        arch = Architecture.from_dict(d["arch"])
        return cls.from_flat(arch, np.frombuffer(raw, dtype="<f8"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Weights":
        return cls.from_dict(json.loads(text))


def init_weights(arch: Architecture, rng: np.random.Generator) -> Weights:
    """Uniform ``[-a, a]`` entries with ``a = sqrt(6 / (fan_in + fan_out))``."""
    mats = []
    for r, c in arch.param_shapes():
        a = math.sqrt(6.0 / (r + c))
        mats.append(rng.uniform(-a, a, size=(r, c)))
    return Weights(arch, mats)


@dataclass
class GradientBundle:
    grads: list[np.ndarray]
    loss: float

    def flatten(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.grads])


def _as_batch(net: Network, X) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = X.reshape(1, -1) if single else X
    if X2.ndim != 2 or X2.shape[1] != net.arch.input_dim:
        raise DimMismatch(f"expected inputs with {net.arch.input_dim} columns, got shape {X.shape}")
    return X2, single


def _check_weights(net: Network, weights: Weights):
    if weights.arch.param_shapes() != net.arch.param_shapes() or weights.arch.residual != net.arch.residual:
        raise DimMismatch("weights were built for a different architecture")


def first_layer_features(net: Network, X: np.ndarray) -> np.ndarray:
    """``phi_1(X)``; holds no trainable weights, so trainers compute it once."""
    return net.feature_maps[0].amplitude * np.cos(net.feature_maps[0].project(X))


def _forward_cache(net: Network, weights: Weights, X: np.ndarray | None, H1: np.ndarray | None = None):
    fms = net.feature_maps
    if H1 is None:
        H1 = first_layer_features(net, X)
    if not net.arch.residual:
        # layer-1 pre-activations are never needed by the reverse sweep
        layers = [(None, H1)]
        z = H1 @ weights[0].T
        for fm, W in zip(fms[1:], weights.matrices[1:]):
            U = fm.project(z)
            H = fm.amplitude * np.cos(U)
            layers.append((U, H))
            z = H @ W.T
        return z[:, 0], layers
    a = H1
    acts, blocks = [a], []
    for l in range(1, net.arch.L):
        W1, W2 = weights[2 * l - 2], weights[2 * l - 1]
        u = a @ W1.T
        U = fms[l].project(u)
        H = fms[l].amplitude * np.cos(U)
        a = H @ W2.T + u
        blocks.append((U, H))
        acts.append(a)
    f = a @ weights[-1].T
    return f[:, 0], (acts, blocks)


def forward(net: Network, weights: Weights, X):
    """Model output for one input vector (returns a float) or a batch (returns ``(n,)``)."""
    _check_weights(net, weights)
    X2, single = _as_batch(net, X)
    f, _ = _forward_cache(net, weights, X2)
    return float(f[0]) if single else f


def _outer(G, H, reduce):
    return G.T @ H if reduce else np.einsum("ni,nj->nij", G, H)


def _backprop(net: Network, weights: Weights, cache, g_out: np.ndarray, reduce=True, lowest=0):
    """Reverse sweep from output sensitivities ``g_out`` ``(n, 1)``.

    Returns a list indexed like ``weights.matrices``; entries for layer groups
    below ``lowest`` are left as ``None``.  With ``reduce`` the per-sample
    contributions are summed, otherwise each gradient gains a leading ``n`` axis.
    """
    fms = net.feature_maps
    grads = [None] * len(weights)
    G = g_out
    if not net.arch.residual:
        layers = cache
        for l in range(net.arch.L - 1, lowest - 1, -1):
            U, H = layers[l]
            grads[l] = _outer(G, H, reduce)
            if l > lowest:
                dU = (G @ weights[l]) * (-fms[l].amplitude * np.sin(U))
                G = dU @ fms[l].omegas
        return grads
    acts, blocks = cache
    L = net.arch.L
    grads[-1] = _outer(G, acts[-1], reduce)
    if lowest == L - 1:
        return grads
    gA = G @ weights[-1]
    for l in range(L - 1, lowest, -1):
        U, H = blocks[l - 1]
        W1, W2 = weights[2 * l - 2], weights[2 * l - 1]
        grads[2 * l - 1] = _outer(gA, H, reduce)
        du = ((gA @ W2) * (-fms[l].amplitude * np.sin(U))) @ fms[l].omegas + gA
        grads[2 * l - 2] = _outer(du, acts[l - 1], reduce)
        if l - 1 > lowest:
            gA = du @ W1
    return grads


def _check_batch(net: Network, X, Y):
    X2, _ = _as_batch(net, X)
    Y = np.asarray(Y, dtype=np.float64).reshape(-1)
    if X2.shape[0] == 0:
        raise DimMismatch("empty batch")
    if Y.shape[0] != X2.shape[0]:
        raise DimMismatch(f"{X2.shape[0]} inputs but {Y.shape[0]} targets")
    if not (np.all(np.isfinite(X2)) and np.all(np.isfinite(Y))):
        raise NonFiniteInput("batch contains non-finite values")
    return X2, Y


def backward(net: Network, weights: Weights, X, Y, ridge: float = 0.0) -> GradientBundle:
    """Gradient of ``mean((y - f(x))^2) + ridge * sum(W^2)`` for every weight matrix."""
    _check_weights(net, weights)
    X2, Y = _check_batch(net, X, Y)
    f, cache = _forward_cache(net, weights, X2)
    r = Y - f
    g_out = (-2.0 / len(Y)) * r[:, None]
    grads = _backprop(net, weights, cache, g_out)
    if ridge:
        grads = [g + 2.0 * ridge * W for g, W in zip(grads, weights.matrices)]
    loss = float(np.mean(r * r) + ridge * weights.sq_norm())
    return GradientBundle(grads, loss)


def layer_gradient(net: Network, weights: Weights, X, Y, layer: int, ridge: float = 0.0) -> list[np.ndarray]:
    """Gradient with respect to the matrices of one layer group only (0-based ``layer``).

    Returns one array for an MLKM layer and ``[dW1, dW2]`` for a residual block.
    """
    _check_weights(net, weights)
    groups = net.arch.layer_groups()
    if not 0 <= layer < len(groups):
        raise DimMismatch(f"layer index {layer} out of range for {len(groups)} layers")
    X2, Y = _check_batch(net, X, Y)
    f, cache = _forward_cache(net, weights, X2)
    g_out = (-2.0 / len(Y)) * (Y - f)[:, None]
    grads = _backprop(net, weights, cache, g_out, lowest=layer)
    out = [grads[i] for i in groups[layer]]
    if ridge:
        out = [g + 2.0 * ridge * weights[i] for g, i in zip(out, groups[layer])]
    return out


def param_jacobian(net: Network, weights: Weights, X) -> np.ndarray:
    """``(n, p)`` matrix whose row ``i`` is the gradient of ``f(x_i)`` in canonical order."""
    _check_weights(net, weights)
    X2, _ = _as_batch(net, X)
    _, cache = _forward_cache(net, weights, X2)
    n = X2.shape[0]
    grads = _backprop(net, weights, cache, np.ones((n, 1)), reduce=False)
    return np.concatenate([g.reshape(n, -1) for g in grads], axis=1)


def mse(net: Network, weights: Weights, X, Y) -> float:
    Y = np.asarray(Y, dtype=np.float64).reshape(-1)
    r = Y - forward(net, weights, np.atleast_2d(X))
    return float(np.mean(r * r))
