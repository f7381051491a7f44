"""Analytical NTKs for fully-connected ReLU architectures.

Two kernel families are provided:

* ``TwoLayerFrozenReLU``: the kernel of f(x) = (1/sqrt(m)) A^T relu(W x) with the
  ±1 head A frozen and only W trained,

      Theta(x, x') = (1/2 - arccos(rho) / (2*pi)) * <x, x'>,
      rho = <x, x'> / (|x| |x'|).

* ``FullyConnectedReLU`` of depth L (hidden ReLU layers, all layers trained),
  via the arc-cosine recursion

      k0(u) = (pi - arccos u) / pi
      k1(u) = (sqrt(1 - u^2) + (pi - arccos u) * u) / pi
      S^0   = <x, x'>;  S^l = N^l * k1(rho^l);  Sdot^l = k0(rho^l)
      Theta^1 = S^0;    Theta^{l+1} = S^l + Theta^l * Sdot^l

  with N^l = sqrt(S^{l-1}(x,x) S^{l-1}(x',x')) and rho^l = S^{l-1}(x,x') / N^l.
  Depth L returns Theta^{L+1}. ReLU diagonals are preserved (k1(1) = 1), so
  Theta^{L+1}(x,x) = (L+1)|x|^2.

Both are validated against a Monte-Carlo empirical NTK of a random finite net
of the matching architecture (exact Jacobian Gram, never materializing the
per-weight Jacobian).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, DomainError, NumericalError, ParameterError

# Guard band around |rho| = 1 where the arccos derivative is singular; inside
# it the gradient uses the subgradient convention (singular term dropped).
RHO_EDGE = 1e-9
# Central finite-difference step scale for depth-L input gradients.
FD_STEP = 1e-5
DEFAULT_JITTER_SCALE = 1e-8

GRAM_MAGIC = b"NTKG"


class KernelFamily(enum.Enum):
    TWO_LAYER_FROZEN_RELU = "two_layer_frozen_relu"
    FULLY_CONNECTED_RELU = "fully_connected_relu"


@dataclass(frozen=True)
class KernelModel:
    family: KernelFamily
    depth: int | None = None

    def __post_init__(self):
        if self.family is KernelFamily.TWO_LAYER_FROZEN_RELU:
            if self.depth is not None:
                raise ParameterError("TwoLayerFrozenReLU takes no depth parameter")
        else:
            if self.depth is None or self.depth < 1:
                raise ParameterError("FullyConnectedReLU needs depth >= 1")


def two_layer_kernel() -> KernelModel:
    return KernelModel(KernelFamily.TWO_LAYER_FROZEN_RELU)


def fully_connected_kernel(depth: int) -> KernelModel:
    return KernelModel(KernelFamily.FULLY_CONNECTED_RELU, depth)


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric pairwise kernel matrix with diagonal jitter already added."""

    values: np.ndarray
    kernel: KernelModel
    jitter: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ParameterError("Gram matrix must be square")
        if self.jitter < 0:
            raise ParameterError("jitter must be nonnegative")
        scale = np.max(np.abs(v), initial=0.0)
        if np.max(np.abs(v - v.T), initial=0.0) > 1e-10 * max(scale, 1e-300):
            raise ParameterError("Gram matrix must be symmetric "
                                 "(within 1e-10 relative)")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _kappa0(u: np.ndarray) -> np.ndarray:
    return (np.pi - np.arccos(u)) / np.pi


def _kappa1(u: np.ndarray) -> np.ndarray:
    return (np.sqrt(np.maximum(0.0, 1.0 - u * u))
            + (np.pi - np.arccos(u)) * u) / np.pi


def _two_layer_values(dot, norm_a, norm_b):
    rho = np.clip(dot / (norm_a * norm_b), -1.0, 1.0)
    return (0.5 - np.arccos(rho) / (2.0 * np.pi)) * dot


def _fc_values(dot, sq_a, sq_b, depth):
    """Vectorized arc-cosine recursion over aligned pair arrays."""
    theta = np.asarray(dot, dtype=np.float64).copy()
    sigma = np.asarray(dot, dtype=np.float64).copy()
    scale = np.sqrt(sq_a * sq_b)  # S^l(x,x) = |x|^2 at every layer
    for _ in range(depth):
        rho = np.clip(sigma / scale, -1.0, 1.0)
        sigma = scale * _kappa1(rho)
        theta = sigma + theta * _kappa0(rho)
    return theta


def _pair_values(k: KernelModel, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise kernel values for row-aligned stacks a, b (broadcastable)."""
    dot = np.sum(a * b, axis=-1)
    sq_a = np.sum(a * a, axis=-1)
    sq_b = np.sum(b * b, axis=-1)
    if np.any(sq_a == 0.0) or np.any(sq_b == 0.0):
        raise DomainError("kernel undefined for zero-norm inputs")
    if k.family is KernelFamily.TWO_LAYER_FROZEN_RELU:
        return _two_layer_values(dot, np.sqrt(sq_a), np.sqrt(sq_b))
    return _fc_values(dot, sq_a, sq_b, k.depth)


def kernel_value(k: KernelModel, x: np.ndarray, x2: np.ndarray) -> float:
    """Theta(x, x2) for a single pair of input vectors."""
    x = np.asarray(x, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    return float(_pair_values(k, x[None, :], x2[None, :])[0])


def _two_layer_cross_gradient(x: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Rows grad_x Theta(x, X_j) of the two-layer kernel, analytic chain rule.

    Where |rho| reaches 1 the arccos derivative is replaced by 0 (duplicate or
    antipodal points; the even kink cancels under central differences).
    """
    a2 = float(np.dot(x, x))
    if a2 == 0.0:
        raise DomainError("kernel gradient undefined at the zero vector")
    a = np.sqrt(a2)
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0.0):
        raise DomainError("kernel gradient undefined against zero-norm rows")
    dots = X @ x
    rho = np.clip(dots / (a * norms), -1.0, 1.0)
    grads = (0.5 - np.arccos(rho) / (2.0 * np.pi))[:, None] * X
    interior = np.abs(rho) < 1.0 - RHO_EDGE
    if np.any(interior):
        r = rho[interior]
        coef = dots[interior] / (2.0 * np.pi * np.sqrt(1.0 - r * r)
                                 * a * norms[interior])
        grads[interior] += coef[:, None] * (
            X[interior] - (dots[interior] / a2)[:, None] * x)
    return grads


def _fd_cross_gradient(k: KernelModel, x: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Central finite differences of Theta(., X_j) in x, step FD_STEP*max(1,|x|)."""
    d = x.size
    h = FD_STEP * max(1.0, float(np.linalg.norm(x)))
    shifts = np.vstack([np.eye(d) * h, -np.eye(d) * h])
    probes = x[None, :] + shifts  # (2d, d)
    vals = _pair_values(k, probes[:, None, :], X[None, :, :])  # (2d, n)
    return (vals[:d] - vals[d:]).T / (2.0 * h)


def kernel_input_gradient(k: KernelModel, x: np.ndarray,
                          x2: np.ndarray) -> np.ndarray:
    """grad_x Theta(x, x2): analytic for the two-layer family, FD for depth-L."""
    x = np.asarray(x, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    return cross_gradient(k, x, x2[None, :])[0]


def cross_gradient(k: KernelModel, x: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Stacked Jacobian (n, d): row j is grad_x Theta(x, X_j)."""
    x = np.asarray(x, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if k.family is KernelFamily.TWO_LAYER_FROZEN_RELU:
        return _two_layer_cross_gradient(x, X)
    return _fd_cross_gradient(k, x, X)


def kernel_cross(k: KernelModel, x: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Theta(x, X) in R^n, no jitter."""
    x = np.asarray(x, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        return np.zeros(0)
    return _pair_values(k, x[None, :], X)


def gram(k: KernelModel, X: np.ndarray,
         jitter_scale: float = DEFAULT_JITTER_SCALE) -> GramMatrix:
    """Pairwise training kernel with diagonal jitter jitter_scale * trace / n.

    Only the upper triangle is evaluated; the lower is mirrored, so the result
    is exactly symmetric.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 1:
        raise ParameterError("gram needs at least one row")
    norms2 = np.sum(X * X, axis=1)
    zero = np.flatnonzero(norms2 == 0.0)
    if zero.size:
        raise DomainError(f"zero-norm training rows at indices {zero.tolist()}")
    values = np.zeros((n, n))
    for i in range(n):
        values[i, i:] = _pair_values(k, X[i][None, :], X[i:])
        values[i:, i] = values[i, i:]
    jitter = jitter_scale * float(np.trace(values)) / n
    values[np.diag_indices(n)] += jitter
    return GramMatrix(values, k, jitter)


# ---------------------------------------------------------------------------
# Monte-Carlo empirical-NTK oracle
# ---------------------------------------------------------------------------

def empirical_ntk_oracle(k: KernelModel, width: int, seed: int,
                         X: np.ndarray) -> np.ndarray:
    """Exact Jacobian Gram of a random width-`width` net matching `k`.

    TwoLayerFrozenReLU: f(x) = (1/sqrt(m)) A^T relu(W x) with W ~ N(0, 0.01^2)
    and the ±1 head frozen; gradients w.r.t. W only. The head entries square
    to 1, so the Gram reduces to (1/m) * (mask overlap) * <x, x'>.

    FullyConnectedReLU depth L: h1 = W1 x, h_{l+1} = sqrt(2/m) W_{l+1} relu(h_l),
    f = sqrt(2/m) a . relu(h_L), all weights N(0,1) and trainable. The Gram is
    assembled layer by layer from activation/backprop inner products.
    """
    if width < 1:
        raise ParameterError("width must be at least 1")
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    if k.family is KernelFamily.TWO_LAYER_FROZEN_RELU:
        W = rng.normal(0.0, 0.01, size=(width, d))
        mask = (X @ W.T > 0).astype(np.float64)  # (n, m)
        return (mask @ mask.T) * (X @ X.T) / width
    depth = k.depth
    weights = [rng.standard_normal((width, d))]
    for _ in range(depth - 1):
        weights.append(rng.standard_normal((width, width)))
    head = rng.standard_normal(width)
    scale = np.sqrt(2.0 / width)
    # Forward: pre-activations H_l and activations Z_l per layer.
    pre, acts = [], [X]
    h = X @ weights[0].T
    pre.append(h)
    acts.append(np.maximum(h, 0.0))
    for l in range(1, depth):
        h = scale * (acts[-1] @ weights[l].T)
        pre.append(h)
        acts.append(np.maximum(h, 0.0))
    # Backward: G_l rows are df/dh_l per example.
    grads = [None] * depth
    grads[depth - 1] = scale * head[None, :] * (pre[depth - 1] > 0)
    for l in range(depth - 2, -1, -1):
        grads[l] = scale * (grads[l + 1] @ weights[l + 1]) * (pre[l] > 0)
    theta = (grads[0] @ grads[0].T) * (X @ X.T)
    for l in range(1, depth):
        theta += (2.0 / width) * (grads[l] @ grads[l].T) * (acts[l] @ acts[l].T)
    theta += (2.0 / width) * (acts[depth] @ acts[depth].T)
    return theta


# ---------------------------------------------------------------------------
# Binary serialization: magic NTKG, u32 n, f64 jitter, lower triangle f64 LE
# ---------------------------------------------------------------------------

def save_gram(g: GramMatrix, path) -> None:
    n = g.n
    tri = np.concatenate([g.values[i, :i + 1] for i in range(n)])
    with open(path, "wb") as f:
        f.write(GRAM_MAGIC)
        f.write(struct.pack("<I", n))
        f.write(struct.pack("<d", g.jitter))
        f.write(tri.astype("<f8").tobytes())


def load_gram(path, kernel: KernelModel | None = None) -> GramMatrix:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != GRAM_MAGIC:
        raise DataFormatError(f"{path}: bad magic {raw[:4]!r}")
    n = struct.unpack("<I", raw[4:8])[0]
    jitter = struct.unpack("<d", raw[8:16])[0]
    count = n * (n + 1) // 2
    body = np.frombuffer(raw[16:], dtype="<f8")
    if body.size != count:
        raise DataFormatError(f"{path}: expected {count} triangle entries, "
                              f"found {body.size}")
    values = np.zeros((n, n))
    pos = 0
    for i in range(n):
        values[i, :i + 1] = body[pos:pos + i + 1]
        values[:i + 1, i] = values[i, :i + 1]
        pos += i + 1
    kernel = kernel or two_layer_kernel()
    return GramMatrix(values, kernel, jitter)


def check_psd(values: np.ndarray, rel_tol: float = 1e-8) -> None:
    """Raise NumericalError unless smallest eigenvalue >= -rel_tol * largest."""
    eigs = np.linalg.eigvalsh(values)
    if eigs[0] < -rel_tol * max(eigs[-1], 0.0):
        raise NumericalError(
            f"matrix not PSD within tolerance: min eig {eigs[0]:.3e}, "
            f"max eig {eigs[-1]:.3e}")
