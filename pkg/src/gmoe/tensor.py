"""Dense float64 arrays, deterministic RNG, and the numeric kernels layers build on.

All tensors are C-contiguous ``numpy.float64`` arrays. Reductions use fixed,
documented summation orders so that any run with the same seed is bitwise
reproducible:

* :func:`matmul` accumulates strictly left to right along the shared axis
  (``out[i, l] = (((a[i,0]*b[0,l]) + a[i,1]*b[1,l]) + ...)``), matching a
  scalar triple loop to the last bit. The kernel is JIT compiled without
  fast-math, so LLVM cannot reassociate the additions.
* Gaussian sampling uses the Box-Muller transform over a PCG64 uniform
  stream, see :class:`SeededRng`.
"""

import numpy as np
import numba


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


def tensor(data):
    """Coerce ``data`` to a C-contiguous float64 array."""
    return np.ascontiguousarray(data, dtype=np.float64)


def check_finite(x, what="tensor"):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite values")
    return x


# -----------------------------------------------------------------------------
# Matrix product
# -----------------------------------------------------------------------------

@numba.njit(cache=True)
def _matmul_kernel(a, b, out):  # pragma: no cover - exercised via matmul
    # Row tiling reuses each b row across the tile while the output tile
    # stays cache-resident; per-element accumulation order over j is the
    # strict left-to-right order the contract promises.
    m, k = a.shape
    n = b.shape[1]
    tile = 8
    for i0 in range(0, m, tile):
        i1 = min(i0 + tile, m)
        for j in range(k):
            for i in range(i0, i1):
                aij = a[i, j]
                for l in range(n):
                    out[i, l] += aij * b[j, l]


def matmul(a, b):
    """Matrix product with left-to-right accumulation over the inner axis.

    Both operands must be 2-D with matching inner dimensions. The summation
    order is part of the contract: the result is bit-identical to a scalar
    triple loop accumulating ``j = 0 .. k-1`` in order.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    # transposed views would stride the inner loop; copying changes no bits
    b = np.ascontiguousarray(b)
    out = np.zeros((a.shape[0], b.shape[1]))
    _matmul_kernel(a, b, out)
    return out


# -----------------------------------------------------------------------------
# Elementwise kernels
# -----------------------------------------------------------------------------

def _require_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op} operands differ in shape: {a.shape} vs {b.shape}")


def ew_add(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _require_same_shape(a, b, "add")
    return a + b


def ew_sub(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _require_same_shape(a, b, "sub")
    return a - b


def ew_mul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _require_same_shape(a, b, "mul")
    return a * b


def scale(x, c):
    return np.asarray(x, dtype=np.float64) * float(c)


def sigmoid(x):
    """Numerically stable logistic function; saturates without overflow."""
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def tanh(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


def elementwise(op, *args):
    """Dispatch by name; the named variants are the primary surface."""
    table = {
        "add": ew_add,
        "sub": ew_sub,
        "mul": ew_mul,
        "sigmoid": sigmoid,
        "tanh": tanh,
        "scale": scale,
    }
    if op not in table:
        raise ValueError(f"unknown elementwise op {op!r}")
    return table[op](*args)


def softmax_rows(logits):
    """Row-wise softmax with per-row max subtraction.

    Each output row sums to 1 within 1e-12 for any finite input; extreme
    logits saturate cleanly instead of overflowing.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D array, got shape {logits.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# -----------------------------------------------------------------------------
# Seeded random source
# -----------------------------------------------------------------------------

class SeededRng:
    """Deterministic random stream. Identical seed, identical outputs.

    Uniform variates come from numpy's PCG64 generator. Standard normals are
    produced by the Box-Muller transform: for each pair of uniforms
    ``(u1, u2)`` with ``u1`` mapped into (0, 1],

        r  = sqrt(-2 ln u1)
        z0 = r cos(2 pi u2),  z1 = r sin(2 pi u2)

    and ``z0, z1`` are interleaved into the output buffer. A SeededRng is
    single-owner state; never share one across threads.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, shape=()):
        """Uniform draws in [0, 1)."""
        return self._gen.random(shape)

    def standard_normal(self, shape=()):
        """I.i.d. standard normal draws via Box-Muller."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # in (0, 1]; log never sees 0
        u2 = self._gen.random(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(2.0 * np.pi * u2)
        out[1::2] = r * np.sin(2.0 * np.pi * u2)
        out = out[:n]
        return out.reshape(shape) if shape else float(out[0])

    def permutation(self, n):
        return self._gen.permutation(n)

    def integers(self, low, high):
        return int(self._gen.integers(low, high))


def rng_gaussian(rng, shape):
    """Standard-normal tensor of the given shape, drawn from ``rng``."""
    return rng.standard_normal(shape)
