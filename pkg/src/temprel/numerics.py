"""Deterministic numerical primitives shared by all modules.

Everything here is pure and operates on plain numpy arrays; the torch-based
model code converts as needed.
"""

import hashlib

import numpy as np

from .exceptions import InvalidInputError

#: Step used for central finite differences.
GRAD_CHECK_EPS = 1e-5
#: Maximum relative error accepted by gradient checks.
GRAD_CHECK_TOL = 1e-4


def softmax(scores):
    """Numerically stable softmax over a 1-d array of scores.

    Stabilized by max-subtraction; score magnitudes are unbounded negative
    distances, so this is not optional.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 1:
        raise InvalidInputError("softmax expects a non-empty 1-d score vector")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("softmax scores must be finite")
    e = np.exp(s - s.max())
    return e / e.sum()


def is_prob_vector(p, tol=1e-9):
    p = np.asarray(p, dtype=np.float64)
    return p.ndim == 1 and p.size >= 1 and np.all(p >= 0) and abs(p.sum() - 1.0) <= tol


def entropy(p):
    """Shannon entropy in nats, with the 0*log(0) := 0 convention."""
    p = np.asarray(p, dtype=np.float64)
    if not is_prob_vector(p):
        raise InvalidInputError("entropy expects a probability vector")
    nz = p[p > 0.0]
    return float(-np.sum(nz * np.log(nz)))


def derive_seed(root_seed, name):
    """Derive a per-component stream seed from a root seed and a name.

    Hash-based so that adding a consumer never shifts the streams of the
    existing ones.
    """
    digest = hashlib.blake2b(
        f"{name}:{int(root_seed)}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


class SeededRng:
    """Deterministic random stream (PCG64 underneath).

    Identical seed plus identical call sequence yields identical samples on
    every platform. Each concurrent consumer should own its own stream,
    obtained via :meth:`derive`.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, name):
        """Fan out an independent, reproducible sub-stream."""
        return SeededRng(derive_seed(self.seed, name))

    def standard_normal(self, n):
        """n i.i.d. draws from N(0, 1)."""
        if int(n) < 1:
            raise InvalidInputError("sample count must be >= 1")
        return self._gen.standard_normal(int(n))

    def normal_matrix(self, rows, cols):
        if rows < 1 or cols < 1:
            raise InvalidInputError("matrix dimensions must be >= 1")
        return self._gen.standard_normal((int(rows), int(cols)))

    def uniform(self, n):
        if int(n) < 1:
            raise InvalidInputError("sample count must be >= 1")
        return self._gen.uniform(size=int(n))

    def integers(self, low, high, n):
        return self._gen.integers(low, high, size=int(n))

    def permutation(self, n):
        return self._gen.permutation(int(n))

    def get_state(self):
        return self._gen.bit_generator.state

    def set_state(self, state):
        self._gen.bit_generator.state = state


def grad_check(f, x, analytic_grad, eps=GRAD_CHECK_EPS):
    """Compare an analytic gradient against central finite differences.

    ``f`` maps a 1-d array to a scalar. Returns the maximum over elements of
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    x = np.asarray(x, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    if analytic.shape != x.shape:
        raise InvalidInputError("analytic gradient shape does not match x")
    fx = float(f(x))
    if not np.isfinite(fx):
        raise InvalidInputError("f(x) is not finite at the check point")
    numeric = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += eps
        xm.flat[i] -= eps
        numeric.flat[i] = (float(f(xp)) - float(f(xm))) / (2.0 * eps)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(rel.max())
