"""Poincare-ball operations with tunable curvature c > 0.

Convention: the ball of curvature c is {x : sqrt(c) * ||x|| < 1}, i.e. radius
1/sqrt(c). All functions take and return float64 torch tensors and are
differentiable, including through the curvature (which may be a tensor, as in
the learnable-curvature scorer). A thin :class:`BallPoint` wrapper carries the
curvature alongside the coordinates and enforces curvature agreement between
operands.
"""

from dataclasses import dataclass

import torch

from .exceptions import InvalidInputError

#: Points are kept at least this far (in norm) from the ball boundary.
BOUNDARY_MARGIN = 1e-5
_MIN_NORM = 1e-15


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x.to(torch.float64)
    return torch.as_tensor(x, dtype=torch.float64)


def _curvature(c):
    c_t = _as_tensor(c)
    if not (float(c_t.detach()) > 0.0):
        raise InvalidInputError(f"curvature must be positive, got {float(c_t.detach())}")
    return c_t


def project_to_ball(x, c):
    """Clip ``x`` to the open ball: points with sqrt(c)*||x|| >= 1 are rescaled
    to norm (1 - margin)/sqrt(c); interior points pass through unchanged."""
    c = _curvature(c)
    x = _as_tensor(x)
    if not torch.all(torch.isfinite(x)):
        raise InvalidInputError("point must be finite")
    sqrt_c = c.sqrt()
    norm = x.norm().clamp_min(_MIN_NORM)
    max_norm = (1.0 - BOUNDARY_MARGIN) / sqrt_c
    clipped = x / norm * max_norm
    return torch.where(sqrt_c * norm >= 1.0, clipped, x)


def mobius_add(x, y, c):
    """Curvature-c Mobius addition x (+)_c y."""
    c = _curvature(c)
    x = _as_tensor(x)
    y = _as_tensor(y)
    xy = (x * y).sum()
    x2 = (x * x).sum()
    y2 = (y * y).sum()
    # Grouped so that for y == x the two coefficients agree bitwise and
    # (-x) (+)_c x cancels to exactly zero.
    coef_x = 1.0 + c * (2.0 * xy + y2)
    coef_y = 1.0 - c * x2
    num = coef_x * x + coef_y * y
    den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    return num / den.clamp_min(_MIN_NORM)


def expmap0(v, c):
    """Exponential map at the origin: tangent vector -> ball point."""
    c = _curvature(c)
    v = _as_tensor(v)
    if not torch.all(torch.isfinite(v)):
        raise InvalidInputError("tangent vector must be finite")
    sqrt_c = c.sqrt()
    norm = v.norm().clamp_min(_MIN_NORM)
    return torch.tanh(sqrt_c * norm) * v / (sqrt_c * norm)


def logmap0(y, c):
    """Logarithmic map at the origin; inverse of :func:`expmap0`."""
    c = _curvature(c)
    y = _as_tensor(y)
    sqrt_c = c.sqrt()
    norm = y.norm().clamp_min(_MIN_NORM)
    if float((sqrt_c * norm).detach()) >= 1.0:
        raise InvalidInputError("point lies on or outside the ball boundary")
    return torch.atanh(sqrt_c * norm) * y / (sqrt_c * norm)


def poincare_distance(x, y, c):
    """Hyperbolic distance d_c(x, y) = (2/sqrt(c)) * artanh(sqrt(c) ||(-x) (+)_c y||)."""
    c = _curvature(c)
    sqrt_c = c.sqrt()
    diff = mobius_add(-_as_tensor(x), _as_tensor(y), c)
    # Clamp keeps artanh finite when rounding puts the argument at 1.
    arg = (sqrt_c * diff.norm()).clamp(max=1.0 - 1e-15)
    return 2.0 / sqrt_c * torch.atanh(arg)


@dataclass(frozen=True)
class BallPoint:
    """A point strictly inside the curvature-c Poincare ball."""

    coords: torch.Tensor
    c: float

    @classmethod
    def project(cls, x, c):
        return cls(project_to_ball(x, c), float(c))

    @classmethod
    def from_tangent(cls, v, c):
        return cls(expmap0(v, c), float(c))

    def _check_compatible(self, other):
        if abs(self.c - other.c) > 0.0:
            raise InvalidInputError(
                f"curvature mismatch: {self.c} vs {other.c}"
            )

    def mobius_add(self, other):
        self._check_compatible(other)
        out = mobius_add(self.coords, other.coords, self.c)
        return BallPoint(project_to_ball(out, self.c), self.c)

    def log(self):
        return logmap0(self.coords, self.c)

    def distance_to(self, other):
        self._check_compatible(other)
        return poincare_distance(self.coords, other.coords, self.c)

    def __neg__(self):
        return BallPoint(-self.coords, self.c)
