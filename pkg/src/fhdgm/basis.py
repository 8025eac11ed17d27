"""Fourier and B-spline bases over a functional domain [h1, h2]."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError

_EDGE_TOL = 1e-12


@dataclass(frozen=True)
class BasisSpec:
    """A functional basis phi(h) on ``range``.

    Use :meth:`fourier`, :meth:`bspline`, :meth:`bspline_equal` or
    :meth:`constant` rather than calling the constructor directly.
    """

    kind: str
    range: tuple[float, float]
    n_fourier: int = 0
    order: int = 0
    knots: tuple[float, ...] = ()

    def __post_init__(self):
        h1, h2 = (float(v) for v in self.range)
        if not h1 < h2:
            raise DomainError(f"basis range must satisfy h1 < h2, got {self.range}")
        object.__setattr__(self, "range", (h1, h2))
        if self.kind == "fourier":
            p = self.n_fourier
            if int(p) != p or p < 1 or p % 2 == 0:
                raise DomainError(f"Fourier basis size must be a positive odd integer, got {p}")
        elif self.kind == "bspline":
            m = self.order
            knots = tuple(float(k) for k in self.knots)
            object.__setattr__(self, "knots", knots)
            if int(m) != m or m < 1:
                raise DomainError(f"B-spline order must be an integer >= 1, got {m}")
            if len(knots) < 2 or knots[0] != h1 or knots[-1] != h2:
                raise DomainError("B-spline knots must start at h1 and end at h2")
            if any(b < a for a, b in zip(knots, knots[1:])):
                raise DomainError("B-spline knots must be non-decreasing")
            inner = knots[1:-1]
            for k in set(inner):
                if inner.count(k) > m:
                    raise DomainError(f"interior knot {k} repeated more than order {m} times")
                if k in (h1, h2):
                    raise DomainError("interior knots must lie strictly inside the range")
        else:
            raise DomainError(f"unknown basis kind {self.kind!r}")

    @classmethod
    def fourier(cls, p: int, range: tuple[float, float]) -> "BasisSpec":
        return cls("fourier", tuple(range), n_fourier=p)

    @classmethod
    def bspline(cls, order: int, knots: Sequence[float]) -> "BasisSpec":
        knots = tuple(float(k) for k in knots)
        return cls("bspline", (knots[0], knots[-1]), order=order, knots=knots)

    @classmethod
    def bspline_equal(cls, order: int, n_knots: int, range: tuple[float, float]) -> "BasisSpec":
        if n_knots < 2:
            raise DomainError("at least two knots are required")
        return cls.bspline(order, np.linspace(range[0], range[1], n_knots))

    @classmethod
    def constant(cls, range: tuple[float, float]) -> "BasisSpec":
        return cls.fourier(1, range)

    @property
    def p(self) -> int:
        return basis_count(self)

    @property
    def is_constant(self) -> bool:
        return self.p == 1


def basis_count(spec: BasisSpec) -> int:
    if spec.kind == "fourier":
        return spec.n_fourier
    return spec.order + len(spec.knots) - 2


def _check_range(spec: BasisSpec, h: np.ndarray) -> None:
    h1, h2 = spec.range
    bad = (h < h1) | (h > h2) | ~np.isfinite(h)
    if np.any(bad):
        raise DomainError(f"h={h[bad][0]} outside basis range [{h1}, {h2}]")


def _fourier(spec: BasisSpec, h: np.ndarray) -> np.ndarray:
    h1, h2 = spec.range
    omega = 2.0 * np.pi / (h2 - h1)
    hp = h - h1
    out = np.empty((h.size, spec.n_fourier))
    out[:, 0] = 1.0
    for k in range(1, (spec.n_fourier - 1) // 2 + 1):
        out[:, 2 * k - 1] = np.sin(k * omega * hp)
        out[:, 2 * k] = np.cos(k * omega * hp)
    return out


def clamped_knots(spec: BasisSpec) -> np.ndarray:
    """Knot vector with both endpoints repeated to multiplicity ``order``."""
    m = spec.order
    k = np.asarray(spec.knots)
    return np.concatenate([np.repeat(k[0], m - 1), k, np.repeat(k[-1], m - 1)])


def _bspline(spec: BasisSpec, h: np.ndarray) -> np.ndarray:
    m = spec.order
    t = clamped_knots(spec)
    n_int = t.size - 1
    # order-1 indicators on [t_i, t_{i+1}); the last nonempty span is closed on the right
    B = np.zeros((h.size, n_int))
    last = max(i for i in range(n_int) if t[i] < t[i + 1])
    for i in range(n_int):
        if t[i] < t[i + 1]:
            inside = (h >= t[i]) & ((h < t[i + 1]) | ((i == last) & (h <= t[i + 1])))
            B[inside, i] = 1.0
    for k in range(2, m + 1):
        nxt = np.zeros((h.size, n_int - k + 1))
        for i in range(n_int - k + 1):
            left = t[i + k - 1] - t[i]
            right = t[i + k] - t[i + 1]
            acc = np.zeros(h.size)
            if left > 0:
                acc += (h - t[i]) / left * B[:, i]
            if right > 0:
                acc += (t[i + k] - h) / right * B[:, i + 1]
            nxt[:, i] = acc
        B = nxt
    return B


def basis_matrix(spec: BasisSpec, h_points) -> np.ndarray:
    """q x p matrix whose row i is phi(h_i)."""
    h = np.asarray(h_points, dtype=float).reshape(-1)
    _check_range(spec, h)
    if spec.kind == "fourier":
        return _fourier(spec, h)
    return _bspline(spec, h)


def eval_basis(spec: BasisSpec, h: float) -> np.ndarray:
    return basis_matrix(spec, [h])[0]


@dataclass(frozen=True)
class BasisTriple:
    """Bases for the latent field, the functional betas and log sigma^2_eps."""

    z: BasisSpec
    beta: BasisSpec
    sigma: BasisSpec

    def __post_init__(self):
        if not (self.z.range == self.beta.range == self.sigma.range):
            raise DomainError("all three bases must share the same range")

    @property
    def range(self) -> tuple[float, float]:
        return self.z.range

    @classmethod
    def fourier(cls, range, p_z: int, p_beta: int = 1, p_sigma: int = 1) -> "BasisTriple":
        return cls(BasisSpec.fourier(p_z, range), BasisSpec.fourier(p_beta, range),
                   BasisSpec.fourier(p_sigma, range))

    @classmethod
    def bspline(cls, range, order: int, p_z: int, p_beta: int = 1, p_sigma: int = 1) -> "BasisTriple":
        """Equally spaced knots chosen so that each component has the requested size.

        A component of size 1 is the constant basis.
        """

        def make(p):
            if p == 1:
                return BasisSpec.constant(range)
            n_knots = p - order + 2
            if n_knots < 2:
                raise DomainError(f"order {order} B-spline cannot have only {p} basis functions")
            return BasisSpec.bspline_equal(order, n_knots, range)

        return cls(make(p_z), make(p_beta), make(p_sigma))
