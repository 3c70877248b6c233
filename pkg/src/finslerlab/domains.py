"""Chart domains: a working window plus excluded balls.

Excluded balls model metric-boundary punctures (removed points thickened by a
tiny safety radius so evaluations stay finite).  The optional box is the chart
working window; leaving it is a chart artifact, not a metric boundary event,
and the two are reported as distinct path termination causes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ExcludedBall:
    center: tuple
    radius: float
    axes: tuple | None = None  # coordinate indices the ball lives in (None: all)

    def signed_distance(self, x):
        x = np.asarray(x, dtype=float)
        if self.axes is None:
            d = np.linalg.norm(x - np.asarray(self.center))
        else:
            idx = list(self.axes)
            d = np.linalg.norm(x[idx] - np.asarray(self.center))
        return d - self.radius


@dataclass(frozen=True)
class DomainSpec:
    dim: int
    box: tuple | None = None  # ((lo, hi), ...) per axis; None entries = unbounded
    excluded: tuple = field(default_factory=tuple)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            return False
        if not np.all(np.isfinite(x)):
            return False
        if self.box is not None:
            for xi, bounds in zip(x, self.box):
                if bounds is None:
                    continue
                lo, hi = bounds
                if not (lo < xi < hi):
                    return False
        return all(b.signed_distance(x) > 0 for b in self.excluded)

    def excluded_distance(self, x):
        """Distance to the nearest excluded ball surface (inf if none)."""
        if not self.excluded:
            return np.inf
        return min(b.signed_distance(np.asarray(x, dtype=float)) for b in self.excluded)

    def window_distance(self, x):
        """Distance to the nearest window wall (inf if unbounded)."""
        if self.box is None:
            return np.inf
        x = np.asarray(x, dtype=float)
        d = np.inf
        for xi, bounds in zip(x, self.box):
            if bounds is None:
                continue
            lo, hi = bounds
            d = min(d, xi - lo, hi - xi)
        return d

    def boundary_distance(self, x):
        """Chart distance to the domain complement (window or exclusion)."""
        return min(self.excluded_distance(x), self.window_distance(x))

    def product(self, other):
        """Concatenate two domains (coordinates of other shifted)."""
        off = self.dim
        box = None
        if self.box is not None or other.box is not None:
            b1 = self.box if self.box is not None else ((None,) * self.dim)
            b2 = other.box if other.box is not None else ((None,) * other.dim)
            box = tuple(b1) + tuple(b2)
        shifted = tuple(
            ExcludedBall(
                b.center,
                b.radius,
                tuple(a + off for a in (b.axes if b.axes is not None else range(other.dim))),
            )
            for b in other.excluded
        )
        return DomainSpec(self.dim + other.dim, box, tuple(self.excluded) + shifted)


def full_space(dim):
    return DomainSpec(dim)
