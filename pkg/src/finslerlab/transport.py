"""Geodesic integration, parallel transport, the Berwald transport check,
holonomy sampling and invariant-subspace decomposition.

Paths are exposed through a small protocol: ``pieces()`` yields smooth
parameter intervals with point/velocity callables, so transport works the
same along dense geodesic solutions, analytic curves, chart polylines and
compositions of geodesic legs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import subspace_angles

from .errors import DomainError, NumericalError, ValidationError
from .geometry import christoffel, metric_inverse

TERM_HORIZON = "horizon"
TERM_DOMAIN_EXIT = "domain_exit"
TERM_WINDOW_EXIT = "window_exit"
TERM_UNDERFLOW = "step_underflow"
TERM_COMPLETE = "complete"


# ---------------------------------------------------------------------------
# Path kinds

@dataclass
class GeodesicPath:
    """Dense geodesic solution x(t), v(t) with constant g-speed."""

    metric: object
    sol: object
    t_end: float
    speed: float
    termination: str
    label: str = "geodesic"
    closest_approach: tuple | None = None  # (t, distance to excluded set)

    @property
    def t0(self):
        return 0.0

    @property
    def t1(self):
        return self.t_end

    def point(self, t):
        n = self.metric.dim
        return self.sol(t)[:n]

    def velocity(self, t):
        n = self.metric.dim
        return self.sol(t)[n:]

    @property
    def start(self):
        return self.point(0.0)

    @property
    def end(self):
        return self.point(self.t_end)

    @property
    def end_velocity(self):
        return self.velocity(self.t_end)

    @property
    def arclength(self):
        return self.speed * self.t_end

    def arclength_at(self, t):
        return self.speed * t

    def pieces(self):
        yield (0.0, self.t_end, self.point, self.velocity)

    def samples(self, m=33):
        ts = np.linspace(0.0, self.t_end, m)
        xs = np.array([self.point(t) for t in ts])
        vs = np.array([self.velocity(t) for t in ts])
        return ts, xs, vs


@dataclass
class PolylinePath:
    """Chart polyline, unit parameter per segment, constant chart velocity."""

    vertices: np.ndarray
    termination: str = TERM_COMPLETE
    label: str = "polyline"

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        if self.vertices.ndim != 2 or len(self.vertices) < 2:
            raise ValidationError("polyline needs at least two vertices")

    def check_inside(self, domain, samples_per_segment=9):
        for a, b in zip(self.vertices[:-1], self.vertices[1:]):
            for s in np.linspace(0.0, 1.0, samples_per_segment):
                if not domain.contains((1 - s) * a + s * b):
                    raise DomainError("polyline leaves the domain")
        return self

    @property
    def t0(self):
        return 0.0

    @property
    def t1(self):
        return float(len(self.vertices) - 1)

    @property
    def start(self):
        return self.vertices[0]

    @property
    def end(self):
        return self.vertices[-1]

    def point(self, t):
        i = min(int(np.floor(t)), len(self.vertices) - 2)
        s = t - i
        return (1 - s) * self.vertices[i] + s * self.vertices[i + 1]

    def pieces(self):
        for i in range(len(self.vertices) - 1):
            a = self.vertices[i]
            d = self.vertices[i + 1] - a

            def pfn(t, a=a, d=d, i=i):
                return a + (t - i) * d

            def vfn(t, d=d):
                return d

            yield (float(i), float(i + 1), pfn, vfn)


@dataclass
class CurvePath:
    """Analytic curve given by point/velocity callables on [t0, t1]."""

    point_fn: object
    velocity_fn: object
    t0: float
    t1: float
    termination: str = TERM_COMPLETE
    label: str = "curve"

    @property
    def start(self):
        return np.asarray(self.point_fn(self.t0), dtype=float)

    @property
    def end(self):
        return np.asarray(self.point_fn(self.t1), dtype=float)

    def point(self, t):
        return np.asarray(self.point_fn(t), dtype=float)

    def pieces(self):
        yield (self.t0, self.t1, lambda t: np.asarray(self.point_fn(t), dtype=float),
               lambda t: np.asarray(self.velocity_fn(t), dtype=float))


@dataclass
class CompositePath:
    """Concatenation of paths whose endpoints match."""

    parts: tuple
    label: str = "composite"

    def __post_init__(self):
        for a, b in zip(self.parts[:-1], self.parts[1:]):
            if not np.allclose(a.end, b.start, atol=1e-8):
                raise ValidationError("composite path endpoints do not chain")

    termination: str = TERM_COMPLETE

    @property
    def start(self):
        return self.parts[0].start

    @property
    def end(self):
        return self.parts[-1].end

    def pieces(self):
        for p in self.parts:
            yield from p.pieces()


# ---------------------------------------------------------------------------
# Geodesic integration

def _geodesic_rhs(g):
    n = g.dim

    def rhs(t, y):
        x = y[:n]
        v = y[n:]
        gamma = christoffel(g, x, check=False)
        dv = -np.einsum("kij,i,j->k", gamma, v, v)
        return np.concatenate([v, dv])

    return rhs


def _events_for(domain):
    """Terminal boundary/window events plus non-terminal closest-approach
    events per excluded ball.

    Excluded balls are tiny (puncture thickenings), so the signed-distance
    event alone can be stepped over; the approach events mark every local
    minimum of the distance so exits can be recovered by root refinement.
    """
    events = []
    kinds = []
    n = domain.dim
    if domain.excluded:
        def excl(t, y, domain=domain):
            return domain.excluded_distance(y[: domain.dim])

        excl.terminal = True
        excl.direction = -1
        events.append(excl)
        kinds.append(TERM_DOMAIN_EXIT)
        for ball in domain.excluded:
            idx = list(ball.axes) if ball.axes is not None else list(range(n))
            center = np.asarray(ball.center, dtype=float)

            def approach(t, y, idx=idx, center=center):
                dx = y[:n][idx] - center
                dv = y[n:][idx]
                return float(dx @ dv)

            approach.terminal = False
            approach.direction = 1
            events.append(approach)
            kinds.append("approach")
    if domain.box is not None:
        def window(t, y, domain=domain):
            return domain.window_distance(y[: domain.dim])

        window.terminal = True
        window.direction = -1
        events.append(window)
        kinds.append(TERM_WINDOW_EXIT)
    return events, kinds


def _refine_exit(domain, dense, t_lo, t_hi, n):
    """Root of the excluded-set distance along the dense solution."""
    from scipy.optimize import brentq

    def h(t):
        return domain.excluded_distance(dense(t)[:n])

    return float(brentq(h, t_lo, t_hi, xtol=1e-14, rtol=1e-15))


def _integrate(g, x, v, t_end, rtol=1e-11, atol=1e-12, method="DOP853", speed=None):
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    n = g.dim
    domain = g.domain
    events, kinds = _events_for(domain)
    sol = solve_ivp(
        _geodesic_rhs(g),
        (0.0, t_end),
        np.concatenate([x, v]),
        method=method,
        dense_output=True,
        rtol=rtol,
        atol=atol,
        events=events or None,
    )
    if sol.status == 0:
        termination, t_stop = TERM_HORIZON, float(t_end)
    elif sol.status == 1:
        hits = [(te[0], k) for k, te in zip(kinds, sol.t_events) if k != "approach" and len(te)]
        t_stop, termination = min(hits)
        t_stop = float(t_stop)
    else:
        termination, t_stop = TERM_UNDERFLOW, float(sol.t[-1])

    # recover exits the terminal event stepped over, and the closest approach
    closest = None
    for k, te in zip(kinds, sol.t_events or []):
        if k != "approach":
            continue
        prev = 0.0
        for tm in te:
            if tm > t_stop:
                break
            d = domain.excluded_distance(sol.sol(tm)[:n])
            if closest is None or d < closest[1]:
                closest = (float(tm), float(d))
            if d <= 0.0:
                t_exit = _refine_exit(domain, sol.sol, prev, float(tm), n)
                if t_exit < t_stop:
                    t_stop, termination = t_exit, TERM_DOMAIN_EXIT
                break
            prev = float(tm)
    return GeodesicPath(
        g, sol.sol, t_stop, speed if speed is not None else 1.0, termination, closest_approach=closest
    )


def integrate_geodesic(g, x, v, horizon, rtol=1e-11, atol=1e-12, method="DOP853"):
    """Solve the geodesic equation from (x, v) up to the given g-arclength.

    The parameter is affine with constant g-speed |v|_g, so arclength is
    recovered as speed * t.  Termination cause is recorded on the path:
    horizon reached, metric-boundary exit (excluded set), chart-window exit,
    or step underflow.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if not g.domain.contains(x):
        raise DomainError(f"geodesic start {x.tolist()} outside domain")
    if not np.any(v):
        raise ValidationError("geodesic needs a nonzero initial velocity")
    speed = g.norm(x, v)
    return _integrate(g, x, v, horizon / speed, rtol=rtol, atol=atol, method=method, speed=speed)


# ---------------------------------------------------------------------------
# Parallel transport

def parallel_transport(g, path, v, rtol=1e-11, atol=1e-12, method="DOP853"):
    """Transport a vector (or matrix of column vectors) along a path.

    Raises DomainError when the path was terminated before its declared end
    by a boundary or window exit.
    """
    if getattr(path, "termination", TERM_COMPLETE) in (TERM_DOMAIN_EXIT, TERM_WINDOW_EXIT, TERM_UNDERFLOW):
        raise DomainError(f"cannot transport along a path terminated by {path.termination}")
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    state = v.reshape(g.dim, -1) if not single else v.reshape(g.dim, 1)
    n = g.dim

    for (ta, tb, pfn, vfn) in path.pieces():
        def rhs(t, u):
            x = pfn(t)
            xd = vfn(t)
            gamma = christoffel(g, x, check=False)
            du = -np.einsum("kij,i,jm->km", gamma, xd, u.reshape(n, -1))
            return du.ravel()

        sol = solve_ivp(rhs, (ta, tb), state.ravel(), method=method, rtol=rtol, atol=atol)
        if sol.status != 0:
            raise NumericalError("transport integration failed")
        state = sol.y[:, -1].reshape(n, -1)
    return state[:, 0] if single else state


def transport_matrix(g, path, **kw):
    """Coordinate matrix of parallel transport along the path."""
    return parallel_transport(g, path, np.eye(g.dim), **kw)


def transport_profile(g, path, v, ts, **kw):
    """Transported vector sampled at parameter values ts along a single-piece path."""
    pieces = list(path.pieces())
    if len(pieces) != 1:
        raise ValidationError("transport_profile needs a single smooth piece")
    ta, tb, pfn, vfn = pieces[0]
    n = g.dim

    def rhs(t, u):
        gamma = christoffel(g, pfn(t), check=False)
        return -np.einsum("kij,i,j->k", gamma, vfn(t), u)

    sol = solve_ivp(rhs, (ta, tb), np.asarray(v, dtype=float), t_eval=ts, dense_output=True,
                    method=kw.get("method", "DOP853"), rtol=kw.get("rtol", 1e-11), atol=kw.get("atol", 1e-12))
    if sol.status != 0:
        raise NumericalError("transport integration failed")
    return sol.y.T, sol.sol


def transport_along_segment(g, a, b, v, **kw):
    """Transport along the chart-straight segment from a to b."""
    path = PolylinePath(np.array([a, b])).check_inside(g.domain)
    return parallel_transport(g, path, v, **kw)


# ---------------------------------------------------------------------------
# Two-point shooting

def geodesic_between(g, a, b, tol=1e-10, max_iter=25):
    """Geodesic from a to b by Newton shooting on the initial velocity.

    Reliable for chart-small separations (holonomy loops, local distance
    probes); raises NumericalError when the iteration stalls.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = g.dim
    v = b - a
    path = None
    for _ in range(max_iter):
        path = _integrate(g, a, v, 1.0)
        if path.termination != TERM_HORIZON:
            raise DomainError("two-point shooting left the domain")
        err = path.end - b
        if np.linalg.norm(err) <= tol:
            speed = g.norm(a, v)
            return GeodesicPath(g, path.sol, path.t_end, speed, TERM_HORIZON, label="shooting")
        jac = np.zeros((n, n))
        h = max(1e-7, 1e-7 * np.linalg.norm(v))
        for k in range(n):
            dv = np.zeros(n)
            dv[k] = h
            probe = _integrate(g, a, v + dv, 1.0)
            jac[:, k] = (probe.end - b - err) / h
        try:
            step = np.linalg.solve(jac, err)
        except np.linalg.LinAlgError:
            raise NumericalError("two-point shooting Jacobian singular") from None
        v = v - step
    raise NumericalError(f"two-point shooting did not converge (residual {np.linalg.norm(err):.2e})")


# ---------------------------------------------------------------------------
# Berwald transport check

@dataclass(frozen=True)
class PathSampleSpec:
    """How to draw random transport paths for field-preservation checks."""

    n_paths: int = 50
    vectors_per_path: int = 4
    scale: float = 0.6
    seed: int = 0
    kinds: tuple = ("geodesic", "polyline")
    sample_lo: tuple = None
    sample_hi: tuple = None

    def anchor_sampler(self, domain, rng):
        if self.sample_lo is None or self.sample_hi is None:
            if domain.box is None:
                raise ValidationError("sampling needs sample_lo/sample_hi or a bounded window")
            lo = np.array([b[0] for b in domain.box])
            hi = np.array([b[1] for b in domain.box])
            mid, half = 0.5 * (lo + hi), 0.4 * (hi - lo)
            lo, hi = mid - half, mid + half
        else:
            lo = np.asarray(self.sample_lo, dtype=float)
            hi = np.asarray(self.sample_hi, dtype=float)

        def draw():
            for _ in range(200):
                x = rng.uniform(lo, hi)
                if domain.contains(x):
                    return x
            raise NumericalError("could not sample a domain point")

        return draw


@dataclass(frozen=True)
class BerwaldReport:
    max_defect: float
    tol: float
    n_paths: int
    n_skipped: int
    witness: dict | None

    @property
    def no_valid_paths(self):
        return self.n_paths == 0

    @property
    def passed(self):
        return (not self.no_valid_paths) and self.max_defect <= self.tol

    def to_dict(self):
        return {
            "max_defect": self.max_defect,
            "tol": self.tol,
            "n_paths": self.n_paths,
            "n_skipped": self.n_skipped,
            "passed": self.passed,
            "no_valid_paths": self.no_valid_paths,
            "witness": self.witness,
        }


def _sample_path(g, kind, anchor, scale, rng):
    n = g.dim
    if kind == "geodesic":
        u = rng.standard_normal(n)
        u /= g.norm(anchor, u)
        length = scale * rng.uniform(0.4, 1.0)
        path = integrate_geodesic(g, anchor, u, length)
        if path.termination != TERM_HORIZON:
            return None
        return path
    # chart polyline with 3 random legs
    pts = [np.asarray(anchor, dtype=float)]
    for _ in range(3):
        step = rng.standard_normal(n)
        step *= scale / (3 * np.linalg.norm(step))
        pts.append(pts[-1] + step)
    try:
        return PolylinePath(np.array(pts)).check_inside(g.domain)
    except DomainError:
        return None


def berwald_check(field, g, spec, tol=1e-6, rtol=1e-11, atol=1e-12, method="DOP853"):
    """Max relative transport defect |F(end, P v) - F(start, v)| / F(start, v)
    over random geodesic and polyline paths; PASS iff <= tol.

    All sampled paths exiting the domain is reported (no_valid_paths), not an
    error.
    """
    rng = np.random.default_rng(spec.seed)
    draw = spec.anchor_sampler(g.domain, rng)
    worst = 0.0
    witness = None
    used = skipped = 0
    for i in range(spec.n_paths):
        kind = spec.kinds[i % len(spec.kinds)]
        path = _sample_path(g, kind, draw(), spec.scale, rng)
        if path is None:
            skipped += 1
            continue
        used += 1
        pmat = transport_matrix(g, path, rtol=rtol, atol=atol, method=method)
        x0, x1 = np.asarray(path.start), np.asarray(path.end)
        for _ in range(spec.vectors_per_path):
            v = rng.standard_normal(g.dim)
            base = field.eval(x0, v)
            defect = abs(field.eval(x1, pmat @ v) - base) / base
            if defect > worst:
                worst = defect
                witness = {
                    "kind": kind,
                    "start": x0.tolist(),
                    "end": x1.tolist(),
                    "vector": v.tolist(),
                    "defect": defect,
                }
    return BerwaldReport(worst, tol, used, skipped, witness)


# ---------------------------------------------------------------------------
# Holonomy sampling

@dataclass(frozen=True)
class LoopSpec:
    rect_scales: tuple = (1e-2, 3e-2, 1e-1)
    n_triangles: int = 20
    triangle_scale: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class LoopTransport:
    descriptor: str
    matrix: np.ndarray  # expressed in the g-orthonormal frame at the base point
    ortho_defect: float


@dataclass(frozen=True)
class HolonomySample:
    base_point: np.ndarray
    frame: np.ndarray  # columns g-orthonormal
    loops: tuple

    @property
    def dim(self):
        return self.frame.shape[0]


def holonomy_generators(g, x, spec=LoopSpec()):
    """Transport around coordinate rectangles (three scales) and random
    small geodesic triangles; matrices are expressed in a g-orthonormal frame."""
    x = np.asarray(x, dtype=float)
    if not g.domain.contains(x):
        raise DomainError(f"base point {x.tolist()} outside domain")
    n = g.dim
    frame = g.orthonormal_frame(x)
    frame_inv = np.linalg.inv(frame)
    base_scale = g.domain.boundary_distance(x)
    if not np.isfinite(base_scale):
        base_scale = 1.0
    rng = np.random.default_rng(spec.seed)
    loops = []

    def add(descriptor, path):
        pmat = transport_matrix(g, path)
        m = frame_inv @ pmat @ frame
        defect = float(np.max(np.abs(m.T @ m - np.eye(n))))
        loops.append(LoopTransport(descriptor, m, defect))

    for i in range(n):
        for j in range(i + 1, n):
            for frac in spec.rect_scales:
                s = frac * base_scale
                ei = np.zeros(n)
                ej = np.zeros(n)
                ei[i] = s
                ej[j] = s
                verts = np.array([x, x + ei, x + ei + ej, x + ej, x])
                path = PolylinePath(verts, label=f"rect[{i},{j}]@{frac}").check_inside(g.domain)
                add(f"rect[{i},{j}]@{frac:g}", path)

    for k in range(spec.n_triangles):
        s = spec.triangle_scale * base_scale * rng.uniform(0.5, 1.0)
        u1 = rng.standard_normal(n)
        u2 = rng.standard_normal(n)
        p1 = x + s * u1 / np.linalg.norm(u1)
        p2 = x + s * u2 / np.linalg.norm(u2)
        if not (g.domain.contains(p1) and g.domain.contains(p2)):
            continue
        try:
            legs = (
                geodesic_between(g, x, p1),
                geodesic_between(g, p1, p2),
                geodesic_between(g, p2, x),
            )
        except (NumericalError, DomainError):
            continue
        add(f"tri[{k}]", CompositePath(legs, label=f"tri[{k}]"))

    return HolonomySample(x, frame, tuple(loops))


# ---------------------------------------------------------------------------
# Invariant decomposition

@dataclass(frozen=True)
class Subspace:
    dim: int
    basis_frame: np.ndarray  # (n, dim), orthonormal in the frame inner product
    basis: np.ndarray  # chart coordinates, g-orthonormal columns
    trivial: bool
    eigenvalue: float | None = None


@dataclass(frozen=True)
class HolonomyDecomposition:
    base_point: np.ndarray
    frame: np.ndarray
    subspaces: tuple  # index 0 is the trivial-action factor (possibly dim 0)
    warning: str | None = None

    @property
    def dims(self):
        return tuple(s.dim for s in self.subspaces)

    def nontrivial(self):
        return self.subspaces[1:]


def _symmetric_basis(m):
    out = []
    for p in range(m):
        for q in range(p, m):
            s = np.zeros((m, m))
            if p == q:
                s[p, p] = 1.0
            else:
                s[p, q] = s[q, p] = 1.0 / np.sqrt(2.0)
            out.append(s)
    return out


def invariant_decomposition(hs, tol=1e-6, seed=0):
    """Split the tangent space into the trivial factor and the invariant
    blocks of the sampled transports.

    The trivial factor is the joint null space of the stacked (G - I); on the
    complement a generic symmetric element of the commutant is
    eigen-decomposed, grouping eigenvalues whose relative gap is below tol
    (ties merge, never split).
    """
    if not hs.loops:
        raise ValidationError("need at least one holonomy matrix")
    n = hs.dim
    mats = [l.matrix for l in hs.loops]
    stack = np.vstack([m - np.eye(n) for m in mats])
    _, svals, vt = np.linalg.svd(stack)
    svals = np.concatenate([svals, np.zeros(max(0, n - len(svals)))])
    null_mask = svals <= tol
    v0_frame = vt[null_mask].T if np.any(null_mask) else np.zeros((n, 0))
    w_frame = vt[~null_mask].T if np.any(~null_mask) else np.zeros((n, 0))

    subspaces = [
        Subspace(v0_frame.shape[1], v0_frame, hs.frame @ v0_frame, trivial=True)
    ]
    warning = None
    m = w_frame.shape[1]
    if m > 0:
        projected = [w_frame.T @ g @ w_frame for g in mats]
        sym_basis = _symmetric_basis(m)
        # columns: coefficients over sym_basis; rows: all commutator entries
        a = np.zeros((len(projected) * m * m, len(sym_basis)))
        for bi, s in enumerate(sym_basis):
            col = []
            for gm in projected:
                col.append((s @ gm - gm @ s).ravel())
            a[:, bi] = np.concatenate(col)
        _, sv, vt2 = np.linalg.svd(a, full_matrices=True)
        sv = np.concatenate([sv, np.zeros(max(0, len(sym_basis) - len(sv)))])
        rank_tol = max(1e-10, 1e-9 * (sv[0] if len(sv) else 1.0))
        null = vt2[sv <= rank_tol]
        if len(null) == 0:
            raise NumericalError("commutant solve found no symmetric commuting element")
        rng = np.random.default_rng(seed)
        coeffs = rng.standard_normal(len(null))
        xstar = np.zeros((m, m))
        for c, vec in zip(coeffs, null):
            for w, s in zip(vec, sym_basis):
                xstar += c * w * s
        xstar = 0.5 * (xstar + xstar.T)
        evals, evecs = np.linalg.eigh(xstar)
        scale = max(1.0, float(evals[-1] - evals[0]))
        groups = [[0]]
        for i in range(1, m):
            gap = evals[i] - evals[i - 1]
            if gap > tol * scale:
                groups.append([i])
            else:
                groups[-1].append(i)
        # flag gaps that merged but were close to the threshold
        for i in range(1, m):
            gap = evals[i] - evals[i - 1]
            if tol * scale < gap <= 3 * tol * scale:
                warning = "eigenvalue gap near tolerance; decomposition kept coarse"
        blocks = []
        for grp in groups:
            basis_w = evecs[:, grp]
            basis_frame = w_frame @ basis_w
            blocks.append(
                Subspace(
                    len(grp),
                    basis_frame,
                    hs.frame @ basis_frame,
                    trivial=False,
                    eigenvalue=float(np.mean(evals[grp])),
                )
            )
        blocks.sort(key=lambda s: (s.dim, s.eigenvalue))
        subspaces.extend(blocks)

    # contract checks: block diagonality of every sampled matrix
    basis_all = np.hstack([s.basis_frame for s in subspaces])
    max_leak = 0.0
    for gmat in mats:
        w = basis_all.T @ gmat @ basis_all
        off = w.copy()
        col = 0
        for s in subspaces:
            off[col : col + s.dim, col : col + s.dim] = 0.0
            col += s.dim
        max_leak = max(max_leak, float(np.max(np.abs(off))) if off.size else 0.0)
    if max_leak > 50 * tol:
        warning = (warning + "; " if warning else "") + f"block leakage {max_leak:.2e} above tolerance"
    return HolonomyDecomposition(hs.base_point, hs.frame, tuple(subspaces), warning)


def decomposition_principal_angles(d1, d2):
    """Largest principal angle between matching subspaces of two decompositions."""
    if d1.dims != d2.dims:
        return np.pi / 2
    worst = 0.0
    for s1, s2 in zip(d1.subspaces, d2.subspaces):
        if s1.dim == 0:
            continue
        ang = subspace_angles(s1.basis_frame, s2.basis_frame)
        worst = max(worst, float(np.max(ang)))
    return worst


# ---------------------------------------------------------------------------
# Canonical-connection consistency

@dataclass(frozen=True)
class CanonicalCheckReport:
    berwald: BerwaldReport
    metric_defect: float
    metric_tol: float

    @property
    def passed(self):
        return self.berwald.passed and self.metric_defect <= self.metric_tol

    def to_dict(self):
        return {
            "berwald": self.berwald.to_dict(),
            "metric_defect": self.metric_defect,
            "metric_tol": self.metric_tol,
            "passed": self.passed,
        }


def canonical_connection_check(field, integ, spec, tol=1e-5, metric_tol=None):
    """Two-way consistency of the field with the Levi-Civita connection of its
    own Binet-Legendre field: transport preserves the field (Berwald check)
    and preserves the Binet-Legendre metric itself (compatibility)."""
    from .binet_legendre import bl_field

    gbl = bl_field(field, integ)
    rep = berwald_check(field, gbl, spec, tol=tol)
    metric_tol = metric_tol if metric_tol is not None else tol

    rng = np.random.default_rng(spec.seed + 1)
    draw = spec.anchor_sampler(gbl.domain, rng)
    worst = 0.0
    n_used = 0
    for i in range(max(8, spec.n_paths // 4)):
        kind = spec.kinds[i % len(spec.kinds)]
        path = _sample_path(gbl, kind, draw(), spec.scale, rng)
        if path is None:
            continue
        n_used += 1
        pmat = transport_matrix(gbl, path)
        g0 = gbl.matrix(np.asarray(path.start))
        g1 = gbl.matrix(np.asarray(path.end))
        defect = float(np.max(np.abs(pmat.T @ g1 @ pmat - g0)) / np.max(np.abs(g0)))
        worst = max(worst, defect)
    if n_used == 0:
        raise NumericalError("no valid paths for the compatibility check")
    return CanonicalCheckReport(rep, worst, metric_tol)
