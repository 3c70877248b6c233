"""Minkowski norms, Finsler fields, and the explicit field constructions:
product-norm fields over product metrics, holonomy-invariant fields,
conformal scalings, and the punctured-space homothety (Hopf) scene.

Fields carry an optional ``structure`` descriptor recording how they were
built; downstream consumers (the Binet-Legendre reduction) exploit it for
exact fast paths while the generic numeric path remains available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import fabs, fsqrt, primal
from .domains import DomainSpec, ExcludedBall, full_space
from .errors import DomainError, ValidationError
from .geometry import ConformalFactor, MetricField, ProductStructure

# ---------------------------------------------------------------------------
# Minkowski norms

@dataclass(frozen=True)
class MinkowskiNorm:
    """Positively homogeneous, subadditive, definite function on R^dim.

    ``fn`` takes a list of components (floats, numpy arrays for batches, or
    Duals) and returns the norm value.  ``reversible`` is the declared flag;
    :func:`validate_minkowski` verifies it by sampling.
    """

    dim: int
    fn: object
    reversible: bool | None = None
    label: str = "norm"

    def eval(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValidationError(f"{self.label}: expected {self.dim}-vector")
        return float(primal(self.fn(list(v))))

    def eval_batch(self, vs):
        vs = np.asarray(vs, dtype=float)
        out = self.fn([vs[:, j] for j in range(self.dim)])
        return np.broadcast_to(np.asarray(out, dtype=float), (vs.shape[0],)).copy()

    # -- constructors -------------------------------------------------------
    @staticmethod
    def from_expr(expr, dim, funcs=None, reversible=None, label="norm"):
        from . import dsl

        names = [f"v{i + 1}" for i in range(dim)]
        funcs = funcs or {}

        def fn(comps):
            env = dict(zip(names, comps))
            env["v"] = tuple(comps)
            return dsl.evaluate(expr, env, funcs)

        return MinkowskiNorm(dim, fn, reversible=reversible, label=label)

    @staticmethod
    def euclidean(dim):
        def fn(comps):
            acc = None
            for c in comps:
                acc = c * c if acc is None else acc + c * c
            return fsqrt(acc)

        return MinkowskiNorm(dim, fn, reversible=True, label="euclidean")

    @staticmethod
    def lp(p, dim):
        if p < 1:
            raise ValidationError("lp norm requires p >= 1")

        def fn(comps):
            acc = None
            for c in comps:
                t = fabs(c) ** p
                acc = t if acc is None else acc + t
            return acc ** (1.0 / p)

        return MinkowskiNorm(dim, fn, reversible=True, label=f"l{p}")

    @staticmethod
    def linf(dim):
        def fn(comps):
            mags = [fabs(c) for c in comps]
            if any(isinstance(m, np.ndarray) for m in mags):
                out = mags[0]
                for m in mags[1:]:
                    out = np.maximum(out, m)
                return out
            out = mags[0]
            for m in mags[1:]:
                if primal(m) > primal(out):
                    out = m
            return out

        return MinkowskiNorm(dim, fn, reversible=True, label="linf")

    @staticmethod
    def randers(dim, drift):
        """Euclidean norm plus a linear drift; Minkowski iff |drift| < 1."""
        drift = np.asarray(drift, dtype=float)
        if drift.shape != (dim,):
            raise ValidationError("drift must match dimension")
        if np.linalg.norm(drift) >= 1.0:
            raise ValidationError("randers drift must have length < 1")
        eucl = MinkowskiNorm.euclidean(dim)

        def fn(comps):
            lin = None
            for c, d in zip(comps, drift):
                t = c * d
                lin = t if lin is None else lin + t
            return eucl.fn(comps) + lin

        return MinkowskiNorm(dim, fn, reversible=False, label="randers")


# ---------------------------------------------------------------------------
# Norm axiom validation (sampling based)

@dataclass(frozen=True)
class AxiomCheck:
    axiom: str
    max_violation: float
    argmax_sample: list
    passed: bool

    def to_dict(self):
        return {
            "axiom": self.axiom,
            "max_violation": self.max_violation,
            "argmax_sample": self.argmax_sample,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class NormValidationReport:
    checks: tuple
    samples: int
    seed: int

    @property
    def passed(self):
        return all(c.passed for c in self.checks if c.axiom != "reversibility-informational")

    def check(self, axiom):
        for c in self.checks:
            if c.axiom == axiom:
                return c
        raise KeyError(axiom)

    def to_dict(self):
        return {
            "samples": self.samples,
            "seed": self.seed,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
        }


_DEFINITENESS_FLOOR = 1e-6


def validate_minkowski(norm, samples=1000, seed=0, tol=1e-9):
    """Report worst-case violations of the norm axioms over random samples.

    A failing norm yields a failing report, never an exception.
    """
    if samples < 1:
        raise ValidationError("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    n = norm.dim
    v = rng.standard_normal((samples, n))
    u = rng.standard_normal((samples, n))
    lam = rng.uniform(0.0, 2.0, size=samples)

    fv = norm.eval_batch(v)
    fu = norm.eval_batch(u)

    # positive homogeneity F(lam v) = lam F(v)
    hom = np.abs(norm.eval_batch(lam[:, None] * v) - lam * fv)
    i = int(np.argmax(hom))
    checks = [
        AxiomCheck("homogeneity", float(hom[i]), [float(lam[i])] + v[i].tolist(), bool(hom[i] <= tol))
    ]

    # subadditivity F(u+v) <= F(u) + F(v)
    sub = norm.eval_batch(u + v) - (fu + fv)
    sub = np.maximum(sub, 0.0)
    i = int(np.argmax(sub))
    checks.append(
        AxiomCheck("subadditivity", float(sub[i]), u[i].tolist() + v[i].tolist(), bool(sub[i] <= tol))
    )

    # definiteness: F must stay clearly positive on the unit sphere
    unit = v / np.linalg.norm(v, axis=1, keepdims=True)
    funit = norm.eval_batch(unit)
    defic = np.maximum(_DEFINITENESS_FLOOR - funit, 0.0)
    i = int(np.argmax(defic))
    checks.append(
        AxiomCheck("definiteness", float(defic[i]), unit[i].tolist(), bool(defic[i] <= tol))
    )

    # reversibility F(v) = F(-v); binding only when declared reversible
    rev = np.abs(norm.eval_batch(-v) - fv)
    i = int(np.argmax(rev))
    axiom = "reversibility" if norm.reversible else "reversibility-informational"
    checks.append(AxiomCheck(axiom, float(rev[i]), v[i].tolist(), bool(rev[i] <= tol)))

    return NormValidationReport(tuple(checks), samples, seed)


def reversible_in_coordinate(norm, coord, samples=200, seed=0, tol=1e-9):
    """Sampled check that the norm is even in one coordinate."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((samples, norm.dim))
    flipped = w.copy()
    flipped[:, coord] *= -1.0
    return float(np.max(np.abs(norm.eval_batch(w) - norm.eval_batch(flipped)))) <= tol


def symmetric_under_swap(norm, i, j, samples=200, seed=0, tol=1e-9):
    """Sampled check that the norm is invariant under swapping coordinates i, j."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((samples, norm.dim))
    swapped = w.copy()
    swapped[:, [i, j]] = swapped[:, [j, i]]
    return float(np.max(np.abs(norm.eval_batch(w) - norm.eval_batch(swapped)))) <= tol


# ---------------------------------------------------------------------------
# Finsler fields

@dataclass(frozen=True)
class MinkowskiStructure:
    norm: MinkowskiNorm


@dataclass(frozen=True)
class RiemannianStructure:
    metric: MetricField


@dataclass(frozen=True)
class ProductNormStructure:
    product: ProductStructure
    norm: MinkowskiNorm


@dataclass(frozen=True)
class ConformalScaleStructure:
    base: object  # FinslerField
    lam: ConformalFactor  # holds the multiplier value, not an exponent


@dataclass(frozen=True)
class HolonomyInvariantStructure:
    metric: MetricField
    base_point: tuple
    norm: MinkowskiNorm
    subspace_dims: tuple


@dataclass(frozen=True)
class FinslerField:
    """(point, tangent vector) -> nonnegative real, per-fiber Minkowski."""

    dim: int
    fn: object  # fn(x: ndarray, comps: list) -> scalar-or-array
    domain: DomainSpec
    structure: object = None
    label: str = "finsler"

    def eval(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if not self.domain.contains(x):
            raise DomainError(f"point {x.tolist()} outside domain")
        return float(primal(self.fn(x, list(v))))

    def eval_batch(self, x, vs):
        """Evaluate on a batch of tangent vectors at one point."""
        x = np.asarray(x, dtype=float)
        vs = np.asarray(vs, dtype=float)
        if not self.domain.contains(x):
            raise DomainError(f"point {x.tolist()} outside domain")
        out = self.fn(x, [vs[:, j] for j in range(self.dim)])
        return np.broadcast_to(np.asarray(out, dtype=float), (vs.shape[0],)).copy()

    def fiber_norm(self, x):
        x = np.asarray(x, dtype=float)
        return MinkowskiNorm(self.dim, lambda comps: self.fn(x, comps), label=f"{self.label}@fiber")


def minkowski_field(norm, domain=None, label=None):
    """x-independent field from a single Minkowski norm."""
    dom = domain if domain is not None else full_space(norm.dim)

    def fn(x, comps):
        return norm.fn(comps)

    return FinslerField(
        norm.dim, fn, dom, structure=MinkowskiStructure(norm), label=label or f"minkowski[{norm.label}]"
    )


def riemannian_field(g, label=None):
    """F(x, v) = sqrt(v^T g(x) v)."""

    def fn(x, comps):
        gm = g.matrix(x)
        acc = None
        n = g.dim
        for i in range(n):
            for j in range(n):
                t = comps[i] * comps[j] * gm[i, j]
                acc = t if acc is None else acc + t
        return fsqrt(acc)

    return FinslerField(g.dim, fn, g.domain, structure=RiemannianStructure(g), label=label or "riemannian")


def product_finsler(ps, norm, seed=0):
    """Field F(x, v) = N(|v_1|_{g_1}, ..., |v_k|_{g_k}) over a product metric.

    N must be reversible in every coordinate whose block metric is non-flat;
    flat blocks are exempt.
    """
    k = len(ps.blocks)
    if norm.dim != k:
        raise ValidationError(
            f"norm dimension {norm.dim} does not match {k} product blocks"
        )
    for i, flat in enumerate(ps.flat_flags):
        if not flat and not reversible_in_coordinate(norm, i, seed=seed):
            raise ValidationError(
                f"norm must be reversible in coordinate {i + 1}: block {i + 1} is not flat"
            )

    def fn(x, comps):
        block_norms = []
        for bi, (block, factor) in enumerate(zip(ps.blocks, ps.factors)):
            gm = factor.matrix(ps.project(x, bi))
            acc = None
            for a, ia in enumerate(block):
                for c, ic in enumerate(block):
                    t = comps[ia] * comps[ic] * gm[a, c]
                    acc = t if acc is None else acc + t
            block_norms.append(fsqrt(acc))
        return norm.fn(block_norms)

    return FinslerField(
        ps.dim, fn, ps.domain, structure=ProductNormStructure(ps, norm), label=f"product[{norm.label}]"
    )


def conformal_scale(field, lam):
    """Pointwise scaling (x, v) -> lam(x) F(x, v) with lam positive."""
    if not isinstance(lam, ConformalFactor):
        raise ValidationError("lam must be a scalar field (ConformalFactor holding the multiplier)")

    def fn(x, comps):
        s = lam.value(x)
        if not s > 0:
            raise DomainError(f"conformal multiplier nonpositive at {np.asarray(x).tolist()}")
        return field.fn(x, comps) * s

    return FinslerField(
        field.dim,
        fn,
        field.domain,
        structure=ConformalScaleStructure(field, lam),
        label=f"scaled[{field.label}]",
    )


def holonomy_invariant_finsler(g, decomposition, norm, seed=0):
    """Extend a holonomy-invariant fiber norm over the chart.

    The invariant subspaces of ``decomposition`` are carried from the base
    point to x by parallel transport along the chart-straight ray, v is split
    by g-orthogonal projection onto the transported subspaces, and
    F(x, v) = N(|v_0|, ..., |v_m|).  Requires N symmetric under swapping the
    coordinates of equal-dimensional non-trivial subspaces.
    """
    from .transport import transport_along_segment

    subs = [s for s in decomposition.subspaces if s.dim > 0]
    m = len(subs)
    if norm.dim != m:
        raise ValidationError(
            f"norm dimension {norm.dim} != number of nonempty invariant subspaces {m}"
        )
    dims = [s.dim for s in subs]
    for i in range(m):
        for j in range(i + 1, m):
            if subs[i].trivial or subs[j].trivial:
                continue
            if dims[i] == dims[j] and not symmetric_under_swap(norm, i, j, seed=seed):
                raise ValidationError(
                    f"norm must be symmetric under swapping coordinates {i + 1} and {j + 1}"
                )

    base = np.asarray(decomposition.base_point, dtype=float)
    bases = [np.asarray(s.basis, dtype=float) for s in subs]  # chart-coordinate columns

    def transported_bases(x):
        x = np.asarray(x, dtype=float)
        if np.allclose(x, base):
            return bases
        stacked = np.hstack(bases)
        moved = transport_along_segment(g, base, x, stacked)
        out = []
        col = 0
        for d in dims:
            out.append(moved[:, col : col + d])
            col += d
        return out

    def fn(x, comps):
        x = np.asarray(x, dtype=float)
        gm = g.matrix(x)
        ebs = transported_bases(x)
        block_norms = []
        for eb in ebs:
            # g-orthogonal projection coefficients: solve (E^T g E) c = E^T g v
            gram = eb.T @ gm @ eb
            gev_rows = eb.T @ gm  # (d, n)
            rhs = [None] * eb.shape[1]
            for r in range(eb.shape[1]):
                acc = None
                for j in range(g.dim):
                    t = comps[j] * gev_rows[r, j]
                    acc = t if acc is None else acc + t
                rhs[r] = acc
            gram_inv = np.linalg.inv(gram)
            coef = [None] * eb.shape[1]
            for r in range(eb.shape[1]):
                acc = None
                for c in range(eb.shape[1]):
                    t = rhs[c] * gram_inv[r, c]
                    acc = t if acc is None else acc + t
                coef[r] = acc
            # |proj v|_g^2 = c^T (E^T g E) c
            acc = None
            for r in range(eb.shape[1]):
                for c in range(eb.shape[1]):
                    t = coef[r] * coef[c] * gram[r, c]
                    acc = t if acc is None else acc + t
            block_norms.append(fsqrt(acc) if acc is not None else 0.0)
        return norm.fn(block_norms)

    return FinslerField(
        g.dim,
        fn,
        g.domain,
        structure=HolonomyInvariantStructure(g, tuple(base.tolist()), norm, tuple(dims)),
        label=f"holonomy-invariant[{norm.label}]",
    )


# ---------------------------------------------------------------------------
# Deck maps and the punctured homothety scene

@dataclass(frozen=True)
class DeckMap:
    """Chart diffeomorphism with its differential and declared homothety
    coefficient with respect to a reference metric."""

    apply: object
    differential: object
    coefficient: float
    label: str = "deck"

    @staticmethod
    def scaling(q, dim):
        qi = float(q)
        return DeckMap(
            apply=lambda x: qi * np.asarray(x, dtype=float),
            differential=lambda x: qi * np.eye(dim),
            coefficient=qi,
            label=f"scale[{qi}]",
        )

    @staticmethod
    def affine(matrix, translation, coefficient):
        matrix = np.asarray(matrix, dtype=float)
        translation = np.asarray(translation, dtype=float)
        return DeckMap(
            apply=lambda x: matrix @ np.asarray(x, dtype=float) + translation,
            differential=lambda x: matrix,
            coefficient=float(coefficient),
            label="affine",
        )


@dataclass(frozen=True)
class DeckCheckReport:
    fitted_c: float
    max_residual: float
    samples: int

    @property
    def is_isometry(self):
        return abs(self.fitted_c - 1.0) <= 1e-9 and self.max_residual <= 1e-9

    def to_dict(self):
        return {
            "fitted_c": self.fitted_c,
            "max_residual": self.max_residual,
            "samples": self.samples,
            "is_isometry": self.is_isometry,
        }


def deck_isometry_check(field, deck, points, n_vectors=8, seed=0):
    """Fit the best constant c in F(phi(x), Dphi v) = c F(x, v) over samples
    and report the residual.  Isometry iff c = 1 with residual ~ 0."""
    rng = np.random.default_rng(seed)
    lhs, rhs = [], []
    for x in points:
        x = np.asarray(x, dtype=float)
        if not field.domain.contains(x):
            raise DomainError(f"sample point {x.tolist()} outside domain")
        y = deck.apply(x)
        if not field.domain.contains(y):
            raise DomainError(f"deck image {np.asarray(y).tolist()} outside domain")
        dmat = deck.differential(x)
        vs = rng.standard_normal((n_vectors, field.dim))
        for v in vs:
            lhs.append(field.eval(y, dmat @ v))
            rhs.append(field.eval(x, v))
    lhs = np.asarray(lhs)
    rhs = np.asarray(rhs)
    c = float(lhs @ rhs / (rhs @ rhs))
    return DeckCheckReport(c, float(np.max(np.abs(lhs - c * rhs))), len(lhs))


def deck_metric_pullback_check(metric, deck, points):
    """Fit k in (deck^* g) = k^2 g over sample points; report max residual
    relative to |g|."""
    nums, dens, resid = [], [], 0.0
    pulls, gs = [], []
    for x in points:
        x = np.asarray(x, dtype=float)
        y = deck.apply(x)
        d = deck.differential(x)
        pull = d.T @ metric.matrix(y) @ d
        gm = metric.matrix(x)
        pulls.append(pull)
        gs.append(gm)
        nums.append(np.sum(pull * gm))
        dens.append(np.sum(gm * gm))
    k2 = float(np.sum(nums) / np.sum(dens))
    for pull, gm in zip(pulls, gs):
        resid = max(resid, float(np.max(np.abs(pull - k2 * gm)) / np.max(np.abs(gm))))
    return DeckCheckReport(float(np.sqrt(max(k2, 0.0))), resid, len(points))


def hopf_scene(base_norm, q, eps0=1e-8):
    """The punctured-space scene: field (1/|x|) F0(v) on R^n minus a ball,
    the scaling deck map x -> q x, and the flat reference metric.

    The deck map is a homothety of coefficient q for the flat metric and an
    exact isometry of the scaled field.
    """
    if not (q > 0) or q == 1:
        raise ValidationError("homothety ratio must be positive and != 1")
    n = base_norm.dim
    domain = DomainSpec(n, excluded=(ExcludedBall((0.0,) * n, eps0),))
    flat = MetricField.constant(np.eye(n), domain=domain, label="flat")
    base_field = minkowski_field(base_norm, domain=domain)

    def lam_fn(xs):
        acc = None
        for c in xs:
            acc = c * c if acc is None else acc + c * c
        return 1.0 / fsqrt(acc)

    lam = ConformalFactor(lam_fn, n, mode="dual")
    field = conformal_scale(base_field, lam)
    deck = DeckMap.scaling(q, n)
    return field, deck, flat
