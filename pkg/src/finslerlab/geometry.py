"""Chart-based Riemannian primitives.

A ``MetricField`` is a pure function from chart coordinates to a symmetric
positive-definite matrix, with a domain predicate.  Differentiation is
forward-mode dual numbers for fields built from expressions (mode ``dual``,
exact to machine precision) or central finite differences for opaque
callables (mode ``fd``).

Index conventions, fixed once:

    Gamma[k, i, j]   = Christoffel symbol, symmetric in (i, j)
    R[l, i, j, k]    = d_i Gamma[l,j,k] - d_j Gamma[l,i,k]
                       + Gamma[l,i,m] Gamma[m,j,k] - Gamma[l,j,m] Gamma[m,i,k]
                       (antisymmetric in the derivative pair i, j)
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Dual, fexp, primal, value_and_grad, value_grad_hess
from .domains import DomainSpec, full_space
from .errors import DomainError, NumericalError, ValidationError


def _check_point(domain, x):
    x = np.asarray(x, dtype=float)
    if not domain.contains(x):
        raise DomainError(f"point {x.tolist()} outside chart domain")
    return x


@dataclass(frozen=True)
class MetricField:
    """Point -> SPD matrix, evaluated through a generic scalar function.

    fn(coords) must accept a list of scalar-like values (floats or Duals in
    dual mode) and return an n x n nested list / array of scalar-likes.
    """

    dim: int
    fn: object
    domain: DomainSpec
    mode: str = "dual"  # "dual" | "fd"
    fd_step: float = 1e-5
    label: str = "metric"

    # -- evaluation ---------------------------------------------------------
    def matrix(self, x, check_domain=True):
        x = np.asarray(x, dtype=float)
        if check_domain:
            _check_point(self.domain, x)
        g = np.array([[float(primal(v)) for v in row] for row in self.fn(list(x))])
        if g.shape != (self.dim, self.dim):
            raise NumericalError(f"{self.label}: fn returned shape {g.shape}")
        if not np.allclose(g, g.T, rtol=1e-10, atol=1e-12):
            raise NumericalError(f"{self.label}: matrix not symmetric at {x.tolist()}")
        g = 0.5 * (g + g.T)
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            raise DomainError(
                f"{self.label}: matrix not positive definite at {x.tolist()}"
            ) from None
        return g

    def contains(self, x):
        return self.domain.contains(x)

    def norm(self, x, v):
        g = self.matrix(x)
        v = np.asarray(v, dtype=float)
        return float(np.sqrt(v @ g @ v))

    def orthonormal_frame(self, x):
        """Columns form a g-orthonormal basis: E^T g E = I."""
        g = self.matrix(x)
        chol = np.linalg.cholesky(g)
        return np.linalg.inv(chol.T)

    # -- derivatives --------------------------------------------------------
    def derivatives(self, x, check=True):
        """(g, dg) with dg[k, i, j] = d_k g_ij."""
        x = _check_point(self.domain, x) if check else np.asarray(x, dtype=float)
        n = self.dim
        if self.mode == "dual":
            g = np.zeros((n, n))
            dg = np.zeros((n, n, n))
            rows = self.fn([Dual(float(c), _unit(n, k)) for k, c in enumerate(x)])
            for i in range(n):
                for j in range(n):
                    v = rows[i][j]
                    if isinstance(v, Dual):
                        g[i, j] = float(primal(v))
                        dg[:, i, j] = _grad_of(v, n)
                    else:
                        g[i, j] = float(v)
            return _sym2(g), _sym3(dg)
        h = self.fd_step
        g = self.matrix(x)
        dg = np.zeros((n, n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            dg[k] = (self._raw(x + e) - self._raw(x - e)) / (2 * h)
        return g, _sym3(dg)

    def derivatives2(self, x):
        """(g, dg, d2g) with d2g[k, l, i, j] = d_k d_l g_ij."""
        x = _check_point(self.domain, x)
        n = self.dim
        if self.mode == "dual":
            g = np.zeros((n, n))
            dg = np.zeros((n, n, n))
            d2g = np.zeros((n, n, n, n))
            for i in range(n):
                for j in range(n):
                    val, grad, hess = value_grad_hess(lambda xs, i=i, j=j: self.fn(xs)[i][j], x)
                    g[i, j] = val
                    dg[:, i, j] = grad
                    d2g[:, :, i, j] = hess
            return _sym2(g), _sym3(dg), d2g
        # central stencils on the raw matrix function
        h = max(self.fd_step, 1e-5)
        h2 = max(self.fd_step, 1e-4)
        g, dg = self.derivatives(x)
        d2g = np.zeros((n, n, n, n))
        for k in range(n):
            ek = np.zeros(n)
            ek[k] = h2
            d2g[k, k] = (self._raw(x + ek) - 2 * self._raw(x) + self._raw(x - ek)) / h2**2
            for l in range(k + 1, n):
                el = np.zeros(n)
                el[l] = h2
                mixed = (
                    self._raw(x + ek + el)
                    - self._raw(x + ek - el)
                    - self._raw(x - ek + el)
                    + self._raw(x - ek - el)
                ) / (4 * h2**2)
                d2g[k, l] = mixed
                d2g[l, k] = mixed
        return g, dg, d2g

    def _raw(self, x):
        return np.array([[float(primal(v)) for v in row] for row in self.fn(list(x))])

    # -- constructors -------------------------------------------------------
    @staticmethod
    def from_exprs(entries, domain, funcs=None, label="metric"):
        """Build from an n x n grid of dsl ASTs over symbols x1..xn."""
        from . import dsl

        n = len(entries)
        names = [f"x{i + 1}" for i in range(n)]
        funcs = funcs or {}

        def fn(xs):
            env = dict(zip(names, xs))
            env["x"] = tuple(xs)
            return [[dsl.evaluate(entries[i][j], env, funcs) for j in range(n)] for i in range(n)]

        return MetricField(n, fn, domain, mode="dual", label=label)

    @staticmethod
    def constant(matrix, domain=None, label="metric"):
        matrix = np.asarray(matrix, dtype=float)
        n = matrix.shape[0]
        dom = domain if domain is not None else full_space(n)

        def fn(xs):
            return [[matrix[i, j] for j in range(n)] for i in range(n)]

        return MetricField(n, fn, dom, mode="dual", label=label)

    @staticmethod
    def from_callable(f, dim, domain=None, fd_step=1e-5, label="metric"):
        dom = domain if domain is not None else full_space(dim)

        def fn(xs):
            m = np.asarray(f(np.asarray([float(primal(c)) for c in xs])), dtype=float)
            return [[m[i, j] for j in range(dim)] for i in range(dim)]

        return MetricField(dim, fn, dom, mode="fd", fd_step=fd_step, label=label)


def _unit(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


def _grad_of(v, n):
    b = primal(v.b) if isinstance(v.b, Dual) else v.b
    if isinstance(b, np.ndarray):
        return np.asarray(b, dtype=float)
    return np.full(n, float(b))


def _sym2(g):
    return 0.5 * (g + g.T)


def _sym3(dg):
    return 0.5 * (dg + np.swapaxes(dg, 1, 2))


# ---------------------------------------------------------------------------
# Conformal factors

@dataclass(frozen=True)
class ConformalFactor:
    """Scalar exponent phi with gradient available through the active mode."""

    fn: object  # generic scalar function of coords
    dim: int
    mode: str = "dual"
    fd_step: float = 1e-5

    def value(self, x):
        return float(primal(self.fn([float(c) for c in x])))

    def value_and_grad(self, x):
        x = np.asarray(x, dtype=float)
        if self.mode == "dual":
            return value_and_grad(self.fn, list(x))
        h = self.fd_step
        grad = np.zeros(self.dim)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = h
            grad[k] = (self.value(x + e) - self.value(x - e)) / (2 * h)
        return self.value(x), grad

    @staticmethod
    def from_expr(expr, dim, funcs=None, params=None):
        from . import dsl

        names = [f"x{i + 1}" for i in range(dim)]
        funcs = funcs or {}
        params = params or {}

        def fn(xs):
            env = dict(zip(names, xs))
            env["x"] = tuple(xs)
            env.update(params)
            return dsl.evaluate(expr, env, funcs)

        return ConformalFactor(fn, dim, mode="dual")

    @staticmethod
    def constant(c, dim):
        return ConformalFactor(lambda xs: c, dim, mode="dual")


def conformal_metric(g, phi):
    """The metric e^{2 phi} g, staying in dual mode when both parts allow."""

    def fn(xs):
        f = fexp(phi.fn(xs) * 2.0)
        rows = g.fn(xs)
        return [[f * rows[i][j] for j in range(g.dim)] for i in range(g.dim)]

    mode = "dual" if (g.mode == "dual" and phi.mode == "dual") else "fd"
    return MetricField(g.dim, fn, g.domain, mode=mode, fd_step=g.fd_step, label=f"e^2phi*{g.label}")


def scale_metric(g, c):
    """Constant conformal scaling c * g (c > 0)."""
    if c <= 0:
        raise ValidationError("metric scale must be positive")

    def fn(xs):
        rows = g.fn(xs)
        return [[c * rows[i][j] for j in range(g.dim)] for i in range(g.dim)]

    return MetricField(g.dim, fn, g.domain, mode=g.mode, fd_step=g.fd_step, label=f"{c}*{g.label}")


# ---------------------------------------------------------------------------
# Product structures

@dataclass(frozen=True)
class ProductStructure:
    """Partition of chart coordinates into blocks with per-block factor metrics.

    blocks[i] holds the global coordinate indices of block i; factors[i] is the
    factor metric in its own local coordinates.
    """

    blocks: tuple
    factors: tuple
    flat_flags: tuple
    domain: DomainSpec

    def __post_init__(self):
        seen = [i for b in self.blocks for i in b]
        if sorted(seen) != list(range(len(seen))):
            raise ValidationError("product blocks must partition the coordinate indices")
        for b, f in zip(self.blocks, self.factors):
            if len(b) != f.dim:
                raise ValidationError("block size does not match factor dimension")

    @property
    def dim(self):
        return sum(len(b) for b in self.blocks)

    def project(self, x, i):
        x = np.asarray(x, dtype=float)
        return x[list(self.blocks[i])]

    def block_vector(self, v, i):
        """Zero-padded copy of v keeping only the block-i components."""
        v = np.asarray(v, dtype=float)
        out = np.zeros_like(v)
        idx = list(self.blocks[i])
        out[idx] = v[idx]
        return out

    def assembled(self):
        """Block-diagonal metric on the product chart."""
        blocks, factors, n = self.blocks, self.factors, self.dim

        def fn(xs):
            rows = [[0.0] * n for _ in range(n)]
            for b, f in zip(blocks, factors):
                sub = f.fn([xs[i] for i in b])
                for a, ia in enumerate(b):
                    for c, ic in enumerate(b):
                        rows[ia][ic] = sub[a][c]
            return rows

        mode = "dual" if all(f.mode == "dual" for f in factors) else "fd"
        return MetricField(n, fn, self.domain, mode=mode, label="product")


# ---------------------------------------------------------------------------
# Core tensor operations

def metric_inverse(g_mat):
    try:
        return np.linalg.inv(g_mat)
    except np.linalg.LinAlgError:
        raise NumericalError("metric matrix not invertible") from None


def christoffel(g, x, check=True):
    """Levi-Civita symbols Gamma[k, i, j] at x."""
    gm, dg = g.derivatives(x, check=check)
    ginv = metric_inverse(gm)
    # A[l, i, j] = d_i g_lj + d_j g_li - d_l g_ij
    a = np.einsum("ilj->lij", dg) + np.einsum("jli->lij", dg) - dg
    gamma = 0.5 * np.einsum("kl,lij->kij", ginv, a)
    return 0.5 * (gamma + np.swapaxes(gamma, 1, 2))


def christoffel_with_derivative(g, x):
    """(Gamma, dGamma) with dGamma[m, k, i, j] = d_m Gamma[k, i, j]."""
    gm, dg, d2g = g.derivatives2(x)
    ginv = metric_inverse(gm)
    a = np.einsum("ilj->lij", dg) + np.einsum("jli->lij", dg) - dg
    gamma = 0.5 * np.einsum("kl,lij->kij", ginv, a)
    dginv = -np.einsum("ka,mab,bl->mkl", ginv, dg, ginv)
    da = (
        np.einsum("milj->mlij", d2g)
        + np.einsum("mjli->mlij", d2g)
        - np.einsum("mlij->mlij", d2g)
    )
    dgamma = 0.5 * np.einsum("mkl,lij->mkij", dginv, a) + 0.5 * np.einsum(
        "kl,mlij->mkij", ginv, da
    )
    return gamma, dgamma


def conformal_difference(g, phi, x):
    """Difference of Levi-Civita connections of e^{2 phi} g and g.

    Returns D[k, i, j] = delta^k_i d_j phi + delta^k_j d_i phi - g_ij grad^k phi.
    """
    x = _check_point(g.domain, x)
    n = g.dim
    gm = g.matrix(x)
    _, dphi = phi.value_and_grad(x)
    gradk = metric_inverse(gm) @ dphi
    eye = np.eye(n)
    out = (
        np.einsum("ki,j->kij", eye, dphi)
        + np.einsum("kj,i->kij", eye, dphi)
        - np.einsum("ij,k->kij", gm, gradk)
    )
    return out


def riemann(g, x):
    """Curvature array R[l, i, j, k]; antisymmetric in (i, j); zero when flat."""
    gamma, dgamma = christoffel_with_derivative(g, x)
    r = (
        np.einsum("iljk->lijk", dgamma)
        - np.einsum("jlik->lijk", dgamma)
        + np.einsum("lim,mjk->lijk", gamma, gamma)
        - np.einsum("ljm,mik->lijk", gamma, gamma)
    )
    return r


def curvature_norm_sq(g, x):
    """Full metric self-contraction of the curvature tensor; scales as
    curvature_norm_sq(c*g) = c^-2 curvature_norm_sq(g) for constant c > 0."""
    if g.dim < 2:
        return 0.0
    gm = g.matrix(x)
    ginv = metric_inverse(gm)
    r = riemann(g, x)
    r_low = np.einsum("la,aijk->lijk", gm, r)
    r_up = np.einsum("la,ib,jc,kd,abcd->lijk", ginv, ginv, ginv, ginv, r_low)
    val = float(np.einsum("lijk,lijk->", r_low, r_up))
    return max(val, 0.0)


def sectional_curvature(g, x, u, w):
    """Sectional curvature of the plane span(u, w) at x (test oracle helper)."""
    gm = g.matrix(x)
    r = riemann(g, x)
    ruw = np.einsum("lijk,i,j,k->l", r, u, w, w)
    num = float(ruw @ gm @ u)
    den = float((u @ gm @ u) * (w @ gm @ w) - (u @ gm @ w) ** 2)
    return num / den


def leaf_curvature_norms(ps, x):
    """Squared curvature norms of the factor metrics at the projected points."""
    x = np.asarray(x, dtype=float)
    if not ps.domain.contains(x):
        raise DomainError(f"point {x.tolist()} outside product domain")
    out = []
    for i, f in enumerate(ps.factors):
        xi = ps.project(x, i)
        if not f.domain.contains(xi):
            raise DomainError(f"projected point {xi.tolist()} outside factor {i} domain")
        out.append(curvature_norm_sq(f, xi))
    return tuple(out)
