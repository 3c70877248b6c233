"""Shared scene builders for the test suite."""

import math

import numpy as np

from finslerlab import dsl
from finslerlab.domains import DomainSpec, ExcludedBall, full_space
from finslerlab.geometry import MetricField, ProductStructure


def exprs(grid):
    return [[dsl.parse(e) for e in row] for row in grid]


def flat(dim=2):
    return MetricField.constant(np.eye(dim))


def line_metric():
    return MetricField.constant(np.eye(1))


def sphere_chart(radius=1.0, polar_margin=0.1):
    dom = DomainSpec(2, box=((polar_margin, math.pi - polar_margin), (-7.0, 7.0)))
    r2 = radius * radius
    return MetricField.from_exprs(
        exprs([[f"{r2}", "0"], ["0", f"{r2} * sin(x1)^2"]]), dom, label="sphere"
    )


def three_sphere_chart(polar_margin=0.2):
    dom = DomainSpec(
        3,
        box=((polar_margin, math.pi - polar_margin), (polar_margin, math.pi - polar_margin), (-7.0, 7.0)),
    )
    return MetricField.from_exprs(
        exprs(
            [
                ["1", "0", "0"],
                ["0", "sin(x1)^2", "0"],
                ["0", "0", "sin(x1)^2 * sin(x2)^2"],
            ]
        ),
        dom,
        label="three-sphere",
    )


def punctured_plane(eps0=1e-8):
    dom = DomainSpec(2, excluded=(ExcludedBall((0.0, 0.0), eps0),))
    return MetricField.constant(np.eye(2), domain=dom, label="punctured-plane")


def punctured_conformal(eps0=1e-8):
    """Non-flat conformally-flat punctured plane: g = exp(-(r^2)) * Id."""
    dom = DomainSpec(2, excluded=(ExcludedBall((0.0, 0.0), eps0),))
    e = "exp(-(x1^2 + x2^2))"
    return MetricField.from_exprs(exprs([[e, "0"], ["0", e]]), dom, label="punctured-conformal")


def sphere_times_line(radius=1.0):
    sph = sphere_chart(radius)
    lin = line_metric()
    dom = sph.domain.product(lin.domain)
    return ProductStructure(((0, 1), (2,)), (sph, lin), (False, True), dom)


def line_times_punctured():
    lin = line_metric()
    punct = punctured_plane()
    dom = lin.domain.product(punct.domain)
    return ProductStructure(((0,), (1, 2)), (lin, punct), (True, True), dom)


def line_times_punctured_conformal():
    lin = line_metric()
    punct = punctured_conformal()
    dom = lin.domain.product(punct.domain)
    return ProductStructure(((0,), (1, 2)), (lin, punct), (True, False), dom)
