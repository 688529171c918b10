"""Parametric surfaces ``(u1, u2) -> R^3`` with exact first and second partials."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .expr import (
    EvaluationError,
    ExpressionError,
    Jet2,
    Node,
    constant_value,
    evaluate,
    evaluate_jet,
    parse_expression,
    to_text,
)

DOMAIN_TOL = 1e-12


class DomainError(ValueError):
    """A point lies outside the declared parameter rectangle."""


class SurfaceJet(NamedTuple):
    """Position and partials, each of shape ``(..., 3)``."""

    p: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    p11: np.ndarray
    p12: np.ndarray
    p22: np.ndarray


@dataclass(frozen=True)
class SurfaceDefinition:
    exprs: tuple[Node, Node, Node]
    domain: tuple[tuple[float, float], tuple[float, float]]
    name: str = "custom"

    def __post_init__(self):
        (a, b), (c, d) = self.domain
        if not (a < b and c < d):
            raise ValueError(f"empty domain {self.domain}")

    @property
    def u1_range(self) -> tuple[float, float]:
        return self.domain[0]

    @property
    def u2_range(self) -> tuple[float, float]:
        return self.domain[1]

    def check_domain(self, u1, u2) -> None:
        for u, (lo, hi), label in ((u1, self.domain[0], "u1"), (u2, self.domain[1], "u2")):
            u = np.asarray(u, dtype=float)
            tol = DOMAIN_TOL * max(1.0, abs(lo), abs(hi))
            if np.any(u < lo - tol) or np.any(u > hi + tol) or not np.all(np.isfinite(u)):
                raise DomainError(f"{label} outside [{lo}, {hi}]")

    def evaluate(self, u1, u2) -> np.ndarray:
        self.check_domain(u1, u2)
        p = np.stack([evaluate(e, u1, u2) for e in self.exprs], axis=-1)
        if not np.all(np.isfinite(p)):
            raise EvaluationError(f"non-finite surface point on {self.name}")
        return p

    def jet2(self, u1, u2) -> SurfaceJet:
        self.check_domain(u1, u2)
        u1, u2 = np.broadcast_arrays(np.asarray(u1, dtype=float), np.asarray(u2, dtype=float))
        x1 = Jet2.variable(u1, 1)
        x2 = Jet2.variable(u2, 2)
        comps = [evaluate_jet(e, x1, x2) for e in self.exprs]
        shape = u1.shape

        def stack(attr):
            return np.stack([np.broadcast_to(getattr(j, attr), shape) for j in comps], axis=-1)

        jet = SurfaceJet(*(stack(a) for a in ("v", "d1", "d2", "d11", "d12", "d22")))
        for arr in jet:
            if not np.all(np.isfinite(arr)):
                raise EvaluationError(f"non-finite derivative on {self.name}")
        return jet

    def to_text(self) -> str:
        (a, b), (c, d) = self.domain
        body = " ; ".join(to_text(e) for e in self.exprs)
        return f"{body} ; [{a!r},{b!r}]x[{c!r},{d!r}]"


def evaluate_jet2(surface: SurfaceDefinition, u1, u2) -> SurfaceJet:
    return surface.jet2(u1, u2)


_DOMAIN_RE = re.compile(r"^\s*\[(?P<a>[^,\]]+),(?P<b>[^\]]+)\]\s*x\s*\[(?P<c>[^,\]]+),(?P<d>[^\]]+)\]\s*$")


def parse_surface(text: str, name: str = "custom") -> SurfaceDefinition:
    """Parse ``"sx ; sy ; sz ; [a,b]x[c,d]"`` (``;`` or newlines separate parts)."""
    parts: list[tuple[str, int]] = []
    start = 0
    for m in re.finditer(r"[;\n]", text):
        parts.append((text[start:m.start()], start))
        start = m.end()
    parts.append((text[start:], start))
    parts = [(s, off) for s, off in parts if s.strip()]
    if len(parts) != 4:
        raise ExpressionError(f"expected three coordinate expressions and a domain, got {len(parts)} parts", 0)

    def boff(i):
        return len(text[:i].encode("utf-8"))

    exprs = tuple(parse_expression(s, boff(off)) for s, off in parts[:3])
    dom_text, dom_off = parts[3]
    m = _DOMAIN_RE.match(dom_text)
    if m is None:
        raise ExpressionError("domain must look like [a,b]x[c,d]", boff(dom_off))
    bounds = []
    for key in "abcd":
        node = parse_expression(m.group(key), boff(dom_off + m.start(key)))
        try:
            bounds.append(constant_value(node))
        except ExpressionError as exc:
            raise ExpressionError("domain bounds must be constants", boff(dom_off + m.start(key))) from exc
    return SurfaceDefinition(exprs, ((bounds[0], bounds[1]), (bounds[2], bounds[3])), name)


def surface_from_exprs(exprs, domain, name: str = "custom") -> SurfaceDefinition:
    if len(exprs) != 3:
        raise ExpressionError("need exactly three coordinate expressions")
    nodes = tuple(parse_expression(e) for e in exprs)
    (a, b), (c, d) = domain
    return SurfaceDefinition(nodes, ((float(a), float(b)), (float(c), float(d))), name)


# name -> (expressions, domain, defaults); expressions are formatted with params
_BUILTINS = {
    "plane": (("u1", "u2", "0"), "[-1,1]x[-1,1]", {}),
    "paraboloid": (("u1", "u2", "u1^2+u2^2"), "[-1,1]x[-1,1]", {}),
    "hyperbolic_paraboloid": (("u1", "u2", "u1^2-u2^2"), "[-1,1]x[-1,1]", {}),
    "catenoid": (("cosh(u2)*cos(u1)", "cosh(u2)*sin(u1)", "u2"), "[-pi,pi]x[-pi/2,pi/2]", {}),
    "helicoid": (("sinh(u2)*cos(u1)", "sinh(u2)*sin(u1)", "u1"), "[-pi,pi]x[-pi/2,pi/2]", {}),
    # u2 is the colatitude
    "sphere_patch": (
        ("{radius}*sin(u2)*cos(u1)", "{radius}*sin(u2)*sin(u1)", "{radius}*cos(u2)"),
        "[-pi,pi]x[pi/6,5*pi/6]",
        {"radius": 1.0},
    ),
}

BUILTIN_NAMES = tuple(_BUILTINS)


def builtin_surface(name: str, params: dict | None = None) -> SurfaceDefinition:
    if name not in _BUILTINS:
        raise KeyError(f"unknown builtin surface {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    exprs, domain, defaults = _BUILTINS[name]
    values = dict(defaults)
    for key, value in (params or {}).items():
        if key not in defaults:
            raise ValueError(f"surface {name!r} has no parameter {key!r}")
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ValueError(f"parameter {key!r} must be a finite number")
        values[key] = float(value)
    if "radius" in values and values["radius"] <= 0:
        raise ValueError("radius must be positive")
    text = " ; ".join(e.format(**{k: repr(v) for k, v in values.items()}) for e in exprs)
    return parse_surface(f"{text} ; {domain}", name=name)


def surface_from_config(spec: dict) -> SurfaceDefinition:
    """Build from ``{"builtin": ..., "params": ...}`` or ``{"exprs": [...], "domain": [...]}``."""
    if "builtin" in spec:
        return builtin_surface(spec["builtin"], spec.get("params", {}))
    return surface_from_exprs(spec["exprs"], spec["domain"])
