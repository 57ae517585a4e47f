"""Penalty functions on the slope coefficients and their threshold primitives.

The intercept (coefficient 0) is left unpenalized unless
``PenaltySpec.penalize_intercept`` is set.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("ridge", "lasso", "elastic-net", "bridge", "scad", "mcp", "sign")
# kinds the coordinate-descent solver handles natively or through LLA
SOLVER_KINDS = ("ridge", "lasso", "elastic-net", "scad", "mcp")

_DEFAULT_SHAPE = {"ridge": 0.0, "lasso": 1.0, "scad": 3.7, "mcp": 3.0}


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty kind with strength ``lam`` and mixing/shape parameter ``alpha``.

    ``alpha`` is the elastic-net mixing weight in [0, 1], the bridge exponent
    (> 0), or the SCAD (> 2) / MCP (> 1) shape. It is ignored by the sign
    penalty. Ridge and lasso are stored as elastic nets with alpha 0 and 1.
    """

    kind: str = "lasso"
    lam: float = 0.0
    alpha: float | None = None
    penalize_intercept: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}; expected one of {KINDS}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lam must be a finite nonnegative number")
        a = self.alpha
        if a is None:
            if self.kind == "elastic-net":
                a = 0.5
            elif self.kind == "bridge":
                raise ValueError("bridge penalty needs an exponent alpha > 0")
            else:
                a = _DEFAULT_SHAPE.get(self.kind, 1.0)
            object.__setattr__(self, "alpha", float(a))
        if self.kind == "ridge" and a != 0.0:
            raise ValueError("ridge penalty has alpha = 0")
        if self.kind == "lasso" and a != 1.0:
            raise ValueError("lasso penalty has alpha = 1")
        if self.kind == "elastic-net" and not 0.0 <= a <= 1.0:
            raise ValueError("elastic-net alpha must lie in [0, 1]")
        if self.kind == "bridge" and not a > 0:
            raise ValueError("bridge alpha must be positive")
        if self.kind == "scad" and not a > 2:
            raise ValueError("SCAD shape alpha must exceed 2")
        if self.kind == "mcp" and not a > 1:
            raise ValueError("MCP shape alpha must exceed 1")

    @property
    def is_elastic_net(self) -> bool:
        return self.kind in ("ridge", "lasso", "elastic-net")

    @property
    def l1_ratio(self) -> float:
        """Share of the penalty that is l1 for elastic-net kinds (1 for SCAD/MCP)."""
        if self.is_elastic_net:
            return float(self.alpha)
        return 1.0

    def with_lam(self, lam: float) -> "PenaltySpec":
        return PenaltySpec(self.kind, float(lam), self.alpha, self.penalize_intercept)

    def coordinate_weights(self, n_coef: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-coordinate (l1, l2) strengths of the elastic-net surrogate.

        For SCAD and MCP these are the lasso weights used to start the local
        linear approximation.
        """
        if self.kind not in SOLVER_KINDS:
            raise ValueError(
                f"penalty {self.kind!r} is value-only; the IRWLS solver supports {SOLVER_KINDS}"
            )
        a = self.l1_ratio
        l1 = np.full(n_coef, self.lam * a)
        l2 = np.full(n_coef, self.lam * (1.0 - a))
        if not self.penalize_intercept:
            l1[0] = 0.0
            l2[0] = 0.0
        return l1, l2


def _slopes(spec: PenaltySpec, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if not np.all(np.isfinite(beta)):
        raise ValueError("coefficients must be finite")
    return beta if spec.penalize_intercept else beta[1:]


def scad_value(b, lam, a):
    b = np.abs(b)
    return np.where(
        b <= lam,
        lam * b,
        np.where(
            b <= a * lam,
            (2 * a * lam * b - b**2 - lam**2) / (2 * (a - 1)),
            lam**2 * (a + 1) / 2,
        ),
    )


def mcp_value(b, lam, a):
    b = np.abs(b)
    return np.where(b <= a * lam, lam * b - b**2 / (2 * a), a * lam**2 / 2)


def scad_derivative(b, lam, a):
    b = np.abs(b)
    return np.where(b <= lam, lam, np.maximum(a * lam - b, 0.0) / (a - 1))


def mcp_derivative(b, lam, a):
    return np.maximum(lam - np.abs(b) / a, 0.0)


def penalty_value(spec: PenaltySpec, beta) -> float:
    """P_{lam, alpha}(beta) summed over the penalized coefficients."""
    b = _slopes(spec, beta)
    lam, a = spec.lam, spec.alpha
    if lam == 0.0 or b.size == 0:
        return 0.0
    if spec.is_elastic_net:
        return float(lam * np.sum(0.5 * (1.0 - a) * b**2 + a * np.abs(b)))
    if spec.kind == "bridge":
        return float(lam * np.sum(np.abs(b) ** a))
    if spec.kind == "scad":
        return float(np.sum(scad_value(b, lam, a)))
    if spec.kind == "mcp":
        return float(np.sum(mcp_value(b, lam, a)))
    # sign penalty: l1/l2 ratio, zero at the origin
    nrm = np.linalg.norm(b)
    if nrm == 0.0:
        return 0.0
    return float(lam * np.sum(np.abs(b)) / nrm)


def lla_weights(spec: PenaltySpec, beta) -> np.ndarray:
    """Per-coordinate l1 weights P'(|beta_j|) of the local linear approximation."""
    beta = np.asarray(beta, dtype=float)
    if spec.kind == "scad":
        w = scad_derivative(beta, spec.lam, spec.alpha)
    elif spec.kind == "mcp":
        w = mcp_derivative(beta, spec.lam, spec.alpha)
    else:
        raise ValueError("local linear approximation is only defined for SCAD and MCP")
    w = np.asarray(w, dtype=float)
    if not spec.penalize_intercept:
        w[0] = 0.0
    return w


def soft_threshold(z, gamma):
    """sign(z) * max(|z| - gamma, 0)."""
    if np.any(np.asarray(gamma) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(z) * np.maximum(np.abs(z) - gamma, 0.0)


def property_flags(spec: PenaltySpec, a: float = 1.0) -> dict:
    """Which regularity conditions P1-P4 the penalty satisfies.

    ``a`` is the bound of the rho-function (1 for normalized rho). Conditions
    that depend on the true parameter are reported under ``notes``.
    """
    lam, alpha = spec.lam, spec.alpha
    notes = []
    kind = "elastic-net" if spec.is_elastic_net else spec.kind
    if kind == "elastic-net":
        flags = dict(P1=True, P2=False, P3=lam > 0, P3prime=lam > 0, P4=True)
    elif kind == "bridge":
        flags = dict(P1=alpha >= 1, P2=alpha >= 1, P3=lam > 0, P3prime=lam > 0, P4=True)
    elif kind == "scad":
        flags = dict(P1=True, P2=True, P3=False, P3prime=lam**3 > 2 * a / (alpha + 1), P4=False)
        notes.append("P3' requires lam^3 > 2a/(alpha+1)")
    elif kind == "mcp":
        flags = dict(P1=True, P2=True, P3=False, P3prime=lam**3 > 2 * a / alpha, P4=False)
        notes.append("P3' requires lam^3 > 2a/alpha")
    else:
        flags = dict(P1=True, P2=False, P3=False, P3prime=False, P4=False)
        notes.append("P1 holds only when the true slope vector is nonzero")
    flags["notes"] = notes
    return flags
