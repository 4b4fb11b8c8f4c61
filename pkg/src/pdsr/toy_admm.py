"""Consensus ADMM on analytically tractable objective pairs.

This is the validation harness for the alternating trainer: the same
scaled-form dual algebra, exercised on small smooth objectives where the
constrained optimum is known in closed form. Objectives are scalar
functions of vectors; the coupling is always ``x = z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, DivergenceError

__all__ = ["QuadraticObjective", "SmoothObjective", "ToyAdmmResult", "solve_toy_admm"]

_DIVERGE_LIMIT = 1e6


class QuadraticObjective:
    """f(x) = weight * ||x - center||^2, with a closed-form proximal map."""

    def __init__(self, weight, center):
        self.weight = float(weight)
        if not self.weight > 0:
            raise ContractError(f"quadratic weight must be positive, got {weight}")
        self.center = np.atleast_1d(np.asarray(center, dtype=np.float64)).copy()
        if not np.all(np.isfinite(self.center)):
            raise ContractError("quadratic center must be finite")

    def value(self, x):
        d = np.asarray(x, dtype=np.float64) - self.center
        return float(self.weight * np.sum(d * d))

    def gradient(self, x):
        return 2.0 * self.weight * (np.asarray(x, dtype=np.float64) - self.center)

    def prox(self, t, rho):
        """argmin_x f(x) + (rho/2)||x - t||^2 (exact)."""
        t = np.asarray(t, dtype=np.float64)
        return (2.0 * self.weight * self.center + rho * t) / (2.0 * self.weight + rho)

    def argmin(self):
        return self.center.copy()


class SmoothObjective:
    """A smooth objective given value/gradient callables.

    The proximal map is evaluated by inner gradient descent with step size
    1/(lipschitz + rho), so ``lipschitz`` must upper-bound the curvature of
    the raw objective for the inner loop to contract.
    """

    def __init__(self, value_fn, grad_fn, argmin_hint, lipschitz, prox_steps=500):
        self._value = value_fn
        self._grad = grad_fn
        self.argmin_hint = np.atleast_1d(np.asarray(argmin_hint, dtype=np.float64)).copy()
        self.lipschitz = float(lipschitz)
        if not self.lipschitz > 0:
            raise ContractError(f"lipschitz bound must be positive, got {lipschitz}")
        self.prox_steps = int(prox_steps)
        if self.prox_steps < 1:
            raise ContractError(f"prox_steps must be >= 1, got {prox_steps}")

    def value(self, x):
        return float(self._value(np.asarray(x, dtype=np.float64)))

    def gradient(self, x):
        return np.asarray(self._grad(np.asarray(x, dtype=np.float64)), dtype=np.float64)

    def prox(self, t, rho):
        t = np.asarray(t, dtype=np.float64)
        x = t.copy()
        step = 1.0 / (self.lipschitz + rho)
        for _ in range(self.prox_steps):
            g = self.gradient(x) + rho * (x - t)
            x = x - step * g
        return x

    def argmin(self):
        x = self.argmin_hint.copy()
        step = 1.0 / self.lipschitz
        for _ in range(self.prox_steps):
            x = x - step * self.gradient(x)
        return x


@dataclass
class ToyAdmmResult:
    """Final iterates plus per-iteration residual traces."""

    x: np.ndarray
    z: np.ndarray
    s: np.ndarray
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.primal_residuals)


def solve_toy_admm(objective_f, objective_g, rho, max_iters=200, tol=1e-10):
    """Scaled-form consensus ADMM: min f(x) + g(z) subject to x = z.

    Starts from z = argmin g with a zero dual, then alternates
    x <- prox_f(z - s), z <- prox_g(x + s), s <- s + x - z until both the
    primal residual ||x - z|| and the dual residual rho*||z - z_prev||
    drop to ``tol``, or ``max_iters`` iterations elapse.
    """
    rho = float(rho)
    if not rho > 0:
        raise ContractError(f"rho must be positive for the consensus solver, got {rho}")
    if max_iters < 1:
        raise ContractError(f"max_iters must be >= 1, got {max_iters}")

    z = np.atleast_1d(np.asarray(objective_g.argmin(), dtype=np.float64)).copy()
    s = np.zeros_like(z)
    x = z.copy()
    primal_trace = []
    dual_trace = []

    for _ in range(max_iters):
        x = np.atleast_1d(np.asarray(objective_f.prox(z - s, rho), dtype=np.float64))
        z_new = np.atleast_1d(np.asarray(objective_g.prox(x + s, rho), dtype=np.float64))
        s = s + (x - z_new)
        primal = float(np.linalg.norm(x - z_new))
        dual = float(rho * np.linalg.norm(z_new - z))
        z = z_new
        primal_trace.append(primal)
        dual_trace.append(dual)
        if not (np.isfinite(primal) and np.isfinite(dual)) or primal > _DIVERGE_LIMIT:
            raise DivergenceError(
                f"consensus iteration diverged: primal residual {primal} at iteration "
                f"{len(primal_trace)}"
            )
        if primal <= tol and dual <= tol:
            break

    return ToyAdmmResult(x=x, z=z, s=s, primal_residuals=primal_trace, dual_residuals=dual_trace)
