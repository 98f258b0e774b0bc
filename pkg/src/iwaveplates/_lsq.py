"""Small dense Gauss-Newton solver shared by the fitters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass
class LsqResult:
    x: np.ndarray
    residuals: np.ndarray
    jacobian: np.ndarray
    grad_norm: float
    n_iter: int
    converged: bool

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.residuals**2)))

    @property
    def cost(self) -> float:
        return 0.5 * float(self.residuals @ self.residuals)

    def covariance(self) -> np.ndarray:
        """``s^2 (J^T J)^-1`` with ``s^2 = RSS / (m - n)``; inf where singular."""
        m, n = self.jacobian.shape
        jtj = self.jacobian.T @ self.jacobian
        dof = max(m - n, 1)
        s2 = float(self.residuals @ self.residuals) / dof
        try:
            return s2 * np.linalg.inv(jtj)
        except np.linalg.LinAlgError:
            return np.full((n, n), np.inf)


def gauss_newton(
    fun: Callable[[np.ndarray], np.ndarray],
    jac: Callable[[np.ndarray], np.ndarray],
    x0,
    grad_tol: float = 1e-10,
    max_iter: int = 200,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> LsqResult:
    """Minimize ``0.5 ||fun(x)||^2``.

    Plain Gauss-Newton steps with Levenberg damping whenever a step fails to
    decrease the cost. ``project`` may fold parameters back into a domain
    (for periodic parameters) after each accepted step.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = fun(x)
    J = jac(x)
    cost = 0.5 * float(r @ r)
    lam = 0.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = J.T @ r
        if np.linalg.norm(g) < grad_tol:
            converged = True
            break
        jtj = J.T @ J
        scale = np.diag(jtj).copy()
        scale[scale == 0] = 1.0
        accepted = False
        for _ in range(60):
            try:
                step = np.linalg.solve(jtj + lam * np.diag(scale), -g)
            except np.linalg.LinAlgError:
                lam = max(lam * 10, 1e-6)
                continue
            xn = x + step
            if project is not None:
                xn = project(xn)
            rn = fun(xn)
            cn = 0.5 * float(rn @ rn)
            if cn <= cost:
                accepted = True
                break
            lam = max(lam * 10, 1e-6)
        if not accepted:
            # no descent direction left at machine precision
            converged = np.linalg.norm(g) < max(grad_tol, 1e3 * np.finfo(float).eps * max(cost, 1.0))
            break
        small_step = np.linalg.norm(xn - x) <= 1e-15 * (1 + np.linalg.norm(x))
        x, r, cost = xn, rn, cn
        J = jac(x)
        lam = lam / 10 if lam > 1e-12 else 0.0
        if small_step:
            converged = True
            break
    g = J.T @ r
    return LsqResult(x, r, J, float(np.linalg.norm(g)), it, converged or np.linalg.norm(g) < grad_tol)
