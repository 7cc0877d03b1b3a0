"""Small dense Levenberg-Marquardt solver with analytic Jacobians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LmResult:
    x: np.ndarray
    residual: np.ndarray
    jacobian: np.ndarray
    iterations: int
    converged: bool
    gradient_cosine: float
    message: str


def _gradient_cosine(J, r):
    rn = np.linalg.norm(r)
    cn = np.linalg.norm(J, axis=0)
    cn[cn == 0] = 1.0
    if rn == 0:
        return 0.0
    return float(np.max(np.abs(J.T @ r) / cn) / rn)


def levenberg_marquardt(
    residual,
    jacobian,
    x0,
    max_iter: int = 200,
    gtol: float = 1e-10,
    floor: float = 0.0,
    xtol: float = 1e-15,
    stall: float = 1e-13,
) -> LmResult:
    """Minimize ||residual(x)||^2.

    Converged means the largest cosine between a Jacobian column and the
    residual is below ``gtol`` (a scale-free gradient test), or the residual
    norm has dropped to ``floor`` (noise-free data where the residual is pure
    rounding). A third exit, "stationary to rounding", fires when a step is
    rejected although even the undamped Gauss-Newton step promises less than
    ``stall`` relative cost reduction: the objective cannot be resolved any
    further in floating point. Parameter scaling uses the running maximum
    column norms of the Jacobian, so the iteration is invariant to the units
    of each parameter.
    """
    x = np.array(x0, dtype=float)
    r = residual(x)
    if not np.all(np.isfinite(r)):
        return LmResult(x, r, jacobian(x), 0, False, np.inf, "non-finite residual at the initial point")
    J = jacobian(x)
    d = np.linalg.norm(J, axis=0)
    d[d == 0] = 1.0
    mu = 1e-3
    nu = 2.0
    cost = r @ r
    message = "maximum iterations reached"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        cosine = _gradient_cosine(J, r)
        if cosine <= gtol or np.sqrt(cost) <= floor:
            converged, message = True, "gradient below tolerance"
            it -= 1
            break
        d = np.maximum(d, np.linalg.norm(J, axis=0))
        n, p = J.shape
        # solve min ||J dx + r||^2 + mu ||D dx||^2 in scaled variables
        a = np.vstack([J / d, np.sqrt(mu) * np.eye(p)])
        rhs = np.concatenate([-r, np.zeros(p)])
        step = np.linalg.lstsq(a, rhs, rcond=None)[0] / d
        x_new = x + step
        r_new = residual(x_new)
        # reductions from residual differences avoid cancellation in cost - cost_new
        jd = J @ step
        predicted = -(jd @ (2 * r + jd))
        if np.all(np.isfinite(r_new)):
            dr = r_new - r
            actual = -(dr @ (2 * r + dr))
            cost_new = r_new @ r_new
        else:
            actual, cost_new = -np.inf, np.inf
        rho = actual / predicted if predicted > 0 else -1.0
        if rho > 0:
            x, r, cost = x_new, r_new, cost_new
            J = jacobian(x)
            mu *= max(1 / 3, 1 - (2 * rho - 1) ** 3)
            nu = 2.0
        else:
            gn = np.linalg.lstsq(J / d, -r, rcond=None)[0]
            jg = (J / d) @ gn
            if -(jg @ (2 * r + jg)) <= stall * cost:
                converged, message = True, "stationary to rounding"
                break
            mu *= nu
            nu *= 2.0
            if np.linalg.norm(step * d) <= xtol * (np.linalg.norm(x * d) + xtol):
                converged = _gradient_cosine(J, r) <= gtol
                message = "step size below tolerance"
                break
    return LmResult(x, r, J, it, converged, _gradient_cosine(J, r), message)
