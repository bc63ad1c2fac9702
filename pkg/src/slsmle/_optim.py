"""Damped Newton minimization for smooth convex objectives."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError


def newton_direction(H, g):
    """Solve H d = -g by Cholesky; add a Levenberg shift only on failure."""
    H = 0.5 * (H + H.T)
    k = H.shape[0]
    shift = 0.0
    base = 1e-10 * max(np.trace(H) / max(k, 1), 1e-300)
    for _ in range(40):
        try:
            c = cho_factor(H + shift * np.eye(k), lower=True, check_finite=True)
            return -cho_solve(c, g), shift
        except (LinAlgError, ValueError):
            shift = base if shift == 0.0 else 10.0 * shift
    raise LinAlgError("Hessian could not be factorized even with a shift")


def newton_minimize(f, g, h, x0, domain=None, tol=1e-9, maxiter=200,
                    armijo=1e-4, backtrack=0.5):
    """Armijo-damped Newton iteration.

    Stops when ||g(x)|| <= tol * (1 + |f(x)|).  ``domain(x)`` returning False
    makes the line search halve the step (used to stay in SPD cones).
    Returns a dict with keys x, f, grad_norm, iters, converged, reason, history.
    """
    x = np.array(x0, dtype=float)
    if domain is not None and not domain(x):
        raise ValueError("initial point outside the domain")
    fx = f(x)
    hist = [fx]
    reason = "maxiter"
    it = 0
    gx = g(x)
    gn = float(np.linalg.norm(gx))
    while True:
        if gn <= tol * (1.0 + abs(fx)):
            reason = "gradient"
            break
        if it >= maxiter:
            break
        d, _ = newton_direction(h(x), gx)
        slope = float(gx @ d)
        if slope >= 0:
            d, slope = -gx, -float(gx @ gx)
        t = 1.0
        tiny = -slope <= 1e-12 * (1.0 + abs(fx))
        accepted = False
        while t > 1e-30:
            xn = x + t * d
            if domain is None or domain(xn):
                fn = f(xn)
                if np.isfinite(fn) and (tiny or fn <= fx + armijo * t * slope):
                    accepted = True
                    break
            t *= backtrack
        it += 1
        if not accepted:
            reason = "line-search"
            break
        x, fx = xn, fn
        hist.append(fx)
        gx = g(x)
        gn = float(np.linalg.norm(gx))
    return {"x": x, "f": fx, "grad_norm": gn, "iters": it,
            "converged": reason == "gradient", "reason": reason,
            "history": hist}
