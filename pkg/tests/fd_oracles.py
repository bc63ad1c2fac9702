"""Finite-difference oracles built only from lower-order model outputs."""

import numpy as np


def fd_grad(f, u, h=None):
    u = np.asarray(u, dtype=float)
    h = 1e-5 * (1 + np.linalg.norm(u)) if h is None else h
    g = np.empty_like(u)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = h
        g[i] = (f(u + e) - f(u - e)) / (2 * h)
    return g


def fd_jac(g, u, h=None):
    u = np.asarray(u, dtype=float)
    h = 1e-5 * (1 + np.linalg.norm(u)) if h is None else h
    cols = []
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = h
        cols.append((g(u + e) - g(u - e)) / (2 * h))
    J = np.array(cols).T
    return 0.5 * (J + J.T)


def fd_dir3(hess, u, w, h=1e-4):
    """d/dt <H(u + t w) w, w> at 0, fourth-order stencil."""
    q = lambda t: float(w @ hess(u + t * w) @ w)
    return (-q(2 * h) + 8 * q(h) - 8 * q(-h) + q(-2 * h)) / (12 * h)


def fd_dir4(hess, u, w, h=1e-3):
    """d^2/dt^2 <H(u + t w) w, w> at 0, fourth-order stencil."""
    q = lambda t: float(w @ hess(u + t * w) @ w)
    return (-q(2 * h) + 16 * q(h) - 30 * q(0) + 16 * q(-h) - q(-2 * h)) / (12 * h * h)


def fd_contract(hess, u, w, h=1e-4):
    """d/dt H(u + t w) w at 0: the vector <grad^3 f(u), w (x) w>."""
    m = lambda t: hess(u + t * w) @ w
    return (-m(2 * h) + 8 * m(h) - 8 * m(-h) + m(-2 * h)) / (12 * h)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def bisect(f, lo, hi, tol=1e-14, maxit=200):
    flo = f(lo)
    for _ in range(maxit):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)
