"""
Penalized M-step for transition rows.

For expected counts c over the four successors each row maximises

    F(p) = sum_b c_b log p_b - lam' sum_b log(1 + p_b / gamma),
    lam' = lam / log(1 + 1/gamma)

over the probability simplex. Zero-count components are exactly zero at the
optimum. Every active component solves

    c_b / p_b - lam' / (p_b + gamma) = mu

for one Lagrange multiplier mu, i.e. mu p^2 + B p - c gamma = 0 with
B = mu gamma + lam' - c. When some c_b >= lam' the multiplier is positive and
the stationary point is unique. Otherwise mu may be negative, each component
has a decreasing and an increasing root, and a maximum puts at most one
component on the increasing root; all such candidates are solved and the best
objective kept.
"""

import logging
import math
from typing import List, Optional

import numpy as np
from scipy.optimize import brentq

logger = logging.getLogger(__name__)

_BISECT_ITERS = 200
_GRID = np.geomspace(1.0, 1e-16, 600)


def scaled_lambda(lam: float, gamma: float) -> float:
    return lam / math.log1p(1.0 / gamma)


def penalized_objective(p: np.ndarray, c: np.ndarray, lam: float, gamma: float) -> float:
    """F(p) for one row; -inf when a counted component has zero probability."""
    p = np.asarray(p, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    active = c > 0
    if np.any(p[active] <= 0):
        return float('-inf')
    fit = float(np.sum(c[active] * np.log(p[active])))
    return fit - scaled_lambda(lam, gamma) * float(np.sum(np.log1p(p / gamma)))


def _decreasing_root(mu, c, lp: float, gamma: float):
    """Root on the decreasing branch of c/p - lp/(p + gamma) = mu."""
    mu = np.asarray(mu, dtype=np.float64)
    b = mu * gamma + lp - c
    disc = np.sqrt(np.maximum(b * b + 4.0 * mu * c * gamma, 0.0))
    with np.errstate(divide='ignore', invalid='ignore'):
        stable = 2.0 * c * gamma / (b + disc)
        negative_b = (disc - b) / (2.0 * mu)
    return np.where(b >= 0, stable, negative_b)


def _increasing_root(mu, c, lp: float, gamma: float):
    """Root on the increasing branch; only defined for mu < 0."""
    mu = np.asarray(mu, dtype=np.float64)
    b = mu * gamma + lp - c
    disc = np.sqrt(np.maximum(b * b + 4.0 * mu * c * gamma, 0.0))
    return (b + disc) / (-2.0 * mu)


def _bisect_positive_mu(counts: np.ndarray, lp: float, gamma: float) -> np.ndarray:
    """Rows with some count >= lp: unique mu in (0, sum c], solved for all rows at once."""
    active = counts > 0
    lo = np.zeros(counts.shape[0])
    hi = counts.sum(axis=1)
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        roots = np.where(active, _decreasing_root(mid[:, None], counts, lp, gamma), 0.0)
        over = roots.sum(axis=1) > 1.0
        lo = np.where(over, mid, lo)
        hi = np.where(over, hi, mid)
        if np.all((hi - lo) <= 4 * np.finfo(float).eps * hi):
            break
    return np.where(active, _decreasing_root(hi[:, None], counts, lp, gamma), 0.0)


def _small_count_row(c: np.ndarray, lp: float, gamma: float) -> np.ndarray:
    """Every active count below lp: enumerate stationary points, keep the best."""
    active = np.flatnonzero(c > 0)
    ca = c[active]
    sum_c = float(ca.sum())
    # most negative multiplier at which every component still has a root
    mu_low = float(np.max(-(math.sqrt(lp) - np.sqrt(ca)) ** 2 / gamma))

    def all_decreasing(mu: float) -> float:
        return float(np.sum(_decreasing_root(mu, ca, lp, gamma))) - 1.0

    candidates: List[np.ndarray] = []
    if all_decreasing(mu_low) >= 0:
        mu = mu_low if all_decreasing(mu_low) == 0 else brentq(all_decreasing, mu_low, sum_c, xtol=1e-300)
        candidates.append(_decreasing_root(mu, ca, lp, gamma))

    grid = mu_low * _GRID
    dec = _decreasing_root(grid[:, None], ca[None, :], lp, gamma)
    inc = _increasing_root(grid[:, None], ca[None, :], lp, gamma)
    dec_total = dec.sum(axis=1)
    for j in range(ca.shape[0]):
        def one_increasing(mu: float, j: int = j) -> float:
            roots = _decreasing_root(mu, ca, lp, gamma)
            return float(roots.sum() - roots[j] + _increasing_root(mu, ca[j], lp, gamma)) - 1.0

        values = dec_total - dec[:, j] + inc[:, j] - 1.0
        for g in range(values.shape[0] - 1):
            if values[g] == 0:
                mu = grid[g]
            elif values[g] * values[g + 1] < 0:
                mu = brentq(one_increasing, grid[g], grid[g + 1], xtol=1e-300)
            else:
                continue
            roots = _decreasing_root(mu, ca, lp, gamma)
            roots[j] = _increasing_root(mu, ca[j], lp, gamma)
            candidates.append(roots)

    best: Optional[np.ndarray] = None
    best_value = float('-inf')
    for roots in candidates:
        p = np.zeros(4)
        p[active] = roots / roots.sum()
        value = float(np.sum(ca * np.log(p[active])) - lp * np.sum(np.log1p(p / gamma)))
        if value > best_value:
            best, best_value = p, value
    if best is None:
        raise ArithmeticError(f"no stationary point found for counts {c.tolist()}")
    return best


def m_step_transitions(c: np.ndarray, lam: float, gamma: float) -> np.ndarray:
    """Maximise the penalized multinomial objective for one row of counts.

    Args:
        c: four non-negative expected counts
        lam: penalty weight lambda
        gamma: penalty scale

    Returns:
        probabilities on the simplex; zero wherever c is zero, uniform when c is
        all zero
    """
    return m_step_transition_rows(np.asarray(c, dtype=np.float64).reshape(1, 4), lam, gamma)[0]


def m_step_transition_rows(counts: np.ndarray, lam: float, gamma: float,
                           prune_floor: float = 0.0,
                           previous: Optional[np.ndarray] = None) -> np.ndarray:
    """Row-wise penalized M-step over an (n, 4) count table.

    A row without counts leaves the fit term unchanged. It becomes uniform,
    unless lam > 0 and the previous rows are given: then it keeps a single
    successor, the largest entry of its previous row, which is the least
    penalty a row can carry.
    Entries below prune_floor are then set to zero and their row renormalised.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError("expected counts must be non-negative")
    n = counts.shape[0]
    totals = counts.sum(axis=1)
    has_data = totals > 0
    n_active = np.count_nonzero(counts > 0, axis=1)

    out = np.full((n, 4), 0.25)
    if lam == 0:
        out[has_data] = counts[has_data] / totals[has_data, None]
    else:
        empty = np.flatnonzero(~has_data)
        if previous is not None:
            out[empty] = 0.0
            out[empty, np.argmax(np.asarray(previous)[empty], axis=1)] = 1.0
        lp = scaled_lambda(lam, gamma)
        single = has_data & (n_active == 1)
        out[single] = (counts[single] > 0).astype(np.float64)
        multi = has_data & (n_active > 1)
        large = multi & (counts.max(axis=1) >= lp)
        if np.any(large):
            out[large] = _bisect_positive_mu(counts[large], lp, gamma)
        small = np.flatnonzero(multi & ~large)
        for row in small:
            out[row] = _small_count_row(counts[row], lp, gamma)
        logger.debug("M-step rows: %d empty, %d single-successor, %d bisected, %d enumerated",
                     empty.shape[0], int(single.sum()), int(large.sum()), small.shape[0])

    if prune_floor > 0:
        out[out < prune_floor] = 0.0
    out /= out.sum(axis=1, keepdims=True)
    return out
