"""Independent reference computations used by the tests.

Everything here is deliberately written without the package's own numeric
paths: series expansions, brute-force recursions, and closed forms.
"""

import math

import numpy as np


def erf_series(x: float, terms: int = 60) -> float:
    """Maclaurin series for erf(x); converges quickly for |x| < 4."""
    total = 0.0
    for n in range(terms):
        total += (-1) ** n * x ** (2 * n + 1) / (math.factorial(n) * (2 * n + 1))
    return 2.0 / math.sqrt(math.pi) * total


def normal_cdf_series(x: float) -> float:
    return 0.5 * (1.0 + erf_series(x / math.sqrt(2.0)))


def gelu_reference(x: float) -> float:
    """x * Phi(x) via math.erf, independent of the scipy-backed implementation."""
    return x * 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def gelu_grad_reference(x: float) -> float:
    cdf = 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
    pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def value_iteration(step_fn, n_states: int, n_actions: int, gamma: float, iters: int = 500) -> np.ndarray:
    """Tabular Q* for a deterministic MDP given step_fn(s, a) -> (r, terminal, s')."""
    q = np.zeros((n_states, n_actions))
    for _ in range(iters):
        new_q = np.zeros_like(q)
        for s in range(n_states):
            for a in range(n_actions):
                r, terminal, s2 = step_fn(s, a)
                new_q[s, a] = r if terminal else r + gamma * q[s2].max()
        q = new_q
    return q


def capped_geometric_mean(p: float, cap: int) -> float:
    """E[min(X, cap)] for X ~ Geometric(p) counting trials until first success."""
    return (1.0 - (1.0 - p) ** cap) / p


def discounted_return_bruteforce(rewards, gamma: float) -> float:
    total = 0.0
    factor = 1.0
    for r in rewards:
        total += factor * r
        factor *= gamma
    return total


def max_relative_error(analytic, reference, floor=1e-6) -> float:
    """Worst per-element relative error between two gradient lists."""
    worst = 0.0
    for a, f in zip(analytic, reference):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst
