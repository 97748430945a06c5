"""Independent reference computations used as test oracles.

Nothing here calls into the package's numerical routines; each function
recomputes its quantity from first principles with plain loops.
"""

from __future__ import annotations

import itertools
import math


def ground_sq(x, y, metric: str, dt: float) -> float:
    """Squared ground distance between two windows given as nested lists [node][dim]."""
    per_node = [sum((a - b) ** 2 for a, b in zip(xn, yn)) for xn, yn in zip(x, y)]
    if metric == "sup":
        return max(per_node)
    m = len(per_node) - 1
    weights = [dt / 2 if i in (0, m) else dt for i in range(m + 1)]
    return math.fsum(w * v for w, v in zip(weights, per_node))


def brute_force_w2(a, b, metric: str = "sup", dt: float = 1.0) -> float:
    """Minimum over all permutations of the mean squared ground cost, square-rooted."""
    n = len(a)
    cost = [[ground_sq(a[i], b[j], metric, dt) for j in range(n)] for i in range(n)]
    best = min(math.fsum(cost[i][s[i]] for i in range(n)) for s in itertools.permutations(range(n)))
    return math.sqrt(best / n)


def euler_scalar_delay(a: float, b: float, psi, dt: float, m: int, n_steps: int, dw=None):
    """Plain-loop Euler for dX = (a X(t) + b X(t - r0)) dt + dW in one dimension."""
    x = list(psi)
    for k in range(n_steps):
        noise = dw[k] if dw is not None else 0.0
        x.append(x[m + k] + dt * (a * x[m + k] + b * x[k]) + noise)
    return x


def pure_delay_mean(t: float) -> float:
    """Hand-integrated solution of m'(t) = m(t - 1), m = 1 on [-1, 0], for t in [0, 2]."""
    if t <= 0:
        return 1.0
    if t <= 1:
        return 1.0 + t
    return 1.0 + t + (t - 1) ** 2 / 2
