"""Closed-form optimum of the detector objective for analytic 1D densities.

For two densities ``p_data`` and ``p_hist`` and penalty weight ``lam`` the
pointwise detector loss is

    l(v; x) = (p_data - p_hist)(x) * v + lam * (p_data + p_hist)(x) / 2 * dist(v, [-1, 1])^2

and its minimizer is ``sign(p_hist - p_data) + (p_hist - p_data) / (lam (p_hist + p_data))``.
All integrals use composite Simpson on a grid split at uniform-interval
edges and at the points where the two densities cross, so every piece is
smooth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .detector import boundary_distance
from .errors import ContractError

N_SIGMA = 8.0


@dataclass(frozen=True)
class Density1D:
    """Mixture of Gaussians ``(weight, mean, std)`` and uniforms ``(weight, lo, hi)``."""

    gaussians: tuple[tuple[float, float, float], ...] = ()
    uniforms: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        g = tuple(tuple(float(v) for v in c) for c in self.gaussians)
        u = tuple(tuple(float(v) for v in c) for c in self.uniforms)
        object.__setattr__(self, "gaussians", g)
        object.__setattr__(self, "uniforms", u)
        if not g and not u:
            raise ContractError("density needs at least one component")
        if any(w < 0 or s <= 0 for w, _, s in g):
            raise ContractError("gaussian components need weight >= 0 and std > 0")
        if any(w < 0 or hi <= lo for w, lo, hi in u):
            raise ContractError("uniform components need weight >= 0 and lo < hi")
        total = sum(c[0] for c in g) + sum(c[0] for c in u)
        if abs(total - 1.0) > 1e-12:
            raise ContractError(f"component weights sum to {total}, not 1")

    @classmethod
    def normal(cls, mean=0.0, std=1.0) -> "Density1D":
        return cls(gaussians=((1.0, mean, std),))

    @classmethod
    def uniform(cls, lo, hi) -> "Density1D":
        return cls(uniforms=((1.0, lo, hi),))

    dim = 1

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        for w, m, s in self.gaussians:
            out += w * norm.pdf(x, m, s)
        for w, lo, hi in self.uniforms:
            out += np.where((x >= lo) & (x <= hi), w / (hi - lo), 0.0)
        return out

    def interval(self) -> tuple[float, float]:
        los = [m - N_SIGMA * s for _, m, s in self.gaussians] + [lo for _, lo, _ in self.uniforms]
        his = [m + N_SIGMA * s for _, m, s in self.gaussians] + [hi for _, _, hi in self.uniforms]
        return min(los), max(his)

    def breakpoints(self) -> list[float]:
        return sorted({v for _, lo, hi in self.uniforms for v in (lo, hi)})

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comps = [("g", c) for c in self.gaussians] + [("u", c) for c in self.uniforms]
        w = np.array([c[1][0] for c in comps])
        pick = rng.choice(len(comps), size=n, p=w / w.sum())
        out = np.empty(n)
        for k, (kind, (_, a, b)) in enumerate(comps):
            rows = pick == k
            m = int(rows.sum())
            out[rows] = rng.normal(a, b, m) if kind == "g" else rng.uniform(a, b, m)
        return out[:, None]


def _simpson(a: float, b: float, m: int):
    """Nodes and weights of composite Simpson with ``m`` (even) intervals.

    End nodes are pulled in by one ulp so one-sided limits are used at
    discontinuities sitting on a piece boundary.
    """
    x = np.linspace(a, b, m + 1)
    x[0], x[-1] = np.nextafter(a, b), np.nextafter(b, a)
    h = (b - a) / m
    w = np.full(m + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return x, w * h / 3.0


@dataclass
class DensityPair:
    p_data: Density1D
    p_hist: Density1D
    lam: float = 10.0
    n_nodes: int = 2 ** 14
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.lam > 0:
            raise ContractError("lam must be > 0")
        lo1, hi1 = self.p_data.interval()
        lo2, hi2 = self.p_hist.interval()
        self.lo, self.hi = min(lo1, lo2), max(hi1, hi2)
        cuts = {self.lo, self.hi}
        cuts.update(v for v in self.p_data.breakpoints() + self.p_hist.breakpoints() if self.lo < v < self.hi)
        cuts = sorted(cuts)
        cuts = sorted(set(cuts) | set(self._crossings(cuts)))
        xs, ws = [], []
        span = self.hi - self.lo
        for a, b in zip(cuts[:-1], cuts[1:]):
            m = max(2, 2 * int(round(self.n_nodes * (b - a) / span / 2)))
            x, w = _simpson(a, b, m)
            xs.append(x)
            ws.append(w)
        self.nodes = np.concatenate(xs)
        self.weights = np.concatenate(ws)
        self._pd = self.p_data.pdf(self.nodes)
        self._ph = self.p_hist.pdf(self.nodes)

    def _crossings(self, cuts) -> list[float]:
        diff = lambda x: float(self.p_hist.pdf(x) - self.p_data.pdf(x))
        roots = []
        for a, b in zip(cuts[:-1], cuts[1:]):
            x = np.linspace(a, b, 4097)[1:-1]
            d = self.p_hist.pdf(x) - self.p_data.pdf(x)
            s = np.sign(d)
            for i in np.nonzero(s[:-1] * s[1:] < 0)[0]:
                roots.append(brentq(diff, x[i], x[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps))
        return roots

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    def densities(self, x=None):
        if x is None:
            return self._pd, self._ph
        return self.p_data.pdf(x), self.p_hist.pdf(x)


def tv_distance(pair: DensityPair) -> float:
    """Half the L1 distance between the two densities."""
    pd, ph = pair.densities()
    return 0.5 * pair.integrate(np.abs(pd - ph))


def optimal_dtv_star(pair: DensityPair, x):
    """+1 where the history density dominates, -1 elsewhere (ties -> -1)."""
    pd, ph = pair.densities(x)
    return np.where(ph > pd, 1.0, -1.0)


def delta_star(pair: DensityPair, x):
    """Optimal overshoot beyond +-1; NaN where both densities vanish."""
    pd, ph = pair.densities(x)
    s = ph + pd
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(s > 0, (ph - pd) / (pair.lam * np.where(s > 0, s, 1.0)), np.nan)


def optimal_d(pair: DensityPair, x):
    """Full minimizer; outside both supports any value in [-1, 1] is optimal, -1 is returned."""
    d = delta_star(pair, x)
    return optimal_dtv_star(pair, x) + np.nan_to_num(d, nan=0.0)


def min_loss(pair: DensityPair) -> float:
    pd, ph = pair.densities()
    s = ph + pd
    ratio = np.where(s > 0, (ph - pd) ** 2 / np.where(s > 0, s, 1.0), 0.0)
    return -2.0 * tv_distance(pair) - pair.integrate(ratio) / (2.0 * pair.lam)


def pointwise_loss(pair: DensityPair, d: Callable | Sequence[float] | np.ndarray, x):
    """Integrand of the detector loss at ``x`` for detector values ``d``.

    ``d`` may be a callable evaluated at ``x`` or precomputed values.
    """
    pd, ph = pair.densities(x)
    v = d(x) if callable(d) else np.asarray(d, dtype=np.float64)
    return (pd - ph) * v + pair.lam * 0.5 * (pd + ph) * boundary_distance(v) ** 2


def integrated_loss(pair: DensityPair, d) -> float:
    """Quadrature of :func:`pointwise_loss` over the working grid."""
    return pair.integrate(pointwise_loss(pair, d, pair.nodes))
