"""Grid fields, the quenched parabolic solver, Gaussian comparison operators and cutoffs.

The quenched semigroup solves ``u_t = 1/2 tr(A D^2 u) - b . Du`` with an
explicit monotone scheme: central second differences on the axes, a
positive-coefficient stencil for the mixed derivatives (each ``a_ij`` routed
to the diagonal pair matching its sign) and upwinded drift.  Values outside
the grid are held at zero (absorbing boundary); an indicator field evolved
alongside measures how much mass the boundary has removed.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange
from scipy.ndimage import convolve1d
from scipy.special import gammaln
from scipy.stats import chi2

from .errors import HomolabError

GAUSS_TRUNCATION = 8.0


@dataclass(frozen=True)
class Grid:
    """Cartesian grid of ``n`` nodes per axis (``n`` odd) centred at ``center``."""

    center: tuple
    half_width: float
    h: float
    n: int = None

    def __post_init__(self):
        if not (self.h > 0) or not (self.half_width >= 0):
            raise HomolabError("bad-grid", "need h > 0 and half_width >= 0")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.n is None:
            object.__setattr__(self, "n", 2 * int(math.ceil(self.half_width / self.h - 1e-12)) + 1)
        if self.n % 2 == 0:
            raise HomolabError("bad-grid", "points per axis must be odd")

    @classmethod
    def around(cls, center, half_width, h):
        return cls(tuple(center), float(half_width), float(h))

    @property
    def d(self):
        return len(self.center)

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def extent(self):
        """Distance from the centre to the outermost node along an axis."""
        return (self.n - 1) // 2 * self.h

    def axis(self, i):
        m = (self.n - 1) // 2
        return self.center[i] + self.h * np.arange(-m, m + 1)

    def mesh(self):
        return np.meshgrid(*[self.axis(i) for i in range(self.d)], indexing="ij")

    def points(self):
        return np.stack([c.ravel() for c in self.mesh()], axis=1)

    def radius(self, x=None):
        """``|node - x|`` on the grid (``x`` defaults to the centre)."""
        x = self.center if x is None else x
        r2 = np.zeros(self.shape)
        for i in range(self.d):
            sh = [1] * self.d
            sh[i] = self.n
            r2 = r2 + ((self.axis(i) - x[i]) ** 2).reshape(sh)
        return np.sqrt(r2)

    def index_of(self, x):
        """Nearest node to ``x`` as an index tuple."""
        m = (self.n - 1) // 2
        return tuple(int(round((x[i] - self.center[i]) / self.h)) + m for i in range(self.d))

    def covers(self, x, radius):
        return all(abs(x[i] - self.center[i]) + radius <= self.extent + 1e-9 for i in range(self.d))

    def to_dict(self):
        return {"center": list(self.center), "half_width": self.half_width, "h": self.h, "n": self.n}


@dataclass
class GridField:
    grid: Grid
    values: np.ndarray
    leakage: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(self.values)):
            raise HomolabError("non-finite-field", "grid field has non-finite values")

    @classmethod
    def from_function(cls, grid, fn):
        """``fn`` maps an array of points ``(N, d)`` to ``N`` values."""
        return cls(grid, np.asarray(fn(grid.points()), dtype=float))

    @classmethod
    def constant(cls, grid, c):
        return cls(grid, np.full(grid.shape, float(c)))

    def with_values(self, values, leakage=None):
        return GridField(self.grid, values, self.leakage if leakage is None else leakage)

    def sup(self):
        return float(np.max(np.abs(self.values)))

    def at(self, x):
        return float(self.values[self.grid.index_of(x)])

    def __add__(self, other):
        return self.with_values(self.values + _vals(other), max(self.leakage, _leak(other)))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other), max(self.leakage, _leak(other)))

    def __mul__(self, other):
        return self.with_values(self.values * _vals(other), max(self.leakage, _leak(other)))

    __rmul__ = __mul__

    def save(self, path):
        np.ascontiguousarray(self.values, dtype="<f8").tofile(path)
        with open(str(path) + ".json", "w") as fh:
            json.dump(self.grid.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(str(path) + ".json") as fh:
            meta = json.load(fh)
        grid = Grid(tuple(meta["center"]), meta["half_width"], meta["h"], meta["n"])
        return cls(grid, np.fromfile(path, dtype="<f8"))


def _vals(x):
    return x.values if isinstance(x, GridField) else x


def _leak(x):
    return x.leakage if isinstance(x, GridField) else 0.0


# ---------------------------------------------------------------- quenched solver


@njit(parallel=True, cache=True)
def _explicit_steps(u, scratch, row_base, n_last, axial_off, rates, uniform, signs, pair_i, pair_j,
                    strides, dt, n_steps):
    """``n_steps`` explicit steps on padded flat fields ``u`` of shape ``(P, F)``.

    Interior nodes are visited row by row along the last (contiguous) axis;
    ``rates`` has one row per interior node, or a single shared row when
    ``uniform`` is set.
    """
    n_rows = row_base.shape[0]
    n_ax = axial_off.shape[0]
    n_pairs = pair_i.shape[0]
    F = u.shape[1]
    src = u
    dst = scratch
    for _ in range(n_steps):
        for r in prange(n_rows):
            q0 = row_base[r]
            for j in range(n_last):
                q = q0 + j
                p = 0 if uniform else r * n_last + j
                for f in range(F):
                    c = src[q, f]
                    acc = 0.0
                    for k in range(n_ax):
                        acc += rates[p, k] * (src[q + axial_off[k], f] - c)
                    for m in range(n_pairs):
                        o = strides[pair_i[m]] + signs[p, m] * strides[pair_j[m]]
                        w = rates[p, n_ax + m]
                        acc += w * (src[q + o, f] - c) + w * (src[q - o, f] - c)
                    dst[q, f] = c + dt * acc
        src, dst = dst, src
    return src


class QuenchedSolver:
    """Explicit solver for one environment on one grid; rates are built once and reused.

    Parameters
    ----------
    env : Environment
    grid : Grid
    dt : float, optional
        Time step.  Must not exceed ``dt_max = 1 / max total rate``; defaults
        to ``cfl_fraction * dt_max``.
    """

    def __init__(self, env, grid, dt=None, cfl_fraction=0.5):
        if env.d != grid.d:
            raise HomolabError("dimension-mismatch", "environment and grid dimensions differ")
        self.env, self.grid = env, grid
        d, n, h = grid.d, grid.n, grid.h
        self.padded_shape = (n + 2,) * d
        strides = np.array([(n + 2) ** (d - 1 - i) for i in range(d)], dtype=np.int64)
        self.strides = strides
        core = np.zeros(self.padded_shape, dtype=bool)
        core[(slice(1, -1),) * d] = True
        interior = np.flatnonzero(core.ravel()).astype(np.int64)
        self.n_nodes = interior.size
        self.row_base = interior[::n].copy()
        self.axial_off = np.concatenate([[s, -s] for s in strides]).astype(np.int64)
        pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
        self.pair_i = np.array([p[0] for p in pairs], dtype=np.int64)
        self.pair_j = np.array([p[1] for p in pairs], dtype=np.int64)

        self.uniform = env.params.mode == "zero"
        N = 1 if self.uniform else self.n_nodes
        if self.uniform:
            A = np.broadcast_to(np.eye(d), (N, d, d))
            b = np.zeros((N, d))
        else:
            A, b = env.evaluate_many(grid.points())
        cross = env.params.mode == "full" and d > 1
        npair = len(pairs) if cross else 0
        if not cross:
            self.pair_i = self.pair_i[:0]
            self.pair_j = self.pair_j[:0]
        h2 = 2.0 * h * h
        rates = np.empty((N, 2 * d + npair))
        signs = np.ones((N, max(npair, 1)), dtype=np.int64)
        offdiag = np.zeros((N, d))
        for m in range(npair):
            i, j = pairs[m]
            aij = A[:, i, j]
            rates[:, 2 * d + m] = np.abs(aij) / h2
            signs[:, m] = np.where(aij >= 0, 1, -1)
            offdiag[:, i] += np.abs(aij)
            offdiag[:, j] += np.abs(aij)
        for i in range(d):
            base = (A[:, i, i] - offdiag[:, i]) / h2
            rates[:, 2 * i] = base + np.maximum(-b[:, i], 0.0) / h
            rates[:, 2 * i + 1] = base + np.maximum(b[:, i], 0.0) / h
        if np.any(rates < 0):
            bad = int(np.argmin(rates.min(axis=1)))
            raise HomolabError("stencil-positivity", f"negative stencil weight at node {bad}")
        self.rates = rates
        self.signs = signs
        total = rates[:, : 2 * d].sum(axis=1) + 2.0 * rates[:, 2 * d:].sum(axis=1)
        self.dt_max = float(1.0 / total.max())
        if dt is None:
            dt = cfl_fraction * self.dt_max
        elif dt > self.dt_max * (1 + 1e-12):
            raise HomolabError("cfl-violation", f"dt={dt:g} exceeds the stable step; need dt <= {self.dt_max:.6g}")
        self.dt = float(dt)

    def steps_for(self, t):
        if t < 0:
            raise HomolabError("negative-time", "t must be nonnegative")
        return int(math.ceil(t / self.dt - 1e-9)) if t > 0 else 0

    def _pad(self, arrays):
        F = len(arrays)
        u = np.zeros((int(np.prod(self.padded_shape)), F))
        inner = (slice(1, -1),) * self.grid.d
        for k, a in enumerate(arrays):
            u.reshape(self.padded_shape + (F,))[inner + (k,)] = a
        return u

    def _unpad(self, u, k):
        F = u.shape[1]
        inner = (slice(1, -1),) * self.grid.d
        return u.reshape(self.padded_shape + (F,))[inner + (k,)].copy()

    def run(self, arrays, t):
        """Advance raw value arrays by time ``t``; returns ``(arrays, indicator)``."""
        n_steps = self.steps_for(t)
        ind = np.ones(self.grid.shape)
        if n_steps == 0:
            return [np.array(a, dtype=float) for a in arrays], ind
        dt = t / n_steps
        u = self._pad(list(arrays) + [ind])
        out = _explicit_steps(
            u, np.zeros_like(u), self.row_base, self.grid.n, self.axial_off, self.rates, self.uniform, self.signs,
            self.pair_i, self.pair_j, self.strides, dt, n_steps,
        )
        res = [self._unpad(out, k) for k in range(u.shape[1])]
        return res[:-1], res[-1]

    def leakage(self, indicator, t, margin=None):
        """Largest indicator loss on nodes at least ``margin`` inside the grid boundary."""
        if margin is None:
            margin = 6.0 * math.sqrt(self.env.params.nu * t)
        g = self.grid
        dist = np.zeros(g.shape) + np.inf
        for i in range(g.d):
            sh = [1] * g.d
            sh[i] = g.n
            ax = g.extent - np.abs(g.axis(i) - g.center[i])
            dist = np.minimum(dist, ax.reshape(sh))
        inner = dist >= margin
        if not np.any(inner):
            return float(np.max(1.0 - indicator))
        return float(np.max(1.0 - indicator[inner]))

    def apply(self, f, t, margin=None):
        (u,), ind = self.run([f.values], t)
        return GridField(f.grid, u, max(f.leakage, self.leakage(ind, t, margin)))

    def apply_many(self, fields, t, margin=None):
        arrays, ind = self.run([f.values for f in fields], t)
        leak = self.leakage(ind, t, margin)
        return [GridField(f.grid, a, max(f.leakage, leak)) for f, a in zip(fields, arrays)]


def solve_quenched(env, f: GridField, t, dt=None, cfl_fraction=0.5, margin=None) -> GridField:
    """Approximate ``R_t f``; ``leakage`` reports the absorbed mass away from the boundary."""
    if t < 0:
        raise HomolabError("negative-time", "t must be nonnegative")
    return QuenchedSolver(env, f.grid, dt=dt, cfl_fraction=cfl_fraction).apply(f, t, margin)


# ---------------------------------------------------------------- Gaussian comparison


def gaussian_kernel(sigma, h):
    """Sampled 1-d Gaussian on ``|x| <= 8 sigma``, renormalized to unit sum."""
    m = int(math.ceil(GAUSS_TRUNCATION * sigma / h))
    x = h * np.arange(-m, m + 1)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def gaussian_op(alpha, s, f: GridField) -> GridField:
    """Convolution with the Gaussian of covariance ``alpha * s * I`` (separable, edge-replicated)."""
    if alpha <= 0 or s < 0:
        raise HomolabError("bad-argument", "need alpha > 0 and s >= 0")
    if s == 0:
        return f.with_values(f.values.copy())
    sigma = math.sqrt(alpha * s)
    w = gaussian_kernel(sigma, f.grid.h)
    out = f.values
    for ax in range(f.grid.d):
        out = convolve1d(out, w, axis=ax, mode="nearest")
    return f.with_values(out)


def gaussian_tail_bound(alpha, s, r, d, power=0):
    """``E[|Z|^power ; |Z| >= r]`` for ``Z ~ N(0, alpha s I_d)`` and even ``power``.

    This bounds ``gaussian_op(alpha, s, g)`` at the origin when ``|g(y)| <= |y|^power``
    and ``g`` vanishes on ``B_r``.
    """
    if power % 2:
        raise HomolabError("bad-argument", "power must be even")
    k = power // 2
    var = alpha * s
    scale = math.exp(k * math.log(2.0 * var) + gammaln(d / 2.0 + k) - gammaln(d / 2.0)) if k else 1.0
    return float(scale * chi2.sf(r * r / var, d + 2 * k))


def s_n_op(env, hier, n, alpha_n, f: GridField, solver=None) -> GridField:
    """``R_n f - Rbar_n f`` with both operators run for time ``L_n^2``."""
    t = float(hier.L(n)) ** 2
    solver = solver or QuenchedSolver(env, f.grid)
    return solver.apply(f, t) - gaussian_op(alpha_n, t, f)


# ---------------------------------------------------------------- cutoffs


def chi(r):
    """``min(1, (2 - r)_+)``."""
    return np.minimum(1.0, np.maximum(0.0, 2.0 - np.asarray(r, dtype=float)))


def smoothstep(s):
    """C^2 quintic ramp from 1 (s <= 0) to 0 (s >= 1)."""
    s = np.clip(s, 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


@dataclass(frozen=True)
class CutoffSpec:
    """``chi_v`` (tent, 1 on ``B_v``, 0 off ``B_2v``), ``chi_nx`` (``chi_v`` at ``v = 30 sqrt(d) L_n``
    centred at ``x``) or ``chi_tilde_n`` (C^2 ramp, 1 on ``B_{3 D~_n}``, 0 off ``B_{4 D~_n}``)."""

    kind: str
    radius: float
    center: tuple = field(default=None)

    @classmethod
    def chi_v(cls, v, center=None):
        return cls("chi_v", float(v), center)

    @classmethod
    def chi_nx(cls, hier, n, x):
        d = hier.params.d
        return cls("chi_nx", 30.0 * math.sqrt(d) * hier.L(n), tuple(float(c) for c in x))

    @classmethod
    def chi_tilde(cls, hier, n):
        return cls("chi_tilde_n", hier.levels[n].D_tilde, None)

    def __call__(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if self.center is not None:
            y = y - np.asarray(self.center)
        r = np.sqrt(np.sum(y * y, axis=1))
        if self.kind in ("chi_v", "chi_nx"):
            return chi(r / self.radius)
        if self.kind == "chi_tilde_n":
            return smoothstep((r - 3.0 * self.radius) / self.radius)
        raise HomolabError("bad-cutoff", f"unknown cutoff kind {self.kind!r}")

    def on_grid(self, grid):
        c = np.zeros(grid.d) if self.center is None else np.asarray(self.center)
        r = grid.radius(c)
        if self.kind == "chi_tilde_n":
            return smoothstep((r - 3.0 * self.radius) / self.radius)
        return chi(r / self.radius)


def cutoff_eval(spec: CutoffSpec, y):
    """Cutoff value at one point ``y`` (or an array of points)."""
    out = spec(y)
    return float(out[0]) if np.ndim(y) == 1 else out


def cutoff_mul(spec: CutoffSpec):
    """Operator ``f -> spec * f`` for use in :func:`compose`."""

    def op(f):
        return f.with_values(f.values * spec.on_grid(f.grid))

    return op


def compose(ops, f: GridField) -> GridField:
    """Apply ``ops`` in order; an entry ``(op, k)`` applies ``op`` ``k`` times."""
    out = f
    for item in ops:
        op, k = item if isinstance(item, tuple) else (item, 1)
        for _ in range(int(k)):
            out = op(out)
    return out
