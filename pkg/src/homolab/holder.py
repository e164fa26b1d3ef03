"""Scale-adapted Hoelder norms and measured versions of the two level controls.

``|f|_n = sup|f| + L_n^beta [f]`` where the seminorm is evaluated over a
fixed, function-independent set of node pairs: every offset within four grid
spacings, every axis-aligned offset, and a strided lattice of offsets, all with
length at most ``2 L_n``.  Pairs further apart satisfy
``|f(x) - f(y)| / |x - y|^beta <= osc(f) / (2 L_n)^beta``, which is folded in
as the term ``2^-beta osc(f)``.  Because the pair set never depends on ``f``,
the product and patching inequalities hold exactly for the computed norm.
"""

import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import beta as beta_dist

from .errors import HomolabError
from .semigroup import CutoffSpec, Grid, GridField, QuenchedSolver, gaussian_op

EXHAUSTIVE_RADIUS = 4
STRIDE_TARGET = 5
FLOAT_SLACK = 1e-12


@dataclass(frozen=True)
class HolderNorm:
    n: int
    beta: float
    L: float

    def __post_init__(self):
        if not (0 < self.beta <= 0.5):
            raise HomolabError("bad-params", "beta must lie in (0, 1/2]")

    @classmethod
    def from_hierarchy(cls, hier, n):
        return cls(n, hier.params.beta, float(hier.L(n)))


@lru_cache(maxsize=64)
def pair_offsets(d, h, L):
    """Half of a symmetric set of integer offsets ``k`` with ``0 < |k| h <= 2 L``."""
    R = 2.0 * L / h
    Rn = int(math.floor(R + 1e-9))
    stride = max(1, int(math.ceil(Rn / STRIDE_TARGET)))
    found = set()
    # exhaustive near offsets
    r = min(EXHAUSTIVE_RADIUS, Rn)
    rng = range(-r, r + 1)
    for k in np.array(np.meshgrid(*[rng] * d, indexing="ij")).reshape(d, -1).T:
        if 0 < k @ k <= min(R, EXHAUSTIVE_RADIUS) ** 2 + 1e-9:
            found.add(tuple(int(v) for v in k))
    # every axis-aligned offset
    for i in range(d):
        for m in range(1, Rn + 1):
            k = [0] * d
            k[i] = m
            found.add(tuple(k))
    # strided lattice
    srng = range(-(Rn // stride) * stride, Rn + 1, stride)
    for k in np.array(np.meshgrid(*[srng] * d, indexing="ij")).reshape(d, -1).T:
        if 0 < k @ k <= R * R + 1e-9:
            found.add(tuple(int(v) for v in k))
    half = sorted(k for k in found if k > tuple(-v for v in k))
    return tuple(half)


def _shift_slices(k, n):
    a, b = [], []
    for ki in k:
        if ki >= 0:
            a.append(slice(ki, n))
            b.append(slice(0, n - ki))
        else:
            a.append(slice(0, n + ki))
            b.append(slice(-ki, n))
    return tuple(a), tuple(b)


def seminorm_near(f: GridField, hn: HolderNorm):
    """``max |f(x) - f(y)| / |x - y|^beta`` over the fixed pair set."""
    g = f.grid
    v = f.values
    best = 0.0
    for k in pair_offsets(g.d, g.h, hn.L):
        if max(abs(x) for x in k) >= g.n:
            continue
        a, b = _shift_slices(k, g.n)
        diff = np.max(np.abs(v[a] - v[b])) if v[a].size else 0.0
        dist = g.h * math.sqrt(sum(x * x for x in k))
        best = max(best, diff / dist**hn.beta)
    return float(best)


def holder_parts(f: GridField, hn: HolderNorm):
    if f.grid.h > hn.L / 10.0 * (1 + 1e-12):
        raise HomolabError("grid-too-coarse", f"h={f.grid.h} exceeds L_n/10={hn.L / 10}")
    sup = float(np.max(np.abs(f.values)))
    osc = float(np.max(f.values) - np.min(f.values))
    near = hn.L**hn.beta * seminorm_near(f, hn)
    far = 2.0 ** (-hn.beta) * osc
    return sup, max(near, far)


def holder_norm(f: GridField, hn: HolderNorm) -> float:
    """``|f|_n`` over grid nodes."""
    sup, semi = holder_parts(f, hn)
    return sup + semi


def unscaled_holder_norm(f: GridField, beta, L=None):
    """``sup|f| + [f]_beta`` with pairs up to ``2L`` (defaults to the grid half width)."""
    L = f.grid.extent / 2.0 if L is None else L
    hn = HolderNorm(0, beta, float(L))
    semi = seminorm_near(f, hn)
    osc = float(np.max(f.values) - np.min(f.values))
    return float(np.max(np.abs(f.values))) + max(semi, osc / (2.0 * L) ** beta)


def check_product_inequality(f: GridField, g: GridField, hn: HolderNorm) -> bool:
    lhs = holder_norm(f * g, hn)
    rhs = holder_norm(f, hn) * holder_norm(g, hn)
    return bool(lhs <= rhs * (1 + FLOAT_SLACK))


def check_patching(f: GridField, patches, hn: HolderNorm) -> bool:
    """Test ``|f|_n <= 3 sup_i |g_i|_n`` after verifying the patch hypothesis on the grid."""
    grid = f.grid
    d = grid.d
    inner = 10.0 * math.sqrt(d) * hn.L
    outer = 20.0 * math.sqrt(d) * hn.L
    covered = np.zeros(grid.shape, dtype=bool)
    for x, g in patches:
        r = grid.radius(x)
        if not np.array_equal(f.values[r < outer], g.values[r < outer]):
            raise HomolabError("patch-hypothesis", f"f differs from its patch near {tuple(x)}")
        covered |= r < inner
    if np.any(f.values[~covered] != 0):
        raise HomolabError("patch-hypothesis", "f is nonzero outside the patch balls")
    lhs = holder_norm(f, hn)
    rhs = 3.0 * max((holder_norm(g, hn) for _, g in patches), default=0.0)
    return bool(lhs <= rhs * (1 + FLOAT_SLACK))


def standard_bank(grid, L, seed=0):
    """Compactly supported bank at scale ``L``: centred and offset bumps, a tent, a windowed
    trigonometric product and a seeded random sum of Gaussian blobs."""
    pts = grid.points()
    d = grid.d
    center = np.asarray(grid.center, dtype=float)
    r = np.sqrt(np.sum((pts - center) ** 2, axis=1))

    def bump(rr, radius):
        return np.maximum(0.0, 1.0 - (rr / radius) ** 2) ** 3

    off = center.copy()
    off[0] += L
    r_off = np.sqrt(np.sum((pts - off) ** 2, axis=1))
    window = bump(r, 4 * L)
    trig = np.prod(np.cos((pts[:, : min(d, 2)] - center[: min(d, 2)]) / L), axis=1) * window
    rng = np.random.default_rng(seed)
    blobs = np.zeros(len(pts))
    for _ in range(5):
        c = center + rng.uniform(-2 * L, 2 * L, size=d)
        rc = np.sqrt(np.sum((pts - c) ** 2, axis=1))
        blobs += rng.choice([-1.0, 1.0]) * np.exp(-0.5 * (rc / L) ** 2)
    blobs *= window
    fields = [bump(r, 2 * L), bump(r_off, 2 * L), np.maximum(0.0, 1.0 - r / (2 * L)), trig, blobs]
    return [GridField(grid, v.reshape(grid.shape)) for v in fields]


# ---------------------------------------------------------------- controls


@dataclass
class ControlReport:
    control: str
    x: tuple
    seed: int
    n: int
    measured: float
    bound: float
    satisfied: bool
    detail: dict = None

    def to_json(self):
        rec = asdict(self)
        rec["x"] = list(self.x)
        return json.dumps(rec, sort_keys=True)


def verify_control_holder(env, hier, alpha_n, n, x, test_bank, solver=None) -> ControlReport:
    """``max_f |chi_{n,x} S_n f|_n / |f|_n`` over the bank against ``L_n^-delta``."""
    if not test_bank:
        raise HomolabError("empty-bank", "test bank must be nonempty")
    hn = HolderNorm.from_hierarchy(hier, n)
    grid = test_bank[0].grid
    solver = solver or QuenchedSolver(env, grid)
    t = float(hier.L(n)) ** 2
    cut = CutoffSpec.chi_nx(hier, n, x).on_grid(grid)
    evolved = solver.apply_many(test_bank, t)
    ratios = []
    for f, rf in zip(test_bank, evolved):
        norm_f = holder_norm(f, hn)
        if not norm_f > 0:
            raise HomolabError("bad-bank", "bank members need |f|_n > 0")
        s = rf - gaussian_op(alpha_n, t, f)
        ratios.append(holder_norm(s * cut, hn) / norm_f)
    bound = float(hier.L(n)) ** (-hier.delta)
    measured = max(ratios)
    leak = max(r.leakage for r in evolved)
    return ControlReport(
        "holder", tuple(float(c) for c in x), int(env.params.seed), n, measured, bound, measured <= bound,
        {"ratios": ratios, "leakage": leak, "h": grid.h},
    )


def binomial_lower(k, N, level=0.95):
    """One-sided Clopper-Pearson lower confidence bound for a binomial proportion."""
    if k == 0:
        return 0.0
    return float(beta_dist.ppf(1.0 - level, k, N - k + 1))


def localization_starts(hier, n, x):
    """``3^d`` lattice of start points, corners at distance ``30 sqrt(d) L_n`` from ``x``."""
    d = hier.params.d
    s = 30.0 * hier.L(n)
    grid = np.array(np.meshgrid(*[[-1, 0, 1]] * d, indexing="ij")).reshape(d, -1).T
    return np.asarray(x, dtype=float) + s * grid


def verify_control_localization(env, hier, n, x, cfg) -> ControlReport:
    """Worst excess of the 95% lower confidence bound of ``P(X*_{L_n^2} >= v)`` over ``exp(-v/D_n)``."""
    from .sde_mc import SimConfig, simulate

    if cfg.n_paths < 1000:
        raise HomolabError("too-few-paths", "localization check needs at least 1000 paths per start")
    t = float(hier.L(n)) ** 2
    D = hier.levels[n].D
    levels = [D, 2 * D, 4 * D]
    rows = []
    measured = -math.inf
    starts = localization_starts(hier, n, x)
    for i, y in enumerate(starts):
        c = SimConfig(cfg.dt, t, cfg.n_paths, cfg.path_seed, (t,), None, cfg.first_index + i * cfg.n_paths)
        ens = simulate(env, c, y)
        for v in levels:
            k = int(np.sum(ens.running_max[-1] >= v))
            lo = binomial_lower(k, cfg.n_paths)
            bound = math.exp(-v / D)
            rows.append({"start": [float(a) for a in y], "v": v, "p_hat": k / cfg.n_paths, "p_lower95": lo, "bound": bound})
            measured = max(measured, lo - bound)
    return ControlReport(
        "localization", tuple(float(c) for c in x), int(env.params.seed), n, float(measured), 0.0,
        bool(measured <= 0.0), {"rows": rows, "dt": cfg.dt, "n_paths_per_start": cfg.n_paths},
    )


def verify_solver_localization(env, hier, n, x, margin=0.0, h=None, direction=None) -> ControlReport:
    """Check ``|R_{L_n^2} f|(y) <= exp(-dist(supp f, y) / D_n) sup|f|`` on ``B(x, 30 sqrt(d) L_n)``.

    ``f`` is the indicator of the complement of ``B(x, 30 sqrt(d) L_n + D_n + margin)``.
    The solve runs on a window about the point of the inner sphere in ``direction``
    (default ``e_1``) that reaches ``6 L_n`` beyond the support edge; the check
    uses the window nodes inside the ball and at least ``6 L_n`` from the window edge.
    """
    d = env.d
    L = float(hier.L(n))
    D = hier.levels[n].D
    t = L * L
    h = L / 5.0 if h is None else float(h)
    x = np.asarray(x, dtype=float)
    e = np.zeros(d)
    if direction is None:
        e[0] = 1.0
    else:
        e[:] = direction
        e /= np.linalg.norm(e)
    R0 = 30.0 * math.sqrt(d) * L
    Rs = R0 + D + margin
    reach = 6.0 * L
    hw = D + margin + 2.0 * reach
    grid = Grid.around(x + R0 * e, hw, h)
    r = grid.radius(x)
    f = GridField(grid, (r >= Rs).astype(float))
    solver = QuenchedSolver(env, grid)
    u = solver.apply(f, t, margin=reach)
    dist = np.full(grid.shape, np.inf)
    for i in range(d):
        sh = [1] * d
        sh[i] = grid.n
        dist = np.minimum(dist, (grid.extent - np.abs(grid.axis(i) - grid.center[i])).reshape(sh))
    check = (r <= R0) & (dist >= reach)
    if not np.any(check):
        raise HomolabError("grid-too-coarse", "no grid node inside the checked region")
    bound = np.exp(-(Rs - r[check]) / D)
    vals = np.abs(u.values[check])
    excess = float(np.max(vals - bound))
    worst = int(np.argmax(vals / bound))
    return ControlReport(
        "solver-localization", tuple(float(c) for c in x), int(env.params.seed), n, float(np.max(vals / bound)), 1.0,
        excess <= 0.0, {"max_value": float(vals.max()), "worst_value": float(vals[worst]),
                        "worst_bound": float(bound[worst]), "leakage": u.leakage, "h": h, "margin": margin},
    )
