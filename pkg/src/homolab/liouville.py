"""Sub-linear probe experiments and the ancient-solution operator comparison."""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import HomolabError
from .estimators import empirical_density, entropy
from .holder import unscaled_holder_norm
from .semigroup import Grid, GridField, QuenchedSolver, gaussian_op
from .sde_mc import SimConfig, simulate

PROBE_KINDS = ("constant", "linear", "power", "log")


@dataclass(frozen=True)
class SublinearProbe:
    """``constant`` (value ``c``), ``linear`` (``e . x``), ``power`` (``|x|^gamma``) or ``log`` (``ln(1+|x|)``)."""

    kind: str
    c: float = 1.0
    gamma: float = 0.5
    e: tuple = None

    def __post_init__(self):
        if self.kind not in PROBE_KINDS:
            raise HomolabError("bad-probe", f"probe kind must be one of {PROBE_KINDS}")
        if self.kind == "power" and not (0.0 < self.gamma < 1.0):
            raise HomolabError("bad-probe", "power probes need gamma in (0, 1)")

    @property
    def sublinear(self):
        return self.kind != "linear"

    @classmethod
    def parse(cls, text):
        """``constant[:c]``, ``linear``, ``power[:gamma]`` or ``log``."""
        kind, _, arg = text.partition(":")
        if kind == "constant":
            return cls(kind, c=float(arg) if arg else 1.0)
        if kind == "power":
            return cls(kind, gamma=float(arg) if arg else 0.5)
        if arg:
            raise HomolabError("bad-probe", f"probe {kind!r} takes no argument")
        return cls(kind)

    def label(self):
        if self.kind == "constant":
            return f"constant:{self.c:g}"
        if self.kind == "power":
            return f"power:{self.gamma:g}"
        return self.kind

    def __call__(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if self.kind == "constant":
            return np.full(y.shape[0], float(self.c))
        if self.kind == "linear":
            e = np.zeros(y.shape[1])
            if self.e is None:
                e[0] = 1.0
            else:
                e[:] = self.e
            return y @ e
        r = np.sqrt(np.sum(y * y, axis=1))
        if self.kind == "power":
            return r**self.gamma
        return np.log1p(r)


@dataclass
class LiouvilleReport:
    probe: str
    env_seed: int
    lhs: float
    lhs_se: float
    entropy_factor: float
    diffusivity_factor: float
    product_bound: float
    rows: list
    oscillation: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def product_bound_experiment(env, probe: SublinearProbe, n_grid, cfg: SimConfig, n_roots=8, x0=None,
                             alpha_guess=1.0) -> LiouvilleReport:
    """Estimate ``E|w(0) - w(X_1)|`` and the entropy-diffusivity product that bounds it.

    For each ``n`` the entropy term is ``n (H_n - mean_m H_{n-1}[shifted by X_1^m])`` where the
    shifted entropies come from ``n_roots`` environments re-rooted at time-one positions,
    each simulated with ``cfg.n_paths`` paths so that histogram biases match the main run.
    """
    n_grid = sorted(int(n) for n in n_grid)
    if not n_grid or any(n < 2 or (n & (n - 1)) for n in n_grid):
        raise HomolabError("bad-n", "n_grid must be powers of two >= 2")
    if n_roots < 2:
        raise HomolabError("bad-config", "need at least two roots")
    d = env.d
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    w0 = float(probe(x0)[0])
    times = tuple([1.0] + [float(n) for n in n_grid])
    N = cfg.n_paths
    main = simulate(env, SimConfig(cfg.dt, times[-1], N, cfg.path_seed, times, None, cfg.first_index), x0)
    diffs = np.abs(w0 - probe(main.endpoints[0]))
    lhs, lhs_se = float(diffs.mean()), float(diffs.std(ddof=1) / math.sqrt(N))

    H_main = {}
    for j, t in enumerate(times[1:], start=1):
        H_main[int(t)] = entropy(empirical_density(main.endpoints[j], t, center=x0, alpha_guess=alpha_guess,
                                                  nu=env.params.nu))["H_hat_mm"]
    root_times = tuple(float(n - 1) for n in n_grid)
    H_root = {n: [] for n in n_grid}
    origin = np.zeros(d)
    for m in range(n_roots):
        y = main.endpoints[0, m]
        shifted = env.shifted(y)
        c = SimConfig(cfg.dt, root_times[-1], N, cfg.path_seed, root_times, None, cfg.first_index + (m + 1) * N)
        ens = simulate(shifted, c, origin)
        for j, n in enumerate(n_grid):
            H_root[n].append(entropy(empirical_density(ens.endpoints[j], n - 1, center=origin,
                                                       alpha_guess=alpha_guess, nu=env.params.nu))["H_hat_mm"])

    rows = []
    for j, n in enumerate(n_grid, start=1):
        hr = np.asarray(H_root[n])
        ent = n * (H_main[n] - hr.mean())
        ent_se = n * hr.std(ddof=1) / math.sqrt(hr.size)
        w2 = (probe(main.endpoints[j]) - w0) ** 2
        dif = float(w2.mean() / n)
        dif_se = float(w2.std(ddof=1) / math.sqrt(N) / n)
        ent_pos = max(ent, 0.0)
        prod = 2.0 * math.sqrt(ent_pos * dif)
        # delta-method error of 2 sqrt(E D)
        if ent_pos > 0 and dif > 0:
            prod_se = prod * 0.5 * math.hypot(ent_se / ent_pos, dif_se / dif)
        else:
            prod_se = 0.0
        rows.append({"n": n, "entropy_term": float(ent), "entropy_se": float(ent_se), "diffusivity_factor": dif,
                     "diffusivity_se": dif_se, "product": prod, "product_se": prod_se})
    best = min(rows, key=lambda r: r["product"])
    return LiouvilleReport(probe.label(), int(env.params.seed), lhs, lhs_se, best["entropy_term"],
                           best["diffusivity_factor"], best["product"], rows)


def oscillation_decay(env, probe: SublinearProbe, times, grid, radius=1.0, dt=None):
    """``osc`` over the ball of ``radius`` about the grid centre of ``R_t w``, for increasing ``times``."""
    times = [float(t) for t in times]
    if any(b <= a for a, b in zip(times, times[1:])) or (times and times[0] < 0):
        raise HomolabError("bad-times", "times must be nonnegative and increasing")
    solver = QuenchedSolver(env, grid, dt=dt)
    f = GridField.from_function(grid, probe)
    ball = grid.radius() <= radius + 1e-12
    if not np.any(ball):
        raise HomolabError("grid-too-coarse", "no grid node inside the oscillation ball")
    out, cur, t_prev = [], f, 0.0
    for t in times:
        cur = solver.apply(cur, t - t_prev)
        t_prev = t
        v = cur.values[ball]
        out.append({"t": t, "osc": float(v.max() - v.min()), "leakage": cur.leakage})
    return out


def ancient_comparison(env, hier, n, f: GridField, alpha_n, solver=None, radius=None):
    """``sup |R_{n+1} f - Rbar_n^(ell_n^2 - 6) R_n^6 f|`` over the grid within ``radius``
    (default ``D~_{n+1}``), with the unit-constant bound shape ``L_n^(beta - 7(delta - 2a)) ||f||_{C^0,beta}``.

    ``R_{n+1}`` runs for ``ell_n^2 L_n^2``.  Powers of ``R_n`` share the solver and its step; the
    Gaussian power is one convolution of the summed time, which is the same operator.
    """
    lv = hier.levels[n]
    if lv.ell is None:
        raise HomolabError("bad-level", f"level {n} has no successor")
    ell2 = lv.ell**2
    if ell2 <= 6:
        raise HomolabError("level-too-small", f"ell_n^2 = {ell2} <= 6")
    L2 = float(lv.L) ** 2
    solver = solver or QuenchedSolver(env, f.grid)
    # R_{n+1} = R_{(ell^2-6) L^2} R_{6 L^2}: the first stage is shared with R_n^6
    k6 = solver.steps_for(6 * L2)
    kn = k6 + solver.steps_for((ell2 - 6) * L2)
    (u6,), ind6 = solver.run([f.values], 6 * L2)
    (uN,), indN = solver.run([u6], (ell2 - 6) * L2)
    rhs = gaussian_op(alpha_n, (ell2 - 6) * L2, f.with_values(u6))
    R = hier.levels[n + 1].D_tilde if radius is None and n + 1 < len(hier.levels) else radius
    mask = np.ones(f.grid.shape, bool) if R is None else f.grid.radius() <= R
    err = float(np.max(np.abs(uN - rhs.values)[mask]))
    leak = solver.leakage(ind6, 6 * L2) + solver.leakage(indN, ell2 * L2)
    beta, a, delta = hier.params.beta, hier.params.a, hier.delta
    shape = float(lv.L) ** (beta - 7 * (delta - 2 * a)) * unscaled_holder_norm(f, beta)
    return {"sup_error": err, "paper_bound_shape": shape, "fitted_C": err / shape, "leakage": leak,
            "sup_f": f.sup(), "steps": {"six": k6, "total": kn}}


def regularization_check(env, g: GridField, t, beta=0.5, dt=None, solver=None, margin=None):
    """Unscaled ``C^{0,beta}`` norm of ``R_t g`` divided by ``sup|g|``.

    The norm is taken over nodes at least ``margin`` (default ``6 sqrt(nu t)``) inside the
    grid boundary, where the absorbing boundary has not yet been felt.
    """
    if t < 1:
        raise HomolabError("bad-time", "t must be at least 1")
    sup = g.sup()
    if not sup > 0:
        raise HomolabError("bad-field", "g must not vanish identically")
    solver = solver or QuenchedSolver(env, g.grid, dt=dt)
    u = solver.apply(g, t)
    grid = g.grid
    margin = 6.0 * math.sqrt(env.params.nu * t) if margin is None else float(margin)
    k = int(math.ceil(margin / grid.h - 1e-12))
    if 2 * k >= grid.n - 1:
        raise HomolabError("grid-too-small", f"no interior node {margin} inside the boundary")
    inner = Grid(grid.center, grid.h * (grid.n // 2 - k), grid.h, grid.n - 2 * k)
    crop = u.values[tuple(slice(k, grid.n - k) for _ in range(grid.d))]
    return unscaled_holder_norm(GridField(inner, crop), beta) / sup
