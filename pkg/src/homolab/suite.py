"""The acceptance battery: one function per criterion, shared by the CLI and the test suite.

Each criterion returns a :class:`CriterionResult` whose ``record`` holds only
seed-determined numbers, so artifacts written from it are reproducible byte
for byte.  Wall-clock time is kept separately in ``elapsed``.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .environment import EnvParams, sample_environment
from .errors import HomolabError
from .rng import seed_sequence
from .scales import ScaleParams, build_hierarchy, decompose_time, decompose_times

ETA = 0.05
NU = 1.0 / (1.0 - ETA)


@dataclass
class CriterionResult:
    cid: int
    name: str
    passed: bool
    budget: float
    record: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def in_time(self):
        return self.elapsed <= self.budget

    @property
    def ok(self):
        return self.passed and self.in_time

    def line(self):
        verdict = "PASS" if self.ok else "FAIL"
        why = "" if self.passed else " (predicate failed)"
        if self.passed and not self.in_time:
            why = " (over runtime budget)"
        return f"criterion {self.cid:2d} {self.name}: {verdict}{why} [{self.elapsed:.1f} s of {self.budget:g} s]"


def _env(eta, seed, mode=None):
    mode = mode or ("zero" if eta == 0 else "full")
    return sample_environment(EnvParams(d=3, eta=eta, mode=mode, seed=seed))


def _desk(nmax=2):
    return build_hierarchy(ScaleParams(nmax=nmax))


# ---------------------------------------------------------------- criteria


def crit_hierarchy(seed=0):
    """Table against an independent recomputation, and 10^6 integer decompositions."""
    h = _desk()
    L0, a, c0, beta = 25, 0.5, 0.5, 0.5
    Ls = [L0]
    for _ in range(2):
        Ls.append(Ls[-1] * 5 * int(math.isqrt(Ls[-1]) // 5))
    table_ok = True
    for lv, L in zip(h.levels, Ls):
        k = math.exp(c0 * math.log(math.log(L)) ** 2)
        kt = math.exp(2 * c0 * math.log(math.log(L)) ** 2)
        ell = None if lv.n == 2 else Ls[lv.n + 1] // L
        table_ok &= (lv.L, lv.ell, lv.kappa, lv.kappa_tilde, lv.D, lv.D_tilde) == (L, ell, k, kt, L * k, L * kt)
    table_ok &= h.delta == 5 * beta / 32 == 5 / 64 and h.mbar == 3 and h.m0 == 13
    # decompositions need n >= mbar = 3, so the same parameters are extended by one level
    h3 = _desk(nmax=3)
    lo, hi = h3.L(3) ** 2, h3.L(4) ** 2
    ts = np.random.default_rng(seed).integers(lo, hi, size=10**6, dtype=np.int64)
    k, rem = decompose_times(h3, 3, ts)
    sq = np.array([h3.L(3 - j) ** 2 for j in range(4)], dtype=np.int64)
    recon_ok = bool(np.array_equal(rem + k @ sq, ts)) and bool(np.all((rem >= 0) & (rem < sq[-1])))
    spot = [decompose_time(h3, 3, int(t)) for t in ts[:200]]
    spot_ok = all(tuple(k[i]) == s.k and rem[i] == s.t_tilde for i, s in enumerate(spot))
    rec = {"levels": [[lv.L, lv.ell, lv.kappa, lv.D, lv.D_tilde] for lv in h.levels], "delta": h.delta,
           "mbar": h.mbar, "m0": h.m0, "table_matches": bool(table_ok), "n_times": int(ts.size),
           "reconstruct_exact": recon_ok, "scalar_agrees": spot_ok}
    return table_ok and recon_ok and spot_ok, rec


def crit_brownian_alpha(seed=0):
    from .estimators import estimate_alpha
    from .sde_mc import SimConfig

    h = _desk()
    cfg = SimConfig(0.01, 625.0, 10**4, path_seed=seed, stop_radius=h.levels[0].D_tilde)
    e = estimate_alpha(_env(0.0, seed), h, 0, cfg)
    ok = abs(e.alpha_hat - 1.0) <= 3 * e.std_err
    return ok, {"alpha_hat": e.alpha_hat, "std_err": e.std_err, "n_paths": e.n_paths, "dt": cfg.dt}


def crit_perturbed_bracket(seed=0, n_seeds=16, paths=512, dt=0.05):
    from .estimators import estimate_alpha
    from .sde_mc import SimConfig

    h = _desk()
    envs = [_env(ETA, s) for s in seed_sequence(seed, n_seeds)]
    cfg = SimConfig(dt, 625.0, paths, path_seed=seed, stop_radius=h.levels[0].D_tilde)
    e = estimate_alpha(envs, h, 0, cfg)
    lo, hi = 1 / (2 * NU), 2 * NU
    return lo <= e.alpha_hat <= hi, {"alpha_hat": e.alpha_hat, "std_err": e.std_err, "n_envs": e.n_envs,
                                     "paths_per_env": paths, "dt": dt, "bracket": [lo, hi]}


def crit_gaussian_entropy(seed=0):
    from .estimators import entropy_growth
    from .sde_mc import SimConfig

    cur = entropy_growth(_env(0.0, seed), [1, 4, 16], SimConfig(0.01, 16.0, 10**5, path_seed=seed))
    errs = [p["H_hat_mm"] - 1.5 * math.log(2 * math.pi * math.e * p["t"]) for p in cur.points]
    ok = all(abs(e) <= 0.1 for e in errs) and 1.35 <= cur.slope <= 1.65
    return ok, {"points": cur.points, "errors": errs, "slope": cur.slope}


def crit_entropy_log_growth(seed=0):
    from .estimators import entropy_growth
    from .sde_mc import SimConfig

    cur = entropy_growth(_env(ETA, seed), [1, 4, 16, 64], SimConfig(0.05, 64.0, 10**5, path_seed=seed))
    ok = math.isfinite(cur.slope) and cur.slope <= 6 and cur.log_bounded
    return ok, {"points": cur.points, "slope": cur.slope, "C_fit": cur.C_fit, "log_bounded": cur.log_bounded}


def crit_entropy_increment_zero(seed=0):
    from .estimators import entropy_increment_probe
    from .sde_mc import SimConfig

    rows = entropy_increment_probe(_env(0.0, seed), [4, 8, 16], SimConfig(0.01, 16.0, 10**5, path_seed=seed))
    ok = all(abs(r["value"] - 1.5) <= 0.3 for r in rows)
    return ok, {"rows": rows}


def crit_entropy_increment(seed=0):
    from .estimators import entropy_increment_probe
    from .sde_mc import SimConfig

    ok0, rec0 = crit_entropy_increment_zero(seed)
    envs = [_env(ETA, s) for s in seed_sequence(seed, 4)]
    rows = entropy_increment_probe(envs, [4, 8, 16], SimConfig(0.05, 16.0, 10**5, path_seed=seed))
    m = min(r["value"] for r in rows)
    return ok0 and m <= 4, {"eta0": rec0["rows"], "eta005": rows, "min_eta005": m}


def crit_localization(seed=0, dt=0.25, paths_per_start=1000):
    from .holder import verify_control_localization
    from .sde_mc import SimConfig

    h = _desk()
    cfg = SimConfig(dt, 625.0, paths_per_start, path_seed=seed)
    out, ok = {}, True
    for eta in (0.0, ETA):
        rep = verify_control_localization(_env(eta, seed), h, 0, (0.0, 0.0, 0.0), cfg)
        ok &= rep.satisfied
        worst = max(rep.detail["rows"], key=lambda r: r["p_lower95"] - r["bound"])
        out[f"eta={eta:g}"] = {"measured": rep.measured, "satisfied": rep.satisfied, "worst": worst}
    return ok, out


def _random_field(rng, grid):
    kind = rng.integers(3)
    if kind == 0:
        v = rng.normal(size=grid.shape)
    elif kind == 1:
        pts = grid.points()
        w = rng.normal(size=grid.d) / (grid.extent / 3)
        v = np.sin(pts @ w + rng.uniform(0, 2 * np.pi)).reshape(grid.shape)
    else:
        v = rng.normal(size=grid.shape).cumsum(axis=0) / grid.n
    return v * rng.uniform(0.1, 10.0) + rng.uniform(-1, 1)


def crit_holder_machinery(seed=0, trials=1000):
    from .holder import HolderNorm, check_patching, check_product_inequality, holder_norm, standard_bank
    from .semigroup import Grid, GridField, gaussian_op

    rng = np.random.default_rng(seed)
    prod_fail = 0
    for i in range(trials):
        d = 1 + i % 3
        L = float(rng.uniform(2.0, 6.0))
        h = L / 10
        grid = Grid.around(np.zeros(d), {1: 40, 2: 12, 3: 4}[d] * h, h)
        hn = HolderNorm(0, float(rng.uniform(0.05, 0.5)), L)
        f = GridField(grid, _random_field(rng, grid))
        g = GridField(grid, _random_field(rng, grid))
        prod_fail += not check_product_inequality(f, g, hn)
    patch_fail = 0
    for i in range(trials):
        L = float(rng.uniform(0.5, 1.5))
        hn = HolderNorm(0, float(rng.uniform(0.05, 0.5)), L)
        k = int(rng.integers(1, 4))
        sep = 35.0 * L
        grid = Grid.around(np.zeros(1), (k + 1) * sep / 2, L / 10)
        x = grid.axis(0)
        f = np.zeros(grid.shape)
        patches = []
        for j in range(k):
            c = (j - (k - 1) / 2) * sep
            r = np.abs(x - c) / (10 * L)
            bumpy = np.where(r < 1, _random_field(rng, grid) * (1 - r**2) ** 2, 0.0)
            f += bumpy
            patches.append(((c,), bumpy))
        F = GridField(grid, f)
        pfs = [((c,), GridField(grid, F.values * (np.abs(x - c[0]) < sep / 2))) for c, _ in patches]
        patch_fail += not check_patching(F, pfs, hn)
    # Gaussian smoothing does not increase |.|_0 on the bank
    hier = _desk()
    hn0 = HolderNorm.from_hierarchy(hier, 0)
    grid = Grid.around(np.zeros(3), 100.0, 2.5)
    gaps = [holder_norm(gaussian_op(1.0, 625.0, f), hn0) - holder_norm(f, hn0) for f in standard_bank(grid, 25.0, seed)]
    ok = prod_fail == 0 and patch_fail == 0 and max(gaps) <= 1e-3
    return ok, {"product_trials": trials, "product_failures": prod_fail, "patch_trials": trials,
                "patch_failures": patch_fail, "smoothing_gaps": gaps}


def crit_holder_control(seed=0, h=2.5, half_width=175.0):
    from .holder import standard_bank, verify_control_holder
    from .semigroup import Grid

    hier = _desk()
    grid = Grid.around(np.zeros(3), half_width, h)
    rep = verify_control_holder(_env(0.0, seed), hier, 1.0, 0, (0.0, 0.0, 0.0), standard_bank(grid, 25.0, seed))
    ok = rep.measured <= 0.02 and rep.satisfied
    return ok, {"measured": rep.measured, "bound": rep.bound, "ratios": rep.detail["ratios"],
                "leakage": rep.detail["leakage"], "h": h, "half_width": half_width}


def crit_liouville(seed=0, paths=10**5, dt=0.05, n_roots=8):
    from .liouville import SublinearProbe, product_bound_experiment
    from .sde_mc import SimConfig

    env = _env(0.0, seed)
    cfg = SimConfig(dt, 16.0, paths, path_seed=seed)
    grid = [2, 4, 8, 16]
    reps = {p: product_bound_experiment(env, SublinearProbe.parse(p), grid, cfg, n_roots=n_roots)
            for p in ("constant:1", "power:0.5", "linear")}
    const_ok = reps["constant:1"].lhs == 0.0
    rows = reps["power:0.5"].rows
    mono = all(b["product"] <= a["product"] + 2 * math.hypot(a["product_se"], b["product_se"])
               for a, b in zip(rows, rows[1:]))
    lin = reps["linear"].rows
    stall = lin[-1]["product"] / lin[0]["product"]
    decay = rows[-1]["product"] / rows[0]["product"]
    ok = const_ok and mono and stall > 0.8 and decay < stall
    return ok, {"constant_lhs": reps["constant:1"].lhs, "power_rows": rows, "linear_rows": lin,
                "power_decay_ratio": decay, "linear_stall_ratio": stall, "monotone": mono}


def _unit_bump(grid, L):
    from .semigroup import GridField

    r = grid.radius()
    return GridField(grid, np.maximum(0.0, 1.0 - (r / L) ** 2) ** 3)


def crit_ancient_zero(seed=0, h=10.0, half_width=780.0):
    from .liouville import ancient_comparison
    from .semigroup import Grid

    hier = _desk()
    grid = Grid.around(np.zeros(3), half_width, h)
    res = ancient_comparison(_env(0.0, seed), hier, 0, _unit_bump(grid, 25.0), 1.0)
    return res["sup_error"] <= 1e-2, {"eta0": res, "h": h, "half_width": half_width}


def crit_ancient(seed=0, h=10.0, half_width=780.0):
    from .liouville import ancient_comparison
    from .semigroup import Grid

    ok0, rec = crit_ancient_zero(seed, h, half_width)
    hier = _desk()
    grid = Grid.around(np.zeros(3), half_width, h)
    f = _unit_bump(grid, 25.0)
    res = ancient_comparison(_env(ETA, seed), hier, 0, f, 1.0)
    rec["eta005"] = res
    return ok0 and res["sup_error"] <= 0.5 * f.sup(), rec


CRITERIA = {
    1: ("hierarchy arithmetic", crit_hierarchy, 1.0),
    2: ("Brownian diffusivity", crit_brownian_alpha, 60.0),
    3: ("perturbed bracket", crit_perturbed_bracket, 600.0),
    4: ("Gaussian entropy oracle", crit_gaussian_entropy, 300.0),
    5: ("entropy log-growth", crit_entropy_log_growth, 600.0),
    6: ("entropy increment", crit_entropy_increment, 600.0),
    7: ("localization control", crit_localization, 300.0),
    8: ("Hoelder machinery", crit_holder_machinery, 60.0),
    9: ("Hoelder control", crit_holder_control, 300.0),
    10: ("Liouville probe", crit_liouville, 600.0),
    11: ("ancient comparison", crit_ancient, 900.0),
}

# the eta = 0 battery; criteria 6 and 11 contribute their eta = 0 halves
QUICK = {
    1: CRITERIA[1],
    2: CRITERIA[2],
    4: CRITERIA[4],
    6: ("entropy increment (eta=0)", crit_entropy_increment_zero, 600.0),
    8: CRITERIA[8],
    11: ("ancient comparison (eta=0)", crit_ancient_zero, 900.0),
}


def run_criterion(cid, seed=0, table=None) -> CriterionResult:
    table = CRITERIA if table is None else table
    if cid not in table:
        raise HomolabError("bad-criterion", f"unknown criterion {cid}")
    name, fn, budget = table[cid]
    t0 = time.perf_counter()
    passed, rec = fn(seed)
    return CriterionResult(cid, name, bool(passed), budget, rec, time.perf_counter() - t0)
