"""Diffusivity, transition-density and entropy estimators built on path ensembles.

Entropies use the plug-in histogram estimator
``H = -sum_i (c_i/N) ln(c_i / (N h^d))`` on cubic bins of width
``h = sqrt(alpha_guess t) N^(-1/(d+4))``, with the Miller-Madow term
``(K - 1) / (2N)`` (``K`` occupied bins) reported alongside.  Because the bin
width scales with ``sqrt(t)``, the estimator's bias on a diffusive density does
not drift with ``t``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import HomolabError
from .scales import decompose_time
from .sde_mc import PathEnsemble, SimConfig, simulate

MIN_SAMPLES = 1000
_REL = 1e-9


@dataclass(frozen=True)
class DiffusivityEstimate:
    n: int
    alpha_hat: float
    std_err: float
    mode: str
    n_paths: int
    n_envs: int


@dataclass
class TransitionHistogram:
    t: float
    bin_width: float
    box_radius: float
    center: np.ndarray
    bins: np.ndarray
    counts: np.ndarray
    n_samples: int
    out_of_box: int

    @property
    def out_fraction(self):
        return self.out_of_box / self.n_samples

    @property
    def d(self):
        return self.bins.shape[1]


@dataclass
class EntropyCurve:
    points: list
    slope: float
    intercept: float
    log_bounded: bool
    C_fit: float
    corrected: bool = True
    meta: dict = field(default_factory=dict)


def _as_list(env_or_envs):
    return list(env_or_envs) if isinstance(env_or_envs, (list, tuple)) else [env_or_envs]


def estimate_alpha(env_or_envs, hier, n, cfg: SimConfig, x0=None) -> DiffusivityEstimate:
    """``mean |X_{T_n ^ L_n^2} - x0|^2 / (d L_n^2)``, quenched for one environment, annealed for a list.

    In annealed mode every environment gets the same paths-per-environment
    and the standard error is the spread of per-environment means.
    """
    envs = _as_list(env_or_envs)
    d = envs[0].d
    L2 = float(hier.L(n)) ** 2
    Dt = hier.levels[n].D_tilde
    if abs(cfg.t_end - L2) > _REL * L2:
        raise HomolabError("bad-config", f"t_end must equal L_n^2 = {L2}")
    if cfg.stop_radius is None or abs(cfg.stop_radius - Dt) > _REL * Dt:
        raise HomolabError("bad-config", f"stop_radius must equal D~_n = {Dt}")
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    per_env = []
    all_vals = []
    for k, env in enumerate(envs):
        c = SimConfig(cfg.dt, cfg.t_end, cfg.n_paths, cfg.path_seed, (cfg.t_end,), cfg.stop_radius,
                      cfg.first_index + k * cfg.n_paths)
        ens = simulate(env, c, x0)
        vals = np.sum((ens.stopped_point - x0) ** 2, axis=1) / (d * L2)
        per_env.append(vals.mean())
        all_vals.append(vals)
    if len(envs) == 1:
        v = all_vals[0]
        return DiffusivityEstimate(n, float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)), "quenched",
                                   cfg.n_paths, 1)
    m = np.asarray(per_env)
    return DiffusivityEstimate(n, float(m.mean()), float(m.std(ddof=1) / math.sqrt(m.size)), "annealed",
                               cfg.n_paths, len(envs))


def diffusivity_curve(env, times, cfg: SimConfig, x0=None):
    """``(1/(t d)) mean |X_t - x0|^2`` with standard errors, all times from one ensemble."""
    times = [float(t) for t in times]
    if not times:
        return []
    if any(b < a for a, b in zip(times, times[1:])):
        raise HomolabError("bad-times", "times must be sorted")
    d = env.d
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    c = SimConfig(cfg.dt, times[-1], cfg.n_paths, cfg.path_seed, tuple(times), None, cfg.first_index)
    ens = simulate(env, c, x0)
    out = []
    for j, t in enumerate(times):
        m, se = ens.mean_sq(j)
        out.append({"t": t, "value": m / (t * d), "se": se / (t * d)})
    return out


def decomposition_check(env, hier, n, t, alphas, cfg: SimConfig, x0=None):
    """Compare ``mean |X_t|^2`` with ``d (alpha_n t~ + sum_j k_{n-j} L_{n-j}^2 alpha_{n-j})``.

    ``alphas`` maps level to diffusivity.  The reported shape is
    ``max_j |alpha_{n-j} - alpha_n| + L_{n-mbar}^(10a - delta)`` with unit constant.
    """
    dec = decompose_time(hier, n, t)
    d = env.d
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    c = SimConfig(cfg.dt, float(t), cfg.n_paths, cfg.path_seed, (float(t),), None, cfg.first_index)
    ens = simulate(env, c, x0)
    lhs, se = ens.mean_sq()
    rhs = alphas[n] * dec.t_tilde
    for j, kj in enumerate(dec.k):
        rhs += kj * float(hier.L(n - j)) ** 2 * alphas[n - j]
    rhs *= d
    gap = abs(lhs - rhs) / (t * d)
    a, delta = hier.params.a, hier.delta
    spread = max(abs(alphas[n - j] - alphas[n]) for j in range(hier.mbar + 1))
    shape = spread + float(hier.L(n - hier.mbar)) ** (10 * a - delta)
    return {"lhs": lhs, "rhs": rhs, "gap": gap, "gap_se": se / (t * d), "shape": shape,
            "k": list(dec.k), "t_tilde": dec.t_tilde}


def default_bin_width(t, n_samples, d, alpha_guess=1.0):
    return math.sqrt(alpha_guess * t) * n_samples ** (-1.0 / (d + 4))


def empirical_density(points, t, center=None, bin_width=None, box_radius=None, alpha_guess=1.0, nu=1.0,
                      c1_scale=0.0) -> TransitionHistogram:
    """Histogram of ``points`` (an ``(N, d)`` array or a :class:`PathEnsemble` at its last record)."""
    if isinstance(points, PathEnsemble):
        if center is None:
            center = points.x0[0]
        points = points.endpoints[-1]
    points = np.asarray(points, dtype=float)
    N, d = points.shape
    if N < MIN_SAMPLES:
        raise HomolabError("too-few-samples", f"need at least {MIN_SAMPLES} samples")
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    hb = default_bin_width(t, N, d, alpha_guess) if bin_width is None else float(bin_width)
    if not (hb > 0 and math.isfinite(hb)):
        raise HomolabError("degenerate-bin-width", f"bin width {hb}")
    R = max(c1_scale, 5.0 * math.sqrt(nu * d * t)) if box_radius is None else float(box_radius)
    rel = (points - center + R) / hb
    inside = np.all((rel >= 0) & (points - center < R), axis=1)
    idx = np.floor(rel[inside]).astype(np.int64)
    bins, counts = np.unique(idx, axis=0, return_counts=True)
    return TransitionHistogram(float(t), hb, R, center, bins, counts, N, int(N - inside.sum()))


def entropy(hist: TransitionHistogram):
    """Plug-in differential entropy and its Miller-Madow corrected value."""
    N = hist.n_samples
    p = hist.counts / N
    H = float(-np.sum(p * np.log(p / hist.bin_width ** hist.d)))
    K = hist.counts.size
    return {"H_hat": H, "H_hat_mm": H + (K - 1) / (2.0 * N)}


def _geometric(times):
    r = [b / a for a, b in zip(times, times[1:])]
    return all(abs(x - r[0]) <= 1e-9 * r[0] for x in r) and r[0] > 1


def entropy_growth(env, times, cfg: SimConfig, x0=None, corrected=True, alpha_guess=1.0) -> EntropyCurve:
    """Entropy at geometric times, least-squares slope against ``ln t``, and the log-growth check."""
    times = [float(t) for t in times]
    if len(times) < 3:
        raise HomolabError("too-few-times", "need at least three times")
    if times[0] < 1 or not _geometric(times):
        raise HomolabError("bad-times", "times must be >= 1 and geometrically spaced")
    d = env.d
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    c = SimConfig(cfg.dt, times[-1], cfg.n_paths, cfg.path_seed, tuple(times), None, cfg.first_index)
    ens = simulate(env, c, x0)
    pts = []
    for j, t in enumerate(times):
        e = entropy(empirical_density(ens.endpoints[j], t, center=x0, alpha_guess=alpha_guess, nu=env.params.nu))
        pts.append({"t": t, "H_hat": e["H_hat"], "H_hat_mm": e["H_hat_mm"], "n_samples": cfg.n_paths})
    key = "H_hat_mm" if corrected else "H_hat"
    H = np.array([p[key] for p in pts])
    lt = np.log(times)
    slope, intercept = np.polyfit(lt, H, 1)
    C_fit = float(np.max(H / (lt + 1.0)))
    bounded = bool(np.all(H <= C_fit * (lt + 1.0) * (1 + 1e-12)))
    return EntropyCurve(pts, float(slope), float(intercept), bounded, C_fit, corrected)


def entropy_increment_probe(envs, n_list, cfg: SimConfig, x0=None, corrected=True, alpha_guess=1.0):
    """Per ``n``: ``n (H_n - H_{n-1})`` averaged over environments (an ensemble surrogate for the
    invariant-measure average, labelled ``pi-surrogate``)."""
    envs = _as_list(envs)
    n_list = [int(n) for n in n_list]
    if any(n < 2 for n in n_list):
        raise HomolabError("bad-n", "every n must be >= 2")
    times = sorted({float(t) for n in n_list for t in (n - 1, n)})
    d = envs[0].d
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    key = "H_hat_mm" if corrected else "H_hat"
    per_env = []
    for k, env in enumerate(envs):
        c = SimConfig(cfg.dt, times[-1], cfg.n_paths, cfg.path_seed, tuple(times), None,
                      cfg.first_index + k * cfg.n_paths)
        ens = simulate(env, c, x0)
        H = {}
        for j, t in enumerate(times):
            H[t] = entropy(empirical_density(ens.endpoints[j], t, center=x0, alpha_guess=alpha_guess,
                                             nu=env.params.nu))[key]
        per_env.append({n: n * (H[float(n)] - H[float(n - 1)]) for n in n_list})
    rows = []
    for n in n_list:
        v = np.array([p[n] for p in per_env])
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
        rows.append({"n": n, "value": float(v.mean()), "se": se, "n_envs": len(envs), "label": "pi-surrogate"})
    return rows


def _tail_constant(p, R, t, hi=1e3):
    """Smallest ``C >= 1`` with ``p <= exp(-(R - C t)_+^2 / (C t))``; ``None`` if above ``hi``."""

    def ok(C):
        gap = max(R - C * t, 0.0)
        return p <= math.exp(-gap * gap / (C * t))

    if ok(1.0):
        return 1.0
    if not ok(hi):
        return None
    lo, up = 1.0, hi
    for _ in range(200):
        mid = 0.5 * (lo + up)
        if ok(mid):
            up = mid
        else:
            lo = mid
        if up - lo <= 1e-9 * up:
            break
    return up


def exponential_tail_check(env, cfg: SimConfig, radii, x0=None):
    """Fit the smallest ``C_1 >= 1`` for which the empirical running-max tail sits under
    ``exp(-(R - C_1 t)_+^2 / (C_1 t))`` at every radius."""
    radii = [float(r) for r in radii]
    if any(r <= 0 for r in radii):
        raise HomolabError("bad-radius", "radii must be positive")
    d = env.d
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    t = cfg.t_end
    c = SimConfig(cfg.dt, t, cfg.n_paths, cfg.path_seed, (t,), None, cfg.first_index)
    ens = simulate(env, c, x0)
    rows, C1 = [], 1.0
    for R in radii:
        p = ens.tail(R)
        C = _tail_constant(p, R, t)
        if C is None:
            raise HomolabError("tail-violation", f"no C1 <= 1000 fits the tail at R={R}")
        C1 = max(C1, C)
        rows.append({"R": R, "p_hat": p, "C_needed": C})
    return {"C1": C1, "t": t, "rows": rows}
