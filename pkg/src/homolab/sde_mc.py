"""Euler-Maruyama simulation of the quenched diffusion.

Each path follows ``X_{k+1} = X_k - b(X_k) dt + sigma(X_k) sqrt(dt) xi_k`` with
``sigma`` the symmetric square root of ``A``.  Gaussian increments come from
the counter stream keyed by ``(path_seed, path index)``, so a path's trajectory
does not depend on which worker runs it.  Reductions over paths are plain
numpy sums over arrays in path-index order, which fixes their rounding.
"""

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit, prange

from .environment import Environment, accumulate_cell, cell_payload
from .errors import HomolabError
from .rng import TAG_PATH, derive_key, normal

BINARY_MAGIC = b"HLEP"
_STEP_RTOL = 1e-9


def default_dt(t):
    return 1e-2 if t <= 1e3 else 1e-1


def steps_for(time, dt):
    """First step index ``k`` with ``k * dt >= time`` (up to a relative rounding slack)."""
    return int(math.ceil(time / dt - _STEP_RTOL))


@dataclass(frozen=True)
class SimConfig:
    dt: float
    t_end: float
    n_paths: int
    path_seed: int = 0
    record_times: tuple = ()
    stop_radius: Optional[float] = None
    first_index: int = 0

    def __post_init__(self):
        if not (self.dt > 0) or not (self.t_end > 0):
            raise HomolabError("bad-config", "dt and t_end must be positive")
        if self.dt > self.t_end:
            raise HomolabError("bad-config", "dt must not exceed t_end")
        if self.n_paths < 1:
            raise HomolabError("bad-config", "n_paths must be positive")
        rt = tuple(float(r) for r in (self.record_times or (self.t_end,)))
        if any(b < a for a, b in zip(rt, rt[1:])):
            raise HomolabError("bad-config", "record_times must be sorted")
        if rt[0] < 0 or rt[-1] > self.t_end:
            raise HomolabError("bad-config", "record_times must lie in [0, t_end]")
        object.__setattr__(self, "record_times", rt)
        if self.stop_radius is not None and not (self.stop_radius > 0):
            raise HomolabError("bad-config", "stop_radius must be positive")

    @property
    def n_steps(self):
        return steps_for(self.t_end, self.dt)

    @property
    def record_steps(self):
        return np.array([steps_for(r, self.dt) for r in self.record_times], dtype=np.int64)

    def to_dict(self):
        return {
            "dt": self.dt, "t_end": self.t_end, "n_paths": self.n_paths, "path_seed": int(self.path_seed),
            "record_times": list(self.record_times), "stop_radius": self.stop_radius,
            "first_index": self.first_index,
        }


@njit(cache=True, inline="always")
def _matmul(X, Y, out, d):
    for i in range(d):
        for j in range(d):
            acc = 0.0
            for k in range(d):
                acc += X[i, k] * Y[k, j]
            out[i, j] = acc


@njit(cache=True, inline="always")
def _copy(src, dst, d):
    for i in range(d):
        for j in range(d):
            dst[i, j] = src[i, j]


@njit(cache=True, inline="always")
def sqrt_spd_iter(A, d, S, work):
    """Symmetric square root of ``A`` near the identity by coupled Newton-Schulz iteration.

    ``work`` is scratch of shape ``(4, d, d)``.
    """
    Y, Z, T, P = work[0], work[1], work[2], work[3]
    for i in range(d):
        for j in range(d):
            Y[i, j] = A[i, j]
            Z[i, j] = 1.0 if i == j else 0.0
    done = False
    for _ in range(30):
        _matmul(Z, Y, P, d)
        res = 0.0
        for i in range(d):
            for j in range(d):
                e = P[i, j] - (1.0 if i == j else 0.0)
                res += e * e
                T[i, j] = (1.0 if i == j else 0.0) - 0.5 * e
        if done:
            break
        # convergence is quadratic: one more step from a 1e-10 residual reaches rounding level
        done = res < 1e-20
        _matmul(Y, T, P, d)
        _copy(P, Y, d)
        _matmul(T, Z, P, d)
        _copy(P, Z, d)
    for i in range(d):
        for j in range(d):
            S[i, j] = 0.5 * (Y[i, j] + Y[j, i])


@njit(cache=True, inline="always")
def _cached_coeffs(y, seed, mode, eta, d, A, b, keys, pays, filled, cell):
    """Same arithmetic as ``coefficients_at``; payloads live in a direct-mapped per-cell cache.

    Slot of cell ``z`` is ``sum_i (z_i mod 4) 4^i``, so the 2^d corners of a
    point never collide.
    """
    for i in range(d):
        b[i] = 0.0
        for j in range(d):
            A[i, j] = 0.0
    for corner in range(1 << d):
        r2 = 0.0
        slot = 0
        for i in range(d):
            cell[i] = np.int64(np.floor(y[i])) + ((corner >> i) & 1)
            diff = y[i] - cell[i]
            r2 += diff * diff
            slot += (cell[i] & 3) << (2 * i)
        if r2 < 1.0:
            same = filled[slot]
            if same:
                for i in range(d):
                    if keys[slot, i] != cell[i]:
                        same = False
            if not same:
                cell_payload(seed, cell, d, mode, pays, slot)
                for i in range(d):
                    keys[slot, i] = cell[i]
                filled[slot] = True
            q = 1.0 - r2
            accumulate_cell(mode, eta, d, q * q * q, pays, slot, A, b)
    for i in range(d):
        A[i, i] += 1.0


@njit(parallel=True, cache=True)
def _simulate(x0, offset, U, env_seed, mode, eta, path_seed, first_index, n_steps, dt,
              record_steps, stop_radius, endpoints, runmax, stop_step, stopped, bad_step):
    n_paths, d = x0.shape
    n_rec = record_steps.shape[0]
    sq = np.sqrt(dt)
    for p in prange(n_paths):
        key = derive_key(path_seed, TAG_PATH, np.uint64(first_index + p))
        x = x0[p].copy()
        y = np.empty(d)
        xi = np.empty(d)
        A = np.empty((d, d))
        S = np.empty((d, d))
        b = np.zeros(d)
        nslot = 1 << (2 * d)
        keys = np.empty((nslot, d), dtype=np.int64)
        pays = np.empty((nslot, 1 + 2 * d))
        filled = np.zeros(nslot, dtype=np.bool_)
        work = np.empty((4, d, d))
        cell = np.empty(d, dtype=np.int64)
        xmax2 = 0.0
        stop_step[p] = -1
        bad_step[p] = -1
        r = 0
        while r < n_rec and record_steps[r] == 0:
            for i in range(d):
                endpoints[r, p, i] = x[i]
            runmax[r, p] = 0.0
            r += 1
        for k in range(1, n_steps + 1):
            base = np.uint64((k - 1) * d)
            for i in range(d):
                xi[i] = normal(key, base + np.uint64(i))
            if mode == 0:
                for i in range(d):
                    x[i] += sq * xi[i]
            else:
                for i in range(d):
                    y[i] = (x[i] + offset[i]) - U[i]
                _cached_coeffs(y, env_seed, mode, eta, d, A, b, keys, pays, filled, cell)
                if mode == 1:
                    s = np.sqrt(A[0, 0])
                    for i in range(d):
                        x[i] += sq * s * xi[i]
                elif mode == 2:
                    for i in range(d):
                        x[i] += -b[i] * dt + sq * xi[i]
                else:
                    sqrt_spd_iter(A, d, S, work)
                    for i in range(d):
                        acc = 0.0
                        for j in range(d):
                            acc += S[i, j] * xi[j]
                        y[i] = -b[i] * dt + sq * acc
                    for i in range(d):
                        x[i] += y[i]
            dist2 = 0.0
            finite = True
            for i in range(d):
                if not np.isfinite(x[i]):
                    finite = False
                e = x[i] - x0[p, i]
                dist2 += e * e
            if not finite:
                bad_step[p] = k
                break
            if dist2 > xmax2:
                xmax2 = dist2
            if stop_step[p] < 0 and dist2 >= stop_radius * stop_radius:
                stop_step[p] = k
                for i in range(d):
                    stopped[p, i] = x[i]
            while r < n_rec and record_steps[r] == k:
                for i in range(d):
                    endpoints[r, p, i] = x[i]
                runmax[r, p] = np.sqrt(xmax2)
                r += 1
        if stop_step[p] < 0:
            for i in range(d):
                stopped[p, i] = x[i]


@dataclass
class PathEnsemble:
    """Per-path records at each record time plus stopping information.

    ``endpoints[j, p]`` is path ``p`` at the first step at or after
    ``record_times[j]``; ``running_max[j, p]`` is ``max_{s <= t_j} |X_s - X_0|``
    over grid steps; ``stop_time`` is ``inf`` for paths that never reach the
    stop radius, and ``stopped_point`` is ``X`` at ``min(stop_time, t_end)``.
    """

    config: SimConfig
    env: dict
    x0: np.ndarray
    endpoints: np.ndarray
    running_max: np.ndarray
    stop_time: np.ndarray
    stopped_point: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def record_times(self):
        return self.config.record_times

    @property
    def n_paths(self):
        return self.endpoints.shape[1]

    @property
    def d(self):
        return self.endpoints.shape[2]

    def displacement(self, j=-1):
        return self.endpoints[j] - self.x0

    def mean_sq(self, j=-1):
        """Mean of ``|X_t - X_0|^2`` and its standard error."""
        r2 = np.sum(self.displacement(j) ** 2, axis=1)
        return float(r2.mean()), float(r2.std(ddof=1) / np.sqrt(r2.size))

    def tail(self, v, j=-1):
        """Empirical ``P(X*_t >= v)``."""
        return float(np.mean(self.running_max[j] >= v))

    def summary_rows(self, tail_levels=()):
        rows = []
        for j, t in enumerate(self.record_times):
            m, se = self.mean_sq(j)
            rows.append([t, m, se] + [self.tail(v, j) for v in tail_levels])
        return rows

    def write_csv(self, path, tail_levels=()):
        header = ["record_time", "mean_sq", "se"] + [f"tail_{v:g}" for v in tail_levels]
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in self.summary_rows(tail_levels):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    def dump_binary(self, path, j=-1):
        write_endpoints(path, self.endpoints[j])


def write_endpoints(path, points):
    pts = np.ascontiguousarray(points, dtype="<f8")
    n, d = pts.shape
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC + struct.pack("<IQ", d, n))
        fh.write(pts.tobytes())


def read_endpoints(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
        if head[:4] != BINARY_MAGIC:
            raise HomolabError("bad-file", "not an endpoint dump")
        d, n = struct.unpack("<IQ", head[4:])
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(n, d)


def sqrt_matrix(A):
    """Symmetric positive square root ``S`` with ``S @ S == A`` (to ~1e-15 relative)."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise HomolabError("not-square", "matrix must be square")
    scale = max(np.linalg.norm(A), 1e-300)
    if np.linalg.norm(A - A.T) > 1e-12 * scale:
        raise HomolabError("not-symmetric", "matrix must be symmetric")
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    if w.min() <= 0:
        raise HomolabError("not-positive-definite", f"smallest eigenvalue {w.min():g}")
    S = (V * np.sqrt(w)) @ V.T
    return 0.5 * (S + S.T)


def simulate(env: Environment, cfg: SimConfig, x0) -> PathEnsemble:
    """Run ``cfg.n_paths`` paths from ``x0`` (a point, or one start point per path)."""
    d = env.d
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (cfg.n_paths, d))
    x0 = np.ascontiguousarray(x0, dtype=float)
    if x0.shape != (cfg.n_paths, d):
        raise HomolabError("bad-point", f"x0 must have shape ({d},) or ({cfg.n_paths}, {d})")
    rec = cfg.record_steps
    n_rec = rec.size
    endpoints = np.empty((n_rec, cfg.n_paths, d))
    runmax = np.empty((n_rec, cfg.n_paths))
    stop_step = np.empty(cfg.n_paths, dtype=np.int64)
    stopped = np.empty((cfg.n_paths, d))
    bad = np.empty(cfg.n_paths, dtype=np.int64)
    radius = math.inf if cfg.stop_radius is None else float(cfg.stop_radius)
    p = env.params
    _simulate(
        x0, np.asarray(env.offset, dtype=float), np.asarray(env.U, dtype=float),
        np.uint64(p.seed), p.mode_id, float(p.eta), np.uint64(cfg.path_seed), np.int64(cfg.first_index),
        cfg.n_steps, float(cfg.dt), rec, radius, endpoints, runmax, stop_step, stopped, bad,
    )
    failed = np.nonzero(bad >= 0)[0]
    if failed.size:
        i = int(failed[0])
        raise HomolabError("non-finite-state", f"path {cfg.first_index + i} at step {int(bad[i])}")
    stop_time = np.where(stop_step >= 0, stop_step * cfg.dt, np.inf)
    return PathEnsemble(cfg, env.descriptor(), x0, endpoints, runmax, stop_time, stopped)


def ensemble_metadata(ens: PathEnsemble):
    return json.dumps({"config": ens.config.to_dict(), "env": ens.env}, sort_keys=True)
