"""Scale hierarchy and the time decomposition over consecutive levels.

Levels follow ``ell_n = 5 * floor(L_n**a / 5)`` and ``L_{n+1} = ell_n * L_n``
in exact integer arithmetic; ``kappa_n = exp(c0 (ln ln L_n)^2)`` and
``D_n = L_n kappa_n`` with their doubled-exponent companions.
"""

import json
import math
import numbers
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import HomolabError

PROFILES = ("desk", "paper")
MAX_LEVEL = 8
# tolerance when flooring L**a / 5, so exact powers such as 25**0.5 are not lost to rounding
_FLOOR_RTOL = 1e-12


@dataclass(frozen=True)
class ScaleParams:
    d: int = 3
    beta: float = 0.5
    a: float = 0.5
    L0: int = 25
    c0: float = 0.5
    nmax: int = 2
    profile: str = "desk"

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 3:
            raise HomolabError("bad-params", "d must be an integer >= 3")
        if not (0.0 < self.beta <= 0.5):
            raise HomolabError("bad-params", "beta must lie in (0, 1/2]")
        if not (self.a > 0):
            raise HomolabError("bad-params", "a must be positive")
        if int(self.L0) != self.L0 or self.L0 < 5 or self.L0 % 5:
            raise HomolabError("bad-params", "L0 must be a positive multiple of 5")
        if not (self.c0 > 0):
            raise HomolabError("bad-params", "c0 must be positive")
        if int(self.nmax) != self.nmax or not (0 <= self.nmax <= MAX_LEVEL):
            raise HomolabError("bad-params", f"nmax must be an integer in [0, {MAX_LEVEL}]")
        if self.profile not in PROFILES:
            raise HomolabError("bad-params", f"profile must be one of {PROFILES}")
        if self.profile == "paper" and self.a > self.beta / (1000 * self.d):
            raise HomolabError("bad-params", "profile=paper requires a <= beta/(1000 d)")


@dataclass(frozen=True)
class Level:
    n: int
    L: int
    ell: Optional[int]
    kappa: float
    kappa_tilde: float
    D: float
    D_tilde: float


@dataclass(frozen=True)
class ConstraintRecord:
    constraint: str
    level: int
    satisfied: bool


@dataclass(frozen=True)
class ScaleHierarchy:
    params: ScaleParams
    levels: tuple
    delta: float
    m0: int
    M0: float
    mbar: int
    constraint_report: tuple = field(default=())

    def L(self, n):
        if 0 <= n < len(self.levels):
            return self.levels[n].L
        if n == len(self.levels):
            last = self.levels[-1]
            return branching(last.L, self.params.a, n - 1) * last.L
        raise HomolabError("bad-level", f"level {n} outside the hierarchy")

    def level(self, n):
        return self.levels[n]

    def to_dict(self):
        return {
            "params": asdict(self.params),
            "levels": [asdict(lv) for lv in self.levels],
            "delta": self.delta,
            "m0": self.m0,
            "M0": self.M0,
            "mbar": self.mbar,
            "constraint_report": [asdict(r) for r in self.constraint_report],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data):
        return cls(
            params=ScaleParams(**data["params"]),
            levels=tuple(Level(**lv) for lv in data["levels"]),
            delta=float(data["delta"]),
            m0=int(data["m0"]),
            M0=float(data["M0"]),
            mbar=int(data["mbar"]),
            constraint_report=tuple(ConstraintRecord(**r) for r in data["constraint_report"]),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TimeDecomposition:
    """``t = t_tilde + sum_j k[j] * L_{n-j}**2`` with ``k[0] = k_n``."""

    n: int
    t: object
    k: tuple
    t_tilde: object

    def reconstruct(self, h):
        return self.t_tilde + sum(kj * h.L(self.n - j) ** 2 for j, kj in enumerate(self.k))


def branching(L, a, n=None):
    """``5 * floor(L**a / 5)``; raises ``degenerate-branching`` when it vanishes."""
    q = L**a / 5.0
    ell = 5 * math.floor(q * (1.0 + _FLOOR_RTOL))
    if ell <= 0:
        where = "" if n is None else f" at level {n}"
        raise HomolabError("degenerate-branching", f"L**a < 5{where} (L={L})")
    return int(ell)


def kappa(L, c0):
    return math.exp(c0 * math.log(math.log(L)) ** 2)


def smallest_power_at_least(base, target):
    m = 0
    while base**m < target:
        m += 1
    return m


def compute_mbar(a):
    """Unique integer m with ``3 <= (1+a)**m < 4``."""
    m = smallest_power_at_least(1.0 + a, 3.0)
    if not (1.0 + a) ** m < 4.0:
        raise HomolabError("no-mbar", f"no integer m with 3 <= (1+{a})**m < 4")
    return m


def compute_m0(a):
    """Integer with ``(1+a)**(m0-2) <= 100 < (1+a)**(m0-1)``."""
    j = 0
    while (1.0 + a) ** (j + 1) <= 100.0:
        j += 1
    return j + 2


def validate_constraints(h: ScaleHierarchy):
    """One record per (constraint, level); constraints naming level n+1 are skipped at the last level."""
    out = []
    lv = h.levels
    a = h.params.a
    for n, cur in enumerate(lv):
        out.append(ConstraintRecord("chain-local", n, cur.L < cur.D < cur.D_tilde))
        if n + 1 < len(lv):
            nxt = lv[n + 1]
            out.append(ConstraintRecord("chain", n, cur.L < cur.D < cur.D_tilde < nxt.L))
            out.append(ConstraintRecord("kappa-growth", n, 4 * cur.kappa_tilde < nxt.kappa_tilde))
            out.append(ConstraintRecord("dtilde-square", n, 3 * nxt.D_tilde < nxt.L**2))
            grow = cur.L ** (1 + a)
            out.append(ConstraintRecord("growth", n, 0.5 * grow <= nxt.L <= 2 * grow))
    return tuple(out)


def build_hierarchy(params: ScaleParams) -> ScaleHierarchy:
    mbar = compute_mbar(params.a)
    m0 = compute_m0(params.a)
    levels = []
    L = int(params.L0)
    for n in range(params.nmax + 1):
        ell = branching(L, params.a, n) if n < params.nmax else None
        k, kt = kappa(L, params.c0), kappa(L, 2 * params.c0)
        levels.append(Level(n, L, ell, k, kt, L * k, L * kt))
        if ell is not None:
            L = ell * L
    h = ScaleHierarchy(
        params=params,
        levels=tuple(levels),
        delta=5.0 * params.beta / 32.0,
        m0=m0,
        M0=100.0 * params.d * (1.0 + params.a) ** (m0 + 2),
        mbar=mbar,
    )
    report = validate_constraints(h)
    if params.profile == "paper":
        bad = [r for r in report if not r.satisfied]
        if bad:
            r = bad[0]
            raise HomolabError("constraint-violation", f"{r.constraint} fails at level {r.level}")
    return ScaleHierarchy(h.params, h.levels, h.delta, h.m0, h.M0, h.mbar, report)


def decompose_time(h: ScaleHierarchy, n: int, t) -> TimeDecomposition:
    """Greedy split of ``t`` into multiples of ``L_n^2, ..., L_{n-mbar}^2`` plus a remainder."""
    if n < h.mbar:
        raise HomolabError("too-shallow", f"n={n} < mbar={h.mbar}")
    if n >= len(h.levels):
        raise HomolabError("bad-level", f"level {n} outside the hierarchy")
    lo = h.L(n) ** 2
    try:
        hi = h.L(n + 1) ** 2
    except HomolabError:
        hi = lo
    if not (lo <= t < hi):
        raise HomolabError("level-mismatch", f"t={t} outside [{lo}, {hi})")
    exact = isinstance(t, numbers.Integral)
    if exact:
        t = int(t)
    r = t
    k = []
    for j in range(h.mbar + 1):
        sq = h.L(n - j) ** 2
        kj = r // sq if exact else math.floor(r / sq)
        kj = int(kj)
        r = r - kj * sq
        k.append(kj)
    return TimeDecomposition(n, t, tuple(k), r)


def decompose_times(h: ScaleHierarchy, n: int, ts):
    """Vectorized :func:`decompose_time` for an int64 array of integer times.

    Returns ``(k, t_tilde)`` with ``k`` of shape ``(len(ts), mbar + 1)``.
    """
    ts = np.asarray(ts)
    if ts.dtype.kind not in "iu":
        raise HomolabError("bad-times", "decompose_times needs integer times")
    ts = ts.astype(np.int64)
    if n < h.mbar:
        raise HomolabError("too-shallow", f"n={n} < mbar={h.mbar}")
    lo, hi = h.L(n) ** 2, h.L(n + 1) ** 2
    if hi >= 2**63:
        raise HomolabError("bad-level", "L_{n+1}^2 overflows int64")
    if ts.size and (ts.min() < lo or ts.max() >= hi):
        raise HomolabError("level-mismatch", f"times outside [{lo}, {hi})")
    k = np.empty((ts.size, h.mbar + 1), dtype=np.int64)
    r = ts.copy()
    for j in range(h.mbar + 1):
        sq = np.int64(h.L(n - j) ** 2)
        k[:, j] = r // sq
        r -= k[:, j] * sq
    return k, r
