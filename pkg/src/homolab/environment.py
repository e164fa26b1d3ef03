"""Random coefficient fields ``A(x)``, ``b(x)`` built from a shifted bump lattice.

Each cell ``z`` of the integer lattice carries i.i.d. payloads drawn from a
counter-based stream keyed by ``(seed, z)``.  The fields are

    A(x) - I = eta * sum_z psi(|x - z - U|) * P_z
    b(x)     = eta * sum_z psi(|x - z - U|) * v_z

with ``psi(r) = (1 - r^2)^3`` on ``r < 1`` and ``U`` a uniform global shift in
``[0, 1)^d``.  The lattice sum of ``psi`` peaks at exactly 1 (at lattice
points), and every payload has Frobenius/Euclidean norm at most 1, so
``|A - I| <= eta`` and ``|b| <= eta`` hold pointwise.  A point only sees cells
within distance 1 of it, hence fields on sets at distance >= 2 use disjoint
cell variables; the advertised dependence range is the conservative 3.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .errors import HomolabError
from .rng import TAG_SHIFT, cell_key, derive_key, normal_pair, uniform

MODES = ("zero", "scalar-A", "vector-b", "full")
MODE_ZERO, MODE_SCALAR, MODE_VECTOR, MODE_FULL = range(4)

DEPENDENCE_RANGE = 3.0
MAX_DIM = 4
# sup over y of sum_z |psi'(|y - z|)|, located by multistart optimization
_GRAD_LATTICE_SUM = {1: 27.0 / 8.0, 2: 3.0 * math.sqrt(2.0), 3: 3.0 * math.sqrt(2.0), 4: 3.0 * math.sqrt(2.0)}


@dataclass(frozen=True)
class EnvParams:
    d: int = 3
    eta: float = 0.05
    mode: str = "full"
    seed: int = 0
    allow_low_dim: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise HomolabError("bad-mode", f"mode must be one of {MODES}, got {self.mode!r}")
        if not (1 <= self.d <= MAX_DIM):
            raise HomolabError("bad-dimension", f"d must lie in 1..{MAX_DIM}")
        if self.d < 3 and not self.allow_low_dim:
            raise HomolabError("bad-dimension", "d < 3 requires allow_low_dim=True")
        if not (0.0 <= self.eta):
            raise HomolabError("bad-eta", "eta must be nonnegative")
        if self.eta >= 0.5:
            raise HomolabError("ellipticity-risk", f"eta={self.eta} >= 0.5")
        if not (0 <= int(self.seed) < 2**64):
            raise HomolabError("bad-seed", "seed must be a 64-bit unsigned integer")

    @property
    def nu(self):
        """Ellipticity constant: ``(1/nu) I <= A <= nu I`` with ``nu = 1/(1 - eta)``."""
        return 1.0 / (1.0 - self.eta)

    @property
    def dependence_range(self):
        return DEPENDENCE_RANGE

    @property
    def lipschitz_bound(self):
        """Lipschitz constant of ``b`` (and of ``A`` in Frobenius norm)."""
        if self.mode == "zero":
            return 0.0
        return self.eta * _GRAD_LATTICE_SUM[self.d]

    @property
    def mode_id(self):
        return MODES.index(self.mode)

    @property
    def effective_eta(self):
        return 0.0 if self.mode == "zero" else float(self.eta)


@njit(cache=True, inline="always")
def cell_payload(seed, cell, d, mode, out, row):
    """Fill ``out[row] = [s, v_1..v_d, w_1..w_d]``: s uniform on [-1, 1], v and w uniform on the sphere.

    Only the parts used by ``mode`` are drawn; each part always comes from the
    same counters, so shared parts agree across modes.
    """
    key = cell_key(seed, cell)
    out[row, 0] = 2.0 * uniform(key, 0) - 1.0
    if mode < 2:
        return
    n = 2 * d if mode == 3 else d
    # normals g_0..g_{2d-1} from pairs 1..d; v = g[:d], w = g[d:]
    for j in range((n + 1) // 2):
        g1, g2 = normal_pair(key, 1 + j)
        out[row, 1 + 2 * j] = g1
        if 2 * j + 1 < 2 * d:
            out[row, 2 + 2 * j] = g2
    for block in range(n // d):
        nrm = 0.0
        for i in range(d):
            nrm += out[row, 1 + block * d + i] ** 2
        nrm = np.sqrt(nrm)
        for i in range(d):
            out[row, 1 + block * d + i] /= nrm


@njit(cache=True, inline="always")
def accumulate_cell(mode, eta, d, weight, pay, row, A, b):
    """Add one cell's weighted contribution to ``A`` (holding A - I) and ``b``."""
    ew = eta * weight
    if mode == 1:
        c = ew * pay[row, 0] / np.sqrt(d)
        for i in range(d):
            A[i, i] += c
    elif mode == 2:
        for i in range(d):
            b[i] += ew * pay[row, 1 + i]
    elif mode == 3:
        iso = 0.5 * ew * pay[row, 0] / np.sqrt(d)
        for i in range(d):
            A[i, i] += iso
            b[i] += ew * pay[row, 1 + i]
        if d > 1:
            c = 0.5 * ew / np.sqrt(1.0 - 1.0 / d)
            for i in range(d):
                for j in range(d):
                    t = pay[row, 1 + d + i] * pay[row, 1 + d + j]
                    if i == j:
                        t -= 1.0 / d
                    A[i, j] += c * t


@njit(cache=True)
def coefficients_at(y, seed, mode, eta, d, A, b, pay, cell):
    """Coefficients at lattice-frame point ``y = x + offset - U``; scratch ``pay`` (1, 1+2d) and ``cell`` reused."""
    for i in range(d):
        b[i] = 0.0
        for j in range(d):
            A[i, j] = 0.0
    if mode != 0:
        for corner in range(1 << d):
            r2 = 0.0
            for i in range(d):
                base = np.floor(y[i])
                cell[i] = np.int64(base) + ((corner >> i) & 1)
                diff = y[i] - cell[i]
                r2 += diff * diff
            if r2 < 1.0:
                q = 1.0 - r2
                cell_payload(seed, cell, d, mode, pay, 0)
                accumulate_cell(mode, eta, d, q * q * q, pay, 0, A, b)
    for i in range(d):
        A[i, i] += 1.0


@njit(parallel=True, cache=True)
def _evaluate_many(points, shift, seed, mode, eta):
    n, d = points.shape
    A_out = np.empty((n, d, d))
    b_out = np.empty((n, d))
    for k in prange(n):
        y = np.empty(d)
        for i in range(d):
            y[i] = points[k, i] + shift[i]
        pay = np.empty((1, 1 + 2 * d))
        cell = np.empty(d, dtype=np.int64)
        coefficients_at(y, seed, mode, eta, d, A_out[k], b_out[k], pay, cell)
    return A_out, b_out


@dataclass(frozen=True)
class Environment:
    """One realization: evaluation is a pure function of ``(params.seed, x)``.

    ``offset`` implements the spatial shift: this environment at ``x`` is the
    base realization at ``x + offset``.
    """

    params: EnvParams
    U: tuple
    offset: tuple = field(default=None)

    def __post_init__(self):
        if self.offset is None:
            object.__setattr__(self, "offset", (0.0,) * self.params.d)

    @property
    def d(self):
        return self.params.d

    @property
    def lattice_shift(self):
        """Per-axis ``offset - U`` evaluated exactly as the kernels use it."""
        return np.asarray(self.offset, dtype=float) - np.asarray(self.U, dtype=float)

    def evaluate_many(self, points):
        pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
        if pts.shape[1] != self.d:
            raise HomolabError("bad-point", f"points must have {self.d} columns")
        # x + offset first, then - U, so shifted(env, y) at x equals env at x + y bit for bit
        moved = pts + np.asarray(self.offset, dtype=float)
        zero = np.zeros(self.d)
        return _evaluate_many(
            moved - np.asarray(self.U, dtype=float), zero,
            np.uint64(self.params.seed), self.params.mode_id, float(self.params.eta),
        )

    def evaluate(self, x):
        A, b = self.evaluate_many(np.asarray(x, dtype=float).reshape(1, -1))
        return A[0], b[0]

    def shifted(self, y):
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != self.d:
            raise HomolabError("bad-point", f"shift must have {self.d} components")
        new = tuple(float(o + s) for o, s in zip(self.offset, y))
        return Environment(self.params, self.U, new)

    def cells_touched(self, x):
        """Lattice cells whose payload enters the coefficients at ``x`` (instrumentation hook)."""
        y = np.asarray(x, dtype=float) + np.asarray(self.offset) - np.asarray(self.U)
        if self.params.mode == "zero":
            return set()
        base = np.floor(y).astype(np.int64)
        out = set()
        for corner in range(1 << self.d):
            cell = base + np.array([(corner >> i) & 1 for i in range(self.d)])
            if np.sum((y - cell) ** 2) < 1.0:
                out.add(tuple(int(c) for c in cell))
        return out

    def descriptor(self):
        p = self.params
        return {
            "seed": int(p.seed),
            "eta": float(p.eta),
            "mode": p.mode,
            "d": int(p.d),
            "R": p.dependence_range,
            "U": [float(u) for u in self.U],
            "offset": [float(o) for o in self.offset],
        }

    def to_json(self):
        return json.dumps(self.descriptor(), sort_keys=True)

    @classmethod
    def from_descriptor(cls, desc):
        params = EnvParams(
            d=int(desc["d"]), eta=float(desc["eta"]), mode=desc["mode"], seed=int(desc["seed"]),
            allow_low_dim=int(desc["d"]) < 3,
        )
        env = sample_environment(params)
        if "U" in desc and not np.array_equal(np.asarray(desc["U"], dtype=float), np.asarray(env.U)):
            raise HomolabError("descriptor-mismatch", "recorded U does not match the seed")
        offset = tuple(float(o) for o in desc.get("offset", [0.0] * params.d))
        return cls(params, env.U, offset)

    @classmethod
    def from_json(cls, text):
        return cls.from_descriptor(json.loads(text))


def global_shift(seed, d):
    key = np.uint64(derive_key(np.uint64(seed), TAG_SHIFT, np.uint64(0)))
    return tuple(float(1.0 - uniform(key, i)) for i in range(d))


def sample_environment(p: EnvParams) -> Environment:
    """Construct the realization indexed by ``p.seed``; cells are derived lazily on evaluation."""
    return Environment(p, global_shift(p.seed, p.d))


def evaluate(env: Environment, x):
    """Return ``(A, b)`` at the point ``x``."""
    return env.evaluate(x)


def shifted(env: Environment, y) -> Environment:
    """The environment ``tau_y`` of ``env``: ``evaluate(shifted(env, y), x) == evaluate(env, x + y)``."""
    return env.shifted(y)


def load_environment(path):
    with open(path) as fh:
        return Environment.from_descriptor(json.load(fh))
