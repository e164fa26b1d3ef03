"""Counter-based random numbers.

Every random quantity in homolab is a pure function of a 64-bit key and an
integer counter, computed with the splitmix64 finalizer.  Nothing holds
mutable generator state, so values do not depend on evaluation order or on
how work is split across threads.
"""

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO_M53 = 1.0 / 9007199254740992.0

# stream tags keep keys for different purposes apart
TAG_PATH = np.uint64(0x5A17C0DE00000001)
TAG_CELL = np.uint64(0x5A17C0DE00000002)
TAG_SHIFT = np.uint64(0x5A17C0DE00000003)
TAG_ENVSEED = np.uint64(0x5A17C0DE00000004)

_AXIS_PRIMES = np.array(
    [0xD6E8FEB86659FD93, 0xA0761D6478BD642F, 0xE7037ED1A0B428DB, 0x8EBC6AF09C88C6E3],
    dtype=np.uint64,
)


@njit(cache=True, inline="always")
def mix64(x):
    z = np.uint64(x) + GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def derive_key(seed, tag, index):
    """Key of the stream ``index`` under ``seed`` for purpose ``tag``."""
    return mix64(mix64(np.uint64(seed) ^ tag) ^ mix64(np.uint64(index)))


@njit(cache=True, inline="always")
def uniform(key, counter):
    """Uniform draw in (0, 1] at position ``counter`` of stream ``key``."""
    z = mix64(np.uint64(key) + np.uint64(counter) * GOLDEN)
    return (np.float64(z >> _S11) + 1.0) * _TWO_M53


@njit(cache=True, inline="always")
def uniform_open(key, counter):
    """Uniform draw in the open interval (0, 1) at position ``counter`` of stream ``key``."""
    z = mix64(np.uint64(key) + np.uint64(counter) * GOLDEN)
    return (np.float64(z >> _S11) + 0.5) * _TWO_M53


@njit(cache=True, inline="always")
def normal_quantile(p):
    """Standard normal quantile for ``p`` in (0, 1), Wichura's AS241 (relative error ~1e-16)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r
                        + 45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r
                      + 133.14166789178437745) * r + 3.387132872796366608) / (
            ((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r
                + 21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r
              + 42.313330701600911252) * r + 1.0)
    r = p if q < 0 else 1.0 - p
    r = np.sqrt(-np.log(r))
    if r <= 5.0:
        r -= 1.6
        val = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r
                   + 1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                 + 4.6303378461565452959) * r + 1.42343711074968357734) / (
            ((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r
                + 0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r
              + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r
                   + 0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                 + 5.4637849111641143699) * r + 6.6579046435011037772) / (
            ((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r
                + 7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
              + 0.59983220655588793769) * r + 1.0)
    return -val if q < 0 else val


@njit(cache=True, inline="always")
def normal(key, counter):
    """Standard normal at position ``counter`` of stream ``key`` (inverse CDF of one uniform)."""
    return normal_quantile(uniform_open(key, counter))


@njit(cache=True, inline="always")
def normal_pair(key, counter):
    """Two independent standard normals from uniforms ``2c`` and ``2c+1`` (Box-Muller)."""
    u1 = uniform(key, 2 * counter)
    u2 = uniform(key, 2 * counter + 1)
    r = np.sqrt(-2.0 * np.log(u1))
    a = 2.0 * np.pi * u2
    return r * np.cos(a), r * np.sin(a)


@njit(cache=True, inline="always")
def cell_key(seed, cell):
    """Key of the lattice cell with integer coordinates ``cell``."""
    h = mix64(np.uint64(seed) ^ TAG_CELL)
    for i in range(cell.shape[0]):
        h = mix64(h ^ (np.uint64(cell[i]) * _AXIS_PRIMES[i]))
    return h


def seed_sequence(seed, count):
    """Deterministic child seeds ``0..count-1`` of ``seed`` (e.g. an environment ensemble)."""
    # 63 bits keep child seeds valid as signed integers everywhere (numba arguments, JSON)
    return [int(derive_key(np.uint64(seed), TAG_ENVSEED, np.uint64(i))) & 0x7FFFFFFFFFFFFFFF for i in range(count)]
