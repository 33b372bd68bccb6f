"""Simple-random-walk engine and the lattice Green function on Z^d.

The Green function g(x) = sum_n P_0[X_n = x] is evaluated from its Fourier
representation
    g(x) = (2 pi)^-d  int_{[-pi,pi]^d} cos(x.theta) / (1 - d^-1 sum_j cos theta_j) dtheta,
reduced analytically (factorizing the exponential of the symbol) to the
one-dimensional integral
    g(x) = int_0^inf  prod_j  e^{-t/d} I_{x_j}(t/d)  dt,
which adaptive quadrature handles to ~1e-10 absolute for any d >= 3 and any
offset. A Dirichlet-solve bulk fill on a padded box (boundary data from the
g(x) ~ C_d |x|_2^{2-d} asymptotics) serves as the fast path for large tables
and is cross-validated against quadrature before use.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from numba import njit
from scipy import integrate, sparse, special
from scipy.sparse.linalg import cg as sparse_cg

from .lattice import Site, neighbors, offsets
from .rng import PhiloxStream, as_stream, make_state, next_u32, randbelow


class GreenAccuracyError(RuntimeError):
    """Quadrature failed to reach the requested absolute tolerance."""

    def __init__(self, x, achieved, requested):
        super().__init__(
            f"green quadrature at {tuple(x)} reached abs error {achieved:.3e} "
            f"> requested {requested:.3e}")
        self.achieved = achieved
        self.requested = requested


class GreenCoverageError(LookupError):
    """A difference vector fell outside the table's radius."""

    def __init__(self, diff, radius):
        super().__init__(f"difference vector {tuple(diff)} outside Green table "
                         f"coverage |x|_inf <= {radius}")
        self.diff = tuple(diff)
        self.radius = radius


class GreenValidationError(RuntimeError):
    """Dirichlet-solve table disagreed with quadrature beyond tolerance."""


# ---------------------------------------------------------------------------
# paths

@dataclass
class Path:
    """Nearest-neighbor path; sites is an ordered list of integer tuples."""

    sites: list

    def __len__(self) -> int:
        return len(self.sites)

    def __getitem__(self, i):
        return self.sites[i]

    def is_nearest_neighbor(self) -> bool:
        return all(sum(abs(a - b) for a, b in zip(p, q)) == 1
                   for p, q in zip(self.sites, self.sites[1:]))

    def is_simple(self) -> bool:
        return len(set(self.sites)) == len(self.sites)


@dataclass
class WalkResult:
    path: Path
    stopped: bool  # False means the step budget ran out first

    @property
    def flag(self) -> str:
        return "stopped" if self.stopped else "exhausted"


def run_until(x0: Site, stop: Callable[[Site], bool], rng, max_steps: int) -> WalkResult:
    """Uniform nearest-neighbor walk from x0 until `stop` holds or the budget ends.

    The predicate is evaluated at x0 before the first step, so a stop condition
    already true at the start yields a length-1 path. Exhausting max_steps is
    reported through the flag, never silently truncated.
    """
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")
    stream = as_stream(rng)
    x = tuple(int(c) for c in x0)
    d = len(x)
    sites = [x]
    if stop(x):
        return WalkResult(Path(sites), True)
    for _ in range(max_steps):
        k = stream.integers(2 * d)
        axis, sign = k >> 1, 1 - 2 * (k & 1)
        x = x[:axis] + (x[axis] + sign,) + x[axis + 1:]
        sites.append(x)
        if stop(x):
            return WalkResult(Path(sites), True)
    return WalkResult(Path(sites), False)


def loop_erase(path) -> list:
    """Chronological loop-erasure; output is simple with the same endpoints."""
    sites = path.sites if isinstance(path, Path) else list(path)
    if not sites:
        raise ValueError("loop_erase requires a non-empty path")
    out = []
    pos = {}
    for s in sites:
        s = tuple(s)
        if s in pos:
            cut = pos[s]
            for dropped in out[cut + 1:]:
                del pos[dropped]
            del out[cut + 1:]
        else:
            pos[s] = len(out)
            out.append(s)
    return out


# ---------------------------------------------------------------------------
# Green function by quadrature

def _scaled_bessel(absx: np.ndarray, z: float) -> np.ndarray:
    """e^-z I_k(z) per entry; scipy's ive degrades to NaN above z ~ 1e8, where
    the uniform asymptotic series (relative error < 1e-13 there) takes over."""
    if z <= 1e8:
        return special.ive(absx, z)
    mu = 4.0 * absx.astype(np.float64) ** 2
    u = 1.0 / (8.0 * z)
    t1 = (mu - 1.0) * u
    t2 = t1 * (mu - 9.0) * u / 2.0
    t3 = t2 * (mu - 25.0) * u / 3.0
    t4 = t3 * (mu - 49.0) * u / 4.0
    return (1.0 - t1 + t2 - t3 + t4) / math.sqrt(2.0 * math.pi * z)


def _green_integrand(absx: np.ndarray, d: int):
    def f(t):
        return float(np.prod(_scaled_bessel(absx, t / d)))
    return f


def _green_quadrature(absx: tuple, d: int, tol: float):
    """Piecewise adaptive quadrature of the Bessel-product representation.

    The integrand concentrates near t ~ |x|_2^2 for large offsets, so the
    axis is split around that scale; the algebraic t^(-d/2) tail beyond the
    last breakpoint T is regularized exactly by t = T / s^2, which maps it to
    a smooth integral of s^(d-3) type over (0, 1].
    """
    f = _green_integrand(np.array(absx, dtype=np.int64), d)
    r2 = float(sum(c * c for c in absx))
    pts = sorted({0.0, max(1.0, 0.25 * r2), max(4.0, r2), max(16.0, 4.0 * r2)})
    total, err = 0.0, 0.0
    for a, b in zip(pts, pts[1:]):
        v, e = integrate.quad(f, a, b, epsabs=tol / 10.0, epsrel=1e-12, limit=200)
        total += v
        err += e
    T = pts[-1]
    s_floor = math.sqrt(T) * 1e-140
    limit_coef = 2.0 * (d / (2.0 * math.pi)) ** (0.5 * d) * T ** (1.0 - 0.5 * d)

    def tail(s):
        if s < s_floor:  # t would overflow; use the exact s -> 0 limit form
            return limit_coef * s ** (d - 3)
        return f(T / (s * s)) * 2.0 * T / s ** 3

    v, e = integrate.quad(tail, 0.0, 1.0, epsabs=tol / 10.0, epsrel=1e-12, limit=200)
    total += v
    err += e
    if not math.isfinite(total) or err > tol:
        raise GreenAccuracyError(absx, err, tol)
    return total


@lru_cache(maxsize=200_000)
def _green_cached(absx: tuple, d: int, tol: float) -> float:
    return _green_quadrature(absx, d, tol)


def green_canonical(x) -> tuple:
    """Representative of x under the walk's symmetry group (signs, permutations)."""
    return tuple(sorted(abs(int(c)) for c in x))


def green_value(x, tol: float = 1e-8) -> float:
    """g(x) for the simple random walk on Z^d, d = len(x) >= 3.

    Absolute accuracy `tol`; failure to certify it raises GreenAccuracyError
    carrying the achieved error estimate.
    """
    d = len(x)
    if d < 3:
        raise ValueError("Green function requires d >= 3 (walk must be transient)")
    return _green_cached(green_canonical(x), d, tol)


def green_value_raw(x, tol: float = 1e-8) -> float:
    """As green_value but without canonicalization or caching (test hook)."""
    d = len(x)
    if d < 3:
        raise ValueError("Green function requires d >= 3")
    return _green_quadrature(tuple(abs(int(c)) for c in x), d, tol)


def green_asymptotic_constant(d: int) -> float:
    """C_d in g(x) ~ C_d |x|_2^(2-d): C_d = (d/2) Gamma(d/2 - 1) pi^(-d/2)."""
    return 0.5 * d * math.gamma(0.5 * d - 1.0) * math.pi ** (-0.5 * d)


# ---------------------------------------------------------------------------
# Green tables

_GRNT_MAGIC = b"GRNT"
_GRNT_VERSION = 1
_METHOD_CODES = {"quadrature": 0, "dirichlet_solve": 1}
_METHOD_NAMES = {v: k for k, v in _METHOD_CODES.items()}


class GreenTable:
    """Cached g on the difference lattice {x : |x|_inf <= radius}.

    Values are stored per symmetry class (sorted absolute coordinates), so the
    walk's permutation/sign invariance holds for every entry by construction.
    """

    def __init__(self, d: int, radius: int, method: str, tol: float, values: dict):
        self.d = d
        self.radius = radius
        self.method = method
        self.tol = tol
        self._values = values
        self._flat = None

    def __repr__(self):
        return (f"GreenTable(d={self.d}, radius={self.radius}, "
                f"method={self.method!r}, {len(self._values)} classes)")

    def covers(self, diff) -> bool:
        return len(diff) == self.d and max(abs(int(c)) for c in diff) <= self.radius

    def value(self, diff) -> float:
        key = green_canonical(diff)
        if key[-1] > self.radius or len(key) != self.d:
            raise GreenCoverageError(diff, self.radius)
        return self._values[key]

    def _dense(self) -> np.ndarray:
        # flat array over sorted-absolute keys; index = sum key_i * (radius+1)^i
        if self._flat is None:
            flat = np.full((self.radius + 1) ** self.d, np.nan)
            powers = (self.radius + 1) ** np.arange(self.d)
            for key, val in self._values.items():
                flat[int(np.dot(key, powers))] = val
            self._flat = flat
        return self._flat

    def values_for(self, diffs: np.ndarray) -> np.ndarray:
        """Vectorized lookup for an (n, d) array of difference vectors."""
        diffs = np.asarray(diffs, dtype=np.int64)
        keys = np.sort(np.abs(diffs), axis=1)
        if keys.size and keys.max() > self.radius:
            bad = diffs[keys.max(axis=1) > self.radius][0]
            raise GreenCoverageError(tuple(bad), self.radius)
        powers = (self.radius + 1) ** np.arange(self.d)
        return self._dense()[keys @ powers]

    @property
    def g0(self) -> float:
        return self._values[(0,) * self.d]

    def save(self, path) -> None:
        body = bytearray()
        body += _GRNT_MAGIC
        body += struct.pack("<HHIBd", _GRNT_VERSION, self.d, self.radius,
                            _METHOD_CODES[self.method], self.tol)
        items = sorted(self._values.items())
        body += struct.pack("<Q", len(items))
        for key, val in items:
            body += struct.pack(f"<{self.d}q", *key)
            body += struct.pack("<d", val)
        body += struct.pack("<I", zlib.crc32(bytes(body)))
        with open(path, "wb") as fh:
            fh.write(bytes(body))

    @staticmethod
    def load(path) -> "GreenTable":
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < 8 or raw[:4] != _GRNT_MAGIC:
            raise ValueError("not a GRNT file")
        payload, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
        if zlib.crc32(payload) != crc:
            raise ValueError("GRNT checksum mismatch (file truncated or corrupt)")
        version, d, radius, mcode, tol = struct.unpack_from("<HHIBd", raw, 4)
        if version != _GRNT_VERSION:
            raise ValueError(f"unsupported GRNT version {version}")
        off = 4 + struct.calcsize("<HHIBd")
        (count,) = struct.unpack_from("<Q", raw, off)
        off += 8
        values = {}
        rec = struct.Struct(f"<{d}qd")
        for _ in range(count):
            *key, val = rec.unpack_from(raw, off)
            off += rec.size
            values[tuple(key)] = val
        return GreenTable(d, radius, _METHOD_NAMES[mcode], tol, values)


def _symmetry_classes(d: int, radius: int):
    """All sorted nonnegative vectors with max coordinate <= radius."""
    out = []

    def rec(prefix, lo):
        if len(prefix) == d:
            out.append(tuple(prefix))
            return
        for c in range(lo, radius + 1):
            rec(prefix + [c], c)

    rec([], 0)
    return out


def _dirichlet_green_grid(d: int, radius: int, box_radius: int, rtol: float = 1e-12):
    """Solve (I - P) g = delta_0 on a box with asymptotic boundary data.

    Returns g on the sub-box |x|_inf <= radius as a dense d-dimensional array.
    """
    n = 2 * box_radius + 1
    shape = (n,) * d
    size = n ** d
    strides = np.array([n ** (d - 1 - i) for i in range(d)], dtype=np.int64)
    coords = np.stack(np.meshgrid(*[np.arange(-box_radius, box_radius + 1)] * d,
                                  indexing="ij"), axis=-1).reshape(size, d)
    on_bnd = (np.abs(coords).max(axis=1) == box_radius)
    interior = np.where(~on_bnd)[0]
    int_rank = -np.ones(size, dtype=np.int64)
    int_rank[interior] = np.arange(len(interior))

    cd = green_asymptotic_constant(d)
    bval = np.zeros(size)
    r2 = np.sqrt((coords[on_bnd] ** 2).sum(axis=1))
    bval[on_bnd] = cd * r2 ** (2.0 - d)

    rows, cols, vals = [], [], []
    rhs = np.zeros(len(interior))
    w = 1.0 / (2 * d)
    origin_flat = int(((np.zeros(d, dtype=np.int64) + box_radius) * strides).sum())
    rhs[int_rank[origin_flat]] = 1.0
    for axis in range(d):
        step = int(strides[axis])
        for sign in (step, -step):
            nbr = np.arange(size) + sign
            # neighbor stays in the box along this axis for non-edge planes
            axis_pos = (np.arange(size) // step) % n
            ok = (axis_pos < n - 1) if sign > 0 else (axis_pos > 0)
            src = np.where(~on_bnd & ok)[0]
            tgt = nbr[src]
            tgt_int = int_rank[tgt] >= 0
            rows.append(int_rank[src[tgt_int]])
            cols.append(int_rank[tgt[tgt_int]])
            vals.append(np.full(tgt_int.sum(), -w))
            # boundary neighbors feed the right-hand side
            bsrc = src[~tgt_int]
            np.add.at(rhs, int_rank[bsrc], w * bval[nbr[bsrc]])
    mat = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(interior), len(interior)))
    mat = mat + sparse.identity(len(interior), format="csr")
    sol, info = sparse_cg(mat, rhs, rtol=rtol, atol=0.0, maxiter=20 * n * n)
    if info != 0:
        raise GreenValidationError(f"Dirichlet CG did not converge (info={info})")
    full = bval.copy()
    full[interior] = sol
    grid = full.reshape(shape)
    sl = tuple(slice(box_radius - radius, box_radius + radius + 1) for _ in range(d))
    return grid[sl]


def build_green_table(d: int, radius: int, method: str = "quadrature",
                      tol: float = 1e-8, box_radius: int | None = None,
                      validate_entries: int = 10, seed: int = 7) -> GreenTable:
    """Build a GreenTable for |x|_inf <= radius.

    method='quadrature' evaluates every symmetry class by quadrature (the
    reference). method='dirichlet_solve' fills the table from a grid solve on
    a box of radius >= 3*radius and cross-validates `validate_entries` random
    classes against quadrature within 1e-4 relative error, aborting on failure.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    classes = _symmetry_classes(d, radius)
    if method == "quadrature":
        values = {key: _green_cached(key, d, tol) for key in classes}
    elif method == "dirichlet_solve":
        br = box_radius if box_radius is not None else 3 * radius
        if br < 3 * radius:
            raise ValueError("dirichlet_solve requires box_radius >= 3*radius")
        grid = _dirichlet_green_grid(d, radius, br)
        values = {key: float(grid[tuple(c + radius for c in key)]) for key in classes}
        stream = PhiloxStream(seed, 0)
        want = min(validate_entries, len(classes))
        picks = set()
        while len(picks) < want:
            picks.add(classes[stream.integers(len(classes))])
        for key in sorted(picks):
            ref = _green_cached(key, d, tol)
            rel = abs(values[key] - ref) / ref
            if rel > 1e-4:
                raise GreenValidationError(
                    f"dirichlet table entry {key} off by {rel:.2e} relative vs quadrature")
    else:
        raise ValueError(f"unknown method {method!r}")
    return GreenTable(d, radius, method, tol, values)


# ---------------------------------------------------------------------------
# Monte Carlo walk diagnostics (independent of the quadrature path)

@njit(cache=True, nogil=True)
def _escape_kernel(seed, stream0, n_walks, d, radius2):
    escapes = 0
    pos = np.zeros(d, dtype=np.int64)
    for w in range(n_walks):
        st = make_state(np.uint64(seed), np.uint64(stream0 + w))
        for i in range(d):
            pos[i] = 0
        while True:
            k = randbelow(st, 2 * d)
            axis = k >> 1
            pos[axis] += 1 - 2 * (k & 1)
            r2 = 0
            home = True
            for i in range(d):
                r2 += pos[i] * pos[i]
                if pos[i] != 0:
                    home = False
            if home:
                break
            if r2 > radius2:
                escapes += 1
                break
    return escapes


def escape_probability_mc(d: int, n_walks: int, escape_radius: float,
                          seed: int, stream: int = 0):
    """Estimate P_0[no return to 0] by walking until return or |x|_2 > radius.

    Truncation overestimates escape by at most the return probability from the
    killing shell, O(radius^(2-d)); keep 3*stderr above that when testing.
    Returns (p_hat, stderr).
    """
    esc = _escape_kernel(seed, stream, n_walks, d, float(escape_radius) ** 2)
    p = esc / n_walks
    return p, math.sqrt(max(p * (1 - p), 1e-12) / n_walks)


@njit(cache=True, nogil=True)
def _visits_kernel(seed, stream0, n_walks, d, radius2, targets):
    m = targets.shape[0]
    counts = np.zeros((n_walks, m), dtype=np.int64)
    pos = np.zeros(d, dtype=np.int64)
    for w in range(n_walks):
        st = make_state(np.uint64(seed), np.uint64(stream0 + w))
        for i in range(d):
            pos[i] = 0
        for t in range(m):
            hit = True
            for i in range(d):
                if targets[t, i] != 0:
                    hit = False
                    break
            if hit:
                counts[w, t] += 1
        while True:
            k = randbelow(st, 2 * d)
            axis = k >> 1
            pos[axis] += 1 - 2 * (k & 1)
            r2 = 0
            for i in range(d):
                r2 += pos[i] * pos[i]
            if r2 > radius2:
                break
            for t in range(m):
                hit = True
                for i in range(d):
                    if pos[i] != targets[t, i]:
                        hit = False
                        break
                if hit:
                    counts[w, t] += 1
    return counts


def green_visits_mc(targets: Sequence[Site], d: int, n_walks: int,
                    escape_radius: float, seed: int, stream: int = 0):
    """Monte Carlo visit counts from the origin, truncated at |x|_2 > radius.

    Unbiased for the Green function of the ball; the truncation deficit versus
    g itself is O(radius^(2-d)). Returns (means, stderrs) per target.
    """
    tarr = np.array([tuple(t) for t in targets], dtype=np.int64).reshape(-1, d)
    counts = _visits_kernel(seed, stream, n_walks, d, float(escape_radius) ** 2, tarr)
    means = counts.mean(axis=0)
    stderrs = counts.std(axis=0, ddof=1) / math.sqrt(n_walks)
    return means, stderrs


@njit(cache=True, nogil=True)
def _hit_or_escape_kernel(seed, stream0, n_walks, start, targets, radius2, first_step):
    d = start.shape[0]
    m = targets.shape[0]
    hits = np.zeros(m + 1, dtype=np.int64)  # last slot counts escapes
    pos = np.zeros(d, dtype=np.int64)
    for w in range(n_walks):
        st = make_state(np.uint64(seed), np.uint64(stream0 + w))
        for i in range(d):
            pos[i] = start[i]
        force = first_step
        outcome = m
        while True:
            if not force:
                t_hit = -1
                for t in range(m):
                    same = True
                    for i in range(d):
                        if pos[i] != targets[t, i]:
                            same = False
                            break
                    if same:
                        t_hit = t
                        break
                if t_hit >= 0:
                    outcome = t_hit
                    break
                r2 = 0
                for i in range(d):
                    r2 += pos[i] * pos[i]
                if r2 > radius2:
                    break
            force = False
            k = randbelow(st, 2 * d)
            axis = k >> 1
            pos[axis] += 1 - 2 * (k & 1)
        hits[outcome] += 1
    return hits


def hitting_mc(start: Site, targets: Sequence[Site], n_walks: int,
               escape_radius: float, seed: int, stream: int = 0,
               from_inside: bool = False) -> np.ndarray:
    """Walk until first entering `targets` or leaving |x|_2 <= radius.

    Returns counts per target site plus a trailing escape count. With
    from_inside=True the first step is taken before membership is checked,
    which turns entrance times into return times (H-tilde semantics).
    """
    d = len(start)
    sarr = np.array(start, dtype=np.int64)
    tarr = np.array([tuple(t) for t in targets], dtype=np.int64).reshape(-1, d)
    return _hit_or_escape_kernel(seed, stream, n_walks, sarr, tarr,
                                 float(escape_radius) ** 2, from_inside)
