"""Geometry of Z^d: norms, adjacency, boundary operators, windows, hypercubes.

Sites are plain integer tuples. Site sets returned by the boundary operators
are `SiteSet` objects: lexicographically sorted coordinate arrays with a hash
index, so iteration order is deterministic and membership tests are O(1).

Conventions: "nearest" adjacency means l1-distance 1 (2d neighbors), "star"
adjacency means linf-distance 1 (3^d - 1 neighbors). Z^3 embeds into Z^d via
(y1, y2, y3) -> (y1, y2, y3, 0, ..., 0), and the hypercube attached to a
Z^3 site y is C_y = 2y + {0,1}^d under that embedding.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np

Site = tuple


def l1(x) -> int:
    return sum(abs(c) for c in x)


def l2(x) -> float:
    return math.sqrt(sum(c * c for c in x))


def linf(x) -> int:
    return max(abs(c) for c in x)


def unit_vector(d: int, axis: int, sign: int = 1) -> Site:
    e = [0] * d
    e[axis] = sign
    return tuple(e)


@lru_cache(maxsize=None)
def _nn_offsets(d: int):
    offs = []
    for axis in range(d):
        for sign in (1, -1):
            offs.append(unit_vector(d, axis, sign))
    return tuple(offs)


@lru_cache(maxsize=None)
def _star_offsets(d: int):
    return tuple(v for v in itertools.product((-1, 0, 1), repeat=d) if any(v))


def offsets(d: int, star: bool = False):
    """Displacements to the 2d nearest or 3^d-1 star neighbors of a site."""
    return _star_offsets(d) if star else _nn_offsets(d)


def neighbors(x: Site, star: bool = False) -> list:
    d = len(x)
    return [tuple(xi + oi for xi, oi in zip(x, o)) for o in offsets(d, star)]


def add(x: Site, y: Site) -> Site:
    return tuple(a + b for a, b in zip(x, y))


def sub(x: Site, y: Site) -> Site:
    return tuple(a - b for a, b in zip(x, y))


class BoundaryKind(Enum):
    INTERIOR = "interior"
    INTERIOR_STAR = "interior_star"
    OUTER = "outer"
    OUTER_STAR = "outer_star"
    EXTERIOR = "exterior"
    EXTERIOR_STAR = "exterior_star"


class SiteSet:
    """Finite set of lattice sites with sorted deterministic iteration order."""

    def __init__(self, sites: Iterable[Site]):
        uniq = sorted(set(tuple(int(c) for c in s) for s in sites))
        self._sites = uniq
        self._index = {s: i for i, s in enumerate(uniq)}
        self._array = None

    def __len__(self) -> int:
        return len(self._sites)

    def __iter__(self) -> Iterator[Site]:
        return iter(self._sites)

    def __contains__(self, s) -> bool:
        return tuple(s) in self._index

    def __eq__(self, other) -> bool:
        if isinstance(other, SiteSet):
            return self._sites == other._sites
        return set(self._sites) == set(other)

    def __repr__(self) -> str:
        return f"SiteSet({len(self)} sites, d={self.d})"

    @property
    def d(self) -> int:
        return len(self._sites[0]) if self._sites else 0

    @property
    def sites(self) -> list:
        return list(self._sites)

    def index(self, s: Site) -> int:
        return self._index[tuple(s)]

    def array(self) -> np.ndarray:
        if self._array is None:
            self._array = np.array(self._sites, dtype=np.int64).reshape(len(self._sites), -1)
        return self._array

    def union(self, other) -> "SiteSet":
        return SiteSet(list(self._sites) + list(other))

    def difference(self, other) -> "SiteSet":
        drop = set(tuple(s) for s in other)
        return SiteSet(s for s in self._sites if s not in drop)


def _bounding_box(K: Sequence[Site], pad: int = 0):
    arr = np.array(list(K), dtype=np.int64)
    return arr.min(axis=0) - pad, arr.max(axis=0) + pad


def _unbounded_complement(K: set, d: int) -> set:
    """Sites of K^c inside the pad-1 bounding box that connect to infinity.

    Flood fill (nearest-neighbor) started from the padded box's own boundary
    layer, which lies entirely in the unbounded complement component. Exact
    for finite K: any escaping path exits the padded box through that layer.
    """
    lo, hi = _bounding_box(list(K), pad=1)
    rng = [range(int(a), int(b) + 1) for a, b in zip(lo, hi)]

    def in_box(s):
        return all(lo[i] <= s[i] <= hi[i] for i in range(d))

    shell = [s for s in itertools.product(*rng)
             if any(s[i] == lo[i] or s[i] == hi[i] for i in range(d))]
    seen = set(s for s in shell if s not in K)
    stack = list(seen)
    while stack:
        cur = stack.pop()
        for nb in neighbors(cur):
            if nb not in seen and nb not in K and in_box(nb):
                seen.add(nb)
                stack.append(nb)
    return seen


def boundary(K: Iterable[Site], kind: BoundaryKind | str) -> SiteSet:
    """Boundary of a site set.

    interior(_star): sites of K with a nearest (star) neighbor outside K.
    outer(_star): sites outside K with a nearest (star) neighbor in K.
    exterior(_star): the subset of the outer (star) boundary whose sites start
    an infinite self-avoiding nearest-neighbor path never entering K; computed
    by flood-filling the unbounded complement component in a padded box.
    """
    kind = BoundaryKind(kind)
    Kset = set(tuple(s) for s in K)
    if not Kset:
        return SiteSet([])
    d = len(next(iter(Kset)))
    star = kind in (BoundaryKind.INTERIOR_STAR, BoundaryKind.OUTER_STAR,
                    BoundaryKind.EXTERIOR_STAR)
    if kind in (BoundaryKind.INTERIOR, BoundaryKind.INTERIOR_STAR):
        return SiteSet(s for s in Kset
                       if any(nb not in Kset for nb in neighbors(s, star)))
    out = set()
    for s in Kset:
        for nb in neighbors(s, star):
            if nb not in Kset:
                out.add(nb)
    if kind in (BoundaryKind.OUTER, BoundaryKind.OUTER_STAR):
        return SiteSet(out)
    escaping = _unbounded_complement(Kset, d)
    return SiteSet(s for s in out if s in escaping)


def hypercube(y: Site, d: int) -> SiteSet:
    """C_y = 2y + {0,1}^d, with length-3 y embedded as (y1, y2, y3, 0, ..., 0)."""
    y = embed3(y, d) if len(y) == 3 and d != 3 else tuple(y)
    if len(y) != d:
        raise ValueError(f"site has dimension {len(y)}, expected 3 or {d}")
    base = tuple(2 * c for c in y)
    return SiteSet(add(base, eps) for eps in itertools.product((0, 1), repeat=d))


def embed3(y: Site, d: int) -> Site:
    """Embed a Z^3 site into Z^d by zero-padding the trailing coordinates."""
    if len(y) != 3:
        raise ValueError("embed3 expects a Z^3 site")
    if d < 3:
        raise ValueError("ambient dimension must be >= 3")
    return tuple(y) + (0,) * (d - 3)


def project3(x: Site) -> Site:
    return tuple(x[:3])


def ball(center: Site, L: float, norm: str = "inf") -> SiteSet:
    """Lattice ball {y : |y - center|_norm <= L}; norm in {'1', '2', 'inf'}."""
    d = len(center)
    r = int(math.floor(L))
    rng = [range(c - r, c + r + 1) for c in center]
    if norm == "inf":
        keep = lambda v: True
    elif norm == "1":
        keep = lambda v: l1(v) <= L
    elif norm == "2":
        keep = lambda v: sum(c * c for c in v) <= L * L
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return SiteSet(s for s in itertools.product(*rng)
                   if keep(sub(s, center)))


def is_connected(sites: Iterable[Site], star: bool = False) -> bool:
    """True iff the site set is connected under the requested adjacency."""
    todo = set(tuple(s) for s in sites)
    if not todo:
        return True
    start = next(iter(todo))
    stack = [start]
    seen = {start}
    while stack:
        cur = stack.pop()
        for nb in neighbors(cur, star):
            if nb in todo and nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(todo)


@dataclass(frozen=True)
class Window:
    """Axis-aligned finite region of Z^d with C-order site indexing.

    Shape 'box' is an arbitrary product of integer intervals. Shape 'slab' is
    the union of hypercubes over B_inf^3(0, n): coordinates 1..3 range over
    [-2n, 2n+1] and the remaining d-3 coordinates over {0, 1}.
    """

    lo: tuple
    hi: tuple
    shape: str = "box"
    slab_n: int = -1

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("lo/hi dimension mismatch")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError("window requires lo <= hi coordinatewise")

    @staticmethod
    def box(lo: Site, hi: Site) -> "Window":
        return Window(tuple(int(c) for c in lo), tuple(int(c) for c in hi))

    @staticmethod
    def box_radius(d: int, L: int, center: Site | None = None) -> "Window":
        c = tuple(center) if center is not None else (0,) * d
        return Window(tuple(ci - L for ci in c), tuple(ci + L for ci in c))

    @staticmethod
    def slab(n: int, d: int) -> "Window":
        if d < 3:
            raise ValueError("slab windows require d >= 3")
        lo = (-2 * n,) * 3 + (0,) * (d - 3)
        hi = (2 * n + 1,) * 3 + (1,) * (d - 3)
        return Window(lo, hi, shape="slab", slab_n=n)

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def extents(self) -> tuple:
        return tuple(b - a + 1 for a, b in zip(self.lo, self.hi))

    @property
    def size(self) -> int:
        return int(np.prod(self.extents))

    def contains(self, s: Site) -> bool:
        return all(a <= c <= b for a, b, c in zip(self.lo, self.hi, s))

    def index(self, s: Site) -> int:
        idx = 0
        for a, b, c in zip(self.lo, self.hi, s):
            if not a <= c <= b:
                raise KeyError(f"site {s} outside window")
            idx = idx * (b - a + 1) + (c - a)
        return idx

    def site(self, idx: int) -> Site:
        coords = []
        for e in reversed(self.extents):
            coords.append(idx % e)
            idx //= e
        return tuple(c + a for c, a in zip(reversed(coords), self.lo))

    def sites_array(self) -> np.ndarray:
        """All sites in index (C) order, shape (size, d)."""
        grids = np.meshgrid(*[np.arange(a, b + 1, dtype=np.int64)
                              for a, b in zip(self.lo, self.hi)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def sites(self) -> Iterator[Site]:
        for s in itertools.product(*(range(a, b + 1) for a, b in zip(self.lo, self.hi))):
            yield s

    def radius2(self) -> float:
        """Largest Euclidean norm over the window's sites."""
        corner = tuple(max(abs(a), abs(b)) for a, b in zip(self.lo, self.hi))
        return l2(corner)

    def field(self, fill=False, dtype=bool) -> np.ndarray:
        return np.full(self.extents, fill, dtype=dtype)

    def classification_core(self) -> "Window":
        """Z^3 sites y whose 7 surrounding hypercubes all lie inside a slab."""
        if self.shape != "slab":
            raise ValueError("classification core requires a slab window")
        m = self.slab_n - 1
        if m < 0:
            raise ValueError("slab too small: no site has all 7 hypercubes inside")
        return Window.box_radius(3, m)
