"""Lattice geometry, occupancy configurations, and the allowed-jump set.

Sites are exchanged as 1-based coordinate tuples at the API boundary
(``(3,)`` in 1D, ``(2, 5)`` in 2D, ...) and as row-major flat indices
internally.  A particle at site i is *active* when it has at least one
occupied neighbour; a jump (i -> j) is allowed when i is active and j is an
empty in-lattice neighbour.  In open/cylinder geometries the virtual mirror
sites outside the box count as occupied for the activity predicate but are
never jump targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np

from . import _kernel

PERIODIC = "periodic"
OPEN = "open"
CYLINDER = "cylinder"
MODES = (PERIODIC, OPEN, CYLINDER)


class UsageError(ValueError):
    """Raised on out-of-contract arguments (bad sites, bad parameters)."""


@dataclass(frozen=True)
class Geometry:
    """A d-dimensional box of side L.

    mode 'periodic': torus, every site has 2d neighbours.
    mode 'open': all 2d faces open, mirror sites all around.
    mode 'cylinder': axis 1 open, axes 2..d periodic.
    """

    d: int
    L: int
    mode: str = PERIODIC

    def __post_init__(self):
        if self.d < 1:
            raise UsageError(f"dimension must be >= 1, got {self.d}")
        if self.L < 2:
            raise UsageError(f"side must be >= 2, got {self.L}")
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def volume(self) -> int:
        return self.L ** self.d

    def axis_periodic(self, axis: int) -> bool:
        """Whether 0-based axis wraps around."""
        if self.mode == PERIODIC:
            return True
        if self.mode == CYLINDER:
            return axis > 0
        return False

    def check_site(self, site) -> tuple:
        site = tuple(int(x) for x in site)
        if len(site) != self.d or any(not (1 <= x <= self.L) for x in site):
            raise UsageError(f"site {site} outside [1,{self.L}]^{self.d}")
        return site

    def site_index(self, site) -> int:
        """Flat row-major index of a 1-based coordinate tuple."""
        site = self.check_site(site)
        idx = 0
        for x in site:
            idx = idx * self.L + (x - 1)
        return idx

    def site_coords(self, index: int) -> tuple:
        """Inverse of site_index."""
        coords = []
        for _ in range(self.d):
            coords.append(index % self.L + 1)
            index //= self.L
        return tuple(reversed(coords))

    @property
    def neighbor_table(self) -> np.ndarray:
        """int64 (V, 2d) flat-neighbour table; -1 marks a mirror site."""
        return _neighbor_table(self.d, self.L, self.mode)

    def boundary_sites(self) -> np.ndarray:
        """Flat indices of the reservoir boundary (sites with a mirror neighbour)."""
        return np.nonzero((self.neighbor_table < 0).any(axis=1))[0]


@lru_cache(maxsize=None)
def _neighbor_table(d: int, L: int, mode: str) -> np.ndarray:
    g = Geometry(d, L, mode)
    V = g.volume
    coords = np.indices((L,) * d).reshape(d, V)  # 0-based
    strides = np.array([L ** (d - 1 - a) for a in range(d)], dtype=np.int64)
    table = np.empty((V, 2 * d), dtype=np.int64)
    for axis in range(d):
        for sgn_idx, step in enumerate((-1, +1)):
            shifted = coords.copy()
            shifted[axis] = coords[axis] + step
            if g.axis_periodic(axis):
                shifted[axis] %= L
                flat = (strides[:, None] * shifted).sum(axis=0)
            else:
                inside = (shifted[axis] >= 0) & (shifted[axis] < L)
                clipped = shifted.copy()
                clipped[axis] = np.clip(shifted[axis], 0, L - 1)
                flat = (strides[:, None] * clipped).sum(axis=0)
                flat[~inside] = -1
            table[:, 2 * axis + sgn_idx] = flat
    table.setflags(write=False)
    return table


@dataclass(frozen=True)
class NeighborList:
    in_lattice: list
    mirror: list


def neighbors(g: Geometry, site) -> NeighborList:
    """Neighbours of a site, lexicographic by axis, minus before plus.

    Mirror-boundary neighbours (only in open/cylinder mode) are reported
    separately as out-of-box coordinate tuples (coordinate 0 or L+1 on the
    open axis).
    """
    site = g.check_site(site)
    inside, mirror = [], []
    for axis in range(g.d):
        for step in (-1, +1):
            x = site[axis] + step
            if 1 <= x <= g.L:
                inside.append(site[:axis] + (x,) + site[axis + 1:])
            elif g.axis_periodic(axis):
                wrapped = g.L if x == 0 else 1
                inside.append(site[:axis] + (wrapped,) + site[axis + 1:])
            else:
                mirror.append(site[:axis] + (x,) + site[axis + 1:])
    return NeighborList(inside, mirror)


@dataclass
class Configuration:
    """Occupancy field on a geometry.

    occ is a flat uint8 array of length L^d.  Sites outside the box are
    virtual and treated as occupied by the activity predicate (see
    _kernel.is_active_site); they are never represented explicitly.
    """

    geometry: Geometry
    occ: np.ndarray

    def __post_init__(self):
        self.occ = np.ascontiguousarray(self.occ, dtype=np.uint8)
        if self.occ.shape != (self.geometry.volume,):
            raise UsageError("occupancy shape does not match geometry")

    @classmethod
    def empty(cls, g: Geometry) -> "Configuration":
        return cls(g, np.zeros(g.volume, dtype=np.uint8))

    @classmethod
    def from_occupied(cls, g: Geometry, sites: Iterable) -> "Configuration":
        c = cls.empty(g)
        for s in sites:
            c.occ[g.site_index(s)] = 1
        return c

    @property
    def n(self) -> int:
        return int(self.occ.sum())

    @property
    def density(self) -> float:
        return self.n / self.geometry.volume

    def copy(self) -> "Configuration":
        return Configuration(self.geometry, self.occ.copy())

    def as_grid(self) -> np.ndarray:
        return self.occ.reshape((self.geometry.L,) * self.geometry.d)


def activity_field(c: Configuration) -> np.ndarray:
    """Vectorized A_i for every site (uint8)."""
    nbr = c.geometry.neighbor_table
    occ_at_nbr = np.where(nbr >= 0, c.occ[np.clip(nbr, 0, None)], 1)
    return (c.occ.astype(bool) & occ_at_nbr.any(axis=1)).astype(np.uint8)


def is_active(c: Configuration, site) -> bool:
    """A_i for a single site."""
    i = c.geometry.site_index(site)
    return bool(_kernel.is_active_site(c.occ, c.geometry.neighbor_table, i))


class ActiveEdgeSet:
    """Indexable set of allowed ordered jumps with O(1) update and sampling.

    Mirrors the kernel's (pos, items, cnt) representation; total_count is
    the ordered-pair count used by the activity observable and equals the
    total bulk jump rate.
    """

    def __init__(self, c: Configuration):
        g = c.geometry
        nd = 2 * g.d
        self._g = g
        self.pos = np.full(g.volume * nd, -1, dtype=np.int64)
        self.items = np.zeros(g.volume * nd, dtype=np.int64)
        self.cnt = np.zeros(1, dtype=np.int64)
        self.scratch = np.empty(2 * (nd + 1), dtype=np.int64)
        _kernel.build_edges(c.occ, g.neighbor_table, self.pos, self.items, self.cnt)

    @property
    def total_count(self) -> int:
        return int(self.cnt[0])

    def __len__(self) -> int:
        return self.total_count

    def _edge_id(self, i, j) -> int:
        g = self._g
        fi = g.site_index(i)
        fj = g.site_index(j)
        nbr = g.neighbor_table
        for k in range(2 * g.d):
            if nbr[fi, k] == fj:
                return fi * 2 * g.d + k
        raise UsageError(f"sites {tuple(i)} and {tuple(j)} are not neighbours")

    def __contains__(self, pair) -> bool:
        i, j = pair
        try:
            eid = self._edge_id(i, j)
        except UsageError:
            return False
        return self.pos[eid] >= 0

    def jumps(self) -> set:
        """All allowed ordered jumps as coordinate-tuple pairs."""
        g = self._g
        nd = 2 * g.d
        nbr = g.neighbor_table
        out = set()
        for slot in range(self.total_count):
            eid = int(self.items[slot])
            i = eid // nd
            j = int(nbr[i, eid % nd])
            out.add((g.site_coords(i), g.site_coords(j)))
        return out

    def refresh(self, c: Configuration):
        _kernel.build_edges(c.occ, self._g.neighbor_table,
                            self.pos, self.items, self.cnt)


def allowed_jumps(c: Configuration) -> ActiveEdgeSet:
    """Full set of allowed ordered jumps (i -> j), built from scratch."""
    return ActiveEdgeSet(c)


def brute_force_jumps(c: Configuration) -> set:
    """Independent enumeration of allowed jumps, for validating the
    incremental set.  Deliberately naive."""
    g = c.geometry
    out = set()
    for idx in range(g.volume):
        site = g.site_coords(idx)
        if not c.occ[idx]:
            continue
        nl = neighbors(g, site)
        occupied_nbr = bool(nl.mirror) or any(
            c.occ[g.site_index(s)] for s in nl.in_lattice)
        if not occupied_nbr:
            continue
        for s in nl.in_lattice:
            if not c.occ[g.site_index(s)]:
                out.add((site, s))
    return out


def apply_jump(c: Configuration, s: ActiveEdgeSet, i, j):
    """Execute the jump i -> j, updating configuration and edge set in place.

    Raises UsageError if the jump is not currently allowed.
    """
    eid = s._edge_id(i, j)
    if s.pos[eid] < 0:
        raise UsageError(f"jump {tuple(i)} -> {tuple(j)} is not allowed")
    g = c.geometry
    fi, fj = g.site_index(i), g.site_index(j)
    c.occ[fi] = 0
    c.occ[fj] = 1
    _kernel.resync_around(c.occ, g.neighbor_table, s.pos, s.items, s.cnt,
                          fi, fj, s.scratch)
    return c, s
