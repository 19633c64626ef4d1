"""Finite measures on R^d: atoms plus piecewise-constant grid densities.

A :class:`MixedMeasure` is a finite sum of weighted Dirac masses and an
optional density that is constant on the cells of a regular grid
(``d`` in {1, 2}).  The stored quantity for a density is the *mass* of each
cell, so meets, total variation distances and convolutions are exact
discrete operations at the declared resolution.

Cell ``i`` of a grid with origin ``o`` and spacing ``h`` covers
``[o + i h, o + (i + 1) h)``.  Convolving two densities adds their origins
and convolves the cell masses; this keeps every convolution power on the
lattice ``o + hZ`` whenever ``o`` is itself a lattice point, which is what
lets Poisson-weighted sums of powers share one grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import signal
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import (
    BudgetExceeded,
    DensityRotationUnsupported,
    DimensionMismatch,
    EmptyTruncation,
    IncompatibleGrids,
    SchemaError,
    SnapError,
    ZeroDisplacement,
    ZeroMass,
)

DEDUP_TOL = 1e-9
DEFAULT_BUDGET = 10_000_000
# tolerance, in units of cells, for deciding that an offset is a lattice vector
GRID_TOL = 1e-6
# max number of pairwise sums materialised at once in atom convolution
_PAIR_CHUNK = 2_000_000


def as_point(x, dim: Optional[int] = None) -> np.ndarray:
    """Coerce a scalar or sequence to a finite 1-d float array."""
    p = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    if dim is not None and p.shape[0] != dim:
        raise DimensionMismatch(f"expected a point in R^{dim}, got {p.shape[0]} coordinates")
    if not np.all(np.isfinite(p)):
        raise ValueError("point coordinates must be finite")
    return p


# ---------------------------------------------------------------------------
# atom clustering


def _cluster(locs: np.ndarray, tol: float):
    """Group locations closer than ``tol`` (sup norm, transitively).

    Returns ``(ids, reps)``: a cluster label per input row and one
    representative location per cluster.  Labels follow lexicographic order
    of the representatives, so output is deterministic.
    """
    n, d = locs.shape
    if n == 0:
        return np.zeros(0, dtype=np.int64), locs.copy()
    if d == 1:
        order = np.argsort(locs[:, 0], kind="stable")
        xs = locs[order, 0]
        new = np.empty(n, dtype=bool)
        new[0] = True
        np.greater(np.diff(xs), tol, out=new[1:])
        ids_sorted = np.cumsum(new) - 1
        ids = np.empty(n, dtype=np.int64)
        ids[order] = ids_sorted
        return ids, xs[new][:, None]

    uniq, inverse = np.unique(locs, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    m = uniq.shape[0]
    if tol > 0 and m > 1:
        pairs = cKDTree(uniq).query_pairs(tol, p=np.inf, output_type="ndarray")
    else:
        pairs = np.zeros((0, 2), dtype=np.int64)
    if len(pairs) == 0:
        return inverse.astype(np.int64), uniq
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(m, m))
    _, labels = connected_components(graph, directed=False)
    # uniq is lexicographically sorted, so first occurrence is the smallest member
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    relabel = np.empty_like(order)
    relabel[order] = np.arange(len(order))
    return relabel[labels][inverse].astype(np.int64), uniq[np.sort(first)]


def _merge(locs: np.ndarray, masses: np.ndarray, tol: float):
    keep = masses > 0
    locs, masses = locs[keep], masses[keep]
    if masses.size == 0:
        return locs, masses
    ids, reps = _cluster(locs, tol)
    return reps, np.bincount(ids, weights=masses, minlength=reps.shape[0])


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Weighted Dirac masses; ``locations`` is ``(k, d)``, ``masses`` is ``(k,)``.

    Use :meth:`build` to construct: it drops zero masses and merges atoms
    closer than ``dedup_tol`` (masses add).
    """

    locations: np.ndarray
    masses: np.ndarray
    dedup_tol: float = DEDUP_TOL

    @classmethod
    def build(cls, locations, masses, dim: Optional[int] = None, dedup_tol: float = DEDUP_TOL):
        masses = np.atleast_1d(np.asarray(masses, dtype=float)).ravel()
        locs = np.asarray(locations, dtype=float)
        if locs.ndim <= 1:
            if dim is None or dim == 1 or locs.size == 0:
                locs = locs.reshape(-1, 1 if dim is None else dim)
            else:
                locs = locs.reshape(-1, dim)
        if locs.shape[0] != masses.shape[0]:
            raise ValueError("locations and masses must have the same length")
        if dim is not None and locs.shape[1] != dim:
            raise DimensionMismatch(f"atoms are in R^{locs.shape[1]}, expected R^{dim}")
        if not (np.all(np.isfinite(locs)) and np.all(np.isfinite(masses))):
            raise ValueError("atom locations and masses must be finite")
        if np.any(masses < 0):
            raise ValueError("atom masses must be nonnegative")
        if dedup_tol < 0:
            raise ValueError("dedup_tol must be nonnegative")
        locs, masses = _merge(locs, masses, dedup_tol)
        return cls(locs, masses, dedup_tol)

    @classmethod
    def empty(cls, dim: int, dedup_tol: float = DEDUP_TOL):
        return cls(np.zeros((0, dim)), np.zeros(0), dedup_tol)

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def __len__(self):
        return self.masses.shape[0]


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Piecewise-constant density stored as cell masses on a regular grid."""

    origin: np.ndarray
    spacing: float
    cells: np.ndarray

    def __post_init__(self):
        origin = as_point(self.origin)
        cells = np.asarray(self.cells, dtype=float)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "spacing", float(self.spacing))
        if cells.ndim not in (1, 2):
            raise ValueError("grid densities are supported in dimension 1 or 2 only")
        if origin.shape[0] != cells.ndim:
            raise DimensionMismatch("origin dimension does not match cell array")
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise ValueError("grid spacing must be positive")
        if not np.all(np.isfinite(cells)) or np.any(cells < 0):
            raise ValueError("cell masses must be finite and nonnegative")

    @property
    def dim(self) -> int:
        return self.cells.ndim

    @property
    def total_mass(self) -> float:
        return float(self.cells.sum())

    def cell_centers(self) -> np.ndarray:
        """Centers of all cells, shape ``cells.shape + (d,)``."""
        axes = [self.origin[k] + (np.arange(n) + 0.5) * self.spacing
                for k, n in enumerate(self.cells.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


@dataclass(frozen=True, eq=False)
class MixedMeasure:
    atomic: AtomicMeasure
    density: Optional[GridDensity] = None
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.density is not None and self.density.dim != self.atomic.dim:
            raise DimensionMismatch(
                f"density is {self.density.dim}-dimensional but atoms live in R^{self.atomic.dim}")

    @property
    def dim(self) -> int:
        return self.atomic.dim

    @property
    def atomic_mass(self) -> float:
        return self.atomic.total_mass

    @property
    def density_mass(self) -> float:
        return 0.0 if self.density is None else self.density.total_mass

    @property
    def total_mass(self) -> float:
        return self.atomic_mass + self.density_mass

    @property
    def is_atomic(self) -> bool:
        return self.density is None or self.density_mass == 0.0

    @property
    def size(self) -> int:
        """Number of stored atoms plus cells."""
        return len(self.atomic) + (0 if self.density is None else self.density.cells.size)

    def __repr__(self):
        dens = "none" if self.density is None else (
            f"{self.density.cells.shape} cells, h={self.density.spacing:g}, mass={self.density_mass:.6g}")
        return (f"MixedMeasure(dim={self.dim}, atoms={len(self.atomic)}, "
                f"atomic_mass={self.atomic_mass:.6g}, density={dens})")


# ---------------------------------------------------------------------------
# constructors


def zero_measure(dim: int) -> MixedMeasure:
    return MixedMeasure(AtomicMeasure.empty(dim))


def dirac(x, mass: float = 1.0) -> MixedMeasure:
    p = as_point(x)
    return MixedMeasure(AtomicMeasure.build(p[None, :], [mass]))


def atoms(locations, masses, dim: Optional[int] = None, dedup_tol: float = DEDUP_TOL) -> MixedMeasure:
    """Purely atomic measure; 1-d locations may be given as a flat list."""
    return MixedMeasure(AtomicMeasure.build(locations, masses, dim=dim, dedup_tol=dedup_tol))


def grid_density(origin, spacing: float, cells, atomic: Optional[AtomicMeasure] = None) -> MixedMeasure:
    dens = GridDensity(origin, spacing, cells)
    if atomic is None:
        atomic = AtomicMeasure.empty(dens.dim)
    return MixedMeasure(atomic, dens)


def uniform(a: float, b: float, spacing: float, mass: float = 1.0) -> MixedMeasure:
    """``mass`` times the uniform law on ``[a, b]``; ``b - a`` must be a multiple of ``spacing``."""
    n = (b - a) / spacing
    if abs(n - round(n)) > GRID_TOL or round(n) < 1:
        raise ValueError("interval length must be a positive multiple of the spacing")
    n = int(round(n))
    return grid_density([a], spacing, np.full(n, mass / n))


# ---------------------------------------------------------------------------
# grid alignment


def _check_dims(mu: MixedMeasure, nu: MixedMeasure):
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"measures live in R^{mu.dim} and R^{nu.dim}")


def _same_spacing(h1: float, h2: float) -> bool:
    return math.isclose(h1, h2, rel_tol=1e-9)


def lattice_offset(ref_origin, spacing: float, origin) -> np.ndarray:
    """Integer vector ``k`` with ``origin = ref_origin + k * spacing``.

    Raises :class:`IncompatibleGrids` when no such lattice vector exists.
    """
    k = (np.asarray(origin) - np.asarray(ref_origin)) / spacing
    kr = np.round(k)
    if np.any(np.abs(k - kr) > GRID_TOL):
        raise IncompatibleGrids(
            f"grid origins {np.asarray(ref_origin)} and {np.asarray(origin)} differ by a "
            f"non-multiple of spacing {spacing}")
    return kr.astype(np.int64)


def _align(densities: Sequence[GridDensity]):
    """Place densities on the lattice of the first one.

    Returns ``(ref_origin, spacing, lo, shape, placed)`` where ``placed`` is a
    list of ``(slices, cells)`` into an array of ``shape`` whose cell 0 sits
    at ``ref_origin + lo * spacing``.
    """
    ref = densities[0]
    h = ref.spacing
    offsets = []
    for g in densities:
        if not _same_spacing(g.spacing, h):
            raise IncompatibleGrids(f"grid spacings {h} and {g.spacing} differ")
        offsets.append(lattice_offset(ref.origin, h, g.origin))
    lo = np.min([o for o in offsets], axis=0)
    hi = np.max([o + np.array(g.cells.shape) for o, g in zip(offsets, densities)], axis=0)
    placed = []
    for o, g in zip(offsets, densities):
        start = o - lo
        sl = tuple(slice(int(s), int(s) + n) for s, n in zip(start, g.cells.shape))
        placed.append((sl, g.cells))
    return ref.origin, h, lo, tuple(int(v) for v in hi - lo), placed


def _trim(origin, spacing, cells) -> Optional[GridDensity]:
    nz = np.nonzero(cells)
    if len(nz[0]) == 0:
        return None
    lo = [int(ix.min()) for ix in nz]
    hi = [int(ix.max()) + 1 for ix in nz]
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    return GridDensity(np.asarray(origin) + np.array(lo) * spacing, spacing, cells[sl].copy())


def _sum_densities(densities: Sequence[Optional[GridDensity]], weights=None) -> Optional[GridDensity]:
    items = [(g, 1.0 if weights is None else w) for g, w in
             zip(densities, weights if weights is not None else [None] * len(densities))
             if g is not None]
    if not items:
        return None
    if len(items) == 1 and items[0][1] == 1.0:
        return items[0][0]
    origin, h, lo, shape, placed = _align([g for g, _ in items])
    out = np.zeros(shape)
    for (sl, cells), (_, w) in zip(placed, items):
        out[sl] += w * cells
    return GridDensity(origin + lo * h, h, out)


def _paired_cells(g1: Optional[GridDensity], g2: Optional[GridDensity]):
    """Both densities on a common array (zeros where absent)."""
    present = [g for g in (g1, g2) if g is not None]
    origin, h, lo, shape, placed = _align(present)
    arrays = []
    it = iter(placed)
    for g in (g1, g2):
        a = np.zeros(shape)
        if g is not None:
            sl, cells = next(it)
            a[sl] = cells
        arrays.append(a)
    return origin + lo * h, h, arrays[0], arrays[1]


# ---------------------------------------------------------------------------
# meet and total variation


def _atomic_pair(a: AtomicMeasure, b: AtomicMeasure):
    tol = max(a.dedup_tol, b.dedup_tol)
    locs = np.vstack([a.locations, b.locations])
    ids, reps = _cluster(locs, tol)
    k = reps.shape[0]
    na = len(a)
    ma = np.bincount(ids[:na], weights=a.masses, minlength=k)
    mb = np.bincount(ids[na:], weights=b.masses, minlength=k)
    return reps, ma, mb, tol


def meet(mu: MixedMeasure, nu: MixedMeasure) -> MixedMeasure:
    """The largest measure dominated by both ``mu`` and ``nu``.

    Atoms are matched within the dedup tolerance and the smaller mass is
    kept; densities are met cell by cell.  An atom never meets a density.
    """
    _check_dims(mu, nu)
    reps, ma, mb, tol = _atomic_pair(mu.atomic, nu.atomic)
    m = np.minimum(ma, mb)
    keep = m > 0
    atomic = AtomicMeasure(reps[keep], m[keep], tol)
    density = None
    if mu.density is not None and nu.density is not None:
        origin, h, c1, c2 = _paired_cells(mu.density, nu.density)
        density = _trim(origin, h, np.minimum(c1, c2))
    return MixedMeasure(atomic, density)


def meet_mass(mu: MixedMeasure, nu: MixedMeasure) -> float:
    """Total mass of ``meet(mu, nu)`` without building the measure."""
    _check_dims(mu, nu)
    _, ma, mb, _ = _atomic_pair(mu.atomic, nu.atomic)
    total = float(np.minimum(ma, mb).sum())
    if mu.density is not None and nu.density is not None:
        _, _, c1, c2 = _paired_cells(mu.density, nu.density)
        total += float(np.minimum(c1, c2).sum())
    return total


def jordan(mu: MixedMeasure, nu: MixedMeasure):
    """Jordan-Hahn decomposition ``((mu - nu)^+, (mu - nu)^-)``."""
    _check_dims(mu, nu)
    reps, ma, mb, tol = _atomic_pair(mu.atomic, nu.atomic)
    diff = ma - mb
    pos = MixedMeasure(AtomicMeasure(reps[diff > 0], diff[diff > 0], tol))
    neg = MixedMeasure(AtomicMeasure(reps[diff < 0], -diff[diff < 0], tol))
    if mu.density is not None or nu.density is not None:
        origin, h, c1, c2 = _paired_cells(mu.density, nu.density)
        d = c1 - c2
        pos = MixedMeasure(pos.atomic, _trim(origin, h, np.where(d > 0, d, 0.0)))
        neg = MixedMeasure(neg.atomic, _trim(origin, h, np.where(d < 0, -d, 0.0)))
    return pos, neg


def tv_distance(mu: MixedMeasure, nu: MixedMeasure) -> float:
    """``||mu - nu||_var``: positive plus negative variation of ``mu - nu``."""
    _check_dims(mu, nu)
    _, ma, mb, _ = _atomic_pair(mu.atomic, nu.atomic)
    diff = ma - mb
    total = float(diff[diff > 0].sum() - diff[diff < 0].sum())
    if mu.density is not None or nu.density is not None:
        _, _, c1, c2 = _paired_cells(mu.density, nu.density)
        d = c1 - c2
        total += float(d[d > 0].sum() - d[d < 0].sum())
    return total


# ---------------------------------------------------------------------------
# linear operations


def scale(mu: MixedMeasure, factor: float) -> MixedMeasure:
    if factor < 0 or not math.isfinite(factor):
        raise ValueError("scale factor must be finite and nonnegative")
    if factor == 0:
        return zero_measure(mu.dim)
    atomic = AtomicMeasure(mu.atomic.locations, mu.atomic.masses * factor, mu.atomic.dedup_tol)
    density = None if mu.density is None else GridDensity(
        mu.density.origin, mu.density.spacing, mu.density.cells * factor)
    return MixedMeasure(atomic, density, mu.meta)


def add(*measures: MixedMeasure) -> MixedMeasure:
    if not measures:
        raise ValueError("add() needs at least one measure")
    dim = measures[0].dim
    for m in measures[1:]:
        _check_dims(measures[0], m)
    tol = max(m.atomic.dedup_tol for m in measures)
    atomic = AtomicMeasure.build(
        np.vstack([m.atomic.locations for m in measures]),
        np.concatenate([m.atomic.masses for m in measures]), dim=dim, dedup_tol=tol)
    density = _sum_densities([m.density for m in measures])
    return MixedMeasure(atomic, density)


def normalize(nu: MixedMeasure):
    """Return ``(nu / lambda, lambda)`` with ``lambda`` the total mass."""
    lam = nu.total_mass
    if not lam > 0:
        raise ZeroMass("cannot normalize a measure of zero mass")
    return scale(nu, 1.0 / lam), lam


def shift(mu: MixedMeasure, x) -> MixedMeasure:
    """Translate by ``x``, i.e. ``delta_x * mu``."""
    p = as_point(x, mu.dim)
    atomic = AtomicMeasure(mu.atomic.locations + p, mu.atomic.masses, mu.atomic.dedup_tol)
    density = None if mu.density is None else GridDensity(
        mu.density.origin + p, mu.density.spacing, mu.density.cells)
    return MixedMeasure(atomic, density, mu.meta)


def householder_to_e1(a) -> np.ndarray:
    """Orthogonal matrix ``R`` with ``R a = |a| e_1`` (a Householder reflection)."""
    a = as_point(a)
    r = float(np.linalg.norm(a))
    if r == 0:
        raise ZeroDisplacement("displacement must be nonzero")
    d = a.shape[0]
    v = a.copy()
    # a_0 - r without cancellation when a is close to +e_1
    v[0] = -float(a[1:] @ a[1:]) / (a[0] + r) if a[0] > 0 else a[0] - r
    vv = float(v @ v)
    if vv <= (1e-15 * r) ** 2:
        return np.eye(d)
    return np.eye(d) - 2.0 * np.outer(v, v) / vv


def rotate_to_e1(mu: MixedMeasure, a) -> MixedMeasure:
    """Image measure ``mu o R_a^{-1}`` where ``R_a a = |a| e_1``.

    In one dimension ``R_a`` is the sign of ``a`` and densities are
    reflected; in higher dimensions only atomic measures are supported.
    """
    a = as_point(a, mu.dim)
    R = householder_to_e1(a)
    identity = np.array_equal(R, np.eye(mu.dim))
    atomic = AtomicMeasure.build(mu.atomic.locations @ R.T, mu.atomic.masses,
                                 dim=mu.dim, dedup_tol=mu.atomic.dedup_tol)
    density = mu.density
    if density is not None and not identity:
        if mu.dim != 1:
            raise DensityRotationUnsupported("rotation of grid densities is only supported in d = 1")
        n = density.cells.shape[0]
        density = GridDensity(-(density.origin + n * density.spacing), density.spacing,
                              density.cells[::-1].copy())
    return MixedMeasure(atomic, density, {**mu.meta, "rotation": R})


def truncate_levy(nu: MixedMeasure, eps: float, infinite_activity: bool) -> MixedMeasure:
    """Remove the mass of the open ball ``|z| < eps`` for infinite-activity measures.

    Atoms are tested by location, cells by their center.  Finite measures
    are returned unchanged.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    out = nu
    if infinite_activity:
        locs = nu.atomic.locations
        keep = np.linalg.norm(locs, axis=1) >= eps
        atomic = AtomicMeasure(locs[keep], nu.atomic.masses[keep], nu.atomic.dedup_tol)
        density = None
        if nu.density is not None:
            centers = nu.density.cell_centers()
            inside = np.linalg.norm(centers, axis=-1) < eps
            cells = np.where(inside, 0.0, nu.density.cells)
            density = _trim(nu.density.origin, nu.density.spacing, cells)
        out = MixedMeasure(atomic, density, nu.meta)
    if not out.total_mass > 0:
        raise EmptyTruncation(f"no Levy mass left outside the ball of radius {eps}")
    return out


# ---------------------------------------------------------------------------
# convolution


def _atomic_convolve(a: AtomicMeasure, b: AtomicMeasure, budget: int) -> AtomicMeasure:
    tol = max(a.dedup_tol, b.dedup_tol)
    if len(a) == 0 or len(b) == 0:
        return AtomicMeasure.empty(a.dim, tol)
    if len(a) < len(b):
        a, b = b, a
    rows = max(1, _PAIR_CHUNK // len(b))
    locs_acc, mass_acc = [], []
    pending = 0
    for start in range(0, len(a), rows):
        la = a.locations[start:start + rows]
        ma = a.masses[start:start + rows]
        locs = (la[:, None, :] + b.locations[None, :, :]).reshape(-1, a.dim)
        masses = (ma[:, None] * b.masses[None, :]).ravel()
        locs, masses = _merge(locs, masses, tol)
        locs_acc.append(locs)
        mass_acc.append(masses)
        pending += len(masses)
        if pending > _PAIR_CHUNK and len(mass_acc) > 1:
            locs, masses = _merge(np.vstack(locs_acc), np.concatenate(mass_acc), tol)
            locs_acc, mass_acc, pending = [locs], [masses], len(masses)
        if pending > budget:
            raise BudgetExceeded(f"atom convolution exceeds budget of {budget}")
    locs, masses = _merge(np.vstack(locs_acc), np.concatenate(mass_acc), tol)
    return AtomicMeasure(locs, masses, tol)


def _atom_density_convolve(a: AtomicMeasure, g: GridDensity, snap: bool, budget: int):
    """Returns ``(density, snap_distance)``."""
    if len(a) == 0:
        return None, 0.0
    h = g.spacing
    k = a.locations / h
    kr = np.round(k)
    off = np.abs(k - kr)
    snap_dist = float(off.max() * h)
    if not snap and np.any(off > GRID_TOL):
        raise SnapError(
            f"atom offset off the grid by {snap_dist:.3g} (spacing {h}); pass snap=True to snap")
    kr = kr.astype(np.int64)
    kmin = kr.min(axis=0)
    span = kr.max(axis=0) - kmin + 1
    shape = tuple(int(s) + n - 1 for s, n in zip(span, g.cells.shape))
    if math.prod(shape) > budget:
        raise BudgetExceeded(f"atom*density convolution needs {math.prod(shape)} cells")
    if len(a) <= 64:
        out = np.zeros(shape)
        for idx, m in zip(kr - kmin, a.masses):
            sl = tuple(slice(int(s), int(s) + n) for s, n in zip(idx, g.cells.shape))
            out[sl] += m * g.cells
    else:
        lattice = np.zeros(tuple(int(s) for s in span))
        np.add.at(lattice, tuple((kr - kmin).T), a.masses)
        out = np.clip(signal.convolve(lattice, g.cells, mode="full"), 0.0, None)
    return GridDensity(g.origin + kmin * h, h, out), (snap_dist if snap else 0.0)


def _density_convolve(g1: GridDensity, g2: GridDensity, budget: int) -> GridDensity:
    if not _same_spacing(g1.spacing, g2.spacing):
        raise IncompatibleGrids(f"cannot convolve grids with spacings {g1.spacing} and {g2.spacing}")
    shape = [n1 + n2 - 1 for n1, n2 in zip(g1.cells.shape, g2.cells.shape)]
    if math.prod(shape) > budget:
        raise BudgetExceeded(f"density convolution needs {math.prod(shape)} cells")
    # FFT round-off can leave tiny negative cells
    cells = np.clip(signal.convolve(g1.cells, g2.cells, mode="full"), 0.0, None)
    return GridDensity(g1.origin + g2.origin, g1.spacing, cells)


def convolve(mu: MixedMeasure, nu: MixedMeasure, *, snap: bool = False,
             budget: int = DEFAULT_BUDGET) -> MixedMeasure:
    """Convolution ``mu * nu``.

    Atom-times-density terms need every atom on the grid lattice ``hZ^d``;
    otherwise :class:`SnapError` is raised unless ``snap=True``, in which case
    the largest snap distance is recorded in ``meta["snap_distance"]``.
    """
    _check_dims(mu, nu)
    atomic = _atomic_convolve(mu.atomic, nu.atomic, budget)
    parts, snaps = [], [0.0]
    if nu.density is not None:
        g, s = _atom_density_convolve(mu.atomic, nu.density, snap, budget)
        parts.append(g)
        snaps.append(s)
    if mu.density is not None:
        g, s = _atom_density_convolve(nu.atomic, mu.density, snap, budget)
        parts.append(g)
        snaps.append(s)
    if mu.density is not None and nu.density is not None:
        parts.append(_density_convolve(mu.density, nu.density, budget))
    density = _sum_densities(parts)
    meta = {}
    snap_dist = max(snaps + [mu.meta.get("snap_distance", 0.0), nu.meta.get("snap_distance", 0.0)])
    if snap_dist > 0:
        meta["snap_distance"] = snap_dist
    out = MixedMeasure(atomic, density, meta)
    if out.size > budget:
        raise BudgetExceeded(f"convolution result has {out.size} atoms/cells (budget {budget})")
    return out


def convolution_power(mu: MixedMeasure, n: int, *, snap: bool = False,
                      budget: int = DEFAULT_BUDGET) -> MixedMeasure:
    """``mu^{*n}`` by repeated squaring; ``mu^{*0}`` is the Dirac mass at 0."""
    if n < 0 or int(n) != n:
        raise ValueError("convolution power must be a nonnegative integer")
    n = int(n)
    result, achieved = dirac(np.zeros(mu.dim)), 0
    base, base_power = mu, 1
    while n:
        try:
            if n & 1:
                result = convolve(result, base, snap=snap, budget=budget)
                achieved += base_power
            n >>= 1
            if n:
                base = convolve(base, base, snap=snap, budget=budget)
                base_power *= 2
        except BudgetExceeded as exc:
            raise BudgetExceeded(f"{exc} (achieved power {achieved})", achieved=achieved) from exc
    return result


# ---------------------------------------------------------------------------
# accumulation of weighted sums


class MeasureAccumulator:
    """Running weighted sum of measures sharing one grid lattice.

    Pending atoms are consolidated in batches so that summing many large
    atomic measures does not hold all of them at once.
    """

    def __init__(self, dim: int, dedup_tol: float = DEDUP_TOL, batch: int = 2_000_000):
        self.dim = dim
        self.dedup_tol = dedup_tol
        self.batch = batch
        self._locs: list = []
        self._masses: list = []
        self._pending = 0
        self._ref = None  # (origin, spacing) of the lattice
        self._lo = None
        self._cells = None

    def add(self, mu: MixedMeasure, weight: float = 1.0):
        if mu.dim != self.dim:
            raise DimensionMismatch(f"accumulator is {self.dim}-dimensional, measure is {mu.dim}")
        if weight == 0:
            return
        if len(mu.atomic):
            self._locs.append(mu.atomic.locations)
            self._masses.append(weight * mu.atomic.masses)
            self._pending += len(mu.atomic)
            if self._pending > self.batch:
                self._consolidate()
        if mu.density is not None:
            self._add_density(mu.density, weight)

    def _consolidate(self):
        locs, masses = _merge(np.vstack(self._locs), np.concatenate(self._masses), self.dedup_tol)
        self._locs, self._masses, self._pending = [locs], [masses], len(masses)

    def _add_density(self, g: GridDensity, weight: float):
        if self._ref is None:
            self._ref = (g.origin.copy(), g.spacing)
            self._lo = np.zeros(g.dim, dtype=np.int64)
            self._cells = np.zeros(g.cells.shape)
        origin, h = self._ref
        if not _same_spacing(h, g.spacing):
            raise IncompatibleGrids(f"grid spacings {h} and {g.spacing} differ")
        off = lattice_offset(origin, h, g.origin)
        lo = np.minimum(self._lo, off)
        hi = np.maximum(self._lo + np.array(self._cells.shape), off + np.array(g.cells.shape))
        if np.any(lo < self._lo) or np.any(hi > self._lo + np.array(self._cells.shape)):
            # grow with slack so repeated extension is amortised
            cur = np.array(self._cells.shape)
            slack = np.maximum(cur // 2, 1)
            new_lo = np.where(lo < self._lo, lo - slack, self._lo)
            new_hi = np.where(hi > self._lo + cur, hi + slack, self._lo + cur)
            grown = np.zeros(tuple(int(v) for v in new_hi - new_lo))
            start = self._lo - new_lo
            grown[tuple(slice(int(s), int(s) + n) for s, n in zip(start, cur))] = self._cells
            self._cells, self._lo = grown, new_lo
        start = off - self._lo
        sl = tuple(slice(int(s), int(s) + n) for s, n in zip(start, g.cells.shape))
        self._cells[sl] += weight * g.cells

    def result(self) -> MixedMeasure:
        if self._locs:
            self._consolidate()
            atomic = AtomicMeasure(self._locs[0], self._masses[0], self.dedup_tol)
        else:
            atomic = AtomicMeasure.empty(self.dim, self.dedup_tol)
        density = None
        if self._cells is not None:
            origin, h = self._ref
            density = _trim(origin + self._lo * h, h, self._cells)
        return MixedMeasure(atomic, density)


# ---------------------------------------------------------------------------
# sampling


def sample(mu: MixedMeasure, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``size`` points from ``mu / mu(R^d)``; returns a ``(size, d)`` array."""
    lam = mu.total_mass
    if not lam > 0:
        raise ZeroMass("cannot sample from a measure of zero mass")
    out = np.empty((size, mu.dim))
    from_atoms = rng.random(size) < mu.atomic_mass / lam
    n_atoms = int(from_atoms.sum())
    if n_atoms:
        p = mu.atomic.masses / mu.atomic.masses.sum()
        idx = rng.choice(len(p), size=n_atoms, p=p)
        out[from_atoms] = mu.atomic.locations[idx]
    n_cells = size - n_atoms
    if n_cells:
        g = mu.density
        flat = g.cells.ravel()
        idx = rng.choice(flat.size, size=n_cells, p=flat / flat.sum())
        cell = np.stack(np.unravel_index(idx, g.cells.shape), axis=1)
        out[~from_atoms] = g.origin + (cell + rng.random((n_cells, g.dim))) * g.spacing
    return out


# ---------------------------------------------------------------------------
# JSON schema


def to_dict(mu: MixedMeasure) -> dict:
    out = {"dim": mu.dim}
    if len(mu.atomic):
        out["atoms"] = [{"x": [float(c) for c in loc], "w": float(w)}
                        for loc, w in zip(mu.atomic.locations, mu.atomic.masses)]
    if mu.density is not None:
        out["density"] = {
            "origin": [float(c) for c in mu.density.origin],
            "spacing": mu.density.spacing,
            "cells": mu.density.cells.tolist(),
        }
    return out


def from_dict(data: Mapping) -> MixedMeasure:
    """Parse ``{"dim", "atoms": [{"x", "w"}], "density": {"origin", "spacing", "cells"}}``."""
    if not isinstance(data, Mapping):
        raise SchemaError("measure must be a JSON object")
    if "atoms" not in data and "density" not in data:
        raise SchemaError("measure needs an 'atoms' or a 'density' field")
    try:
        dim = int(data.get("dim", 1))
        raw_atoms = list(data.get("atoms") or [])
        locs = [np.atleast_1d(np.asarray(a["x"], dtype=float)) for a in raw_atoms]
        masses = [float(a["w"]) for a in raw_atoms]
        dens = data.get("density")
        if dens is not None:
            origin = np.atleast_1d(np.asarray(dens["origin"], dtype=float))
            spacing = float(dens["spacing"])
            cells = np.asarray(dens["cells"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed measure: {exc!r}") from exc
    if dim < 1:
        raise ValueError("dim: must be at least 1")
    if locs:
        if any(loc.shape != (dim,) for loc in locs):
            raise DimensionMismatch(f"atoms: every 'x' must have {dim} coordinates")
        atomic = AtomicMeasure.build(np.vstack(locs), masses, dim=dim)
    else:
        atomic = AtomicMeasure.empty(dim)
    density = None
    if dens is not None:
        density = GridDensity(origin, spacing, cells)
    return MixedMeasure(atomic, density)
