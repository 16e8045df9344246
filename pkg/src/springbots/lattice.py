"""Triangular lattice enumeration and genome decoding.

A lattice of ``a`` triangles across and ``b`` triangle rows. Triangle side
length is 2 in lattice units, so mass row ``r`` sits at height ``r * sqrt(3)``
and masses in a row are spaced 2 apart, offset by 1 on odd rows.

Cell ``(r, c)`` points up when ``r + c`` is even. An up cell has vertices
``(c, r), (c + 2, r), (c + 1, r + 1)`` in (half-unit x, row) coordinates and a
down cell has ``(c, r + 1), (c + 2, r + 1), (c + 1, r)``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

SQRT3 = float(np.sqrt(3.0))

# Simulation length of one triangle side (lattice side length is 2).
DEFAULT_SIDE_LENGTH = 0.05  # meters per triangle side


class EmptyMorphology(ValueError):
    """Raised when a genome expresses no cells."""


@dataclass(frozen=True)
class LatticeDims:
    a: int
    b: int

    def __post_init__(self):
        if int(self.a) < 1 or int(self.b) < 1:
            raise ValueError(f"lattice dims must be >= 1, got a={self.a}, b={self.b}")

    @property
    def n_cells(self) -> int:
        return self.a * self.b


@dataclass(frozen=True, eq=False)
class LatticeIndex:
    """Deterministic enumeration of masses, springs and cells of a lattice.

    Attributes:
        dims: lattice dimensions.
        mass_keys: (M, 2) int array of (half-unit x, row) per mass.
        mass_positions: (M, 2) float array in lattice units.
        spring_endpoints: (S, 2) int array of mass ids, lower id first.
        cell_vertices: (b, a, 3) mass ids per cell.
        cell_edges: (b, a, 3) spring ids per cell.
        cell_adjacency: neighbor cells per cell, keyed by (row, col).
    """

    dims: LatticeDims
    mass_keys: np.ndarray
    mass_positions: np.ndarray
    spring_endpoints: np.ndarray
    cell_vertices: np.ndarray
    cell_edges: np.ndarray
    cell_adjacency: dict = field(repr=False)

    @property
    def n_masses(self) -> int:
        return len(self.mass_keys)

    @property
    def n_springs(self) -> int:
        return len(self.spring_endpoints)


def cell_is_up(r: int, c: int) -> bool:
    return (r + c) % 2 == 0


def cell_vertex_keys(r: int, c: int) -> list[tuple[int, int]]:
    if cell_is_up(r, c):
        return [(c, r), (c + 2, r), (c + 1, r + 1)]
    return [(c, r + 1), (c + 2, r + 1), (c + 1, r)]


@lru_cache(maxsize=64)
def _build_lattice_index(a: int, b: int) -> LatticeIndex:
    dims = LatticeDims(a, b)
    keys = set()
    for r in range(b):
        for c in range(a):
            keys.update(cell_vertex_keys(r, c))
    # masses ordered by row, then x
    ordered = sorted(keys, key=lambda k: (k[1], k[0]))
    mass_id = {k: i for i, k in enumerate(ordered)}
    mass_keys = np.array(ordered, dtype=np.int64).reshape(-1, 2)
    mass_positions = np.column_stack(
        [mass_keys[:, 0].astype(float), mass_keys[:, 1] * SQRT3]
    )

    cell_vertices = np.zeros((b, a, 3), dtype=np.int64)
    edge_set = set()
    for r in range(b):
        for c in range(a):
            ids = [mass_id[k] for k in cell_vertex_keys(r, c)]
            cell_vertices[r, c] = ids
            for i in range(3):
                for j in range(i + 1, 3):
                    edge_set.add((min(ids[i], ids[j]), max(ids[i], ids[j])))
    edges = sorted(edge_set)
    spring_id = {e: i for i, e in enumerate(edges)}
    spring_endpoints = np.array(edges, dtype=np.int64).reshape(-1, 2)

    cell_edges = np.zeros((b, a, 3), dtype=np.int64)
    edge_cells: dict[int, list[tuple[int, int]]] = {}
    for r in range(b):
        for c in range(a):
            ids = cell_vertices[r, c]
            sids = sorted(
                spring_id[(min(ids[i], ids[j]), max(ids[i], ids[j]))]
                for i, j in ((0, 1), (0, 2), (1, 2))
            )
            cell_edges[r, c] = sids
            for s in sids:
                edge_cells.setdefault(s, []).append((r, c))

    adjacency: dict[tuple[int, int], list[tuple[int, int]]] = {
        (r, c): [] for r in range(b) for c in range(a)
    }
    for cells in edge_cells.values():
        for p in cells:
            for q in cells:
                if p != q and q not in adjacency[p]:
                    adjacency[p].append(q)
    # an up cell and the down cell directly above share the apex vertex
    for r in range(b - 1):
        for c in range(a):
            if cell_is_up(r, c):
                adjacency[(r, c)].append((r + 1, c))
                adjacency[(r + 1, c)].append((r, c))
    for k in adjacency:
        adjacency[k].sort()

    for arr in (mass_keys, mass_positions, spring_endpoints, cell_vertices, cell_edges):
        arr.setflags(write=False)
    return LatticeIndex(
        dims=dims,
        mass_keys=mass_keys,
        mass_positions=mass_positions,
        spring_endpoints=spring_endpoints,
        cell_vertices=cell_vertices,
        cell_edges=cell_edges,
        cell_adjacency=adjacency,
    )


def build_lattice_index(dims: LatticeDims) -> LatticeIndex:
    """Enumerate masses, springs, cell incidence and cell adjacency.

    The enumeration is derived from explicit cell-edge incidence, so it is
    valid for odd ``a`` as well. Results are cached per dims.
    """
    return _build_lattice_index(int(dims.a), int(dims.b))


@dataclass(frozen=True, eq=False)
class Genome:
    dims: LatticeDims
    geometry: np.ndarray  # (b, a) bool
    springs: np.ndarray  # (S,) bool

    def __post_init__(self):
        geometry = np.asarray(self.geometry, dtype=bool)
        springs = np.asarray(self.springs, dtype=bool)
        if geometry.shape != (self.dims.b, self.dims.a):
            raise ValueError(
                f"geometry shape {geometry.shape} does not match dims {(self.dims.b, self.dims.a)}"
            )
        n = build_lattice_index(self.dims).n_springs
        if springs.shape != (n,):
            raise ValueError(f"spring vector length {springs.shape} != {n}")
        object.__setattr__(self, "geometry", geometry)
        object.__setattr__(self, "springs", springs)

    def __eq__(self, other):
        if not isinstance(other, Genome):
            return NotImplemented
        return (
            self.dims == other.dims
            and np.array_equal(self.geometry, other.geometry)
            and np.array_equal(self.springs, other.springs)
        )

    def __hash__(self):
        return hash((self.dims, self.geometry.tobytes(), self.springs.tobytes()))

    def to_record(self) -> str:
        """Serialize as ``a b geometry_hex springs_hex``."""
        return f"{self.dims.a} {self.dims.b} {bits_to_hex(self.geometry.ravel())} {bits_to_hex(self.springs)}"

    @classmethod
    def from_record(cls, record: str) -> "Genome":
        parts = record.split()
        if len(parts) != 4:
            raise ValueError(f"malformed genome record: {record!r}")
        dims = LatticeDims(int(parts[0]), int(parts[1]))
        index = build_lattice_index(dims)
        geometry = hex_to_bits(parts[2], dims.n_cells).reshape(dims.b, dims.a)
        springs = hex_to_bits(parts[3], index.n_springs)
        return cls(dims, geometry, springs)


def bits_to_hex(bits: np.ndarray) -> str:
    bits = np.asarray(bits, dtype=bool).ravel()
    if bits.size == 0:
        return ""
    return np.packbits(bits).tobytes().hex()


def hex_to_bits(text: str, n: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
    bits = np.unpackbits(raw)
    if bits.size < n or bits[n:].any():
        raise ValueError(f"hex string does not encode {n} bits")
    return bits[:n].astype(bool)


@dataclass(frozen=True, eq=False)
class Morphology:
    """A decoded robot body.

    ``positions`` are in simulation length units, translated so the lowest
    mass sits at y = 0 and the leftmost at x = 0.
    """

    positions: np.ndarray  # (M, 2)
    springs: np.ndarray  # (S, 2) local mass ids
    rest_lengths: np.ndarray  # (S,)
    active: np.ndarray  # (S,) bool
    cells: np.ndarray  # (b, a) bool, the expressed mask
    mass_ids: np.ndarray  # lattice ids of the expressed masses
    spring_ids: np.ndarray  # lattice ids of the expressed springs

    @property
    def n_masses(self) -> int:
        return len(self.positions)

    @property
    def n_springs(self) -> int:
        return len(self.springs)

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    @property
    def active_fraction(self) -> float:
        return self.n_active / self.n_springs if self.n_springs else 0.0

    def translated(self, dx: float = 0.0, dy: float = 0.0) -> "Morphology":
        return Morphology(
            positions=self.positions + np.array([dx, dy]),
            springs=self.springs,
            rest_lengths=self.rest_lengths,
            active=self.active,
            cells=self.cells,
            mass_ids=self.mass_ids,
            spring_ids=self.spring_ids,
        )

    def same_body(self, other: "Morphology") -> bool:
        return np.array_equal(self.cells, other.cells) and np.array_equal(
            self.active, other.active
        )


def _present_edges(mask: np.ndarray, index: LatticeIndex) -> np.ndarray:
    present = np.zeros(index.n_springs, dtype=bool)
    present[index.cell_edges[mask].ravel()] = True
    return present


def fill_implied_cells(mask: np.ndarray, index: LatticeIndex) -> np.ndarray:
    """Set every cell whose three edges all belong to set cells.

    A filled cell adds no new edges, so one pass is idempotent.
    """
    mask = np.asarray(mask, dtype=bool)
    present = _present_edges(mask, index)
    return mask | present[index.cell_edges].all(axis=-1)


def connected_components(mask: np.ndarray, index: LatticeIndex) -> list[list[tuple[int, int]]]:
    """Components of set cells in row-major discovery order."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    components = []
    for r, c in zip(*np.nonzero(mask)):
        if seen[r, c]:
            continue
        seen[r, c] = True
        comp = []
        queue = deque([(int(r), int(c))])
        while queue:
            cell = queue.popleft()
            comp.append(cell)
            for nb in index.cell_adjacency[cell]:
                if mask[nb] and not seen[nb]:
                    seen[nb] = True
                    queue.append(nb)
        components.append(comp)
    return components


def largest_connected_component(mask: np.ndarray, index: LatticeIndex) -> np.ndarray:
    """Keep the largest component; ties go to the one holding the smallest (row, col)."""
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros_like(mask)
    best = None
    # discovery order is row-major, so the first of equal size owns the smallest anchor
    for comp in connected_components(mask, index):
        if best is None or len(comp) > len(best):
            best = comp
    if best is not None:
        rows, cols = zip(*best)
        out[list(rows), list(cols)] = True
    return out


def express(mask: np.ndarray, index: LatticeIndex) -> np.ndarray:
    """Filled largest connected component of a geometry mask."""
    return largest_connected_component(fill_implied_cells(mask, index), index)


def morphology_from_cells(
    cells: np.ndarray,
    springs: np.ndarray,
    index: LatticeIndex,
    side_length: float = DEFAULT_SIDE_LENGTH,
) -> Morphology:
    cells = np.asarray(cells, dtype=bool)
    if not cells.any():
        raise EmptyMorphology("geometry mask expresses no cells")
    mass_ids = np.unique(index.cell_vertices[cells])
    spring_ids = np.unique(index.cell_edges[cells])
    local = np.full(index.n_masses, -1, dtype=np.int64)
    local[mass_ids] = np.arange(len(mass_ids))
    pos = index.mass_positions[mass_ids] * (side_length / 2.0)
    pos = pos - pos.min(axis=0)
    ends = local[index.spring_endpoints[spring_ids]]
    rest = np.linalg.norm(pos[ends[:, 1]] - pos[ends[:, 0]], axis=1)
    return Morphology(
        positions=pos,
        springs=ends,
        rest_lengths=rest,
        active=np.asarray(springs, dtype=bool)[spring_ids].copy(),
        cells=cells,
        mass_ids=mass_ids,
        spring_ids=spring_ids,
    )


def decode(genome: Genome, side_length: float = DEFAULT_SIDE_LENGTH) -> Morphology:
    """Decode a genome: fill implied cells, keep the LCC, extract masses and springs.

    Raises:
        EmptyMorphology: if the geometry mask is empty.
    """
    index = build_lattice_index(genome.dims)
    return morphology_from_cells(express(genome.geometry, index), genome.springs, index, side_length)


def random_genome(rng: np.random.Generator, dims: LatticeDims, p: float = 0.5) -> Genome:
    index = build_lattice_index(dims)
    geometry = rng.random((dims.b, dims.a)) < p
    while not geometry.any():
        geometry = rng.random((dims.b, dims.a)) < p
    springs = rng.random(index.n_springs) < p
    while not springs.any():
        springs = rng.random(index.n_springs) < p
    return Genome(dims, geometry, springs)
