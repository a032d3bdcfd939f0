"""Partly calibrated rectangular array geometry and shift-invariance structure.

The array consists of ``Px x Py`` identical subarrays of ``Lx x Ly`` sensors.
Sensor positions within a subarray (``delta_x``, ``delta_y``) are always
known; the displacements between subarrays (``Delta_x``, ``Delta_y``) may be
unknown.  Sensors are enumerated by nesting (subarray-x, sensor-x,
subarray-y, sensor-y), i.e. the 2D array is vectorized along the y-axis.

Shift invariances between translated sensor groups force equalities between
principal submatrices of any matrix ``Q = A S A^H`` built from the array
steering matrix.  :func:`build_shift_structure` computes the resulting
equivalence classes of matrix entries (the independent variables of the
constrained subspace) with a conjugation-tracking union-find.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

__all__ = [
    "ArrayGeometry",
    "SelectionGroups",
    "ShiftStructure",
    "steering_vector",
    "steering_matrix",
    "selection_groups",
    "build_shift_structure",
    "structure_from_groups",
    "full_hermitian_structure",
]


@dataclass(frozen=True)
class ArrayGeometry:
    """Layout of a partly calibrated rectangular array.

    Attributes:
        Px, Py: number of subarrays along x / y.
        Lx, Ly: sensors per subarray along x / y.
        delta_x, delta_y: known intra-subarray sensor positions in
            half-wavelength units, first entry 0.
        Delta_x, Delta_y: inter-subarray displacements, first entry 0.
            ``None`` marks them unknown (partly calibrated use).
        failed_sensors: flat indices of unobservable sensors.
    """

    Px: int
    Py: int
    Lx: int
    Ly: int
    delta_x: np.ndarray
    delta_y: np.ndarray
    Delta_x: np.ndarray | None = None
    Delta_y: np.ndarray | None = None
    failed_sensors: tuple[int, ...] = ()

    def __post_init__(self):
        for name in ("Px", "Py", "Lx", "Ly"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        object.__setattr__(self, "delta_x", _position_vector(self.delta_x, self.Lx, "delta_x"))
        object.__setattr__(self, "delta_y", _position_vector(self.delta_y, self.Ly, "delta_y"))
        # a single subarray has no inter-subarray displacement to be unknown
        if self.Delta_x is None and self.Px == 1:
            object.__setattr__(self, "Delta_x", np.zeros(1))
        if self.Delta_y is None and self.Py == 1:
            object.__setattr__(self, "Delta_y", np.zeros(1))
        if self.Delta_x is not None:
            object.__setattr__(self, "Delta_x", _position_vector(self.Delta_x, self.Px, "Delta_x"))
        if self.Delta_y is not None:
            object.__setattr__(self, "Delta_y", _position_vector(self.Delta_y, self.Py, "Delta_y"))
        failed = tuple(sorted(int(i) for i in self.failed_sensors))
        if any(i < 0 or i >= self.M for i in failed) or len(set(failed)) != len(failed):
            raise ValueError("failed_sensors must be distinct indices in [0, M)")
        if len(failed) >= self.M:
            raise ValueError("at least one sensor must be observable")
        object.__setattr__(self, "failed_sensors", failed)

    @classmethod
    def uniform(cls, Px, Py, Lx, Ly, Delta_x=None, Delta_y=None, failed_sensors=()):
        """Half-wavelength uniform subarrays (``delta = 0, 1, ..., L-1``)."""
        return cls(Px, Py, Lx, Ly, np.arange(Lx, dtype=float), np.arange(Ly, dtype=float),
                   Delta_x, Delta_y, failed_sensors)

    @property
    def Mx(self) -> int:
        return self.Px * self.Lx

    @property
    def My(self) -> int:
        return self.Py * self.Ly

    @property
    def M(self) -> int:
        return self.Mx * self.My

    @property
    def fully_known(self) -> bool:
        return self.Delta_x is not None and self.Delta_y is not None

    @property
    def observable_mask(self) -> np.ndarray:
        mask = np.ones(self.M, dtype=bool)
        mask[list(self.failed_sensors)] = False
        return mask

    @property
    def observable_indices(self) -> np.ndarray:
        return np.flatnonzero(self.observable_mask)

    def positions_x(self) -> np.ndarray:
        """Absolute x positions of the ``Mx`` sensor columns, subarray-major."""
        if self.Delta_x is None:
            raise ValueError("inter-subarray displacements along x are unknown")
        return (self.Delta_x[:, None] + self.delta_x[None, :]).ravel()

    def positions_y(self) -> np.ndarray:
        if self.Delta_y is None:
            raise ValueError("inter-subarray displacements along y are unknown")
        return (self.Delta_y[:, None] + self.delta_y[None, :]).ravel()


def _position_vector(values, n, name):
    vec = np.asarray(values, dtype=float)
    if vec.shape != (n,):
        raise ValueError(f"{name} must have length {n}, got shape {vec.shape}")
    if vec[0] != 0.0:
        raise ValueError(f"{name}[0] must be 0")
    return vec


def steering_vector(geom: ArrayGeometry, mu_x: float, mu_y: float) -> np.ndarray:
    """Array response ``a(mu_x, mu_y)``, the Kronecker product of the two
    axis responses.  Requires fully known displacements."""
    ax = np.exp(1j * mu_x * geom.positions_x())
    ay = np.exp(1j * mu_y * geom.positions_y())
    return np.kron(ax, ay)


def steering_matrix(geom: ArrayGeometry, mu_x, mu_y) -> np.ndarray:
    """M x K matrix of steering vectors for paired frequency lists."""
    mu_x = np.atleast_1d(np.asarray(mu_x, dtype=float))
    mu_y = np.atleast_1d(np.asarray(mu_y, dtype=float))
    if mu_x.shape != mu_y.shape:
        raise ValueError("mu_x and mu_y must have the same length")
    ax = np.exp(1j * np.outer(geom.positions_x(), mu_x))
    ay = np.exp(1j * np.outer(geom.positions_y(), mu_y))
    # column-wise Kronecker product (Khatri-Rao)
    return (ax[:, None, :] * ay[None, :, :]).reshape(geom.M, -1)


@dataclass(frozen=True)
class SelectionGroups:
    """Index lists of the shift-invariant sensor groups.

    ``subarray_x[p]`` holds the sensors of all subarrays at x-position ``p``;
    ``sensor_x[l]`` holds the sensors at intra-subarray x-position ``l``
    across all subarrays (analogously for y).  Dense 0/1 selection matrices
    are never materialized.
    """

    subarray_x: list[np.ndarray]
    sensor_x: list[np.ndarray]
    subarray_y: list[np.ndarray]
    sensor_y: list[np.ndarray]


def selection_groups(geom: ArrayGeometry) -> SelectionGroups:
    grid = np.arange(geom.M).reshape(geom.Px, geom.Lx, geom.Py, geom.Ly)
    return SelectionGroups(
        subarray_x=[grid[p].ravel() for p in range(geom.Px)],
        sensor_x=[grid[:, l].reshape(-1) for l in range(geom.Lx)],
        subarray_y=[grid[:, :, q].reshape(-1) for q in range(geom.Py)],
        sensor_y=[grid[:, :, :, l].reshape(-1) for l in range(geom.Ly)],
    )


@dataclass(frozen=True)
class ShiftStructure:
    """Equivalence classes of Hermitian-matrix entries under shift invariance.

    Class ``i`` owns one independent variable ``q_i``.  ``rows``/``cols``
    (split by ``ptr``) list every matrix position that carries ``q_i``
    unconjugated; the mirrored positions carry the conjugate.  For classes
    constrained to be real the list already includes both orientations.
    ``n_members[i]`` counts the distinct upper-triangle entries of the class,
    so ``sum(n_members) == M (M + 1) / 2``.
    """

    M: int
    ptr: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    is_real: np.ndarray
    has_diagonal: np.ndarray
    n_members: np.ndarray
    entry_class: np.ndarray = field(repr=False)

    @property
    def n_classes(self) -> int:
        return len(self.ptr) - 1

    @property
    def sizes(self) -> np.ndarray:
        """Position count per class (``||Omega_i||_F^2``)."""
        return np.diff(self.ptr)

    @property
    def factor(self) -> np.ndarray:
        """Gradient/Hessian prefactor: 2 for complex classes, 1 for real."""
        return np.where(self.is_real, 1.0, 2.0)

    def class_sums(self, X: np.ndarray) -> np.ndarray:
        """Per-class sums of ``X`` over the stored positions."""
        return kernels.class_sums(np.ascontiguousarray(X, dtype=np.complex128),
                                  self.ptr, self.rows, self.cols)

    def extract(self, Q: np.ndarray) -> np.ndarray:
        """Independent variables of ``Q``: per-class means of the
        (conjugation-adjusted) entries.  Inverse of :meth:`assemble` on
        structured matrices; on general Hermitian input this yields the
        coefficients of the orthogonal projection."""
        if Q.shape != (self.M, self.M):
            raise ValueError(f"expected {(self.M, self.M)} matrix, got {Q.shape}")
        q = self.class_sums(Q) / self.sizes
        q[self.is_real] = q[self.is_real].real
        return q

    def assemble(self, q: np.ndarray) -> np.ndarray:
        """Matrix with value ``q_i`` on every position of class ``i`` and the
        conjugate on the mirrored positions."""
        q = np.asarray(q)
        if q.shape != (self.n_classes,):
            raise ValueError(f"expected {self.n_classes} independent variables, got {q.shape}")
        if np.iscomplexobj(q) and np.any(q.imag[self.is_real] != 0):
            raise ValueError("real-constrained class received a non-real value")
        Q = np.zeros((self.M, self.M), dtype=np.complex128)
        values = np.repeat(q.astype(np.complex128), self.sizes)
        Q[self.rows, self.cols] = values
        real_pos = np.repeat(self.is_real, self.sizes)
        off = ~real_pos & (self.rows != self.cols)
        Q[self.cols[off], self.rows[off]] = np.conj(values[off])
        return Q

    def project(self, Q: np.ndarray) -> np.ndarray:
        """Orthogonal (Frobenius) projection of a Hermitian matrix onto the
        structured subspace: class entries replaced by their mean."""
        return self.assemble(self.extract(Q))

    def membership_residual(self, Q: np.ndarray) -> float:
        """Frobenius distance to the structured subspace."""
        return float(np.linalg.norm(Q - self.project(Q)))

    def is_exact_member(self, Q: np.ndarray) -> bool:
        """Bitwise membership test: every class carries one value and the
        mirrored entries its exact conjugate.  (The projection residual is
        not a reliable zero test: averaging identical floats can round.)"""
        vals = Q[self.rows, self.cols]
        firsts = np.repeat(vals[self.ptr[:-1]], self.sizes)
        return bool(np.array_equal(vals, firsts)
                    and np.array_equal(Q[self.cols, self.rows], np.conj(vals)))


class _ConjUnionFind:
    """Union-find over upper-triangle entries tracking conjugation parity."""

    def __init__(self, n):
        self.parent = list(range(n))
        self.rank = [0] * n
        self.rel = [0] * n        # conjugation flag relative to parent
        self.self_conj = [False] * n  # root marker: class equals own conjugate

    def find(self, x):
        path = []
        while self.parent[x] != x:
            path.append(x)
            x = self.parent[x]
        root, flag = x, 0
        for node in reversed(path):  # re-anchor the path directly at the root
            flag ^= self.rel[node]
            self.parent[node] = root
            self.rel[node] = flag
        return root, flag

    def union(self, x, y, conj):
        rx, fx = self.find(x)
        ry, fy = self.find(y)
        if rx == ry:
            if (fx ^ fy) != conj:
                self.self_conj[rx] = True
            return
        if self.rank[rx] < self.rank[ry]:
            rx, ry = ry, rx
            fx, fy = fy, fx
        self.parent[ry] = rx
        self.rel[ry] = fx ^ fy ^ conj
        self.self_conj[rx] = self.self_conj[rx] or self.self_conj[ry]
        if self.rank[rx] == self.rank[ry]:
            self.rank[rx] += 1


def _canonical(r, c):
    """Upper-triangle representative of entry (r, c) and its conjugation flag."""
    return (r, c, 0) if r <= c else (c, r, 1)


def structure_from_groups(M: int, families, tie_diagonal: bool = True) -> ShiftStructure:
    """Build the entry-equivalence structure induced by group constraints.

    ``families`` is an iterable of group lists; within each family every
    group's principal submatrix of ``Q`` is constrained equal to the first
    group's.  With ``tie_diagonal`` all diagonal entries are additionally
    identified.  This is the generic constraint builder; other invariances
    (overlapping groups, centro-symmetry) can be expressed through it.
    """
    if M < 1:
        raise ValueError("M must be positive")
    uf = _ConjUnionFind(M * M)

    def entry_id(r, c):
        return r * M + c

    def add(r1, c1, r2, c2):
        a1, b1, f1 = _canonical(r1, c1)
        a2, b2, f2 = _canonical(r2, c2)
        uf.union(entry_id(a1, b1), entry_id(a2, b2), f1 ^ f2)

    for groups in families:
        groups = [np.asarray(g, dtype=np.intp) for g in groups]
        ref = groups[0]
        for grp in groups[1:]:
            if len(grp) != len(ref):
                raise ValueError("groups within a family must have equal size")
            for a in range(len(ref)):
                for b in range(a, len(ref)):
                    add(int(grp[a]), int(grp[b]), int(ref[a]), int(ref[b]))
    if tie_diagonal:
        for i in range(1, M):
            add(i, i, 0, 0)

    # collect members (upper-triangle entries) per root
    classes: dict[int, list[tuple[int, int, int]]] = {}
    for r in range(M):
        for c in range(r, M):
            root, flag = uf.find(r * M + c)
            classes.setdefault(root, []).append((r, c, flag))

    records = []
    for root, members in classes.items():
        members.sort(key=lambda m: (m[0], m[1]))
        rep = members[0]
        if rep[2]:  # orient the class so the representative is unconjugated
            members = [(r, c, f ^ 1) for r, c, f in members]
        has_diag = any(r == c for r, c, _ in members)
        real = has_diag or uf.self_conj[root]
        positions = []
        for r, c, f in members:
            if real:
                positions.append((r, c))
                if r != c:
                    positions.append((c, r))
            else:
                positions.append((r, c) if f == 0 else (c, r))
        records.append(((rep[0], rep[1]), real, has_diag, len(members), positions))

    # diagonal-bearing class first (it contains (0, 0) when tied), then by
    # canonical representative in row-major order
    records.sort(key=lambda rec: (rec[0] != (0, 0), rec[0]) if tie_diagonal else rec[0])

    ptr = [0]
    rows, cols, is_real, has_diag, n_members = [], [], [], [], []
    for _, real, hdiag, nmem, positions in records:
        rows.extend(p[0] for p in positions)
        cols.extend(p[1] for p in positions)
        ptr.append(len(rows))
        is_real.append(real)
        has_diag.append(hdiag)
        n_members.append(nmem)

    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    entry_class = np.full((M, M), -1, dtype=np.intp)
    for i in range(len(records)):
        sl = slice(ptr[i], ptr[i + 1])
        entry_class[rows[sl], cols[sl]] = i
        entry_class[cols[sl], rows[sl]] = i

    return ShiftStructure(
        M=M,
        ptr=np.asarray(ptr, dtype=np.intp),
        rows=rows,
        cols=cols,
        is_real=np.asarray(is_real, dtype=bool),
        has_diagonal=np.asarray(has_diag, dtype=bool),
        n_members=np.asarray(n_members, dtype=np.intp),
        entry_class=entry_class,
    )


def build_shift_structure(geom: ArrayGeometry) -> ShiftStructure:
    """Entry-equivalence structure of the given array's shift invariances."""
    g = selection_groups(geom)
    families = [g.subarray_x, g.sensor_x, g.subarray_y, g.sensor_y]
    return structure_from_groups(geom.M, families, tie_diagonal=True)


def full_hermitian_structure(M: int) -> ShiftStructure:
    """Trivial structure: every entry its own class, no diagonal tie."""
    return structure_from_groups(M, [], tie_diagonal=False)
