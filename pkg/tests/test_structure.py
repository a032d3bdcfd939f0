import itertools

import numpy as np
import pytest

from sisparrow import (ArrayGeometry, build_shift_structure, full_hermitian_structure,
                       selection_groups, structure_from_groups)

from conftest import random_hermitian


@pytest.fixture(scope="module")
def m2_structure():
    geom = ArrayGeometry.uniform(2, 1, 1, 1)
    return build_shift_structure(geom)


class TestClassLayout:
    def test_two_sensor_structure(self, m2_structure):
        s = m2_structure
        assert s.n_classes == 2
        assert s.is_real[0] and not s.is_real[1]
        # diagonal class first: positions (0,0), (1,1)
        assert set(zip(s.rows[:2].tolist(), s.cols[:2].tolist())) == {(0, 0), (1, 1)}
        assert (s.rows[2], s.cols[2]) == (0, 1)

    def test_single_sensor(self):
        s = build_shift_structure(ArrayGeometry.uniform(1, 1, 1, 1))
        assert s.n_classes == 1
        assert s.is_real[0]

    @pytest.mark.parametrize("dims", [(2, 1, 1, 1), (2, 1, 2, 2), (2, 2, 2, 2), (3, 2, 3, 2)])
    def test_member_counts_cover_upper_triangle(self, dims):
        geom = ArrayGeometry.uniform(*dims)
        s = build_shift_structure(geom)
        m = geom.M
        assert s.n_members.sum() == m * (m + 1) // 2
        assert s.is_real[0] and s.has_diagonal[0]
        assert not s.has_diagonal[1:].any()

    def test_full_hermitian_structure(self):
        s = full_hermitian_structure(4)
        assert s.n_classes == 4 * 5 // 2
        assert s.is_real.sum() == 4
        assert s.has_diagonal.sum() == 4


class TestAssembleExtract:
    def test_zero_vector_gives_zero_matrix(self, scenario_structure):
        assert not np.linalg.norm(scenario_structure.assemble(np.zeros(scenario_structure.n_classes)))

    def test_explicit_two_sensor_example(self, m2_structure):
        Q = m2_structure.assemble(np.array([2.0, 1.0 + 1.0j]))
        np.testing.assert_allclose(Q, [[2.0, 1.0 + 1.0j], [1.0 - 1.0j, 2.0]])

    def test_round_trip(self, scenario_structure, rng):
        s = scenario_structure
        for _ in range(100):
            q = rng.normal(size=s.n_classes) + 1j * rng.normal(size=s.n_classes)
            q[s.is_real] = q[s.is_real].real
            Q = s.assemble(q)
            assert np.allclose(Q, Q.conj().T)
            np.testing.assert_allclose(s.extract(Q), q, atol=1e-14)

    def test_reconstruction_satisfies_constraints_exactly(self, scenario_geometry,
                                                          scenario_structure, rng):
        q = rng.normal(size=scenario_structure.n_classes) * (1 + 0j)
        q += 1j * rng.normal(size=scenario_structure.n_classes)
        q[scenario_structure.is_real] = q[scenario_structure.is_real].real
        Q = scenario_structure.assemble(q)
        g = selection_groups(scenario_geometry)
        for family in (g.subarray_x, g.sensor_x, g.subarray_y, g.sensor_y):
            ref = Q[np.ix_(family[0], family[0])]
            for grp in family[1:]:
                assert np.array_equal(Q[np.ix_(grp, grp)], ref)

    def test_real_class_rejects_complex_value(self, m2_structure):
        with pytest.raises(ValueError, match="real"):
            m2_structure.assemble(np.array([1.0 + 0.5j, 0.0 + 0.0j]))


class TestProjection:
    def test_identity_on_members(self, scenario_structure, rng):
        q = rng.normal(size=scenario_structure.n_classes) * (1 + 0j)
        Q = scenario_structure.assemble(q)
        np.testing.assert_allclose(scenario_structure.project(Q), Q, atol=1e-14)

    def test_diagonal_averaging(self, m2_structure):
        Q = np.array([[1.0, 0.0], [0.0, 3.0]], dtype=complex)
        np.testing.assert_allclose(m2_structure.project(Q), 2.0 * np.eye(2))

    def test_idempotent(self, scenario_structure, rng):
        X = random_hermitian(rng, scenario_structure.M)
        P1 = scenario_structure.project(X)
        np.testing.assert_allclose(scenario_structure.project(P1), P1, atol=1e-13)

    def test_self_adjoint(self, small_structure, rng):
        s = small_structure
        for _ in range(5):
            X = random_hermitian(rng, s.M)
            Y = random_hermitian(rng, s.M)
            lhs = np.vdot(s.project(X), Y)
            rhs = np.vdot(X, s.project(Y))
            assert lhs == pytest.approx(rhs, abs=1e-10)

    def test_residual_orthogonal_to_subspace(self, small_structure, rng):
        s = small_structure
        X = random_hermitian(rng, s.M)
        resid = X - s.project(X)
        for _ in range(10):
            q = rng.normal(size=s.n_classes) + 1j * rng.normal(size=s.n_classes)
            q[s.is_real] = q[s.is_real].real
            assert abs(np.vdot(resid, s.assemble(q))) <= 1e-10


# --- brute-force oracles -----------------------------------------------------

def fixpoint_closure(geom):
    """Independent oracle for the entry equivalence classes: propagate the
    constraint rewrites to a fixpoint instead of union-find.

    Entries are labelled (class id, conjugated?); every constraint pair is
    re-applied until no label changes.
    """
    m = geom.M
    label = {}
    next_id = 0
    for r in range(m):
        for c in range(r, m):
            label[(r, c)] = (next_id, 0)
            next_id += 1
    real_ids = set()

    def canon(r, c):
        return ((r, c), 0) if r <= c else ((c, r), 1)

    pairs = []
    g = selection_groups(geom)
    for family in (g.subarray_x, g.sensor_x, g.subarray_y, g.sensor_y):
        ref = family[0]
        for grp in family[1:]:
            for a in range(len(ref)):
                for b in range(a, len(ref)):
                    pairs.append(((int(grp[a]), int(grp[b])), (int(ref[a]), int(ref[b]))))
    for i in range(1, m):
        pairs.append(((i, i), (0, 0)))

    changed = True
    while changed:
        changed = False
        for (e1, e2) in pairs:
            k1, f1 = canon(*e1)
            k2, f2 = canon(*e2)
            id1, c1 = label[k1]
            id2, c2 = label[k2]
            rel = f1 ^ c1 ^ f2 ^ c2  # conjugation between the two class ids
            if id1 == id2:
                if rel:
                    real_ids.add(id1)
                continue
            keep, drop = (id1, id2) if id1 < id2 else (id2, id1)
            flip = rel
            for key, (i, c) in label.items():
                if i == drop:
                    label[key] = (keep, c ^ flip)
            if drop in real_ids:
                real_ids.discard(drop)
                real_ids.add(keep)
            changed = True
    for r in range(m):
        real_ids.add(label[(r, r)][0])
    return label, real_ids


def dense_basis(structure):
    """Real basis matrices spanning the structured subspace."""
    basis = []
    for i in range(structure.n_classes):
        sl = slice(structure.ptr[i], structure.ptr[i + 1])
        omega = np.zeros((structure.M, structure.M), dtype=complex)
        omega[structure.rows[sl], structure.cols[sl]] = 1.0
        if structure.is_real[i]:
            basis.append(omega)
        else:
            basis.append(omega + omega.T)
            basis.append(1j * (omega - omega.T))
    return basis


ORACLE_DIMS = [(2, 1, 1, 1), (1, 1, 2, 2), (2, 1, 2, 2), (2, 2, 1, 2), (3, 1, 2, 1),
               (2, 2, 2, 1), (1, 2, 3, 2), (3, 2, 2, 2), (2, 2, 2, 2), (4, 1, 2, 2)]


class TestAgainstOracles:
    @pytest.mark.parametrize("dims", ORACLE_DIMS)
    def test_classes_match_fixpoint_closure(self, dims):
        geom = ArrayGeometry.uniform(*dims)
        assert geom.M <= 24
        s = build_shift_structure(geom)
        label, real_ids = fixpoint_closure(geom)

        # same partition of upper-triangle entries
        mine, oracle = {}, {}
        for r in range(geom.M):
            for c in range(r, geom.M):
                mine.setdefault(s.entry_class[r, c], set()).add((r, c))
                oracle.setdefault(label[(r, c)][0], set()).add((r, c))
        assert sorted(mine.values(), key=sorted) == sorted(oracle.values(), key=sorted)

        # same real flags per class
        oracle_real = {frozenset(v): (k in real_ids) for k, v in oracle.items()}
        for i in range(s.n_classes):
            members = frozenset((r, c) for (r, c) in mine[i])
            assert s.is_real[i] == oracle_real[members]

    @pytest.mark.parametrize("dims", ORACLE_DIMS[:6])
    def test_projection_equals_least_squares(self, dims, rng):
        geom = ArrayGeometry.uniform(*dims)
        s = build_shift_structure(geom)
        X = random_hermitian(rng, geom.M)
        basis = dense_basis(s)
        # least-squares projection onto span(basis) in the real inner product
        G = np.array([[np.vdot(a, b).real for b in basis] for a in basis])
        rhs = np.array([np.vdot(a, X).real for a in basis])
        coef = np.linalg.solve(G, rhs)
        proj = sum(c * b for c, b in zip(coef, basis))
        assert np.linalg.norm(s.project(X) - proj) <= 1e-10

    def test_conjugation_tracking_marks_mirrored_groups_real(self):
        # a constraint family identifying (0,1) with its mirror forces the
        # class real: custom family whose second group reverses the order
        s = structure_from_groups(2, [[np.array([0, 1]), np.array([1, 0])]],
                                  tie_diagonal=True)
        assert s.n_classes == 2
        assert s.is_real.all()
        off = 1 if s.has_diagonal[0] else 0
        sl = slice(s.ptr[off], s.ptr[off + 1])
        assert set(zip(s.rows[sl].tolist(), s.cols[sl].tolist())) == {(0, 1), (1, 0)}


class TestCustomFamilies:
    def test_group_size_mismatch_raises(self):
        with pytest.raises(ValueError):
            structure_from_groups(3, [[np.array([0, 1]), np.array([2])]])

    def test_permutations_of_assignments(self):
        # three sensors where 0<->1 translation invariance holds
        s = structure_from_groups(3, [[np.array([0]), np.array([1])]], tie_diagonal=True)
        # diagonal class merges (0,0), (1,1), (2,2); (0,1) etc stay separate
        diag = s.entry_class[0, 0]
        assert s.entry_class[1, 1] == diag
        assert s.entry_class[2, 2] == diag
        assert len({s.entry_class[0, 1], s.entry_class[0, 2], s.entry_class[1, 2]}) == 3
