import itertools
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvdflow.tableau import (
    BUILTIN_NAMES,
    BUILTIN_PARTITIONS,
    DvdTableau,
    PairIndex,
    build_certificate,
    builtin_tableau,
    certify_builtin,
    construct_tableau,
    dumps_tableau,
    expand_matrix,
    find_partition_vector,
    is_psd,
    is_psd_exact,
    lagrange_weights,
    loads_tableau,
    pair_count,
    pair_index,
    pair_of,
    pairs,
    read_tableau,
    satisfies_partition,
    unit_partition_system,
    write_tableau,
)


@pytest.mark.parametrize("nu,expected", [(1, 1), (2, 3), (3, 6)])
def test_pair_count(nu, expected):
    assert pair_count(nu) == expected


def test_pair_count_rejects_zero():
    with pytest.raises(ValueError):
        pair_count(0)


@pytest.mark.parametrize("i,j,k", [(1, 0, 1), (2, 1, 4), (3, 2, 6), (3, 0, 3)])
def test_pair_index_examples(i, j, k):
    assert pair_index(i, j, 3) == k


@pytest.mark.parametrize("i,j", [(1, 1), (0, 0), (2, 3), (4, 0)])
def test_pair_index_rejects(i, j):
    with pytest.raises(ValueError):
        pair_index(i, j, 3)


@pytest.mark.parametrize("nu", [1, 2, 3, 4, 5])
def test_pair_index_bijection(nu):
    ks = [pair_index(i, j, nu) for i, j in pairs(nu)]
    assert ks == list(range(1, pair_count(nu) + 1))
    assert all(pair_of(k, nu) == p for k, p in zip(ks, pairs(nu)))
    # grouped by j ascending, then i ascending
    assert pairs(nu) == sorted(pairs(nu), key=lambda p: (p[1], p[0]))


def test_pair_index_dataclass():
    assert PairIndex(3, 2, 3).k == 6
    with pytest.raises(ValueError):
        PairIndex(1, 1, 3)


def test_builtin_examples():
    s1 = builtin_tableau("Sch-1")
    assert (s1.nu, s1.rows, s1.nodes, s1.order) == (1, ((F(1),),), (F(1),), 2)
    s3 = builtin_tableau("Sch-3")
    assert s3.rows == ((F(7, 12), F(-1, 6), F(1, 12)), (F(2, 3), F(-1, 3), F(2, 3)))
    assert s3.nodes == (F(1, 2), F(1)) and s3.order == 4
    s4 = builtin_tableau("Sch-4")
    assert s4.rows[0] == (F(25, 72), 0, F(-1, 24), F(1, 72), 0, F(1, 72))
    assert s4.rows[1] == (F(13, 36), 0, F(-1, 12), F(13, 36), 0, F(1, 36))
    assert s4.rows[2] == (F(3, 8), 0, F(-1, 8), F(3, 8), 0, F(3, 8))
    assert s4.nodes == (F(1, 3), F(2, 3), F(1))


def test_builtin_unknown():
    with pytest.raises(ValueError, match="unknown scheme"):
        builtin_tableau("Sch-9")


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtin_invariants(name):
    tab = builtin_tableau(name)
    assert tab.nu_hat == tab.nu * (tab.nu + 1) // 2
    assert tab.nodes[-1] == 1
    for row, c in zip(tab.rows, tab.nodes):
        assert sum(row) == c
        assert all(isinstance(a, F) for a in row)


def test_tableau_row_sum_validation():
    with pytest.raises(ValueError, match="sums to"):
        DvdTableau(1, (1,), ((F(1, 2),),), 1)
    with pytest.raises(ValueError):
        DvdTableau(2, (F(1, 2), 1), ((F(1, 2), 0, 0),), 1)


def test_expand_matrix_examples():
    assert expand_matrix(builtin_tableau("Sch-1")) == [[F(1)]]
    assert expand_matrix(builtin_tableau("Sch-2"))[2] == [F(1, 9), F(-1, 3), F(8, 9)]
    assert expand_matrix(builtin_tableau("Sch-3"))[2] == [F(1, 12), F(-1, 6), F(7, 12)]


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_expand_matrix_consistency(name):
    tab = builtin_tableau(name)
    a = expand_matrix(tab)
    full = [[F(0)] * tab.nu_hat] + [list(r) for r in tab.rows]
    for k, (i, j) in enumerate(pairs(tab.nu)):
        assert a[k] == [x - y for x, y in zip(full[i], full[j])]


def test_unit_partition_examples():
    c, e = unit_partition_system(1)
    assert c == [[-1], [1]] and e == [-1, 1]
    assert satisfies_partition([1], 1)
    assert satisfies_partition([F(3, 2), F(-1, 2), F(3, 2)], 2)
    assert satisfies_partition([F(n, 8) for n in (9, 0, -1, 9, 0, 9)], 3)
    assert not satisfies_partition([1, 0, 0], 2)
    assert not satisfies_partition([1, 1], 2)


@pytest.mark.parametrize("nu", [1, 2, 3, 4])
def test_unit_partition_rows_sum_to_zero(nu):
    c, e = unit_partition_system(nu)
    assert [sum(col) for col in zip(*c)] == [0] * pair_count(nu)
    assert sum(e) == 0


def test_unit_partition_nu1_unique():
    # the only v with C v = e for one pair is v = 1
    c, e = unit_partition_system(1)
    sols = [v for v in range(-3, 4) if all(row[0] * v == rhs for row, rhs in zip(c, e))]
    assert sols == [1]


def test_certificate_sch1():
    cert = certify_builtin("Sch-1")
    assert cert.B == ((F(1),),)
    assert cert.min_eigenvalue == pytest.approx(1.0)


def test_certificate_sch3_matches_printed_matrix():
    cert = build_certificate(expand_matrix(builtin_tableau("Sch-3")), [F(4, 3), F(-1, 3), F(4, 3)])
    expected = [[7, -2, 1], [-2, 1, -2], [1, -2, 7]]
    assert cert.B == tuple(tuple(F(x, 9) for x in row) for row in expected)


def test_certificate_sch2_formula_value():
    cert = certify_builtin("Sch-2")
    expected = [[7, -3, 2], [-3, 3, -6], [2, -6, 16]]
    assert cert.B == tuple(tuple(F(x, 12) for x in row) for row in expected)
    assert abs(cert.min_eigenvalue) < 1e-12
    assert np.linalg.det(np.array(expected, float) / 12) == pytest.approx(0, abs=1e-12)
    # a (3,3) entry of 48/12 would not come from the formula with v = (3/2, -1/2, 3/2)
    assert cert.B[2][2] != F(48, 12)


def test_certificate_sch4_global_factor():
    cert = certify_builtin("Sch-4")
    b = np.array([[float(x) for x in row] for row in cert.B])
    # 576 B is an integer matrix (the printed prefactor 1/288 is off by 2)
    scaled = b * 576
    assert np.allclose(scaled, np.round(scaled), atol=1e-9)
    assert cert.is_psd()


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtin_certificates(name):
    cert = certify_builtin(name)
    assert satisfies_partition(cert.v, builtin_tableau(name).nu)
    assert cert.min_eigenvalue >= -1e-12
    assert all(cert.B[r][c] == cert.B[c][r] for r in range(len(cert.B)) for c in range(len(cert.B)))
    assert is_psd_exact(cert.B)


def test_build_certificate_errors():
    a = expand_matrix(builtin_tableau("Sch-3"))
    with pytest.raises(ValueError, match="length"):
        build_certificate(a, [1, 0])
    with pytest.raises(ValueError, match="unit partition"):
        build_certificate(a, [1, 0, 0])
    with pytest.raises(ValueError, match="square"):
        build_certificate([[1, 2]], [1])


def test_is_psd_examples():
    ok, lam = is_psd(certify_builtin("Sch-3").B)
    assert ok and abs(lam) < 1e-12
    ok, lam = is_psd(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert not ok and lam == pytest.approx(-1.0)
    with pytest.raises(ValueError, match="symmetric"):
        is_psd(np.array([[1.0, 2.0], [0.0, 1.0]]))
    assert is_psd(certify_builtin("Sch-4").B)[0]


def test_is_psd_exact_matches_leading_minors_of_sch3():
    b = [[F(x, 9) for x in row] for row in [[7, -2, 1], [-2, 1, -2], [1, -2, 7]]]
    assert is_psd_exact(b)
    assert not is_psd_exact([[1, 2], [2, 1]])
    # a matrix with nonnegative leading minors that is not PSD: [[0,0],[0,-1]]
    assert not is_psd_exact([[0, 0], [0, -1]])


def test_lagrange_weights_examples():
    nodes = [F(1, 6), F(1, 2), F(5, 6)]
    assert lagrange_weights(nodes, 0, F(1, 3)) == [F(25, 72), F(-1, 36), F(1, 72)]
    assert lagrange_weights(nodes, 0, 1) == [F(3, 8), F(1, 4), F(3, 8)]
    assert lagrange_weights(nodes, 0, F(2, 3)) == [F(13, 36), F(5, 18), F(1, 36)]
    assert lagrange_weights([F(1, 2)], 0, 1) == [F(1)]


def test_lagrange_weights_scale_with_h():
    # weights on [0, h c] with nodes h t_i are h times the unit weights
    h = F(3, 7)
    nodes = [F(1, 6), F(1, 2), F(5, 6)]
    scaled = lagrange_weights([h * t for t in nodes], 0, h / 3)
    assert scaled == [h * w for w in lagrange_weights(nodes, 0, F(1, 3))]


def test_lagrange_weights_errors():
    with pytest.raises(ValueError, match="distinct"):
        lagrange_weights([0, 0], 0, 1)
    with pytest.raises(ValueError):
        lagrange_weights([0, 1], 1, 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.fractions(min_value=-2, max_value=2, max_denominator=12), min_size=1, max_size=5, unique=True),
       st.fractions(min_value=-1, max_value=1, max_denominator=8),
       st.fractions(min_value=F(1, 8), max_value=2, max_denominator=8))
def test_lagrange_weights_exact_on_monomials(nodes, a, width):
    b = a + width
    w = lagrange_weights(nodes, a, b)
    for p in range(len(nodes)):
        exact = (b ** (p + 1) - a ** (p + 1)) / (p + 1)
        assert sum(wi * t**p for wi, t in zip(w, nodes)) == exact


SCH4_PAIRS = [(1, 0), (2, 1), (3, 2)]
ROW1 = (0, 0, F(-1, 24), F(1, 24), 0, 0)
ROW2 = (0, 0, F(-1, 12), F(1, 12), 0, 0)
# row 3 moves -1/8 of the h/2 weight onto mu[phi_3, phi_0] (same midpoint)
ROW3 = (0, 0, F(-1, 8), F(1, 8), 0, 0)


def test_construct_reproduces_sch4():
    tab = construct_tableau(3, (F(1, 3), F(2, 3), 1), SCH4_PAIRS, [ROW1, ROW2, ROW3], order=4)
    ref = builtin_tableau("Sch-4")
    assert tab.rows == ref.rows and tab.nodes == ref.nodes


def test_construct_with_two_corrections_only():
    # the two listed corrections fix rows 1 and 2; row 3 stays the plain
    # three-point rule on the selected pairs
    tab = construct_tableau(3, (F(1, 3), F(2, 3), 1), SCH4_PAIRS, [ROW1, ROW2])
    ref = builtin_tableau("Sch-4")
    assert tab.rows[:2] == ref.rows[:2]
    assert tab.rows[2] == (F(3, 8), 0, 0, F(1, 4), 0, F(3, 8))
    assert tab.rows[2] != ref.rows[2]


def test_construct_sch1():
    tab = construct_tableau(1, (1,), [PairIndex(1, 0, 1)])
    assert tab.rows == builtin_tableau("Sch-1").rows


def test_construct_zero_corrections_rows_still_sum():
    tab = construct_tableau(3, (F(1, 3), F(2, 3), 1), SCH4_PAIRS)
    for row, c in zip(tab.rows, tab.nodes):
        assert sum(row) == c


def test_construct_errors():
    with pytest.raises(ValueError, match="nodes"):
        construct_tableau(2, (1,), [(1, 0)])
    with pytest.raises(ValueError, match="midpoints"):
        construct_tableau(3, (F(1, 3), F(2, 3), 1), [(3, 0), (2, 1)])
    with pytest.raises(ValueError, match="entries"):
        construct_tableau(1, (1,), [(1, 0)], [(1, -1)])
    with pytest.raises(ValueError, match="sums"):
        construct_tableau(1, (1,), [(1, 0)], [(F(1, 2),)])


def test_find_partition_sch1():
    cert = find_partition_vector(expand_matrix(builtin_tableau("Sch-1")), 1)
    assert cert is not None and cert.v == (F(1),)


@pytest.mark.parametrize("name", ["Sch-2", "Sch-3", "Sch-4"])
def test_find_partition_builtin(name):
    tab = builtin_tableau(name)
    cert = find_partition_vector(expand_matrix(tab), tab.nu)
    assert cert is not None
    assert satisfies_partition(cert.v, tab.nu)
    assert cert.min_eigenvalue >= -1e-12


def _brute_force_best(a, nu, ticks):
    from dvdflow.tableau import _nullspace

    c, e = unit_partition_system(nu)
    vp, basis = _nullspace(c, e)
    best = -np.inf
    af = np.array(a, dtype=float)
    for t in itertools.product(ticks, repeat=len(basis)):
        v = np.array([float(p + sum(ti * b[k] for ti, b in zip(t, basis))) for k, p in enumerate(vp)])
        dv = v[:, None] * af
        best = max(best, np.linalg.eigvalsh(0.5 * (dv + dv.T))[0])
    return best


def test_find_partition_verdict_matches_brute_force():
    tab = DvdTableau(2, (0, 1), ((1, -1, 0), (0, 0, 1)), 1)
    a = expand_matrix(tab)
    grid = np.linspace(-4, 4, 161)
    oracle = _brute_force_best(a, 2, grid)
    cert = find_partition_vector(a, 2)
    assert oracle < -1e-3
    assert cert is None


def test_find_partition_verdict_matches_brute_force_psd_case():
    a = expand_matrix(builtin_tableau("Sch-3"))
    # the PSD set is a single point, so the grid only gets close to zero
    oracle = _brute_force_best(a, 2, np.linspace(-2, 2, 81))
    assert -1e-3 < oracle <= 1e-12
    cert = find_partition_vector(a, 2)
    assert cert is not None and cert.min_eigenvalue >= -1e-12


def test_serialization_round_trip(tmp_path):
    for name in BUILTIN_NAMES:
        tab = builtin_tableau(name)
        text = dumps_tableau(tab)
        assert text.splitlines()[0] == f"{tab.nu} {tab.order}"
        back = loads_tableau(text)
        assert back == tab
        path = tmp_path / f"{name}.tab"
        write_tableau(tab, path)
        assert read_tableau(path) == tab


def test_serialization_format_tokens():
    text = dumps_tableau(builtin_tableau("Sch-3"))
    assert text == "2 4\n1/2 1/1\n7/12 -1/6 1/12\n2/3 -1/3 2/3\n"


def test_loads_rejects_malformed():
    with pytest.raises(ValueError):
        loads_tableau("2 4\n1/2 1\n7/12 -1/6\n")
    with pytest.raises(ValueError):
        loads_tableau("x y\n")


def test_builtin_partitions_are_the_reference_vectors():
    assert BUILTIN_PARTITIONS["Sch-2"] == (F(3, 2), F(-1, 2), F(3, 2))
    assert BUILTIN_PARTITIONS["Sch-4"] == tuple(F(n, 8) for n in (9, 0, -1, 9, 0, 9))
