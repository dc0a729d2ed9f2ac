import numpy as np
import pytest

from conftest import random_polyball_tuple, random_row_tuple
from polyball.basis import Shape
from polyball.berezin import (
    berezin_kernel,
    connection_identity,
    curvature_operator_trace,
    has_characteristic_function,
    index_formula_check,
    monomial_multiplier,
    multiplier_from_json,
    multiplier_to_json,
    validate_multiplier,
    verify_intertwining,
)
from polyball.cp import OperatorTuple
from polyball.fock import FockTruncation
from polyball.subspaces import (
    GradedSubspace,
    bidisc_difference_subspace,
    compression_tuple,
    construct_mt,
    construct_nadic,
    zero_subspace,
)


def scalar_tuple(r):
    return OperatorTuple(Shape((1,)), 1, (((np.array([[r]], dtype=complex)),),))


def test_scalar_kernel_entries_and_norm():
    r, cap = 0.6, 8
    kb = berezin_kernel(scalar_tuple(r), (cap,))
    for m in range(cap + 1):
        assert kb.blocks[(m,)][0, 0] == pytest.approx(np.sqrt(1 - r**2) * r**m)
    gram = sum(kb.grade_gram((m,)) for m in range(cap + 1))
    assert gram[0, 0] == pytest.approx(1 - r ** (2 * (cap + 1)))


def test_zero_defect_gives_zero_kernel():
    kb = berezin_kernel(scalar_tuple(1.0), (5,))
    assert kb.truncation.coeff_dim == 0
    assert all(b.shape == (0, 1) for b in kb.blocks.values())


def test_kernel_isometry_defect_below_tail_bound():
    rng = np.random.default_rng(97)
    t = random_polyball_tuple(rng, (2, 2), (2, 2), 0.6)
    kb = berezin_kernel(t, (6, 6))
    assert kb.isometry_defect() <= kb.tail_bound + 1e-12


def test_intertwining_scalar_exact():
    kb = berezin_kernel(scalar_tuple(0.7), (6,))
    assert verify_intertwining(kb) < 1e-14


def test_intertwining_zero_tuple():
    t = OperatorTuple(Shape((2,)), 2, ((np.zeros((2, 2)), np.zeros((2, 2))),))
    kb = berezin_kernel(t, (4,))
    assert verify_intertwining(kb) < 1e-15


def test_intertwining_random_pure():
    rng = np.random.default_rng(101)
    t = random_polyball_tuple(rng, (2, 2), (2, 2), 0.6)
    kb = berezin_kernel(t, (5, 5))
    assert verify_intertwining(kb) < 1e-10


def test_connection_identity_grade_zero():
    rng = np.random.default_rng(103)
    t = random_polyball_tuple(rng, (2, 2), (2, 2), 0.7)
    kb = berezin_kernel(t, (4, 4))
    lhs, rhs, resid = connection_identity(kb, (0, 0))
    assert np.allclose(rhs, kb.defect.defect, atol=1e-13)
    assert resid < 1e-12


def test_connection_identity_scalar_closed_form():
    r = 0.5
    kb = berezin_kernel(scalar_tuple(r), (6,))
    for q in range(5):
        lhs, rhs, resid = connection_identity(kb, (q,))
        assert lhs[0, 0] == pytest.approx((1 - r**2) * r ** (2 * q))
        assert resid < 1e-14


def test_connection_identity_random_and_cap_monotonicity():
    rng = np.random.default_rng(107)
    t = random_polyball_tuple(rng, (2, 2), (2, 3), 0.6)
    small = berezin_kernel(t, (4, 4))
    big = berezin_kernel(t, (6, 5))
    _, _, resid_small = connection_identity(small, (2, 1))
    _, _, resid_big = connection_identity(big, (2, 1))
    assert resid_big < 1e-8
    assert resid_big <= resid_small + 1e-13


def test_char_function_always_exists_single_factor():
    rng = np.random.default_rng(109)
    for _ in range(3):
        t = random_row_tuple(rng, 2, 3, 0.8)
        kb = berezin_kernel(t, (4,))
        verdict = has_characteristic_function(kb)
        assert verdict.positive, verdict


def test_char_function_true_for_beurling_compression():
    # monomial subspace of the bidisc model; its complement compression
    ft = FockTruncation(Shape((1, 1), caps=(4, 4)))
    sub = GradedSubspace(
        ft, "basis",
        grade_bases={q: np.eye(1, dtype=complex) for q in ft.grades if q[0] >= 1},
    )
    t = compression_tuple(sub)
    kb = berezin_kernel(t, (4, 4))
    assert has_characteristic_function(kb).positive


def test_char_function_false_for_difference_compression():
    sub = bidisc_difference_subspace((4, 4))
    t = compression_tuple(sub)
    kb = berezin_kernel(t, (4, 4))
    verdict = has_characteristic_function(kb)
    assert not verdict.positive
    assert verdict.min_eigenvalue < -1e-3


def test_curvature_operator_trace_two_routes():
    rng = np.random.default_rng(113)
    t = random_polyball_tuple(rng, (2, 2), (2, 2), 0.6)
    kb = berezin_kernel(t, (4, 4))
    for q in [(0, 0), (1, 1), (2, 2), (3, 3)]:
        chk = curvature_operator_trace(kb, q)
        assert chk.residual < 1e-10


def test_curvature_operator_trace_scalar_geometric():
    r = 0.5
    kb = berezin_kernel(scalar_tuple(r), (6,))
    for q in range(5):
        chk = curvature_operator_trace(kb, (q,))
        assert chk.value == pytest.approx((1 - r**2) * r ** (2 * q), abs=1e-12)


def test_index_formula_monomial_suffix_subspace():
    sub = construct_mt(construct_nadic(2, 0.5), cap=4)
    t = compression_tuple(sub)
    kb = berezin_kernel(t, (4,))
    theta = monomial_multiplier(Shape((2,)), 0, (1,))
    chk = index_formula_check(kb, theta)
    assert chk.lhs == pytest.approx(0.5, abs=1e-10)
    assert chk.rhs == pytest.approx(0.5, abs=1e-10)
    assert chk.residual < 1e-8


def test_index_formula_bidisc_monomial():
    ft = FockTruncation(Shape((1, 1), caps=(4, 4)))
    sub = GradedSubspace(
        ft, "basis",
        grade_bases={q: np.eye(1, dtype=complex) for q in ft.grades if q[0] >= 1},
    )
    t = compression_tuple(sub)
    kb = berezin_kernel(t, (4, 4))
    theta = monomial_multiplier(Shape((1, 1)), 0, (1,))
    chk = index_formula_check(kb, theta)
    assert chk.lhs == pytest.approx(0.0, abs=1e-10)
    assert chk.rhs == pytest.approx(0.0, abs=1e-10)
    assert kb.defect.rank == 1


def test_index_formula_zero_theta_gives_rank():
    from polyball.berezin import InnerMultiplier

    ft = FockTruncation(Shape((2,), caps=(4,)), coeff_dim=2)
    t = compression_tuple(zero_subspace(ft))
    kb = berezin_kernel(t, (4,))
    assert kb.defect.rank == 2
    theta = InnerMultiplier(Shape((2,)), 1, 2, {})
    chk = index_formula_check(kb, theta)
    assert chk.lhs == pytest.approx(2.0, abs=1e-12)
    assert chk.rhs == pytest.approx(2.0)
    assert chk.residual < 1e-12


def test_index_formula_rejects_wrong_completion():
    sub = construct_mt(construct_nadic(2, 0.5), cap=4)
    t = compression_tuple(sub)
    kb = berezin_kernel(t, (4,))
    wrong = monomial_multiplier(Shape((2,)), 0, (2,))
    with pytest.raises(ValueError, match="interior"):
        index_formula_check(kb, wrong)


def test_multiplier_validation_and_roundtrip():
    theta = monomial_multiplier(Shape((2, 2)), 1, (1, 2))
    assert validate_multiplier(theta, (3, 3)) < 1e-14
    back = multiplier_from_json(multiplier_to_json(theta))
    assert back.shape.n == theta.shape.n
    assert back.isometric
    for d, c in theta.coeffs.items():
        assert np.array_equal(back.coeffs[d], c)


def test_index_formula_two_component_multiplier():
    # suffix subspace of the quarter expansion: two orthogonal word components
    import numpy as np

    from polyball.berezin import InnerMultiplier

    sub = construct_mt(construct_nadic(2, 0.25), cap=5)
    t = compression_tuple(sub)
    kb = berezin_kernel(t, (5,))
    c1 = np.zeros((2, 1, 2), dtype=complex)
    c1[0, 0, 0] = 1.0  # right extension by the word (1,) from source slot 0
    c2 = np.zeros((4, 1, 2), dtype=complex)
    c2[1, 0, 1] = 1.0  # right extension by the word (1,2) from source slot 1
    theta = InnerMultiplier(Shape((2,)), 2, 1, {(1,): c1, (2,): c2}, isometric=True)
    chk = index_formula_check(kb, theta)
    assert chk.lhs == pytest.approx(0.25, abs=1e-10)
    assert chk.rhs == pytest.approx(0.25, abs=1e-10)
    assert chk.residual < 1e-8
    assert chk.completion_residual < 1e-12


def test_kernel_is_a_contraction():
    import numpy as np

    rng = np.random.default_rng(223)
    t = random_polyball_tuple(rng, (2, 2), (2, 2), 0.8)
    kb = berezin_kernel(t, (5, 5))
    gram = sum(kb.grade_gram(q) for q in kb.truncation.grades)
    assert float(np.linalg.eigvalsh((gram + gram.conj().T) / 2)[-1]) <= 1 + 1e-12
