import numpy as np
import pytest

from qttfem.indexing import zorder_permutation
from qttfem.ttcore import (
    TTMatrix,
    TTVector,
    rank_profile,
    tt_add,
    tt_contract,
    tt_decompose,
    tt_diag,
    tt_dot,
    tt_hadamard,
    tt_identity,
    tt_kron,
    tt_matmat,
    tt_matvec,
    tt_norm,
    tt_ones,
    tt_rank1_matrix,
    tt_rank1_vector,
    tt_round,
    tt_scale,
    tt_slice_mode,
    tt_transpose,
    tt_zkron,
)


def random_tt_vector(rng, d, rank):
    """Build a random TT vector directly from cores (independent of SVD)."""
    ranks = [1] + [rank] * (d - 1) + [1]
    cores = [rng.standard_normal((ranks[k], 2, ranks[k + 1])) for k in range(d)]
    return TTVector(cores)


def random_tt_matrix(rng, d, rank):
    ranks = [1] + [rank] * (d - 1) + [1]
    cores = [
        rng.standard_normal((ranks[k], 2, 2, ranks[k + 1])) for k in range(d)
    ]
    return TTMatrix(cores)


# ---------------------------------------------------------------- decompose


def test_decompose_rank1_vector():
    rng = np.random.default_rng(1)
    a, b, c = rng.standard_normal(2), rng.standard_normal(2), rng.standard_normal(2)
    # separable tensor: v[i + 2j + 4k] = a[i] b[j] c[k]
    v = np.einsum("i,j,k->ijk", a, b, c).ravel(order="F")
    t = tt_decompose(v, 0.0)
    assert t.ranks == (1, 1, 1, 1)
    assert np.allclose(tt_contract(t), v, atol=1e-14)


def test_decompose_zero_vector():
    t = tt_decompose(np.zeros(4), 0.0)
    assert t.ranks == (1, 1, 1)
    assert all(np.all(c == 0) for c in t.cores)
    prof = rank_profile(t)
    assert prof.storage_count == 2 + 2


def test_decompose_random_roundtrip():
    rng = np.random.default_rng(2)
    v = rng.standard_normal(16)
    t = tt_decompose(v, 0.0)
    assert np.allclose(tt_contract(t), v, atol=1e-13)
    assert all(
        r <= cap for r, cap in zip(t.ranks, (1, 2, 4, 2, 1))
    )


def test_decompose_errors():
    with pytest.raises(ValueError):
        tt_decompose(np.ones(6), 0.0)
    with pytest.raises(ValueError):
        tt_decompose(np.ones(8), -1.0)


def test_decompose_matrix_roundtrip():
    rng = np.random.default_rng(3)
    m = rng.standard_normal((8, 8))
    t = tt_decompose(m, 0.0)
    assert np.allclose(tt_contract(t), m, atol=1e-12)


@pytest.mark.parametrize("eps", [1e-3, 1e-5, 1e-7])
def test_decompose_tolerance(eps):
    rng = np.random.default_rng(4)
    v = rng.standard_normal(64)
    t = tt_decompose(v, eps)
    err = np.linalg.norm(tt_contract(t) - v) / np.linalg.norm(v)
    assert err <= eps


# ----------------------------------------------------------------- contract


def test_contract_ones():
    t = TTVector([np.ones((1, 2, 1)), np.ones((1, 2, 1))])
    assert np.array_equal(tt_contract(t), np.ones(4))


def test_contract_identity_matrix():
    t = tt_identity((2, 2, 2))
    assert np.array_equal(tt_contract(t), np.eye(8))


def test_contract_guard():
    t = tt_ones((2,) * 30)
    with pytest.raises(ValueError):
        tt_contract(t)


def test_contract_bit_order_lsb_first():
    # mode 1 must be the least significant bit of the flat index
    e1 = tt_rank1_vector([[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]])
    dense = tt_contract(e1)
    assert dense[1] == 1.0 and np.sum(dense) == 1.0


# -------------------------------------------------------------------- round


def test_round_rank1_keeps_ranks():
    rng = np.random.default_rng(5)
    t = tt_rank1_vector([rng.standard_normal(2) for _ in range(4)])
    r = tt_round(t, 1e-1)
    assert r.ranks == t.ranks


def test_round_recovers_perturbed_duplicate():
    rng = np.random.default_rng(6)
    v = random_tt_vector(rng, 4, 2)
    w = tt_add(v, tt_scale(v, 1e-12))
    r = tt_round(w, 1e-9)
    assert all(rr <= rv for rr, rv in zip(r.ranks, v.ranks))
    dense = tt_contract(v) * (1 + 1e-12)
    assert np.allclose(tt_contract(r), dense, rtol=0, atol=1e-9 * np.linalg.norm(dense))


@pytest.mark.parametrize("eps", [1e-3, 1e-5, 1e-7])
def test_round_contract_error_bound(eps):
    rng = np.random.default_rng(7)
    for _ in range(34):
        d = rng.integers(2, 6)
        t = random_tt_vector(rng, int(d), 5)
        r = tt_round(t, eps)
        dt, dr = tt_contract(t), tt_contract(r)
        assert np.linalg.norm(dr - dt) <= eps * np.linalg.norm(dt) * (1 + 1e-8)
        assert all(a <= b for a, b in zip(r.ranks, t.ranks))


def test_round_matrix():
    rng = np.random.default_rng(8)
    a = random_tt_matrix(rng, 3, 3)
    s = tt_add(a, a)
    r = tt_round(s, 1e-12)
    assert np.allclose(tt_contract(r), 2 * tt_contract(a), atol=1e-10)
    assert max(r.ranks) <= max(a.ranks)


# ------------------------------------------------------------------ algebra


def test_add_zero():
    rng = np.random.default_rng(9)
    a = random_tt_vector(rng, 3, 2)
    z = tt_scale(tt_ones((2, 2, 2)), 0.0)
    assert np.allclose(tt_contract(tt_add(a, z)), tt_contract(a))


def test_add_matches_dense():
    rng = np.random.default_rng(10)
    a = random_tt_vector(rng, 4, 3)
    b = random_tt_vector(rng, 4, 2)
    s = tt_add(a, b)
    assert np.allclose(tt_contract(s), tt_contract(a) + tt_contract(b))
    assert all(
        rs <= ra + rb for rs, ra, rb in zip(s.ranks[1:-1], a.ranks[1:-1], b.ranks[1:-1])
    )


def test_hadamard_with_ones_is_identity():
    rng = np.random.default_rng(11)
    a = random_tt_vector(rng, 3, 2)
    h = tt_hadamard(a, tt_ones((2, 2, 2)))
    assert np.allclose(tt_contract(h), tt_contract(a))


def test_hadamard_matches_dense():
    rng = np.random.default_rng(12)
    a = random_tt_vector(rng, 4, 2)
    b = random_tt_vector(rng, 4, 3)
    assert np.allclose(
        tt_contract(tt_hadamard(a, b)), tt_contract(a) * tt_contract(b)
    )


def test_scale_and_norm_and_dot():
    rng = np.random.default_rng(13)
    a = random_tt_vector(rng, 4, 3)
    da = tt_contract(a)
    assert np.allclose(tt_contract(tt_scale(a, -2.5)), -2.5 * da)
    assert np.isclose(tt_norm(a), np.linalg.norm(da))
    b = random_tt_vector(rng, 4, 2)
    assert np.isclose(tt_dot(a, b), da @ tt_contract(b))


def test_mode_size_mismatch_raises():
    rng = np.random.default_rng(14)
    a = random_tt_vector(rng, 3, 2)
    b = random_tt_vector(rng, 4, 2)
    with pytest.raises(ValueError):
        tt_add(a, b)
    with pytest.raises(ValueError):
        tt_hadamard(a, b)


# ------------------------------------------------------------------- matvec


def test_matvec_identity():
    rng = np.random.default_rng(15)
    x = random_tt_vector(rng, 3, 2)
    y = tt_matvec(tt_identity((2, 2, 2)), x)
    assert np.allclose(tt_contract(y), tt_contract(x))


def test_matvec_matches_dense():
    rng = np.random.default_rng(16)
    a = random_tt_matrix(rng, 3, 3)
    x = random_tt_vector(rng, 3, 2)
    y = tt_matvec(a, x)
    assert np.allclose(
        tt_contract(y), tt_contract(a) @ tt_contract(x), atol=1e-12
    )


def test_matvec_diag_times_ones():
    rng = np.random.default_rng(17)
    v = random_tt_vector(rng, 3, 2)
    y = tt_matvec(tt_diag(v), tt_ones((2, 2, 2)))
    assert np.allclose(tt_contract(y), tt_contract(v))


def test_matmat_matches_dense():
    rng = np.random.default_rng(18)
    a = random_tt_matrix(rng, 3, 2)
    b = random_tt_matrix(rng, 3, 3)
    c = tt_matmat(a, b)
    assert np.allclose(
        tt_contract(c), tt_contract(a) @ tt_contract(b), atol=1e-12
    )


def test_transpose():
    rng = np.random.default_rng(19)
    a = random_tt_matrix(rng, 3, 2)
    assert np.allclose(tt_contract(tt_transpose(a)), tt_contract(a).T)


# --------------------------------------------------------------- kron/zkron


def test_kron_identity():
    i1 = tt_identity((2,))
    k = tt_kron(i1, i1)
    assert np.array_equal(tt_contract(k), np.eye(4))


def test_kron_matches_dense():
    rng = np.random.default_rng(20)
    a = random_tt_matrix(rng, 2, 2)
    b = random_tt_matrix(rng, 2, 2)
    assert np.allclose(
        tt_contract(tt_kron(a, b)), np.kron(tt_contract(a), tt_contract(b))
    )


def test_kron_rank1_factors_all_ranks_one():
    rng = np.random.default_rng(21)
    mats = [rng.standard_normal((2, 2)) for _ in range(4)]
    t = tt_rank1_matrix(mats)
    assert set(t.ranks) == {1}
    dense = mats[0]
    for m in mats[1:]:
        dense = np.kron(m, dense)
    assert np.allclose(tt_contract(t), dense)


def test_zkron_identity():
    i2 = tt_identity((2, 2))
    z = tt_zkron(i2, i2)
    assert np.array_equal(tt_contract(z), np.eye(16))


@pytest.mark.parametrize("d", [1, 2])
def test_zkron_permutation_identity(d):
    rng = np.random.default_rng(22 + d)
    a = random_tt_matrix(rng, d, 2)
    b = random_tt_matrix(rng, d, 2)
    z = tt_zkron(a, b)
    perm = zorder_permutation(d)
    dense = np.kron(tt_contract(a), tt_contract(b))
    assert np.allclose(tt_contract(z), dense[np.ix_(perm, perm)], atol=1e-12)


def test_zkron_2x2_with_identity():
    a = tt_rank1_matrix([np.array([[1.0, 2.0], [3.0, 4.0]])])
    b = tt_identity((2,))
    z = tt_zkron(a, b)
    perm = zorder_permutation(1)
    dense = np.kron(tt_contract(a), np.eye(2))
    assert np.allclose(tt_contract(z), dense[np.ix_(perm, perm)])


def test_zkron_vectors():
    rng = np.random.default_rng(24)
    a = random_tt_vector(rng, 2, 2)
    b = random_tt_vector(rng, 2, 2)
    z = tt_zkron(a, b)
    perm = zorder_permutation(2)
    dense = np.kron(tt_contract(a), tt_contract(b))
    assert np.allclose(tt_contract(z), dense[perm])


def test_zkron_kron_compatibility():
    # interleaving two 2-level kron stacks pairs levels across directions
    rng = np.random.default_rng(25)
    a, b, c, e = [random_tt_matrix(rng, 1, 1) for _ in range(4)]
    lhs = tt_zkron(tt_kron(a, b), tt_kron(c, e))
    rhs = tt_kron(tt_zkron(a, c), tt_zkron(b, e))
    assert np.allclose(tt_contract(lhs), tt_contract(rhs))


def test_zkron_mixed_product():
    # z-kron commutes with operator composition factorwise
    rng = np.random.default_rng(26)
    a1, a2 = random_tt_matrix(rng, 2, 2), random_tt_matrix(rng, 2, 2)
    b1, b2 = random_tt_matrix(rng, 2, 2), random_tt_matrix(rng, 2, 2)
    lhs = tt_matmat(tt_zkron(a1, b1), tt_zkron(a2, b2))
    rhs = tt_zkron(tt_matmat(a1, a2), tt_matmat(b1, b2))
    assert np.allclose(tt_contract(lhs), tt_contract(rhs), atol=1e-12)


# ------------------------------------------------------------- rank profile


def test_rank_profile_rank_one_vector():
    t = tt_ones((2, 2, 2))
    prof = rank_profile(t)
    assert prof.storage_count == 6
    assert prof.max_rank == 1
    assert np.isclose(prof.effective_rank, 1.0)


def test_rank_profile_rank_two():
    rng = np.random.default_rng(26)
    t = random_tt_vector(rng, 3, 2)
    prof = rank_profile(t)
    assert prof.storage_count == 4 + 8 + 4
    assert prof.max_rank == 2
    # erank solves 2r + 2r^2 + 2r = 16
    r = prof.effective_rank
    assert abs(2 * r + 2 * r * r + 2 * r - 16) < 1e-12


def test_rank_profile_single_mode():
    t = TTVector([np.ones((1, 2, 1))])
    assert rank_profile(t).storage_count == 2


def test_rank_profile_matrix_counts_paired_modes():
    t = tt_identity((2, 2, 2))
    prof = rank_profile(t)
    assert prof.storage_count == 4 + 4 + 4
    r = prof.effective_rank
    assert abs(4 * r + 4 * r * r + 4 * r - 12) < 1e-12


def test_slice_mode():
    rng = np.random.default_rng(27)
    t = random_tt_vector(rng, 4, 3)
    dense = tt_contract(t).reshape((2,) * 4, order="F")
    s = tt_slice_mode(t, 2, 1)
    assert np.allclose(tt_contract(s), dense[:, :, 1, :].ravel(order="F"))
    s0 = tt_slice_mode(t, 0, 0)
    assert np.allclose(tt_contract(s0), dense[0].ravel(order="F"))


# ------------------------------------------------- randomized property suite


def test_property_suite_randomized():
    """Round-trip, rounding contract, algebra homomorphism, zkron identity."""
    rng = np.random.default_rng(123)
    n_cases = 0
    for trial in range(60):
        d = int(rng.integers(2, 6))
        v = rng.standard_normal(2**d)
        t = tt_decompose(v, 0.0)
        assert np.linalg.norm(tt_contract(t) - v) <= 1e-12 * np.linalg.norm(v)
        n_cases += 1

        a = random_tt_vector(rng, d, int(rng.integers(1, 5)))
        b = random_tt_vector(rng, d, int(rng.integers(1, 5)))
        da, db = tt_contract(a), tt_contract(b)
        assert np.allclose(tt_contract(tt_add(a, b)), da + db)
        assert np.allclose(tt_contract(tt_hadamard(a, b)), da * db)
        n_cases += 2

        eps = 10.0 ** rng.uniform(-8, -2)
        r = tt_round(a, eps)
        assert np.linalg.norm(tt_contract(r) - da) <= eps * np.linalg.norm(da) * (
            1 + 1e-8
        )
        n_cases += 1
    assert n_cases >= 200
