import json
import logging
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import ortho_group

from polymom.ce import build_ce_matrix
from polymom.errors import PolymomError, StageError
from polymom.recovery import (GramEstimate, PVector, assemble_gram, ce_nullspace,
                              evaluate_report, factor_gram, parameter_distance, prepare_ce,
                              recover_full, recover_overlaps, recover_weights, sliced_w1)
from polymom.sampling import (GeneratorSpec, MomentTable, empirical_moment_table,
                              exact_moment_table, synthesize_target)


def _spec(alpha, V, p=3):
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    V = np.asarray(V, dtype=float)
    D, r = alpha.shape
    return GeneratorSpec(D, V.shape[-1], r, p, alpha, V.reshape(D, r, -1))


# weights --------------------------------------------------------------------

def test_weights_from_exact_table():
    t = exact_moment_table(_spec([1.0, 2.0], np.eye(3)[:2]))
    np.testing.assert_allclose(recover_weights(t, 0), [1, 2], atol=1e-10)


def test_single_weight_from_second_moment():
    t = MomentTable(1, 1, 3, [[Fraction(60)]], {})
    np.testing.assert_allclose(recover_weights(t, 0), [2.0], atol=1e-14)


def test_weight_failure_is_tagged():
    # E G^2 = 15 F1 and E G^4 = 675 F1^2 + 9720 F2 with F2 < F1^2 / 2 has complex roots
    t = MomentTable(1, 2, 3, [[Fraction(30), Fraction(675 * 4)]], {})
    with pytest.raises(StageError) as err:
        recover_weights(t, 0)
    assert err.value.stage == "weights" and err.value.index == 0


def test_empirical_weights_close():
    # instance-level tolerance taken from the convergence runs (error 0.02-0.15)
    G = _spec([1.0, 2.0], np.eye(3)[:2])
    t = empirical_moment_table(G, 10**6, seed=2)
    np.testing.assert_allclose(recover_weights(t, 0), [1, 2], atol=0.2)


# CE null space --------------------------------------------------------------

def test_ce_nullspace_dimension_and_annihilation():
    for r, dim in [(1, 0), (2, 1), (3, 3)]:
        alpha = [Fraction(k + 2, 3) for k in range(r)]
        ce = build_ce_matrix(alpha, 3)
        null = ce_nullspace(ce)
        assert len(null) == dim
        for n in null:
            assert all(sum(n[a] * ce.exact[a][m] for a in range(ce.K)) == 0 for m in range(ce.K))
    assert prepare_ce([1.0, 2.0], 3).rank == 5


def test_pvector_decoding():
    G = synthesize_target(2, 4, 2, seed=0)
    P = G.overlap(0, 1)
    beta = G.alpha[1]
    from polymom.ce import enumerate_basis, pvector
    basis = enumerate_basis(2, 3)
    pv = PVector(np.array([float(x) for x in pvector(
        [Fraction(float(b)) for b in beta], [[Fraction(float(x)) for x in row] for row in P],
        basis)]), basis)
    want = np.einsum("j,xj,yj,zj->xyz", beta, P, P, P)
    np.testing.assert_allclose(pv.tensor.data, want, atol=1e-12)
    np.testing.assert_allclose(pv.vector, (P * (1 - (P * P).sum(axis=0))) @ beta, atol=1e-12)


# overlaps -------------------------------------------------------------------

def test_overlap_same_direction_r1():
    G = _spec([[1.0], [1.0]], [[[1, 0]], [[1, 0]]])
    t = exact_moment_table(G)
    assert t.inter[(0, 1)][0] == 15
    res = recover_overlaps(t, [1.0], [1.0], (0, 1))
    np.testing.assert_allclose(res.P, [[1.0]], atol=1e-6)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_overlap_exact_r2(seed):
    G = synthesize_target(2, 4, 2, seed=seed)
    t = exact_moment_table(G)
    for pair in [(0, 1), (1, 0)]:
        res = recover_overlaps(t, G.alpha[pair[0]], G.alpha[pair[1]], pair, seed=seed)
        np.testing.assert_allclose(res.P, G.overlap(*pair), atol=1e-6)
        assert res.diagnostics["assignment_margin"] > 0


def test_overlap_orthogonal_components():
    V = np.eye(4).reshape(2, 2, 4)
    G = _spec([[1.0, 2.0], [1.5, 3.0]], V)
    t = exact_moment_table(G)
    res = recover_overlaps(t, G.alpha[0], G.alpha[1], (0, 1))
    assert res.diagnostics["zero_tensor"]
    np.testing.assert_array_equal(res.P, np.zeros((2, 2)))


# Gram -----------------------------------------------------------------------

def test_assemble_gram_trivial_cases():
    np.testing.assert_array_equal(assemble_gram({}, 1, 2).matrix, np.eye(2))
    z = np.zeros((2, 2))
    g = assemble_gram({(0, 1): z, (1, 0): z}, 2, 2)
    np.testing.assert_array_equal(g.matrix, np.eye(4))
    assert g.missing == []
    assert assemble_gram({}, 2, 2).missing == [(0, 1)]


def test_assemble_gram_averages_both_estimates():
    a = np.array([[0.2, 0.1], [0.0, 0.3]])
    b = np.array([[0.4, 0.0], [0.1, 0.1]])
    g = assemble_gram({(0, 1): a, (1, 0): b}, 2, 2)
    np.testing.assert_allclose(g.block(0, 1), (a + b.T) / 2)
    np.testing.assert_allclose(g.matrix, g.matrix.T)
    assert g.symmetrization_residual == pytest.approx(np.linalg.norm(a - b.T))


def test_factor_gram_identity():
    fac = factor_gram(GramEstimate(np.eye(4), 2, 2), 4)
    np.testing.assert_allclose(fac.stack @ fac.stack.T, np.eye(4), atol=1e-12)


def test_factor_gram_inverts_truth():
    G = synthesize_target(3, 6, 2, seed=5)
    fac = factor_gram(assemble_gram(G.overlap_truth().P, 3, 2), 6)
    assert np.linalg.norm(fac.stack @ fac.stack.T - G.gram()) <= 1e-9
    G = synthesize_target(3, 4, 2, seed=5)  # rank 4 < Dr = 6
    fac = factor_gram(assemble_gram(G.overlap_truth().P, 3, 2), 4)
    assert np.linalg.norm(fac.stack @ fac.stack.T - G.gram()) <= 1e-9


def test_factor_gram_clamps_small_negative_eigenvalue(caplog):
    q = ortho_group.rvs(4, random_state=0)
    m = q @ np.diag([2.0, 1.0, 1.0, -1e-8]) @ q.T
    with caplog.at_level(logging.INFO, logger="polymom.recovery"):
        fac = factor_gram(GramEstimate(m, 2, 2), 4)
    assert fac.clamped == pytest.approx(1e-8)
    assert "clamping" in caplog.text


def test_factor_gram_rank_check():
    with pytest.raises(Exception, match="rank"):
        factor_gram(GramEstimate(np.eye(4), 2, 2), 2, rank_tol=1e-3)


# metrics --------------------------------------------------------------------

def test_parameter_distance_zero_and_rotation():
    G = synthesize_target(2, 4, 2, seed=1)
    assert all(v < 1e-12 for v in parameter_distance(G, G).values())
    W = ortho_group.rvs(4, random_state=2)
    H = GeneratorSpec(G.D, G.d, G.r, G.p, G.alpha, G.V @ W)
    m = parameter_distance(H, G)
    assert m["gram_distance"] < 1e-12 and m["direction_error"] < 1e-12
    assert m["weight_error"] == 0


def test_parameter_distance_perturbation():
    G = synthesize_target(2, 4, 2, seed=3)
    eps = 1e-3
    V = G.V.copy()
    V[0, 0] += eps * np.random.default_rng(0).standard_normal(4)
    u, _, vt = np.linalg.svd(V[0], full_matrices=False)
    V[0] = u @ vt
    gd = parameter_distance(GeneratorSpec(2, 4, 2, 3, G.alpha, V), G)["gram_distance"]
    assert 0 < gd <= 10 * eps


def test_parameter_distance_shape_mismatch():
    with pytest.raises(PolymomError):
        parameter_distance(synthesize_target(2, 4, 2, seed=0), synthesize_target(3, 4, 2, seed=0))


def test_sliced_w1_identity_and_scaling():
    G = _spec([[1.0]], [[[1, 0]]])
    assert sliced_w1(G, G, 20_000, 8, seed=3, seed_star=3).value == 0
    H = _spec([[2.0]], [[[1, 0]]])
    base = sliced_w1(G, G, 200_000, 1, seed=4).value
    scaled = sliced_w1(H, G, 200_000, 1, seed=4).value
    # E|w^3| = 2 sqrt(2 / pi); scaling by 2 moves every quantile by that much
    want = 2 * np.sqrt(2 / np.pi)
    assert abs(scaled - want) < 0.05 * want + base


# end to end -----------------------------------------------------------------

def test_recover_full_single_component():
    t = exact_moment_table(_spec([1.0, 2.0], np.eye(3)[:2]))
    rep = recover_full(t, 3)
    assert rep.ok and any("single_component" in f for f in rep.flags)
    np.testing.assert_array_equal(rep.learner.V[0], np.eye(2, 3))


def test_recover_full_exact_end_to_end():
    G = synthesize_target(3, 4, 2, seed=11)
    rep = recover_full(exact_moment_table(G), 4)
    assert rep.ok
    np.testing.assert_allclose(rep.alpha, G.alpha, atol=1e-8)
    assert np.linalg.norm(rep.gram - G.gram()) <= 1e-6
    m = evaluate_report(rep, G, w1_samples=2000, w1_directions=4)
    assert m["gram_distance"] <= 1e-6 and m["weight_error"] <= 1e-8
    json.loads(rep.dumps())
    assert rep.metrics_csv().splitlines()[0].endswith("failures")


def test_recover_full_flags_square_latent():
    G = synthesize_target(2, 2, 2, seed=0)
    rep = recover_full(exact_moment_table(G), 2)
    assert any(f.startswith("d_equals_r") for f in rep.flags)


def test_strict_and_best_effort_modes():
    G = synthesize_target(2, 4, 2, seed=0)
    t = exact_moment_table(G)
    t.intra[1] = [Fraction(30), Fraction(2700)]  # complex roots for component 1
    with pytest.raises(StageError) as err:
        recover_full(t, 4, strict=True)
    assert err.value.stage == "weights" and err.value.index == 1
    rep = recover_full(t, 4, strict=False)
    assert not rep.ok and rep.learner is None
    assert rep.failures[0]["stage"] == "weights"
    np.testing.assert_allclose(rep.alpha[0], G.alpha[0], atol=1e-8)
