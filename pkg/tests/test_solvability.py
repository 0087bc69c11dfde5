import math

import numpy as np
import pytest

from distobs import build_report, classify
from distobs.model import BlockIndex, SensorNetwork
from distobs.solvability import (SPANNING_FOREST_MSG, GainInterval, SelectionStack,
                                 assemble_error_matrix, distinct_values, feasible_gain,
                                 gain_interval_for, is_schur, laplacian_submatrix,
                                 match_multisets, schur_radius, spectrum_split_check,
                                 strategy1_spectrum, undirected_feasibility, unreachable_from)

B11, B12, B13 = BlockIndex(1, 1), BlockIndex(1, 2), BlockIndex(1, 3)


def test_laplacian_submatrix_examples(ex):
    L = ex.report[B11].L_sub
    expected = [[1.9, -0.9, 0, 0], [-0.9, 0.9, 0, 0], [0, -0.7, 1.8, -1.1], [0, 0, 0, 1.2]]
    assert np.allclose(L, expected, atol=1e-12)
    full = np.eye(3)
    sub, keep = laplacian_submatrix(full, (1, 2, 3))
    assert sub.shape == (0, 0) and keep == ()
    sub, keep = laplacian_submatrix(full, ())
    assert np.array_equal(sub, full) and keep == (1, 2, 3)


def test_selection_stack_rows(ex):
    st = ex.report[B11].stack
    assert st.agents == (2, 3, 4, 5) and st.rows == (1, 3, 2, 3)
    assert st.r == (4, 3, 2) and st.c == 4
    assert st.S.shape == (sum(st.rows), st.c * st.d)
    assert np.array_equal(st.S @ st.S.T, np.eye(sum(st.rows)))
    assert list(st.tilde(1)) == list(range(st.c))


def test_all_unobserved_equals_repeated_L_spectrum():
    L = np.array([[1.0, -1.0, 0], [0, 0.5, 0], [-0.2, 0, 0.2]]) + np.diag([0.3, 0, 0])
    st = SelectionStack((1, 2, 3), (2, 2, 2), 2)
    ok, _ = match_multisets(strategy1_spectrum(L, st), np.tile(np.linalg.eigvals(L), 2))
    assert ok


@pytest.mark.parametrize("block, expected", [
    (B11, [1.8, 0.3704, 2.4296, 0.9, 1.2]),
    (B12, [0.8, 1, 1.8, 0.9]),
    (B13, [0.3534, 2.5466, 1, 1.8, 1.2]),
])
def test_example_strategy1_spectra(ex, block, expected):
    got = distinct_values(ex.report[block].sigma_s1)
    ok, worst = match_multisets(got, expected, 5e-5)
    assert ok, worst


@pytest.mark.parametrize("block, expected", [
    (B11, [1.8, 0.3704, 2.4296, 1.2]),
    (B12, [0.8, 1, 1.8, 0.9]),
    (B13, [0.3534, 2.5466, 1.8, 1.2]),
])
def test_example_strategy2_spectra(ex, block, expected):
    ok, worst = match_multisets(ex.report[block].sigma_L, expected, 5e-5)
    assert ok, worst


@pytest.mark.parametrize("block, hi", [(B11, 0.8232), (B12, 1.1111), (B13, 0.7854)])
def test_example_intervals(ex, block, hi):
    br = ex.report[block]
    for iv in (br.interval1, br.interval2):
        assert iv.lo == 0.0 and abs(iv.hi - hi) <= 5e-5
    assert br.interval1.hi <= br.interval2.hi + 1e-12


def test_scalar_interval():
    iv = feasible_gain([1.0], 2.0)
    assert math.isclose(iv.lo, 0.5) and math.isclose(iv.hi, 1.5)
    assert 1.0 in iv and 0.5 not in iv


def test_gain_interval_complex_mu():
    mu = 1 + 1j
    iv = gain_interval_for(mu, 1.2)
    for k in np.linspace(iv.lo, iv.hi, 7)[1:-1]:
        assert abs(1 - k * mu) < 1 / 1.2
    for k in (iv.lo - 1e-6, iv.hi + 1e-6):
        assert abs(1 - k * mu) > 1 / 1.2
    # min_k |1 - k mu| = 1/sqrt(2) > 1/1.5
    assert gain_interval_for(mu, 1.5).empty
    assert gain_interval_for(1j * 5, 1.0).empty


def test_zero_eigenvalue_gives_forest_message():
    iv = feasible_gain([0.0, 1.0], 1.0)
    assert iv.empty and iv.note == SPANNING_FOREST_MSG
    assert feasible_gain([], 1.5) == GainInterval.everything()
    with pytest.raises(ValueError):
        feasible_gain([1.0], 0.5)


def test_undirected_examples():
    L = [[2.0, -1.0], [-1.0, 2.0]]
    res = undirected_feasibility(L, 2.0)
    assert not res.ratio_ok and res.interval.empty
    res = undirected_feasibility(L, 1.0)
    assert res.ratio_ok and res.interval.lo == 0.0 and math.isclose(res.interval.hi, 2 / 3)
    res = undirected_feasibility([[1.0]], 3.0)
    assert math.isclose(res.interval.lo, 2 / 3) and math.isclose(res.interval.hi, 4 / 3)
    with pytest.raises(ValueError):
        undirected_feasibility([[1.0, 0.0], [1.0, 1.0]], 1.0)


def test_schur_radius_examples(ex):
    assert schur_radius(np.eye(3)) == pytest.approx(1.0, abs=1e-15)
    assert schur_radius([[0.5, 1.0], [0.0, 0.5]]) == pytest.approx(0.5, abs=1e-12)
    L = ex.report[B12].L_sub
    assert schur_radius(np.eye(len(L)) - L) == pytest.approx(0.8, abs=1e-12)
    assert not is_schur(np.eye(2)) and is_schur(0.99 * np.eye(2))


def test_defective_radius_is_refined():
    # eigenvalues 1 +- sqrt(eps) in double precision; the refined radius stays at 1
    J = np.eye(4) + np.eye(4, k=1)
    assert abs(schur_radius(J) - 1.0) < 1e-12


def test_strategy2_scalar_matrix():
    st = SelectionStack((1,), (2,), 2)
    M = assemble_error_matrix(2, [[1.0]], st, 1.0, 0.5)
    assert np.array_equal(M, 0.5 * np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        assemble_error_matrix(3, [[1.0]], st, 1.0, 0.5)


def test_strategy1_equals_strategy2_when_fully_unobserved():
    L = np.array([[1.0, -1.0], [-0.5, 0.5]]) + np.diag([0.4, 0.0])
    st = SelectionStack((1, 2), (3, 3), 3)
    assert np.array_equal(assemble_error_matrix(1, L, st, 1.2, 0.3),
                          assemble_error_matrix(2, L, st, 1.2, 0.3))


def test_example_block11_error_matrix(ex):
    br = ex.report[B11]
    M = assemble_error_matrix(1, br.L_sub, br.stack, 1.0, 0.5)
    assert M.shape == (9, 9)
    assert schur_radius(M) < 1
    assert spectrum_split_check(br.stack, br.L_sub, 1.0, 0.5)


def test_split_check_single_agent():
    st = SelectionStack((1,), (1,), 1)
    assert spectrum_split_check(st, [[0.7]], 1.5, 0.4)
    M = assemble_error_matrix(1, [[0.7]], st, 1.5, 0.4)
    assert M[0, 0] == pytest.approx(1.5 * (1 - 0.4 * 0.7))


def test_split_check_random(rng):
    for _ in range(20):
        W = rng.uniform(0.1, 2, (4, 4)) * (rng.random((4, 4)) < 0.6)
        np.fill_diagonal(W, 0)
        L = np.diag(W.sum(1)) - W
        L_sub, _ = laplacian_submatrix(L, ())
        st = SelectionStack((1, 2, 3, 4), tuple(int(r) for r in rng.integers(1, 4, 4)), 3)
        assert spectrum_split_check(st, L_sub, float(rng.choice([-1.3, 1.0, 1.7])),
                                    float(rng.uniform(-0.5, 2.5)))


def test_unreachable_agents():
    # 1 -> 2 only; agent 3 listens to nobody
    W = np.zeros((3, 3))
    W[1, 0] = 1.0
    assert unreachable_from(W, (1,), (2, 3)) == (3,)
    assert unreachable_from(W, (1,), (2,)) == ()


def test_unreachable_block_is_infeasible(ex):
    W = np.array(ex.net.adjacency)
    # agent 3 is in V_1 or V_2 for blocks (1,1) and (1,2); cut everything it hears
    W[2, :] = 0.0
    net = SensorNetwork(W, directed=True)
    report = build_report(ex.system, ex.outputs, net, classify(ex.system, ex.outputs))
    br = report[B11]
    assert not br.feasible1 and not br.feasible2
    assert any("not reachable" in d for d in br.diagnostics())
    assert any(SPANNING_FOREST_MSG in d for d in br.diagnostics())
    assert report.resolve_strategy("auto") is None


def test_report_inclusion_and_json(ex):
    rep = ex.report
    assert rep.strategy1_feasible and rep.strategy2_feasible
    assert rep.resolve_strategy() == 1 and rep.resolve_strategy("2") == 2
    for br in rep.blocks:
        s1 = list(br.sigma_s1)
        for mu in br.sigma_L:
            j = int(np.argmin(np.abs(np.array(s1) - mu)))
            assert abs(s1[j] - mu) < 1e-7
            s1.pop(j)
    doc = rep.to_json()
    assert doc["blocks"][0]["V3"] == [1, 6]
    assert doc["blocks"][0]["interval_strategy1"]["lo"] == 0.0
    with pytest.raises(KeyError):
        rep[BlockIndex(2, 1)]


def test_fully_observed_needs_no_gain(ex):
    from distobs.model import AgentOutputs
    outputs = AgentOutputs(tuple(np.eye(9) for _ in range(6)))
    rep = build_report(ex.system, outputs, ex.net, classify(ex.system, outputs))
    assert all(b.no_gain_needed for b in rep.blocks)
    assert rep.gain_blocks() == [] and rep.resolve_strategy() == 1
