import numpy as np
import pytest
from conftest import make_bank

from distobs.design import closed_loop_error_matrix, stacked_error
from distobs.model import BlockIndex, SystemModel
from distobs.sim import (DivergenceError, InputSignal, convergence_metrics, read_trace_csv,
                         simulate, unit_sphere, write_trace_csv)


def test_metrics_on_geometric_trace():
    e = 0.5 ** np.arange(30)
    m = convergence_metrics(e[None, :])[1]
    # 0.5^10 < 1e-3 <= 0.5^9
    assert m.converged and m.settling_time == 10
    assert m.terminal_ratio == pytest.approx(0.5 ** 29)


def test_metrics_diverging_and_zero():
    m = convergence_metrics(np.array([[1.0, 2.0, 4.0], [0.0, 0.0, 0.0]]))
    assert not m[1].converged and m[1].settling_time is None and m[1].terminal_ratio == 4.0
    assert m[2].converged and m[2].settling_time == 0


def test_unit_sphere_is_seeded():
    a, b = unit_sphere(9, 7), unit_sphere(9, 7)
    assert np.array_equal(a, b) and np.linalg.norm(a) == pytest.approx(1.0)
    assert not np.array_equal(a, unit_sphere(9, 8))


@pytest.mark.parametrize("strategy", [1, 2])
def test_example_converges(ex, strategy):
    tr = simulate(ex.system, ex.outputs, make_bank(ex, strategy), unit_sphere(9, 7), 500)
    assert tr.x.shape == (9, 501) and tr.xhat.shape == (6, 9, 501)
    for m in convergence_metrics(tr, tol=1e-4).values():
        assert m.converged and m.terminal_ratio < 1e-4


@pytest.mark.parametrize("strategy", [1, 2])
def test_exact_initial_estimate_stays_exact(ex, strategy):
    tr = simulate(ex.system, ex.outputs, make_bank(ex, strategy), unit_sphere(9, 3), 40,
                  xhat0="exact")
    assert np.max(tr.err_norm) <= 1e-12 * np.max(np.abs(tr.x))


@pytest.mark.parametrize("strategy", [1, 2])
def test_error_follows_closed_loop_matrix(ex, strategy):
    bank = make_bank(ex, strategy)
    M = closed_loop_error_matrix(bank).matrix
    tr = simulate(ex.system, ex.outputs, bank, unit_sphere(9, 11), 30, keep_states=True)
    e = stacked_error(bank, tr.x[:, 0], [s[:, 0] for s in tr.states])
    for t in range(1, 31):
        e = M @ e
        got = stacked_error(bank, tr.x[:, t], [s[:, t] for s in tr.states])
        assert np.linalg.norm(got - e) <= 1e-9 * max(1.0, np.linalg.norm(e))


def test_error_independent_of_input(ex):
    B = np.arange(1.0, 19.0).reshape(9, 2) / 9
    system = SystemModel(ex.system.jordan, B)
    bank = make_bank(ex, 1, system=system)
    x0 = unit_sphere(9, 5)
    sin = InputSignal("sinusoid", amplitude=(1.0, 0.5), frequency=(0.05, 0.013), phase=(0.0, 1.0))
    a = simulate(system, ex.outputs, bank, x0, 50)
    b = simulate(system, ex.outputs, bank, x0, 50, inputs=sin)
    assert not np.allclose(a.x, b.x)
    for i in range(1, 7):
        assert np.allclose(a.error(i), b.error(i), atol=1e-9)


def test_gain_outside_interval_diverges(ex):
    gains = dict(ex.gains)
    gains[BlockIndex(1, 1)] = 2.0
    bank = make_bank(ex, 1, gains=gains)
    with pytest.raises(DivergenceError) as err:
        simulate(ex.system, ex.outputs, bank, unit_sphere(9, 7), 2000)
    tr = err.value.trace
    assert tr is not None and tr.T == err.value.t and err.value.value > 1e12


def test_geometric_tail_bound(ex):
    from distobs.solvability import schur_radius
    bank = make_bank(ex, 1)
    rho = schur_radius(closed_loop_error_matrix(bank).matrix)
    tr = simulate(ex.system, ex.outputs, bank, unit_sphere(9, 7), 100)
    e = tr.err_norm.max(axis=0)
    # past the transient the decay is no slower than (rho + 0.02)^t; later on the
    # plant state grows like t^3 and roundoff sets an absolute floor near 1e-10
    assert e[100] / e[40] <= (rho + 0.02) ** 60


def test_zero_horizon(ex):
    tr = simulate(ex.system, ex.outputs, make_bank(ex, 1), unit_sphere(9, 7), 0)
    assert tr.T == 0 and tr.err_norm.shape == (6, 1)
    with pytest.raises(ValueError):
        simulate(ex.system, ex.outputs, make_bank(ex, 1), unit_sphere(9, 7), -1)


def test_input_signal_validation():
    with pytest.raises(ValueError):
        InputSignal("step", value=(1.0,)).check(2, 5)
    with pytest.raises(ValueError):
        InputSignal("ramp").check(1, 5)
    s = InputSignal("samples", samples=np.arange(6.0).reshape(1, 6))
    s.check(1, 5)
    assert s.at(3, 1)[0] == 3.0
    sin = InputSignal("sinusoid", amplitude=(2.0,), frequency=(0.25,), phase=(0.0,))
    assert sin.at(1, 1)[0] == pytest.approx(2.0)


@pytest.mark.parametrize("wide", [False, True])
def test_csv_round_trip(ex, tmp_path, wide):
    tr = simulate(ex.system, ex.outputs, make_bank(ex, 2), unit_sphere(9, 7), 12)
    path = tmp_path / "trace.csv"
    write_trace_csv(tr, path, wide=wide)
    cols = read_trace_csv(path)
    assert np.array_equal(cols["t"], np.arange(13))
    for i in range(1, 7):
        assert np.array_equal(cols[f"err_norm_{i}"], tr.err_norm[i - 1])
    if wide:
        assert np.array_equal(cols["xhat_3_4"], tr.xhat[2, 3])
        assert np.array_equal(cols["x_9"], tr.x[8])
    else:
        assert "x_1" not in cols
