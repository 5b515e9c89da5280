import numpy as np
import pytest
import scipy.sparse as sp

from tapopf.fd_oracle import compare, fd_hessian_contract, fd_jacobian


def test_linear_map_recovered(rng):
    A = rng.normal(size=(4, 3))
    J = fd_jacobian(lambda x: A @ x, rng.normal(size=3))
    assert np.abs(J - A).max() <= 1e-9 * np.abs(A).max()


def test_complex_linear_map(rng):
    A = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
    J = fd_jacobian(lambda x: A @ x, np.ones(2))
    assert np.iscomplexobj(J)
    assert np.allclose(J, A, rtol=1e-9)


def test_square_at_three():
    J = fd_jacobian(lambda x: x**2, np.array([3.0]), 1e-6)
    assert J[0, 0] == pytest.approx(6.0, abs=1e-8)


def test_quadratic_hessian_exact(rng):
    Q = rng.normal(size=(4, 4))
    Q = Q + Q.T
    H = fd_hessian_contract(lambda x: Q @ x, rng.normal(size=4))
    assert np.abs(H - Q).max() <= 1e-8


def test_zero_multiplier_gives_zero_hessian():
    H = fd_hessian_contract(lambda x: 0.0 * np.sin(x), np.ones(3))
    assert not H.any()


def test_complex_contraction_rejected():
    with pytest.raises(TypeError):
        fd_hessian_contract(lambda x: 1j * x, np.ones(2))


def test_compare_identical():
    A = np.arange(6.0).reshape(2, 3)
    r = compare(sp.csr_matrix(A), A, 1e-6, name="same")
    assert r.passed and r.maxRelErr == 0.0 and r.blockName == "same"


def test_compare_flags_worst_entry(rng):
    N = rng.uniform(0.5, 1.0, size=(3, 4))
    A = N.copy()
    A[2, 1] += 1e-3
    r = compare(A, N, 1e-6, atol=1e-10)
    assert not r.passed
    assert r.worstIndex == (2, 1)
    assert r.maxAbsErr == pytest.approx(1e-3)


def test_compare_empty_passes():
    assert compare(sp.csr_matrix((4, 0)), np.zeros((4, 0)), 1e-6).passed


def test_compare_absolute_floor():
    assert compare(np.array([[1e-12]]), np.array([[0.0]]), 1e-9, atol=1e-10).passed


def test_compare_shape_mismatch():
    with pytest.raises(ValueError):
        compare(np.zeros((2, 2)), np.zeros((2, 3)), 1e-6)


def test_report_dict_uses_pass_key():
    d = compare(np.eye(2), np.eye(2), 1e-6).to_dict()
    assert d["pass"] is True and "pass_" not in d


@pytest.mark.parametrize("step", [0.0, -1e-6])
def test_nonpositive_step_rejected(step):
    with pytest.raises(ValueError):
        fd_jacobian(np.sin, np.ones(2), step)


def test_nonfinite_probe_raises():
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        fd_jacobian(np.log, np.array([1e-7]), 1e-6)


@pytest.mark.parametrize("f, df", [
    (lambda x: x**3 - 2 * x, lambda x: 3 * x**2 - 2),
    (np.sin, np.cos),
    (lambda x: np.cos(2 * x) * np.exp(x / 3), lambda x: np.exp(x / 3) * (np.cos(2 * x) / 3 - 2 * np.sin(2 * x))),
])
def test_self_test_known_derivatives(f, df):
    x = np.linspace(-1.3, 1.7, 7)
    J = fd_jacobian(f, x, 1e-6)
    exact = np.diag(df(x))
    assert np.abs(J - exact).max() / np.abs(exact).max() <= 1e-7


@pytest.mark.parametrize("step", [1e-2, 1e-3, 1e-4])
def test_step_halving_does_not_blow_up(step):
    x = np.linspace(-1.0, 1.0, 5)
    exact = np.diag(np.cos(x) * np.exp(np.sin(x)))
    f = lambda z: np.exp(np.sin(z))
    e1 = np.abs(fd_jacobian(f, x, step) - exact).max()
    e2 = np.abs(fd_jacobian(f, x, step / 2) - exact).max()
    assert e2 <= 4 * e1
