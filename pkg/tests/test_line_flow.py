from dataclasses import replace

import numpy as np
import pytest

from tapopf.admittance import TapState, system_at
from tapopf.case_model import to_case, to_internal
from tapopf.checks import line_flow_suite
from tapopf.fd_oracle import compare, fd_hessian_contract, fd_jacobian
from tapopf.line_flow import (FROM, TO, branch_currents, d2_currents, d2_currents_row_blocks,
                              d2_flow_constraints, d_currents, d_flow_constraints, flow_constraints)
from tapopf.randcase import random_case, random_complex, random_point
from tapopf.variables import GROUPS, VariableVector


def nominal_sys(m):
    return system_at(m, TapState.nominal(m))[1]


def case2_with_limit(m, imax):
    c = to_case(m)
    return replace(c, branches=(replace(c.branches[0], Imax=imax),))


def test_flat_voltage_carries_no_current(case2):
    If, It = branch_currents(np.ones(2), nominal_sys(case2))
    assert np.allclose(If, 0) and np.allclose(It, 0)


def test_two_bus_current_by_hand(case2):
    V = np.array([1.0, np.exp(-0.1j)])
    If, It = branch_currents(V, nominal_sys(case2))
    assert If[0] == pytest.approx(-10j * (1 - np.exp(-0.1j)))
    assert It[0] == pytest.approx(-If[0])


def test_tap_two_halves_transfer_term(case2):
    V = np.array([0.0, 1.0])      # isolates the Yft V_t contribution
    sys1 = nominal_sys(case2)
    sys2 = system_at(case2, TapState(np.array([2.0]), np.array([0.0])))[1]
    assert branch_currents(V, sys2)[0][0] == pytest.approx(0.5 * branch_currents(V, sys1)[0][0])


def test_generation_blocks_are_zero(case9, rng):
    d = d_currents(random_point(rng, case9), case9, FROM)
    assert d.dPg.count_nonzero() == 0 and d.dQg.count_nonzero() == 0


def test_tap_columns_touch_only_owning_branch(rng):
    m = to_internal(random_case(rng, nb=7, p_adjustable=1.0))
    x = random_point(rng, m)
    for which in (FROM, TO):
        d = d_currents(x, m, which)
        for B in (d.dTau, d.dTheta):
            rows, cols = B.nonzero()
            assert np.array_equal(rows, m.adj[cols])


def test_to_end_shift_derivative_by_hand():
    rng = np.random.default_rng(8)
    m = to_internal(random_case(rng, nb=2, p_adjustable=1.0))
    x = random_point(rng, m)
    x.theta[:] = 0.0
    Ytf = -m.ys[0] / x.tau[0]
    got = d_currents(x, m, TO).dTheta.toarray()[0, 0]
    assert got == pytest.approx(-1j * Ytf * x.V[m.f[0]])


def test_current_jacobian_matches_fd(rng):
    m = to_internal(random_case(rng, nb=4))
    x = random_point(rng, m)
    L = x.layout
    for which in (FROM, TO):
        def cur(z):
            y = VariableVector.unstack(z, L)
            tau, theta = y.full_taps(m)
            return branch_currents(y.V, system_at(m, TapState(tau, theta))[1])[0 if which is FROM else 1]

        J = fd_jacobian(cur, x.stack())
        for g, B in d_currents(x, m, which).blocks().items():
            assert compare(B, J[:, L.slice(g)], 1e-6).passed, (which, g)


def test_zero_multiplier_hessian(rng):
    m = to_internal(random_case(rng, nb=5))
    x = random_point(rng, m)
    for which in (FROM, TO):
        assert d2_currents(x, m, np.zeros(m.nl), which).to_matrix().count_nonzero() == 0


def test_current_hessian_matches_fd(rng):
    m = to_internal(random_case(rng, nb=4))
    x = random_point(rng, m)
    L = x.layout
    n = L.n
    mu = random_complex(rng, m.nl)
    for which in (FROM, TO):
        def grad(z):
            g = mu @ d_currents(VariableVector.unstack(z, L), m, which).stack()
            return np.r_[g.real, g.imag]

        H = fd_hessian_contract(grad, x.stack())
        blocks = d2_currents(x, m, mu, which)
        for part, num in (("re", H[:n]), ("im", H[n:])):
            full = np.abs(num).max()
            for a in GROUPS:
                for b in GROUPS:
                    B = blocks.block(a, b)
                    an = B.real if part == "re" else B.imag
                    # the Vm-Vm block of a current is identically zero
                    r = compare(an, num[L.slice(a), L.slice(b)], 5e-6,
                                scale=full if an.count_nonzero() == 0 else 0.0)
                    assert r.passed, (which, part, a, b, r)


def test_from_tau_tau_entry_by_hand():
    rng = np.random.default_rng(21)
    m = to_internal(random_case(rng, nb=2, p_adjustable=1.0))
    x = random_point(rng, m)
    x.tau[:] = 1.0
    mu = random_complex(rng, m.nl)
    V = x.V
    Yff = m.ys[0] + 0.5j * m.bc[0]
    Yft = -m.ys[0] * np.exp(1j * x.theta[0])
    expected = 6 * Yff * V[m.f[0]] * mu[0] + 2 * Yft * V[m.t[0]] * mu[0]
    got = d2_currents(x, m, mu, FROM).block("tau", "tau").toarray()[0, 0]
    assert got == pytest.approx(expected, rel=1e-12)


def test_current_transpose_identities(rng):
    for _ in range(5):
        m = to_internal(random_case(rng))
        x = random_point(rng, m)
        mu = random_complex(rng, m.nl)
        for which in (FROM, TO):
            H = d2_currents(x, m, mu, which)
            for key, direct in d2_currents_row_blocks(x, m, mu, which).items():
                ref = H.block(*key).toarray()
                err = np.abs(direct.toarray() - ref).max(initial=0.0)
                assert err <= 1e-12 * max(np.abs(ref).max(initial=0.0), 1e-300) or err == 0.0


def test_squared_limit_values(case2):
    x = VariableVector.from_model(case2)
    x.Va[:] = 0.0
    x.Vm[:] = 1.0
    lim = to_internal(case2_with_limit(case2, 1.0))
    e = flow_constraints(x, lim)
    assert e.hf == pytest.approx([-1.0])
    # operate exactly at the limit
    x.Va[1] = -2 * np.arcsin(0.05)      # |If| = 10 |1 - e^{j Va}| = 1
    e = flow_constraints(x, lim)
    assert abs(e.If[0]) == pytest.approx(1.0)
    assert e.hf == pytest.approx([0.0], abs=1e-12)


def test_two_bus_limit_from_current_example(case2):
    lim = to_internal(case2_with_limit(case2, 0.5))
    x = VariableVector.from_model(lim)
    x.Va[:] = [0.0, -0.1]
    x.Vm[:] = 1.0
    If = -10j * (1 - np.exp(-0.1j))
    assert flow_constraints(x, lim).hf[0] == pytest.approx(abs(If) ** 2 - 0.25)


def test_unconstrained_case_has_empty_jacobian(case2, rng):
    x = random_point(rng, case2)
    df, dt = d_flow_constraints(x, case2)
    assert df.stack().shape == (0, x.layout.n) and dt.stack().shape == (0, x.layout.n)
    assert d2_flow_constraints(x, case2, [], []).to_matrix().count_nonzero() == 0


def test_flow_jacobian_and_hessian_match_fd(rng):
    m = to_internal(random_case(rng, nb=5, p_limit=1.0))
    x = random_point(rng, m)
    L = x.layout
    nc = len(m.constrained)

    def h(z):
        e = flow_constraints(VariableVector.unstack(z, L), m)
        return np.r_[e.hf, e.ht]

    J = fd_jacobian(h, x.stack())
    df, dt = d_flow_constraints(x, m)
    assert compare(np.vstack([df.stack().toarray(), dt.stack().toarray()]), J, 1e-6).passed
    nu_f, nu_t = rng.normal(size=nc), rng.normal(size=nc)

    def gh(z):
        bf, bt = d_flow_constraints(VariableVector.unstack(z, L), m)
        return nu_f @ bf.stack() + nu_t @ bt.stack()

    H = fd_hessian_contract(gh, x.stack())
    assert compare(d2_flow_constraints(x, m, nu_f, nu_t).to_matrix(), H, 5e-6).passed


def test_line_flow_suite():
    res = line_flow_suite(seed=4, trials=6)
    assert res.passed, [r for r in res.reports if not r.passed]
    sections = {r.blockName.split(".")[0] for r in res.reports}
    assert sections == {"I_f", "I_t", "h_f", "h_t"}
