import math

import numpy as np
import pytest

from oracles import linear_step
from splap.driver import (
    InitSpec,
    NoiseSpec,
    SimConfig,
    check_energy_per_step,
    increment_sum,
    interpolant_gap,
    interpolants,
    solve_additive,
)
from splap.noise import AdditiveNoise, NoisePath
from splap.step import NonConvergence

QUIET = NoiseSpec(kind="none")


def cfg1(**kw):
    base = dict(dim=1, n=32, p=2.0, T=1.0, steps=10, init=InitSpec("random_smooth"))
    base.update(kw)
    return SimConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        cfg1(T=0.0)
    with pytest.raises(ValueError):
        cfg1(steps=0)
    with pytest.raises(ValueError):
        cfg1(p=1.0)
    with pytest.raises(ValueError):
        NoiseSpec(kind="pink")
    with pytest.raises(ValueError):
        InitSpec(kind="spiky")
    assert cfg1().tau == pytest.approx(0.1)
    assert cfg1().modes == 31  # all modes below Nyquist at n = 32


def test_initial_fields():
    c = cfg1()
    a, b = c.initial_field(0), c.initial_field(0)
    assert np.array_equal(a, b) and not np.array_equal(a, c.initial_field(1))
    bump = cfg1(init=InitSpec("gaussian_bump", 2.0, 0.5)).initial_field()
    assert bump[17] == pytest.approx(2.0 * math.exp(-0.5 * c.grid.h**2 / 0.25))
    assert np.argmax(bump) == 16 and bump[16] == pytest.approx(2.0)
    assert np.all(cfg1(init=InitSpec()).initial_field() == 0)


def test_zero_noise_zero_init_stays_zero():
    c = cfg1(noise=QUIET, init=InitSpec(), p=1.5)
    tr = solve_additive(c, c.sample_path())
    assert np.all(tr.final == 0) and np.all(tr.ledger["l2_sq"] == 0)
    assert increment_sum(tr) == 0.0


def test_zero_noise_p2_matches_heat_oracle():
    c = cfg1(noise=QUIET, keep_fields=True, tol=1e-12)
    tr = solve_additive(c, c.sample_path())
    u = tr.initial
    for k in range(1, c.steps + 1):
        u = linear_step(u, c.tau, c.grid.h)
        assert c.grid.norm_l2(tr.fields[k] - u) <= 1e-7 * c.grid.norm_l2(u)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_zero_noise_norm_decreases(p):
    c = cfg1(noise=QUIET, p=p)
    tr = solve_additive(c, c.sample_path())
    l2 = tr.ledger["l2_sq"]
    assert np.all(np.diff(l2) <= 1e-12)


def test_noise_enters_from_second_step():
    c = cfg1(init=InitSpec(), keep_fields=True)
    tr = solve_additive(c, c.sample_path())
    assert np.all(tr.fields[1] == 0) and np.any(tr.fields[2] != 0)


def test_two_step_increment_sum_direct():
    c = cfg1(init=InitSpec(), steps=2, T=0.2, noise=NoiseSpec(modes=3), tol=1e-12, keep_fields=True)
    inc = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    path = NoisePath(0, 0, 0.2, inc)
    noise = c.additive_noise()
    tr = solve_additive(c, path, noise=noise)
    xi = noise.phi[0].sum(axis=0)
    u2 = linear_step(xi, 0.1, c.grid.h)
    assert increment_sum(tr) == pytest.approx(c.grid.norm_l2(u2) ** 2, rel=1e-9)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_shared_path_nonexpansive(p):
    c = cfg1(p=p, steps=20)
    other = cfg1(p=p, steps=20, seed=99)
    path = c.sample_path(0)
    a = solve_additive(c, path, keep_fields=True)
    b = solve_additive(c, path, u0=other.initial_field(0), keep_fields=True)
    gaps = [c.grid.norm_l2(x - y) for x, y in zip(a.fields, b.fields)]
    sup_f = max(a.ledger["f_norm"].max(), b.ledger["f_norm"].max())
    slack = 20 * c.tol * (1 + sup_f)
    assert all(g1 <= g0 + slack for g0, g1 in zip(gaps, gaps[1:]))


def test_interpolants():
    c = cfg1(keep_fields=True, steps=4)
    tr = solve_additive(c, c.sample_path())
    U, tau = tr.fields, tr.tau
    r, l, hat = interpolants(tr, 2 * tau)
    np.testing.assert_array_equal(hat, U[2])
    np.testing.assert_array_equal(r, U[3])
    np.testing.assert_array_equal(l, U[1])
    r, l, hat = interpolants(tr, 2.5 * tau)
    np.testing.assert_allclose(hat, 0.5 * (U[2] + U[3]), atol=1e-15)
    np.testing.assert_array_equal(r, U[3])
    np.testing.assert_array_equal(l, U[2])
    r, l, hat = interpolants(tr, 0.0)
    np.testing.assert_array_equal(l, U[0])
    np.testing.assert_array_equal(r, U[1])
    r, l, hat = interpolants(tr, c.T)
    np.testing.assert_array_equal(r, U[4])
    np.testing.assert_array_equal(hat, U[4])
    np.testing.assert_array_equal(l, U[3])
    with pytest.raises(ValueError):
        interpolants(tr, c.T + 0.1)


def test_identity_zero_noise_balances():
    c = cfg1(noise=QUIET, p=3.0)
    tr = solve_additive(c, c.sample_path())
    chk = check_energy_per_step(tr)
    assert chk.identity_ok
    np.testing.assert_allclose(tr.ledger["pair_noise"], 0.0)
    assert np.all(chk.lhs <= chk.identity_bound)


def test_identity_four_point_hand_computation():
    c = SimConfig(dim=1, n=4, p=2.0, T=0.5, steps=1, noise=QUIET, tol=1e-13)
    u0 = np.array([1.0, -2.0, 0.5, 0.0])
    tr = solve_additive(c, c.sample_path(), u0=u0, keep_fields=True)
    u1 = tr.fields[1]
    h, tau = c.grid.h, c.tau
    pair = sum((u1[i] - u0[i]) * u1[i] for i in range(4)) * h
    grad_sq = sum(((u1[(i + 1) % 4] - u1[i]) / h) ** 2 for i in range(4)) * h
    assert pair + tau * grad_sq == pytest.approx(0.0, abs=1e-12)
    assert tr.ledger["pair_incr"][1] == pytest.approx(pair, rel=1e-12)
    assert tr.ledger["grad_pp"][1] == pytest.approx(grad_sq, rel=1e-12)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_identity_with_noise(p):
    c = cfg1(p=p)
    tr = solve_additive(c, c.sample_path(4))
    chk = check_energy_per_step(tr, c.additive_noise())
    assert chk.identity_ok
    assert chk.rhs[0] == 0.0 and chk.rhs[1] > 0


def test_ledger_finite_and_nonnegative():
    c = cfg1(p=1.5)
    tr = solve_additive(c, c.sample_path(2))
    for col in ("l2_sq", "grad_pp", "lp_pp", "incr_sq", "noise_sq", "f_norm"):
        assert np.all(np.isfinite(tr.ledger[col])) and np.all(tr.ledger[col] >= 0), col
    assert len(tr.rows()) == c.steps + 1


def test_interpolant_gap_shrinks():
    gaps = []
    for N in (10, 20, 40, 80):
        c = cfg1(steps=N, noise=QUIET)
        gaps.append(interpolant_gap(solve_additive(c, c.sample_path())))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_nonconvergence_carries_step():
    c = cfg1(p=4.0, max_iter=1, tol=1e-15, T=5.0)
    with pytest.raises(NonConvergence) as exc:
        solve_additive(c, c.sample_path())
    assert exc.value.step == 0


def test_path_mismatch():
    c = cfg1()
    with pytest.raises(ValueError):
        solve_additive(c, cfg1(steps=5).sample_path())
    with pytest.raises(ValueError):
        solve_additive(c, c.sample_path(), noise=AdditiveNoise.zero(cfg1(noise=NoiseSpec(modes=3)).basis))
