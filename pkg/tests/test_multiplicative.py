import math

import numpy as np
import pytest

from splap.driver import InitSpec, NoiseSpec, SimConfig, solve_additive
from splap.grid import Grid
from splap.multiplicative import (
    AlphaTooSmall,
    PicardConfig,
    PicardNonConvergence,
    apply_pi,
    fitted_ratio,
    picard_solve,
    weighted_distance,
)


def base(**kw):
    args = dict(
        dim=1, n=16, p=3.0, T=1.0, steps=10,
        noise=NoiseSpec("multiplicative", modes=5, amplitude=0.5),
        init=InitSpec("random_smooth"), keep_fields=True,
    )  # fmt: skip
    args.update(kw)
    return SimConfig(**args)


def test_weighted_distance_basic():
    rng = np.random.default_rng(0)
    U = rng.standard_normal((5, 8))
    g = Grid(1, 8)
    assert weighted_distance(U, U, 2.0, tau=0.1, grid=g) == 0.0
    V = rng.standard_normal((5, 8))
    plain = 0.1 * sum(g.norm_l2(U[k] - V[k]) ** 2 for k in range(4))
    assert weighted_distance(U, V, 0.0, tau=0.1, grid=g) == pytest.approx(plain, rel=1e-13)


def test_weighted_distance_two_step_hand_example():
    g = Grid(1, 4, half_width=0.5)  # unit volume, so a constant c has L2 norm |c|
    U = np.zeros((3, 4))
    V = np.stack([np.full(4, 1.0), np.full(4, 2.0), np.full(4, 7.0)])
    expect = 0.5 * (1.0 + math.exp(-0.5) * 4.0)
    assert weighted_distance(U, V, 1.0, tau=0.5, grid=g) == pytest.approx(expect, rel=1e-14)


def test_weighted_distance_shape_mismatch():
    with pytest.raises(ValueError):
        weighted_distance(np.zeros((3, 4)), np.zeros((4, 4)), 1.0, tau=0.1)
    with pytest.raises(ValueError):
        weighted_distance(np.zeros((3, 4)), np.zeros((3, 4)), 1.0)


def test_weight_norm_equivalence():
    rng = np.random.default_rng(2)
    g = Grid(1, 8)
    alpha, tau, N = 3.0, 0.05, 20
    for _ in range(10):
        U, V = rng.standard_normal((2, N + 1, 8))
        w = weighted_distance(U, V, alpha, tau=tau, grid=g)
        plain = weighted_distance(U, V, 0.0, tau=tau, grid=g)
        assert math.exp(-alpha * N * tau) * plain <= w <= plain


def test_alpha_must_exceed_L():
    b = base()
    L = b.multiplicative_noise().L
    with pytest.raises(AlphaTooSmall):
        PicardConfig.from_sim(b, alpha=L)
    with pytest.raises(AlphaTooSmall):
        PicardConfig.from_sim(b, alpha=0.5 * L)
    pc = PicardConfig.from_sim(b)
    assert pc.weight == pytest.approx(2 * L)


def test_viscosity_combination_rejected():
    with pytest.raises(ValueError):
        PicardConfig.from_sim(base(eps_viscosity=0.1))


def test_zero_profile_fixed_after_one_iteration():
    b = base(noise=NoiseSpec("multiplicative", modes=5, profile="zero"))
    pc = PicardConfig.from_sim(b)
    path = b.sample_path(0)
    tr, trace = picard_solve(pc, path)
    assert len(trace.distances) == 1 and trace.distances[0] == 0.0
    quiet = solve_additive(b.replace(noise=NoiseSpec("none", modes=5)), path, keep_fields=True)
    np.testing.assert_array_equal(tr.fields, quiet.fields)


def test_geometric_decay_and_fixed_point():
    b = base()
    pc = PicardConfig.from_sim(b, picard_tol=1e-6)
    ratios = []
    for i in range(5):
        path = b.sample_path(i)
        tr, trace = picard_solve(pc, path)
        ratios.append(fitted_ratio(trace.distances, floor=(100 * b.tol) ** 2))
        assert all(d >= 0 for d in trace.distances)
        again = apply_pi(pc, path, tr, u0=tr.initial)
        assert math.sqrt(weighted_distance(again, tr, pc.weight)) <= 2 * pc.picard_tol
        assert [r[0] for r in trace.rows()] == list(range(1, len(trace.distances) + 1))
    assert np.median(ratios) <= pc.L / pc.weight + 0.1


def test_picard_nonconvergence():
    b = base(noise=NoiseSpec("multiplicative", modes=5, amplitude=2.0))
    pc = PicardConfig.from_sim(b, picard_tol=1e-12, picard_max_iter=1)
    with pytest.raises(PicardNonConvergence) as exc:
        picard_solve(pc, b.sample_path(0))
    assert len(exc.value.trace.distances) == 1


def test_apply_pi_level_count():
    b = base()
    pc = PicardConfig.from_sim(b)
    with pytest.raises(ValueError):
        apply_pi(pc, b.sample_path(0), np.zeros((3, 16)))


def test_fitted_ratio():
    d = 3.0 * 0.25 ** np.arange(6)
    assert fitted_ratio(d) == pytest.approx(0.25, rel=1e-12)
    assert fitted_ratio(list(d) + [0.0, 0.0], floor=1e-20) == pytest.approx(0.25, rel=1e-12)
    assert math.isnan(fitted_ratio([1.0]))
