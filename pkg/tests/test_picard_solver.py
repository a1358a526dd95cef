import math
import warnings

import numpy as np
import pytest

from fracbsde.catalog import get_entry
from fracbsde.linear_fbsde import apriori_constant
from fracbsde.picard_solver import (
    AffineDrift,
    AffineG,
    ContractionWarning,
    InitialPair,
    ProblemSpec,
    SolverConfig,
    SpecViolationError,
    TerminalPoly,
    _guard,
    contraction_lhs,
    solve_nonlinear,
)
from fracbsde.stochastic_core import RegressionBasis, make_grid, sample_paths


def test_contraction_lhs_hand_value():
    # 8 (0.1^1.5/0.5625 + 0.2^1.5/0.375) 0.1
    hand = 8 * (0.1**1.5 / 0.75**2 + 0.2**1.5 / (0.75 * 0.5)) * 0.1
    assert contraction_lhs(1, 1, 0.75, 0.1) == pytest.approx(hand, rel=1e-14)
    assert abs(contraction_lhs(1, 1, 0.75, 0.1) - 0.2358) <= 1e-4


def test_contraction_lhs_scaling():
    base = contraction_lhs(1.0, 1.0, 0.8, 0.5)
    assert contraction_lhs(3.0, 2.0, 0.8, 0.5) == pytest.approx(12 * base)
    assert base == pytest.approx(8 * apriori_constant(0.8, 0.5) * 0.5)
    with pytest.raises(ValueError):
        contraction_lhs(1, 1, 0.5, 1.0)


def _spec(**kw):
    args = dict(alpha=0.75, T=0.25, n=1, m=1, A=[[0.0]], f=AffineDrift.build(1, 1), g=AffineG.build(1, 1),
                xi=TerminalPoly.build(1, 1, c1=[[1.0]]))
    args.update(kw)
    return ProblemSpec(**args)


def test_lipschitz_from_coefficients():
    s = _spec(f=AffineDrift.build(1, 1, F1=[[0.3]], F2=[[0.4]]), g=AffineG.build(1, 1, G1=[[0.2]]))
    assert s.c == pytest.approx(0.25)
    with pytest.raises(ValueError):
        _spec(f=AffineDrift.build(1, 1, F1=[[0.5]]), lipschitz_c=0.1)
    assert _spec(f=AffineDrift.build(1, 1, F1=[[0.5]]), lipschitz_c=1.0).c == 1.0


def test_spec_validation():
    with pytest.raises(ValueError):
        _spec(alpha=1.0)
    with pytest.raises(ValueError):
        _spec(T=0.0)
    with pytest.raises(ValueError):
        _spec(A=[[1.0, 0.0]])
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=0)


def test_terminal_poly_sample():
    ens = sample_paths(make_grid(1.0, 4), 2, 10, seed=0)
    tp = TerminalPoly.build(1, 2, c0=[1.0], c1=[[2.0, 0.0]], c2=[[0.0, 3.0]])
    wT = ens.values[:, -1]
    assert np.allclose(tp.sample(ens)[:, 0], 1 + 2 * wT[:, 0] + 3 * wT[:, 1] ** 2)


def test_guard_rejects_runaway_drift():
    s = _spec(f=AffineDrift.build(1, 1, F1=[[0.1]]))
    x = np.ones((4, 3, 1))
    _guard(s, 0.1 * x, x, 0.0)
    with pytest.raises(SpecViolationError):
        _guard(s, 100 * x, x, 0.0)


@pytest.fixture(scope="module")
def affine_run(ens64, basis2):
    entry = get_entry("affine-small-T")
    ens = sample_paths(make_grid(entry.problem.T, 64), 1, 10_000, seed=7)
    pair, rep = solve_nonlinear(entry.problem, ens, basis2, SolverConfig(tolerance=1e-3))
    return entry, ens, pair, rep


def test_affine_small_t_converges(affine_run):
    entry, ens, pair, rep = affine_run
    assert rep.contraction_ok
    assert rep.converged and rep.iterations <= 8
    for r in rep.ratios[1:]:
        assert r <= rep.contraction_lhs + 0.1
    assert entry.reference.error(pair.x, ens) <= entry.reference.tolerance


def test_report_dict(affine_run):
    _, _, _, rep = affine_run
    d = rep.to_dict()
    assert d["iterations"] == len(d["distances"])
    assert d["apriori"]["satisfied"]
    assert d["residual"] < 1e-2


def test_zero_initial_pair_same_fixed_point(affine_run, basis2):
    entry, ens, pair, _ = affine_run
    p2, rep2 = solve_nonlinear(entry.problem, ens, basis2, SolverConfig(tolerance=1e-6, initial_pair=InitialPair.ZERO))
    assert rep2.converged
    assert np.sqrt(np.mean((p2.x - pair.x) ** 2)) < 1e-2


def test_nonconvergence_flagged(affine_run, basis2):
    entry, ens, _, _ = affine_run
    _, rep = solve_nonlinear(entry.problem, ens, basis2, SolverConfig(max_iterations=1, tolerance=1e-12))
    assert not rep.converged and rep.iterations == 1


def test_trivial_exact():
    entry = get_entry("trivial")
    ens = sample_paths(make_grid(1.0, 16), 1, 500, seed=1)
    pair, rep = solve_nonlinear(entry.problem, ens, RegressionBasis(2))
    assert np.all(pair.x == 2.0)
    assert np.all(pair.y.coef == 0.0)
    assert rep.converged


def test_y_dependent_drift_runs(small_ens):
    spec = ProblemSpec(
        0.75, 1.0, 1, 1, [[0.0]],
        AffineDrift.build(1, 1, F1=[[0.05]], F2=[[0.05]]), AffineG.build(1, 1, G1=[[0.05]]),
        TerminalPoly.build(1, 1, c1=[[1.0]]),
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ContractionWarning)
        pair, rep = solve_nonlinear(spec, small_ens, RegressionBasis(2), SolverConfig(tolerance=1e-6))
    assert rep.converged
    assert np.all(np.isfinite(pair.x))


def test_contraction_warning(small_ens):
    spec = _spec(T=1.0, f=AffineDrift.build(1, 1, F1=[[2.0]]))
    with pytest.warns(ContractionWarning):
        _, rep = solve_nonlinear(spec, small_ens, RegressionBasis(1), SolverConfig(max_iterations=2))
    assert not rep.contraction_ok


def test_multidimensional(rng):
    ens = sample_paths(make_grid(0.2, 8), 2, 1000, seed=4)
    A = rng.uniform(-0.3, 0.3, (2, 2))
    spec = ProblemSpec(
        0.8, 0.2, 2, 2, A, AffineDrift.build(2, 2, F0=[0.1, -0.1], F1=0.2 * np.eye(2)),
        AffineG.build(2, 2, G0=[[0.1, 0.0], [0.0, 0.1]]), TerminalPoly.build(2, 2, c1=np.eye(2)),
    )
    pair, rep = solve_nonlinear(spec, ens, RegressionBasis(2), SolverConfig(tolerance=1e-8))
    assert rep.converged
    assert pair.x.shape == (1000, 9, 2)
    assert pair.y.shape == (2, 2)
