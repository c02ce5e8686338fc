import dataclasses

import numpy as np
import pytest

from kylebridge import (
    CostSpec, gaussian_closed_form,
    insider_strategy_gaussian, value_of_information,
    value_of_information_quadrature, SweepConfig, eps_sweep,
)
from conftest import EPS, LAM, ENTROPY


def test_strategy_closed_form():
    got = insider_strategy_gaussian(EPS, 0.3, 1.2, -0.4)
    want = LAM * (1.2 - LAM * (-0.4)) / (1.0 - 0.3 * LAM * LAM)
    assert abs(got - want) < 1e-15
    # linear in the state pair
    t = 0.45
    a = insider_strategy_gaussian(EPS, t, 2.0, 1.0)
    b = insider_strategy_gaussian(EPS, t, 0.5, -0.3)
    ab = insider_strategy_gaussian(EPS, t, 2.5, 0.7)
    assert abs(ab - a - b) < 1e-12
    assert abs(insider_strategy_gaussian(EPS, t, 4.0, 2.0) - 2 * a) < 1e-12
    # broadcasting
    ys = np.linspace(-1, 1, 5)
    out = insider_strategy_gaussian(EPS, 0.2, 1.0, ys)
    assert out.shape == ys.shape
    for bad_t in (1.0, 1.3, -0.2):
        with pytest.raises(ValueError):
            insider_strategy_gaussian(EPS, bad_t, 1.0, 0.0)


def test_strategy_bridges_to_classical():
    # lam -> 1 turns the demand rate into the Brownian bridge pull
    for t, z1, y in [(0.0, 1.0, 0.0), (0.5, -2.0, 1.0), (0.9, 0.3, 0.2)]:
        got = insider_strategy_gaussian(1e-8, t, z1, y)
        assert abs(got - (z1 - y) / (1.0 - t)) < 1e-6


def test_value_closed_form():
    assert abs(value_of_information(0.5) - 0.545622995877613) < 1e-14
    assert abs(value_of_information(0.01) - 0.971961649096101) < 1e-14
    assert abs(value_of_information(1e-9) - 1.0) < 1e-7
    vals = [value_of_information(e) for e in (2.0, 1.0, 0.5, 0.1, 0.01)]
    assert np.all(np.diff(vals) > 0)  # approaches 1 from below as eps drops


def test_value_quadrature_matches_closed_form(sol_free):
    v = value_of_information_quadrature(sol_free)
    assert abs(v - value_of_information(EPS)) < 1e-8
    # invariant under the shared gauge shift
    shifted = dataclasses.replace(sol_free, phi=sol_free.phi + 1.3,
                                  zeta=sol_free.zeta - 1.3)
    assert abs(value_of_information_quadrature(shifted) - v) < 1e-12
    bad = dataclasses.replace(sol_free,
                              cost=CostSpec(kind="custom", c=lambda z, y: z))
    with pytest.raises(ValueError):
        value_of_information_quadrature(bad)


def test_sweep_columns_and_oracles():
    cfg = SweepConfig(n_nodes=401, tol=1e-9, paths=0, gap_t=4, gap_x=7)
    res = eps_sweep([1.0, 0.5], cfg)
    assert res.eps_list == [1.0, 0.5]
    row = res.row(0.5)
    # lam and value go through the same closed forms, so they are exact
    assert row.lam == gaussian_closed_form(0.5).lam
    assert row.value == value_of_information(0.5)
    assert row.converged and row.residual < 1e-9
    assert abs(row.entropy - ENTROPY) < 1e-5
    assert np.isnan(row.corr_sim)
    assert row.corr_theory == row.lam
    # the regularized drift approaches the bridge pull as eps falls
    assert res.row(1.0).drift_gap > row.drift_gap > 0.0
    tab = res.table()
    assert len(tab) == 2 and len(tab[0]) == len(res.COLUMNS)
    with pytest.raises(KeyError):
        res.row(2.0)


def test_sweep_with_simulation():
    cfg = SweepConfig(n_nodes=801, tol=1e-9, paths=4000, steps=500, seed=2,
                      gap_t=3, gap_x=5)
    res = eps_sweep([0.5], cfg)
    row = res.row(0.5)
    assert abs(row.corr_sim - row.corr_theory) < 0.025


def test_sweep_input_validation():
    with pytest.raises(ValueError, match="empty"):
        eps_sweep([])
    with pytest.raises(ValueError, match="decreasing"):
        eps_sweep([0.5, 1.0])
    with pytest.raises(ValueError, match="positive"):
        eps_sweep([1.0, -0.5])


def test_sweep_keeps_going_after_nonconvergence():
    cfg = SweepConfig(n_nodes=401, tol=1e-9, max_iter=60, paths=0,
                      gap_t=3, gap_x=5)
    res = eps_sweep([0.5, 0.01], cfg)
    good, bad = res.row(0.5), res.row(0.01)
    assert good.converged and np.isfinite(good.entropy)
    assert not bad.converged
    assert np.isnan(bad.entropy) and np.isnan(bad.drift_gap)
    assert bad.iterations == 60
    # closed-form columns survive the failed solve
    assert abs(bad.lam - gaussian_closed_form(0.01).lam) < 1e-15
    assert abs(bad.value - value_of_information(0.01)) < 1e-15
