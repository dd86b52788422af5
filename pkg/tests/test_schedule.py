"""Schedule-table algebra: exact chain consistency, posterior oracles, ratios."""

import csv
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sediff.schedule import (
    ScheduleConfig,
    ScheduleError,
    _derive_from_beta_and_m,
    anneal_ratios,
    build_schedule,
    derive_reverse_coeffs,
)


@pytest.fixture(scope="module")
def table():
    return build_schedule(ScheduleConfig())


def _marginal_coeffs(table):
    a = np.sqrt(table.alpha_bar) * (1.0 - table.m)
    b = np.sqrt(table.alpha_bar) * table.m
    return a, b


class TestBuildSchedule:
    def test_beta_endpoints(self, table):
        assert table.beta[1] == pytest.approx(1e-4, rel=0, abs=0)
        assert table.beta[50] == pytest.approx(0.035, rel=0, abs=0)

    def test_beta_midpoint_linear(self, table):
        expected = 1e-4 + 24 * (0.035 - 1e-4) / 49
        assert table.beta[25] == pytest.approx(expected, rel=1e-15)

    def test_m1_and_dbar1_against_extended_precision(self, table):
        # Independent oracle: evaluate m_1 and delta_bar_1 with 50-digit
        # decimal arithmetic straight from their defining formulas.
        getcontext().prec = 50
        abar1 = Decimal(1) - Decimal("1e-4")
        sqrt_abar1 = abar1.sqrt()
        m1 = ((Decimal(1) - abar1) / sqrt_abar1).sqrt()
        dbar1 = Decimal(1) - (Decimal(1) + m1 * m1) * abar1
        assert table.m[1] == pytest.approx(float(m1), rel=1e-12)
        assert table.delta_bar[1] == pytest.approx(float(dbar1), rel=1e-10)
        # Magnitudes worth pinning: m_1 ~ 0.01, delta_bar_1 ~ 5.0e-9.
        assert table.m[1] == pytest.approx(0.01, rel=1e-4)
        assert table.delta_bar[1] == pytest.approx(5.000125e-9, rel=1e-5)

    def test_rejects_bad_configs(self):
        with pytest.raises(ScheduleError):
            build_schedule(ScheduleConfig(num_steps=1))
        with pytest.raises(ScheduleError):
            build_schedule(ScheduleConfig(beta_start=0.0))
        with pytest.raises(ScheduleError):
            build_schedule(ScheduleConfig(beta_start=0.5, beta_end=0.2))
        with pytest.raises(ScheduleError):
            build_schedule(ScheduleConfig(beta_end=1.0))
        with pytest.raises(ScheduleError):
            build_schedule(ScheduleConfig(t0=51))
        with pytest.raises(ScheduleError):
            build_schedule(ScheduleConfig(r=1.5))

    def test_monotonicity_invariants(self, table):
        assert np.all(np.diff(table.alpha_bar[1:]) < 0)
        assert np.all((table.alpha_bar[1:] > 0) & (table.alpha_bar[1:] < 1))
        assert np.all(np.diff(table.m[1:]) > 0)
        assert np.all(table.delta_bar[1:] >= 0)
        assert np.all(table.posterior_var[1:] >= 0)
        assert np.all(table.posterior_var[1:] <= table.delta_bar[1:] + 1e-15)
        y_coeff = table.m * np.sqrt(table.alpha_bar)
        assert np.all(y_coeff >= 0)

    def test_table_is_immutable(self, table):
        with pytest.raises(ValueError):
            table.beta[3] = 0.5

    def test_csv_dump(self, table, tmp_path):
        path = tmp_path / "schedule.csv"
        table.to_csv(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "beta", "alpha_bar", "m", "delta_bar", "posterior_var"]
        assert len(rows) == 51
        assert float(rows[1][1]) == 1e-4


class TestChainConsistency:
    """Composing the derived transition with the t-1 marginal must reproduce
    the t marginal exactly, per acceptance tolerance 1e-10."""

    def test_means_and_variances(self, table):
        a, b = _marginal_coeffs(table)
        c, d = table.trans_coeff, table.trans_drift
        for t in range(1, table.num_steps + 1):
            assert a[t] == pytest.approx(c[t] * a[t - 1], rel=1e-10)
            assert b[t] == pytest.approx(c[t] * b[t - 1] + d[t], rel=1e-10, abs=1e-14)
            var = c[t] ** 2 * table.delta_bar[t - 1] + table.trans_var[t]
            assert var == pytest.approx(table.delta_bar[t], rel=1e-10, abs=1e-18)

    def test_runs_fast(self, table):
        # Criterion demands < 1 s for the full consistency sweep; building
        # the table plus both sweeps is well under that.
        import time

        start = time.perf_counter()
        fresh = build_schedule(ScheduleConfig())
        a, b = _marginal_coeffs(fresh)
        for t in range(1, fresh.num_steps + 1):
            assert a[t] == pytest.approx(fresh.trans_coeff[t] * a[t - 1], rel=1e-10)
        assert time.perf_counter() - start < 1.0


class TestPosterior:
    def test_matches_two_by_two_gaussian_oracle(self, table):
        """Explicit joint-Gaussian conditioning, scalar case, every t."""
        a, b = _marginal_coeffs(table)
        x0, y, xt = 0.37, -0.81, 0.52
        for t in range(1, table.num_steps + 1):
            mu1 = a[t - 1] * x0 + b[t - 1] * y
            mu2 = table.trans_coeff[t] * mu1 + table.trans_drift[t] * y
            var1 = table.delta_bar[t - 1]
            cov = table.trans_coeff[t] * var1
            var2 = table.trans_coeff[t] ** 2 * var1 + table.trans_var[t]
            post_mean = mu1 + cov / var2 * (xt - mu2)
            post_var = var1 - cov**2 / var2

            cx, cy, ce, pv = derive_reverse_coeffs(table, t)
            target = (xt - np.sqrt(table.alpha_bar[t]) * x0) / table.norm[t]
            mean_impl = cx * xt + cy * y + ce * target
            assert mean_impl == pytest.approx(post_mean, rel=1e-10)
            assert pv == pytest.approx(post_var, rel=1e-10, abs=1e-18)

    def test_posterior_mean_marginalization_identity(self, table):
        """E over q(x_t|x0,y) of the posterior mean equals the x_{t-1} marginal mean."""
        a, b = _marginal_coeffs(table)
        x0, y = 1.3, -0.4
        for t in range(1, table.num_steps + 1):
            cx, cy, ce, _ = derive_reverse_coeffs(table, t)
            marginal_mean_t = a[t] * x0 + b[t] * y
            mean_target = b[t] * (y - x0) / table.norm[t]
            lhs = cx * marginal_mean_t + cy * y + ce * mean_target
            rhs = a[t - 1] * x0 + b[t - 1] * y
            assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-14)

    def test_law_of_total_variance(self, table):
        for t in range(1, table.num_steps + 1):
            cx, _, ce, pv = derive_reverse_coeffs(table, t)
            slope = cx + ce / table.norm[t]
            total = pv + slope**2 * table.delta_bar[t]
            assert total == pytest.approx(table.delta_bar[t - 1], rel=1e-10, abs=1e-18)

    def test_matches_printed_recursion_form(self, table):
        """posterior_var equals dbar_{t-1} - ((1-m_t)/(1-m_{t-1}))^2 a_t dbar_{t-1}^2/dbar_t."""
        for t in range(2, table.num_steps + 1):
            ratio = (1.0 - table.m[t]) / (1.0 - table.m[t - 1])
            printed = table.delta_bar[t - 1] - ratio**2 * table.alpha[t] \
                * table.delta_bar[t - 1] ** 2 / table.delta_bar[t]
            assert table.posterior_var[t] == pytest.approx(printed, rel=1e-10)

    def test_reduces_to_vanilla_ddpm_when_m_is_zero(self):
        """With m forced to 0 the coefficients must be the textbook DDPM posterior."""
        config = ScheduleConfig()
        T = config.num_steps
        beta = np.zeros(T + 1)
        beta[1:] = np.linspace(config.beta_start, config.beta_end, T)
        table = _derive_from_beta_and_m(config, beta, np.zeros(T + 1))
        for t in range(2, T + 1):
            cx, cy, ce, pv = derive_reverse_coeffs(table, t)
            alpha_t = table.alpha[t]
            abar_t = table.alpha_bar[t]
            abar_prev = table.alpha_bar[t - 1]
            assert cy == pytest.approx(0.0, abs=1e-15)
            assert cx == pytest.approx(1.0 / np.sqrt(alpha_t), rel=1e-12)
            assert ce == pytest.approx(
                -(1.0 - alpha_t) / (np.sqrt(alpha_t) * np.sqrt(1.0 - abar_t)), rel=1e-12
            )
            assert pv == pytest.approx(
                (1.0 - abar_prev) / (1.0 - abar_t) * (1.0 - alpha_t), rel=1e-12
            )

    def test_out_of_range_t(self, table):
        with pytest.raises(ScheduleError):
            derive_reverse_coeffs(table, 0)
        with pytest.raises(ScheduleError):
            derive_reverse_coeffs(table, 51)


class TestAnnealRatios:
    def test_paper_example_exact(self):
        assert anneal_ratios(5, 0.1) == [0.1, 0.08, 0.06, 0.04, 0.02]

    def test_single_step(self):
        assert anneal_ratios(1, 0.2) == [0.2]

    def test_linear_formula(self):
        assert anneal_ratios(4, 0.2) == [0.2, 0.15, 0.10, 0.05]

    def test_rejects_bad_inputs(self):
        with pytest.raises(ScheduleError):
            anneal_ratios(0, 0.1)
        with pytest.raises(ScheduleError):
            anneal_ratios(3, 1.2)

    @given(t0=st.integers(min_value=1, max_value=40),
           r=st.floats(min_value=1e-9, max_value=1.0, allow_nan=False))
    @settings(max_examples=200, deadline=None)
    def test_sum_and_monotonicity_properties(self, t0, r):
        ratios = anneal_ratios(t0, r)
        assert len(ratios) == t0
        assert sum(ratios) == pytest.approx(r * (t0 + 1) / 2, rel=1e-9, abs=1e-12)
        if t0 > 1:
            assert all(x > y for x, y in zip(ratios, ratios[1:]))

    def test_zero_ratio_allowed(self):
        assert anneal_ratios(3, 0.0) == [0.0, 0.0, 0.0]


@given(
    num_steps=st.integers(min_value=2, max_value=80),
    beta_start=st.floats(min_value=1e-6, max_value=5e-3),
    spread=st.floats(min_value=1.0, max_value=60.0),
)
@settings(max_examples=60, deadline=None)
def test_schedule_invariants_hold_for_random_configs(num_steps, beta_start, spread):
    config = ScheduleConfig(
        num_steps=num_steps, beta_start=beta_start,
        beta_end=min(beta_start * spread, 0.08), t0=0, r=0.0,
    )
    try:
        table = build_schedule(config)
    except ScheduleError:
        # Long/hot schedules can push m past 1; rejection is the contract.
        return
    assert np.all(np.diff(table.alpha_bar[1:]) < 0)
    assert np.all(table.delta_bar[1:] >= 0)
    assert np.all(table.trans_var[1:] >= 0)
    a, b = _marginal_coeffs(table)
    comp_var = table.trans_coeff[1:] ** 2 * table.delta_bar[:-1] + table.trans_var[1:]
    np.testing.assert_allclose(comp_var, table.delta_bar[1:], rtol=1e-10, atol=1e-18)
    np.testing.assert_allclose(table.trans_coeff[1:] * a[:-1], a[1:], rtol=1e-10)
