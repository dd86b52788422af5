"""Diffusion schedule: per-timestep constants for the noisy-signal-interpolating chain.

The forward process pulls the clean signal x0 toward the noisy signal y while
adding Gaussian noise:

    x_t = sqrt(abar_t) * ((1 - m_t) * x0 + m_t * y) + sqrt(dbar_t) * eps

with m_t = sqrt((1 - abar_t) / sqrt(abar_t)) and dbar_t = 1 - (1 + m_t^2) * abar_t.
Everything the sampler and trainer need (transition coefficients, posterior
variances, reverse-mean coefficients, annealed interpolation ratios) is derived
here once, in float64, and frozen into an immutable ScheduleTable.

All arrays are length T+1 and indexed by timestep t = 1..T; index 0 holds the
chain boundary (abar_0 = 1, m_0 = 0, dbar_0 = 0), which makes the t = 1 reverse
step fall out of the same algebra as every other step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

# dbar_t is mathematically >= 0; anything below this is a real defect, not
# floating-point slack.
_DBAR_TOLERANCE = 1e-12

# Transition variances below this are treated as degenerate (division hazard
# in the posterior formulas).
_DEGENERATE_VAR = 1e-300


class ScheduleError(ValueError):
    """Raised for invalid schedule configurations or numerically bad tables."""


@dataclass(frozen=True)
class ScheduleConfig:
    """Scalar knobs of the diffusion chain.

    num_steps:  T, number of diffusion steps (>= 2).
    beta_start: beta_1, first noise-rate value.
    beta_end:   beta_T, last noise-rate value.
    t0:         length of the anchor-interpolation window at the end of the
                reverse pass (0 disables the window).
    r:          base interpolation ratio; annealed linearly over the window.
    """

    num_steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.035
    t0: int = 5
    r: float = 0.1

    def validate(self) -> None:
        if self.num_steps < 2:
            raise ScheduleError(f"num_steps must be >= 2, got {self.num_steps}")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ScheduleError(
                f"need 0 < beta_start <= beta_end < 1, got "
                f"[{self.beta_start}, {self.beta_end}]"
            )
        if not (0 <= self.t0 <= self.num_steps):
            raise ScheduleError(f"t0 must be in [0, num_steps], got {self.t0}")
        if not (0.0 <= self.r <= 1.0):
            raise ScheduleError(f"r must be in [0, 1], got {self.r}")


@dataclass(frozen=True)
class ScheduleTable:
    """Immutable per-timestep constants; arrays indexed t = 0..T (0 = boundary).

    beta, alpha, alpha_bar: the usual DDPM quantities.
    m:             interpolation coefficient pulling the mean toward y.
    delta_bar:     marginal noise variance of the forward process.
    trans_coeff:   c_t with  x_t = c_t x_{t-1} + d_t y + sigma_t eps_t.
    trans_drift:   d_t of the same transition.
    trans_var:     sigma_t^2 of the same transition.
    posterior_var: variance of q(x_{t-1} | x_t, x0, y).
    coeff_x, coeff_y, coeff_eps: reverse-mean coefficients; with the model
                   output eps_hat, mean = coeff_x*x_t + coeff_y*y + coeff_eps*eps_hat.
    norm:          normalizer of the combined-noise training target,
                   sqrt(1 - alpha_bar_t).
    r_anneal:      annealed interpolation ratios, largest first (len t0).
    """

    config: ScheduleConfig
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    m: np.ndarray
    delta_bar: np.ndarray
    trans_coeff: np.ndarray
    trans_drift: np.ndarray
    trans_var: np.ndarray
    posterior_var: np.ndarray
    coeff_x: np.ndarray
    coeff_y: np.ndarray
    coeff_eps: np.ndarray
    norm: np.ndarray
    r_anneal: tuple[float, ...]

    @property
    def num_steps(self) -> int:
        return self.config.num_steps

    def mean_coeff_x0(self, t: int) -> float:
        """Coefficient of x0 in the forward marginal mean, sqrt(abar_t)(1 - m_t)."""
        return float(np.sqrt(self.alpha_bar[t]) * (1.0 - self.m[t]))

    def mean_coeff_y(self, t: int) -> float:
        """Coefficient of y in the forward marginal mean, m_t sqrt(abar_t)."""
        return float(self.m[t] * np.sqrt(self.alpha_bar[t]))

    def to_csv(self, path) -> None:
        """Dump rows t = 1..T for inspection."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "beta", "alpha_bar", "m", "delta_bar", "posterior_var"])
            for t in range(1, self.num_steps + 1):
                writer.writerow(
                    [
                        t,
                        repr(float(self.beta[t])),
                        repr(float(self.alpha_bar[t])),
                        repr(float(self.m[t])),
                        repr(float(self.delta_bar[t])),
                        repr(float(self.posterior_var[t])),
                    ]
                )


def anneal_ratios(t0: int, r: float) -> list[float]:
    """Linearly annealed interpolation ratios r * (t0 - k) / t0, k = 0..t0-1.

    Element k is applied at the reverse step producing the state t0-1-k steps
    before the final output, i.e. the list is consumed largest-first as the
    sampler counts down into the anchor window.

    Computed in exact rational arithmetic so that decimal inputs reproduce
    the expected decimal ratio lists exactly (e.g. (5, 0.1) ->
    [0.1, 0.08, 0.06, 0.04, 0.02]).
    """
    if t0 < 1:
        raise ScheduleError(f"t0 must be >= 1, got {t0}")
    if not (0.0 <= r <= 1.0):
        raise ScheduleError(f"r must be in [0, 1], got {r}")
    r_exact = Fraction(r).limit_denominator(10**9)
    if float(r_exact) != r:
        # r is not a short decimal; exact rationalization would corrupt it.
        r_exact = Fraction(r)
    return [float(r_exact * (t0 - k) / t0) for k in range(t0)]


def _derive_from_beta_and_m(
    config: ScheduleConfig,
    beta: np.ndarray,
    m: np.ndarray,
    delta_bar: np.ndarray | None = None,
) -> ScheduleTable:
    """Build the full table from beta[0..T] and m[0..T] (index 0 = boundary).

    Split out from build_schedule so tests can feed a hand-chosen m (e.g. all
    zeros, which must reduce every derived quantity to the plain DDPM chain).
    """
    T = config.num_steps
    alpha = 1.0 - beta
    alpha[0] = 1.0
    alpha_bar = np.cumprod(alpha)
    sqrt_ab = np.sqrt(alpha_bar)

    if np.any(m[1:] >= 1.0):
        bad = 1 + int(np.argmax(m[1:] >= 1.0))
        raise ScheduleError(
            f"m[{bad}] = {m[bad]:.6f} >= 1: schedule runs past the noisy signal"
        )
    if delta_bar is None:
        # delta_bar = 1 - (1+m^2)*abar, computed as (1-abar) - m^2*abar to
        # keep one subtraction instead of two.
        delta_bar = (1.0 - alpha_bar) - np.square(m) * alpha_bar
    delta_bar = delta_bar.copy()
    delta_bar[0] = 0.0
    if np.any(delta_bar < -_DBAR_TOLERANCE):
        bad = int(np.argmax(delta_bar < -_DBAR_TOLERANCE))
        raise ScheduleError(
            f"delta_bar[{bad}] = {delta_bar[bad]:.3e} < -{_DBAR_TOLERANCE}: "
            "schedule numerically invalid"
        )
    delta_bar = np.maximum(delta_bar, 0.0)

    # Markov transition x_t = c_t x_{t-1} + d_t y + sigma_t eps consistent
    # with the marginals: matching means gives c_t and d_t, matching
    # variances gives sigma_t^2.
    mean_x0 = sqrt_ab * (1.0 - m)
    mean_y = sqrt_ab * m
    c = np.ones(T + 1)
    c[1:] = mean_x0[1:] / mean_x0[:-1]
    d = np.zeros(T + 1)
    d[1:] = mean_y[1:] - c[1:] * mean_y[:-1]
    trans_var = np.zeros(T + 1)
    trans_var[1:] = delta_bar[1:] - np.square(c[1:]) * delta_bar[:-1]
    if np.any(trans_var[1:] < -_DBAR_TOLERANCE):
        bad = 1 + int(np.argmax(trans_var[1:] < -_DBAR_TOLERANCE))
        raise ScheduleError(
            f"transition variance at t={bad} is {trans_var[bad]:.3e} < 0: "
            "marginals admit no Gaussian Markov chain"
        )
    trans_var = np.maximum(trans_var, 0.0)

    # Gaussian posterior q(x_{t-1} | x_t, x0, y): combine the prior
    # N(mean_{t-1}, delta_bar_{t-1}) with the likelihood from the transition.
    posterior_var = np.zeros(T + 1)
    coeff_x = np.zeros(T + 1)
    coeff_y = np.zeros(T + 1)
    coeff_eps = np.zeros(T + 1)
    norm = np.sqrt(np.maximum(1.0 - alpha_bar, 0.0))
    for t in range(1, T + 1):
        if delta_bar[t] < _DEGENERATE_VAR:
            raise ScheduleError(f"degenerate step: delta_bar[{t}] ~ 0, cannot invert")
        posterior_var[t] = delta_bar[t - 1] * trans_var[t] / delta_bar[t]
        # Reverse mean in terms of (x_t, y, eps_hat), obtained by substituting
        # x0 = (x_t - norm_t * eps_hat) / sqrt(abar_t) into the posterior mean.
        k = mean_x0[t - 1] / sqrt_ab[t]
        coeff_x[t] = (trans_var[t] * k + c[t] * delta_bar[t - 1]) / delta_bar[t]
        coeff_y[t] = (trans_var[t] * mean_y[t - 1] - c[t] * delta_bar[t - 1] * d[t]) / delta_bar[t]
        coeff_eps[t] = -trans_var[t] * k * norm[t] / delta_bar[t]

    ratios = tuple(anneal_ratios(config.t0, config.r)) if config.t0 > 0 else ()

    table = ScheduleTable(
        config=config,
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        m=m,
        delta_bar=delta_bar,
        trans_coeff=c,
        trans_drift=d,
        trans_var=trans_var,
        posterior_var=posterior_var,
        coeff_x=coeff_x,
        coeff_y=coeff_y,
        coeff_eps=coeff_eps,
        norm=norm,
        r_anneal=ratios,
    )
    for arr in (beta, alpha, alpha_bar, m, delta_bar, c, d, trans_var,
                posterior_var, coeff_x, coeff_y, coeff_eps, norm):
        arr.flags.writeable = False
    return table


def build_schedule(config: ScheduleConfig) -> ScheduleTable:
    """Build the full constant table for a linear beta schedule.

    beta interpolates inclusively from beta_start at t=1 to beta_end at t=T.
    """
    config.validate()
    T = config.num_steps
    beta = np.zeros(T + 1)
    beta[1:] = np.linspace(config.beta_start, config.beta_end, T)

    alpha_bar = np.cumprod(1.0 - beta)
    sqrt_ab = np.sqrt(alpha_bar)
    m = np.sqrt((1.0 - alpha_bar) / sqrt_ab)
    m[0] = 0.0
    # For this m, delta_bar = (1-abar)(1-sqrt(abar)); expanding the second
    # factor as (1-abar)/(1+sqrt(abar)) avoids catastrophic cancellation at
    # small t where delta_bar ~ 1e-9.
    delta_bar = (1.0 - alpha_bar) * (1.0 - alpha_bar) / (1.0 + sqrt_ab)
    return _derive_from_beta_and_m(config, beta, m, delta_bar)


def derive_reverse_coeffs(table: ScheduleTable, t: int) -> tuple[float, float, float, float]:
    """Reverse-step constants (coeff_x, coeff_y, coeff_eps, posterior_var) at t.

    Valid for t = 1..T; t = 1 is the final step, whose coefficients reduce to
    the exact inversion x0 = (x_1 - norm_1 * eps_hat) / sqrt(abar_1) with zero
    posterior variance.
    """
    if not (1 <= t <= table.num_steps):
        raise ScheduleError(f"t must be in [1, {table.num_steps}], got {t}")
    return (
        float(table.coeff_x[t]),
        float(table.coeff_y[t]),
        float(table.coeff_eps[t]),
        float(table.posterior_var[t]),
    )
