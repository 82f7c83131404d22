"""Core diffusion math: forward marginal, x0 estimation, reverse steps,
and the start-state construction used to invert from a low-resolution image.

Every function here is pure. Randomness always enters through explicit
noise-tensor arguments, so callers control determinism completely. Scalar
schedule coefficients are computed in float64 and then cast to the input
dtype, which keeps float32 activations from silently upcasting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .schedule import NoiseSchedule, TimestepPlan, snr


def _same_shape(*arrays):
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"tensor shapes differ: {sorted(shapes)}")


def _c(value: float, like: np.ndarray):
    """Cast a float64 scalar coefficient to the dtype of `like`."""
    return like.dtype.type(value)


@dataclass(frozen=True)
class SamplerConfig:
    """Stochasticity policy for reverse steps.

    eta = 0 gives a deterministic trajectory, eta = 1 matches ancestral
    sampling on consecutive steps. final_step_noise additionally injects
    posterior noise on the update that produces x_0 (off by default).
    """

    eta: float = 1.0
    plan: TimestepPlan | None = None
    final_step_noise: bool = False

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must be in [0, 1], got {self.eta}")


def forward_sample(x0: np.ndarray, t: int, xi: np.ndarray, s: NoiseSchedule) -> np.ndarray:
    """Sample the forward marginal: sqrt(abar_t) x0 + sqrt(1-abar_t) xi."""
    _same_shape(x0, xi)
    s._check_t(t)
    a = s.alpha_bars[t]
    return _c(math.sqrt(a), x0) * x0 + _c(math.sqrt(1.0 - a), x0) * xi


def predict_x0(x_t: np.ndarray, eps_hat: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
    """Invert the forward marginal around a noise estimate."""
    _same_shape(x_t, eps_hat)
    s._check_t(t)
    a = s.alpha_bars[t]
    if a <= 0.0:
        raise ConfigError(f"alpha_bar({t}) is not positive")
    return (x_t - _c(math.sqrt(1.0 - a), x_t) * eps_hat) / _c(math.sqrt(a), x_t)


def posterior_sigma(s: NoiseSchedule, t: int, t_prev: int, eta: float) -> float:
    """Noise scale of the generalized reverse step t -> t_prev.

    eta * sqrt((1-abar_prev)/(1-abar_t)) * sqrt(1 - abar_t/abar_prev); equals
    eta * sqrt(posterior variance) for the consecutive step t -> t-1.
    """
    s._check_t(t)
    if not 0 <= t_prev < t:
        raise ConfigError(f"need 0 <= t_prev < t, got t_prev={t_prev} t={t}")
    a_t = s.alpha_bars[t]
    a_p = s.alpha_bars[t_prev]
    return eta * math.sqrt((1.0 - a_p) / (1.0 - a_t)) * math.sqrt(1.0 - a_t / a_p)


def generalized_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    t_prev: int,
    cfg: SamplerConfig,
    z: np.ndarray,
    s: NoiseSchedule,
) -> np.ndarray:
    """One reverse step from t to t_prev (t_prev = 0 produces the image).

    Deterministic direction plus eta-scaled noise:
        sqrt(abar_prev) x0_hat + sqrt(1 - abar_prev - sigma^2) eps_hat + sigma z

    For t_prev = 0 the formula collapses to x0_hat; with final_step_noise set
    and t > 1, posterior noise for the consecutive step at t is added on top,
    mirroring samplers that draw z whenever the current timestep exceeds 1.
    """
    _same_shape(x_t, eps_hat, z)
    x0_hat = predict_x0(x_t, eps_hat, t, s)
    a_p = s.alpha_bars[t_prev]
    if t_prev == 0:
        out = x0_hat
        if cfg.final_step_noise and t > 1 and cfg.eta > 0.0:
            sigma = posterior_sigma(s, t, t - 1, cfg.eta)
            out = out + _c(sigma, out) * z
        return out
    sigma = posterior_sigma(s, t, t_prev, cfg.eta)
    resid_var = 1.0 - a_p - sigma * sigma
    if resid_var < 0.0:
        if resid_var > -1e-12:  # round-off guard at eta = 1
            resid_var = 0.0
        else:
            raise ConfigError(
                f"noise scale too large for step {t}->{t_prev}: "
                f"1 - abar_prev - sigma^2 = {resid_var}"
            )
    out = _c(math.sqrt(a_p), x_t) * x0_hat + _c(math.sqrt(resid_var), x_t) * eps_hat
    if sigma > 0.0:
        out = out + _c(sigma, out) * z
    return out


def build_start_state(
    y0: np.ndarray, noise: np.ndarray, kappa: int, s: NoiseSchedule
) -> np.ndarray:
    """Noisy intermediate state built from the LR image and a predicted map.

    Same algebra as forward_sample with y0 in place of x0; the noise argument
    is a predictor output and is not required to be zero-mean.
    """
    return forward_sample(y0, kappa, noise, s)


def intermediate_train_state(
    x0: np.ndarray, xi: np.ndarray, kappa: int, s: NoiseSchedule
) -> np.ndarray:
    """Training-time state for non-starting steps; xi is sampled N(0, I).

    Identical formula to forward_sample, kept as its own entry point because
    it plays a different role: intermediate states never use predicted noise.
    """
    return forward_sample(x0, kappa, xi, s)


def oracle_start_noise(
    x0: np.ndarray, y0: np.ndarray, xi: np.ndarray, kappa: int, s: NoiseSchedule
) -> np.ndarray:
    """The ideal start-noise map: xi + snr(kappa) * (x0 - y0).

    Feeding this into build_start_state reproduces forward_sample(x0, kappa, xi)
    exactly, which documents the mean shift a trained predictor has to learn.
    """
    _same_shape(x0, y0, xi)
    return xi + _c(snr(s, kappa), x0) * (x0 - y0)
