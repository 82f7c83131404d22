"""Diffusion noise schedules and skipped-timestep plans.

Timesteps are 1-indexed: beta_t for t in [1, T] lives at betas[t-1], and
alpha_bars has length T+1 with alpha_bars[0] = 1 so that t_prev = 0 is a
valid "fully denoised" state. All tables are float64 regardless of the
precision the networks run at.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# Amplitude signal-to-noise ratio at the largest start step of the default
# plan (cap 250 under the default schedule). Plans whose top step is noisier
# than this are rejected.
DEFAULT_SNR_FLOOR = 1.44


@dataclass(frozen=True)
class ScheduleConfig:
    total_steps: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012
    kind: str = "scaled_linear"  # "linear" | "scaled_linear"

    def validate(self):
        if self.total_steps < 2:
            raise ConfigError(f"total_steps must be >= 2, got {self.total_steps}")
        if not (0.0 < self.beta_start < self.beta_end < 1.0):
            raise ConfigError(
                f"need 0 < beta_start < beta_end < 1, got "
                f"({self.beta_start}, {self.beta_end})"
            )
        if self.kind not in ("linear", "scaled_linear"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta/alpha/alpha-bar tables for a T-step diffusion."""

    betas: np.ndarray       # [T]
    alphas: np.ndarray      # [T]
    alpha_bars: np.ndarray  # [T+1], alpha_bars[0] == 1.0

    @property
    def total_steps(self) -> int:
        return len(self.betas)

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.total_steps:
            raise ConfigError(f"timestep {t} outside [0, {self.total_steps}]")
        return float(self.alpha_bars[t])

    def _check_t(self, t: int):
        if not 1 <= t <= self.total_steps:
            raise ConfigError(f"timestep {t} outside [1, {self.total_steps}]")


def build_schedule(cfg: ScheduleConfig) -> NoiseSchedule:
    """Build beta/alpha/alpha-bar tables in double precision."""
    cfg.validate()
    T = cfg.total_steps
    if cfg.kind == "linear":
        betas = np.linspace(cfg.beta_start, cfg.beta_end, T, dtype=np.float64)
    else:  # scaled_linear: affine in sqrt(beta), the common SD convention
        betas = np.linspace(
            math.sqrt(cfg.beta_start), math.sqrt(cfg.beta_end), T, dtype=np.float64
        ) ** 2
    alphas = 1.0 - betas
    alpha_bars = np.empty(T + 1, dtype=np.float64)
    alpha_bars[0] = 1.0
    alpha_bars[1:] = np.cumprod(alphas)
    if not (np.all(np.diff(alpha_bars) < 0) and alpha_bars[-1] > 0):
        raise ConfigError("schedule does not produce strictly decreasing alpha_bar in (0, 1]")
    for arr in (betas, alphas, alpha_bars):
        arr.setflags(write=False)
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def snr(s: NoiseSchedule, t: int) -> float:
    """Amplitude signal-to-noise ratio sqrt(abar_t) / sqrt(1 - abar_t)."""
    s._check_t(t)
    a = s.alpha_bars[t]
    return float(math.sqrt(a / (1.0 - a)))


@dataclass(frozen=True)
class TimestepPlan:
    """Descending inversion timesteps plus the subset used as training starts."""

    timesteps: tuple[int, ...]      # descending, all in [1, cap]
    cap: int
    strategy: str                   # "trailing" | "linspace"
    train_starts: tuple[int, ...] = field(default=())

    def __post_init__(self):
        ts = self.timesteps
        if not ts:
            raise ConfigError("plan has no timesteps")
        if any(ts[i] <= ts[i + 1] for i in range(len(ts) - 1)):
            raise ConfigError(f"plan timesteps must be strictly descending, got {ts}")
        if ts[0] > self.cap or ts[-1] < 1:
            raise ConfigError(f"plan timesteps {ts} outside [1, {self.cap}]")
        if not set(self.train_starts) <= set(ts):
            raise ConfigError(
                f"train_starts {self.train_starts} not a subset of plan {ts}"
            )

    def __len__(self) -> int:
        return len(self.timesteps)

    @property
    def start(self) -> int:
        return self.timesteps[0]


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def _round_half_down(v: float) -> int:
    return int(math.ceil(v - 0.5))


def select_timesteps(
    s: NoiseSchedule,
    cap: int,
    count: int,
    strategy: str = "trailing",
    snr_floor: float | None = DEFAULT_SNR_FLOOR,
) -> TimestepPlan:
    """Pick `count` timesteps out of [1, cap] by the given skipping rule.

    trailing: t_i = round(cap * i / count), i = 1..count.
    linspace: t_i evenly spaced over [1, cap] inclusive (ties round down,
    which reproduces the usual zero-based linspace-and-round selection).
    The result is stored descending; training starts default to every step
    except the smallest.
    """
    if not 1 <= count <= cap <= s.total_steps:
        raise ConfigError(
            f"need 1 <= count <= cap <= T, got count={count} cap={cap} T={s.total_steps}"
        )
    if strategy == "trailing":
        ts = [_round_half_up(cap * i / count) for i in range(1, count + 1)]
    elif strategy == "linspace":
        if count == 1:
            ts = [cap]
        else:
            ts = [
                _round_half_down(1 + (cap - 1) * i / (count - 1))
                for i in range(count)
            ]
    else:
        raise ConfigError(f"unknown skipping strategy {strategy!r}")
    if len(set(ts)) != len(ts):
        raise ConfigError(f"{strategy} selection with cap={cap} count={count} "
                          f"produced duplicate timesteps {sorted(ts)}")
    ts = tuple(sorted(ts, reverse=True))
    if snr_floor is not None and snr(s, ts[0]) < snr_floor:
        raise ConfigError(
            f"snr({ts[0]}) = {snr(s, ts[0]):.4f} below floor {snr_floor}"
        )
    return TimestepPlan(
        timesteps=ts, cap=cap, strategy=strategy, train_starts=ts[:-1] if len(ts) > 1 else ts
    )


def sub_plan(plan: TimestepPlan, start: int) -> TimestepPlan:
    """Suffix of the plan whose largest timestep is `start`."""
    if start not in plan.timesteps:
        raise ConfigError(f"start {start} not in plan {plan.timesteps}")
    ts = tuple(t for t in plan.timesteps if t <= start)
    return TimestepPlan(
        timesteps=ts,
        cap=plan.cap,
        strategy=plan.strategy,
        train_starts=tuple(t for t in plan.train_starts if t <= start),
    )


def default_schedule() -> NoiseSchedule:
    """T=1000 scaled-linear schedule under which snr(250) is about 1.44."""
    return build_schedule(ScheduleConfig())


def fast_schedule() -> NoiseSchedule:
    """Short T=100 linear profile for quick tests and desk-scale training."""
    return build_schedule(
        ScheduleConfig(total_steps=100, beta_start=1e-4, beta_end=0.02, kind="linear")
    )


def default_plan(s: NoiseSchedule) -> TimestepPlan:
    """Trailing plan scaled to the schedule length (cap = T/4, 5 steps)."""
    cap = 250 if s.total_steps == 1000 else max(5, s.total_steps // 4)
    floor = DEFAULT_SNR_FLOOR if s.total_steps == 1000 else None
    return select_timesteps(s, cap, 5, "trailing", snr_floor=floor)
