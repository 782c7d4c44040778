"""Ground-truth factor model and the invertible observation mixer.

The latent state is a vector of K factors split into an episodic block
(drawn once per episode, constant until reset) and a dynamic block (evolves
step by step under agent control). Observations are produced by a fixed
full-column-rank linear map optionally followed by an elementwise invertible
nonlinearity, then frame-stacked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, InputShapeError

Array = np.ndarray

Interval = tuple[float, float]


def _check_interval(name: str, iv: Interval) -> None:
    lo, hi = iv
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ConfigError(f"{name}: invalid interval {iv}")


@dataclass(frozen=True)
class FactorSpec:
    """Structure of the factor vector and its sampling ranges.

    Episodic factors have disjoint train and test ranges; dynamic factors
    start at `dynamic_init` and stay inside `dynamic_bounds`.
    """

    episodic_train_ranges: tuple[Interval, ...]
    episodic_test_ranges: tuple[Interval, ...]
    dynamic_init: tuple[float, ...]
    dynamic_bounds: tuple[Interval, ...]

    def __post_init__(self):
        ne, nd = self.num_episodic, self.num_dynamic
        if ne < 1 or nd < 1:
            raise ConfigError("need at least one episodic and one dynamic factor")
        if len(self.episodic_test_ranges) != ne:
            raise ConfigError("episodic train/test range counts differ")
        if len(self.dynamic_bounds) != nd:
            raise ConfigError("dynamic_init/dynamic_bounds length mismatch")
        for i, (tr, te) in enumerate(zip(self.episodic_train_ranges, self.episodic_test_ranges)):
            _check_interval(f"episodic_train_ranges[{i}]", tr)
            _check_interval(f"episodic_test_ranges[{i}]", te)
            if max(tr[0], te[0]) <= min(tr[1], te[1]):
                raise ConfigError(
                    f"episodic factor {i}: train range {tr} overlaps test range {te}")
        for i, (init, bounds) in enumerate(zip(self.dynamic_init, self.dynamic_bounds)):
            _check_interval(f"dynamic_bounds[{i}]", bounds)
            if not bounds[0] <= init <= bounds[1]:
                raise ConfigError(
                    f"dynamic factor {i}: init {init} outside bounds {bounds}")

    @property
    def num_episodic(self) -> int:
        return len(self.episodic_train_ranges)

    @property
    def num_dynamic(self) -> int:
        return len(self.dynamic_init)

    @property
    def num_factors(self) -> int:
        return self.num_episodic + self.num_dynamic

    def range_for(self, index: int, phase: str) -> Interval:
        """Sampling interval of factor `index` in the given phase.

        Dynamic factors use their bounds regardless of phase.
        """
        if index < self.num_episodic:
            ranges = self.episodic_train_ranges if phase == "train" else self.episodic_test_ranges
            return ranges[index]
        return self.dynamic_bounds[index - self.num_episodic]


def make_factor_spec(num_episodic: int, num_dynamic: int,
                     episodic_train_range: Interval = (-1.0, -0.2),
                     episodic_test_range: Interval = (0.2, 1.0),
                     dynamic_init: float = 0.0,
                     dynamic_bounds: Interval = (-1.0, 1.0)) -> FactorSpec:
    """Spec with one shared range per block; the common desk-scale case."""
    return FactorSpec(
        episodic_train_ranges=(episodic_train_range,) * num_episodic,
        episodic_test_ranges=(episodic_test_range,) * num_episodic,
        dynamic_init=(dynamic_init,) * num_dynamic,
        dynamic_bounds=(dynamic_bounds,) * num_dynamic,
    )


@dataclass
class FactorState:
    """Current factor values; episodic stays fixed within an episode."""

    episodic: Array
    dynamic: Array

    def vector(self) -> Array:
        return np.concatenate([self.episodic, self.dynamic])

    def copy(self) -> "FactorState":
        return FactorState(self.episodic.copy(), self.dynamic.copy())


def sample_episode_factors(spec: FactorSpec, phase: str,
                           rng: np.random.Generator) -> FactorState:
    """Draw fresh episodic values for `phase`; dynamic block resets to init."""
    if phase not in ("train", "test"):
        raise ConfigError(f"phase must be 'train' or 'test', got {phase!r}")
    ranges = spec.episodic_train_ranges if phase == "train" else spec.episodic_test_ranges
    episodic = np.array([rng.uniform(lo, hi) for lo, hi in ranges])
    return FactorState(episodic=episodic, dynamic=np.array(spec.dynamic_init, dtype=np.float64))


@dataclass(frozen=True)
class MixerSpec:
    """Observation map: obs = M s (linear) or gain-tanh residual of M s.

    The matrix has full column rank with a bounded condition number so the
    map stays numerically invertible on the factor domain.
    """

    mode: str
    obs_dim: int
    matrix: Array
    gain: float = 1.0
    frame_stack: int = 3

    def __post_init__(self):
        if self.mode not in ("linear", "nonlinear"):
            raise ConfigError(f"mixer mode must be linear|nonlinear, got {self.mode!r}")
        if self.matrix.shape != (self.obs_dim, self.num_factors):
            raise InputShapeError(
                f"mixing matrix shape {self.matrix.shape} != ({self.obs_dim}, K)")
        if self.obs_dim < self.num_factors:
            raise ConfigError("obs_dim must be >= number of factors")
        if self.gain <= 0:
            raise ConfigError("nonlinearity gain must be > 0")
        if self.frame_stack < 1:
            raise ConfigError("frame_stack must be >= 1")

    @property
    def num_factors(self) -> int:
        return self.matrix.shape[1]

    @property
    def stacked_dim(self) -> int:
        return self.obs_dim * self.frame_stack


def make_mixer_spec(rng: np.random.Generator, num_factors: int,
                    obs_dim: int | None = None, mode: str = "nonlinear",
                    gain: float = 1.0, frame_stack: int = 3,
                    max_condition: float = 100.0) -> MixerSpec:
    """Sample a well-conditioned mixing matrix (resampled until cond <= bound).

    Entries are i.i.d. standard normal rescaled by 1/sqrt(K) so observation
    components stay O(1) on the unit factor box.
    """
    k = num_factors
    if obs_dim is None:
        obs_dim = 4 * k
    while True:
        m = rng.standard_normal((obs_dim, k)) / np.sqrt(k)
        if np.linalg.cond(m) <= max_condition:
            break
    return MixerSpec(mode=mode, obs_dim=obs_dim, matrix=m, gain=gain,
                     frame_stack=frame_stack)


def mix(factors: FactorState | Array, spec: MixerSpec) -> Array:
    """Map one factor vector (or a (m, K) batch) to observation frames."""
    s = factors.vector() if isinstance(factors, FactorState) else np.asarray(factors, dtype=np.float64)
    if s.shape[-1] != spec.num_factors:
        raise InputShapeError(
            f"factor vector length {s.shape[-1]} != K = {spec.num_factors}")
    u = s @ spec.matrix.T
    if spec.mode == "nonlinear":
        u = u + spec.gain * np.tanh(u)
    return u


@dataclass
class Observation:
    """Frame-stacked observation tagged with its episode and timestep."""

    data: Array
    episode_id: int
    timestep: int


def stack_frames(history: Sequence[Array], frame_stack: int) -> Array:
    """Concatenate the last `frame_stack` frames oldest-first.

    When fewer frames exist the earliest one is repeated to pad, so at
    episode start all stacked frames equal the initial frame.
    """
    if not history:
        raise InputShapeError("frame history is empty")
    if frame_stack < 1:
        raise ConfigError("frame_stack must be >= 1")
    frames = list(history[-frame_stack:])
    while len(frames) < frame_stack:
        frames.insert(0, history[0])
    return np.concatenate(frames)
