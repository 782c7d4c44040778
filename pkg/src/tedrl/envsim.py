"""Minimal episodic goal-reaching task over the factor model.

The agent moves the dynamic factors by discrete displacements; episodic
factors act either as task-irrelevant distractors (fixed goal) or as the
goal position itself (goal read from designated episodic factors, so unseen
episodic values change the optimal policy). Reward is the negative Euclidean
distance between the dynamic position and the goal, evaluated at the state
in which the action is taken.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, EpisodeFinishedError
from .factors import (Array, FactorSpec, FactorState, MixerSpec, Observation,
                      mix, sample_episode_factors, stack_frames)


def default_action_set(num_dynamic: int) -> Array:
    """No-op plus +-unit displacement per dynamic dimension."""
    actions = [np.zeros(num_dynamic)]
    for d in range(num_dynamic):
        e = np.zeros(num_dynamic)
        e[d] = 1.0
        actions.append(e.copy())
        actions.append(-e)
    return np.stack(actions)


@dataclass(frozen=True)
class EnvSpec:
    factor_spec: FactorSpec
    mixer_spec: MixerSpec
    horizon: int = 50
    step_size: float = 0.1
    goal_source: str = "fixed"
    fixed_goal: tuple[float, ...] | None = None
    goal_factors: tuple[int, ...] | None = None
    action_set: Array | None = None

    def __post_init__(self):
        if self.horizon < 2:
            raise ConfigError("horizon must be >= 2")
        if self.step_size <= 0:
            raise ConfigError("step_size must be > 0")
        if self.goal_source not in ("fixed", "episodic_factor"):
            raise ConfigError(f"goal_source must be fixed|episodic_factor, got {self.goal_source!r}")
        nd = self.factor_spec.num_dynamic
        if self.mixer_spec.num_factors != self.factor_spec.num_factors:
            raise ConfigError("mixer factor count does not match factor spec")
        if self.goal_source == "episodic_factor":
            gf = self.goal_factors if self.goal_factors is not None else tuple(range(nd))
            if len(gf) != nd:
                raise ConfigError("goal_factors must name one episodic factor per dynamic dim")
            for i in gf:
                if not 0 <= i < self.factor_spec.num_episodic:
                    raise ConfigError(f"goal factor index {i} out of episodic range")
            object.__setattr__(self, "goal_factors", gf)
        else:
            goal = self.fixed_goal if self.fixed_goal is not None else (0.5,) * nd
            if len(goal) != nd:
                raise ConfigError("fixed_goal length must match dynamic factor count")
            object.__setattr__(self, "fixed_goal", tuple(float(g) for g in goal))
        acts = self.action_set if self.action_set is not None else default_action_set(nd)
        acts = np.asarray(acts, dtype=np.float64)
        if acts.ndim != 2 or acts.shape[1] != nd:
            raise ConfigError("action_set must be (n_actions, num_dynamic)")
        object.__setattr__(self, "action_set", acts)

    @property
    def n_actions(self) -> int:
        return self.action_set.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.mixer_spec.stacked_dim


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool


class Env:
    """Single-actor environment instance; owns its episode counter.

    The caller supplies the RNG at reset so independent instances can run
    on disjoint streams.
    """

    def __init__(self, spec: EnvSpec, first_episode_id: int = 0):
        self.spec = spec
        self._next_episode_id = first_episode_id
        self._factors: Optional[FactorState] = None
        self._goal: Optional[Array] = None
        self._frames: list[Array] = []
        self._timestep = 0
        self._episode_id = -1
        self._done = True

    @property
    def current_factors(self) -> FactorState:
        """Ground-truth factors; evaluation hook for metric oracles."""
        if self._factors is None:
            raise EpisodeFinishedError("reset the environment first")
        return self._factors.copy()

    @property
    def goal(self) -> Array:
        return self._goal.copy()

    def _observe(self) -> Observation:
        data = stack_frames(self._frames, self.spec.mixer_spec.frame_stack)
        return Observation(data=data, episode_id=self._episode_id, timestep=self._timestep)

    def reset(self, phase: str, rng: np.random.Generator) -> Observation:
        self._factors = sample_episode_factors(self.spec.factor_spec, phase, rng)
        if self.spec.goal_source == "episodic_factor":
            self._goal = self._factors.episodic[list(self.spec.goal_factors)].copy()
        else:
            self._goal = np.array(self.spec.fixed_goal)
        self._episode_id = self._next_episode_id
        self._next_episode_id += 1
        self._timestep = 0
        self._done = False
        self._frames = [mix(self._factors, self.spec.mixer_spec)]
        return self._observe()

    def step(self, action: int) -> StepResult:
        if self._done:
            raise EpisodeFinishedError("episode already finished; call reset")
        if not 0 <= action < self.spec.n_actions:
            raise ConfigError(f"action index {action} out of range")
        # Reward depends on the state the action was taken in.
        reward = -float(np.linalg.norm(self._factors.dynamic - self._goal))
        delta = self.spec.step_size * self.spec.action_set[action]
        bounds = np.array(self.spec.factor_spec.dynamic_bounds)
        self._factors.dynamic = np.clip(self._factors.dynamic + delta,
                                        bounds[:, 0], bounds[:, 1])
        self._timestep += 1
        self._frames.append(mix(self._factors, self.spec.mixer_spec))
        self._done = self._timestep >= self.spec.horizon
        return StepResult(observation=self._observe(), reward=reward, done=self._done)
