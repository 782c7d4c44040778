"""Episode-tagged transition storage and temporal/non-temporal pair building.

Each update batch yields three pair kinds per anchor transition:

* ``x``        -- consecutive observations of the same episode (label 1);
* ``x_prime``  -- anchor paired with a next-observation encoding from a
                  different episode in the batch (label 0);
* ``x_dprime`` -- anchor paired with a buffer observation from the same
                  episode at a non-adjacent timestep (label 0).

Second pair elements are always produced by the target encoder and enter the
loss as constants, so no gradient reaches the target parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (ConfigError, InputShapeError, InsufficientDiversityError,
                     InsufficientEpisodeLengthError)
from .factors import Array, Observation
from .nn import DenseNetParams, Tensor, net_apply, net_forward

DIVERSITY_RETRIES = 16
MIN_EPISODE_LEN = 3

KIND_TEMPORAL = "x"
KIND_DIFF_EPISODE = "x_prime"
KIND_SAME_EPISODE = "x_dprime"


@dataclass
class TaggedTransition:
    obs: Observation
    action: int
    reward: float
    next_obs: Observation
    done: bool

    def __post_init__(self):
        if self.next_obs.episode_id != self.obs.episode_id:
            raise InputShapeError("transition spans two episodes")
        if self.next_obs.timestep != self.obs.timestep + 1:
            raise InputShapeError("next_obs timestep must be obs timestep + 1")

    @property
    def episode_id(self) -> int:
        return self.obs.episode_id

    @property
    def timestep(self) -> int:
        return self.obs.timestep


@dataclass
class TaggedBatch:
    transitions: list[TaggedTransition]

    def __post_init__(self):
        if not self.transitions:
            raise InputShapeError("batch must be nonempty")

    def __len__(self) -> int:
        return len(self.transitions)

    def episode_ids(self) -> Array:
        return np.array([t.episode_id for t in self.transitions])

    def obs_matrix(self) -> Array:
        return np.stack([t.obs.data for t in self.transitions])

    def next_obs_matrix(self) -> Array:
        return np.stack([t.next_obs.data for t in self.transitions])


@dataclass
class PairSample:
    """One classifier input: two latents, a label, and the pair kind."""

    first: Array
    second: Array
    label: int
    kind: str

    def __post_init__(self):
        if self.first.shape != self.second.shape:
            raise InputShapeError("pair latents must share a dimension")
        if (self.label == 1) != (self.kind == KIND_TEMPORAL):
            raise InputShapeError("label 1 is reserved for temporal pairs")


class ReplayBuffer:
    """FIFO transition store with a per-episode timestep index.

    Episodes with fewer than `min_episode_len` resident transitions are kept
    but excluded from anchor sampling, since they cannot supply a same-episode
    non-adjacent partner.
    """

    def __init__(self, capacity: int, min_episode_len: int = MIN_EPISODE_LEN):
        if capacity < 1:
            raise ConfigError("capacity must be >= 1")
        self.capacity = capacity
        self.min_episode_len = min_episode_len
        self._slots: list[TaggedTransition | None] = [None] * capacity
        self._pos = 0
        self._size = 0
        # episode_id -> {timestep: slot index}
        self._episodes: dict[int, dict[int, int]] = {}
        # slots currently eligible as anchors, with O(1) add/remove/choice
        self._eligible: list[int] = []
        self._eligible_pos: dict[int, int] = {}

    def __len__(self) -> int:
        return self._size

    def _add_eligible(self, slot: int) -> None:
        if slot in self._eligible_pos:
            return
        self._eligible_pos[slot] = len(self._eligible)
        self._eligible.append(slot)

    def _remove_eligible(self, slot: int) -> None:
        pos = self._eligible_pos.pop(slot, None)
        if pos is None:
            return
        last = self._eligible.pop()
        if pos < len(self._eligible):
            self._eligible[pos] = last
            self._eligible_pos[last] = pos

    def push(self, transition: TaggedTransition) -> None:
        old = self._slots[self._pos]
        if old is not None:
            ep = self._episodes[old.episode_id]
            del ep[old.timestep]
            self._remove_eligible(self._pos)
            if not ep:
                del self._episodes[old.episode_id]
            elif len(ep) == self.min_episode_len - 1:
                for slot in ep.values():
                    self._remove_eligible(slot)
        else:
            self._size += 1
        self._slots[self._pos] = transition
        ep = self._episodes.setdefault(transition.episode_id, {})
        ep[transition.timestep] = self._pos
        if len(ep) == self.min_episode_len:
            for slot in ep.values():
                self._add_eligible(slot)
        elif len(ep) > self.min_episode_len:
            self._add_eligible(self._pos)
        self._pos = (self._pos + 1) % self.capacity

    def episode_timesteps(self, episode_id: int) -> list[int]:
        """Resident transition timesteps of an episode, sorted."""
        return sorted(self._episodes.get(episode_id, {}))

    def num_episodes(self) -> int:
        return len(self._episodes)

    def eligible_size(self) -> int:
        return len(self._eligible)

    def ready(self, batch_size: int) -> bool:
        """True when a diverse anchor batch of the given size can be drawn."""
        if len(self._eligible) < batch_size:
            return False
        episodes = {self._slots[s].episode_id for s in self._eligible}
        return len(episodes) >= 2

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> TaggedBatch:
        """Uniform without-replacement draw over anchor-eligible transitions.

        Redrawn up to a bounded retry count until the batch spans at least
        two distinct episodes.
        """
        if len(self._eligible) < batch_size:
            raise InsufficientDiversityError(
                f"buffer has {len(self._eligible)} anchor-eligible transitions, "
                f"need {batch_size}")
        for _ in range(DIVERSITY_RETRIES):
            picks = rng.choice(len(self._eligible), size=batch_size, replace=False)
            transitions = [self._slots[self._eligible[i]] for i in picks]
            if len({t.episode_id for t in transitions}) >= 2:
                return TaggedBatch(transitions)
        raise InsufficientDiversityError(
            "could not draw a batch spanning 2 episodes; collect more data")

    def sample_same_episode_obs(self, episode_id: int, exclude: Iterable[int],
                                rng: np.random.Generator) -> Observation:
        """Observation of the episode at a timestep outside `exclude`."""
        ep = self._episodes.get(episode_id, {})
        candidates = [t for t in ep if t not in set(exclude)]
        if not candidates:
            raise InsufficientEpisodeLengthError(
                f"episode {episode_id} has no resident timestep outside {sorted(exclude)}")
        candidates.sort()
        t = candidates[rng.integers(len(candidates))]
        return self._slots[ep[t]].obs


@dataclass
class SampleSet:
    """Built pair samples, batched for the loss plus per-pair views for audit.

    `first` is the live encoder output (gradient path); each entry of
    `seconds` is a constant target-encoder latent matrix aligned with the
    anchors.
    """

    first: Tensor
    seconds: dict[str, Array]
    anchor_episodes: Array
    anchor_timesteps: Array
    partner_episodes: dict[str, Array]
    partner_timesteps: dict[str, Array]

    @property
    def kinds(self) -> list[str]:
        return list(self.seconds)

    def num_anchors(self) -> int:
        return self.first.data.shape[0]

    def pair_samples(self) -> list[PairSample]:
        """Flatten into per-pair records (temporal first, then non-temporal)."""
        z1 = self.first.data
        out = []
        for kind in self.kinds:
            z2 = self.seconds[kind]
            label = 1 if kind == KIND_TEMPORAL else 0
            for i in range(z1.shape[0]):
                out.append(PairSample(first=z1[i].copy(), second=z2[i].copy(),
                                      label=label, kind=kind))
        return out


def build_samples(batch: TaggedBatch, buffer: ReplayBuffer,
                  encoder: DenseNetParams, target_encoder: DenseNetParams,
                  rng: np.random.Generator,
                  kinds: Sequence[str] = (KIND_DIFF_EPISODE, KIND_SAME_EPISODE)) -> SampleSet:
    """Construct the temporal and requested non-temporal pair batches.

    For every anchor transition (o_t, o_{t+1}) of episode e:
      temporal   second = target(o_{t+1});
      x_prime    second = target next-obs latent of a batch transition with
                 episode != e;
      x_dprime   second = target latent of a buffer observation of episode e
                 with timestep not in {t, t+1}.
    """
    for k in kinds:
        if k not in (KIND_DIFF_EPISODE, KIND_SAME_EPISODE):
            raise ConfigError(f"unknown sample kind {k!r}")
    if not kinds:
        raise ConfigError("at least one non-temporal sample kind is required")
    episodes = batch.episode_ids()
    if len(set(episodes.tolist())) < 2:
        raise InsufficientDiversityError("batch spans a single episode")
    timesteps = np.array([t.timestep for t in batch.transitions])
    n = len(batch)

    first = net_forward(encoder, batch.obs_matrix())
    z_next = net_apply(target_encoder, batch.next_obs_matrix())

    seconds: dict[str, Array] = {KIND_TEMPORAL: z_next}
    partner_eps: dict[str, Array] = {KIND_TEMPORAL: episodes.copy()}
    partner_ts: dict[str, Array] = {KIND_TEMPORAL: timesteps + 1}

    if KIND_DIFF_EPISODE in kinds:
        js = np.empty(n, dtype=np.intp)
        for i in range(n):
            others = np.flatnonzero(episodes != episodes[i])
            js[i] = others[rng.integers(len(others))]
        seconds[KIND_DIFF_EPISODE] = z_next[js]
        partner_eps[KIND_DIFF_EPISODE] = episodes[js]
        partner_ts[KIND_DIFF_EPISODE] = timesteps[js] + 1

    if KIND_SAME_EPISODE in kinds:
        obs_rows, eps2, ts2 = [], [], []
        for tr in batch.transitions:
            o = buffer.sample_same_episode_obs(
                tr.episode_id, (tr.timestep, tr.timestep + 1), rng)
            obs_rows.append(o.data)
            eps2.append(o.episode_id)
            ts2.append(o.timestep)
        seconds[KIND_SAME_EPISODE] = net_apply(target_encoder, np.stack(obs_rows))
        partner_eps[KIND_SAME_EPISODE] = np.array(eps2)
        partner_ts[KIND_SAME_EPISODE] = np.array(ts2)

    return SampleSet(first=first, seconds=seconds, anchor_episodes=episodes,
                     anchor_timesteps=timesteps, partner_episodes=partner_eps,
                     partner_timesteps=partner_ts)
