"""Coordinatewise pair classifier and the weighted binary cross-entropy loss.

The classifier scores a latent pair (z1, z2) as

    y = sum_i ( |k1_i z1_i + k2_i z2_i + b_i| - (kbar_i z1_i + bbar_i)^2 ) + c

so each latent coordinate is judged separately; the squared term acts on z1
only and approximates its marginal log-density. Training this score to
separate temporal from non-temporal pairs pressures the encoder to carry the
temporal structure in independent coordinates.

The loss on a sample with label l is standard weighted binary cross-entropy

    -alpha * ( w * l * log sigmoid(y) + (1 - l) * log(1 - sigmoid(y)) )

averaged over all samples; positives carry weight `positive_weight`
(default 2) because each anchor contributes one temporal and two
non-temporal pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, InputShapeError, NumericalError
from .factors import Array
from .nn import (AdamState, DenseNetParams, Tensor, absolute, adam_step,
                 as_tensor, backward, concat, ema_update, log_sigmoid, matmul,
                 net_forward, square, tmean, tsum, zero_grads)
from .replay import (KIND_TEMPORAL, PairSample, ReplayBuffer, SampleSet,
                     TaggedBatch, build_samples)

VARIANT_TED = "ted"
VARIANT_LINEAR = "linear"

SAMPLES_BOTH = ("x_prime", "x_dprime")


@dataclass
class ClassifierParams:
    """Per-coordinate score parameters {k1, k2, b, kbar, bbar, c}."""

    k1: Tensor
    k2: Tensor
    b: Tensor
    kbar: Tensor
    bbar: Tensor
    c: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.k1, self.k2, self.b, self.kbar, self.bbar, self.c]

    @property
    def dim(self) -> int:
        return self.k1.data.shape[0]


def make_classifier(latent_dim: int) -> ClassifierParams:
    """k1, k2 start at one so the initial score moves with the pair; the
    density-term and offset parameters start at zero."""
    one = np.ones(latent_dim)
    zero = np.zeros(latent_dim)
    return ClassifierParams(
        k1=Tensor(one.copy(), requires_grad=True),
        k2=Tensor(one.copy(), requires_grad=True),
        b=Tensor(zero.copy(), requires_grad=True),
        kbar=Tensor(zero.copy(), requires_grad=True),
        bbar=Tensor(zero.copy(), requires_grad=True),
        c=Tensor(0.0, requires_grad=True),
    )


@dataclass
class LinearClassifierParams:
    """Ablation head: plain logistic score w . concat(z1, z2) + bias."""

    weights: Tensor
    bias: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.weights, self.bias]


def make_linear_classifier(latent_dim: int) -> LinearClassifierParams:
    return LinearClassifierParams(
        weights=Tensor(np.zeros(2 * latent_dim), requires_grad=True),
        bias=Tensor(0.0, requires_grad=True),
    )


@dataclass
class TedConfig:
    alpha: float = 1.0
    positive_weight: float = 2.0
    classifier_variant: str = VARIANT_TED
    sample_kinds: tuple[str, ...] = SAMPLES_BOTH

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("ted.alpha must be >= 0")
        if self.classifier_variant not in (VARIANT_TED, VARIANT_LINEAR):
            raise ConfigError(f"ted.classifier must be ted|linear, got {self.classifier_variant!r}")
        if not self.sample_kinds:
            raise ConfigError("ted.samples must keep at least one non-temporal kind")
        for k in self.sample_kinds:
            if k not in SAMPLES_BOTH:
                raise ConfigError(f"unknown sample kind {k!r}")


def classifier_score(z1, z2, params: ClassifierParams) -> Tensor:
    """Score a latent pair; accepts (n,) vectors or (m, n) batches.

    Returns a Tensor of shape () or (m,) through which gradients flow to
    whichever inputs and parameters are trainable.
    """
    z1, z2 = as_tensor(z1), as_tensor(z2)
    if z1.data.shape != z2.data.shape:
        raise InputShapeError("pair latents must share a shape")
    if z1.data.shape[-1] != params.dim:
        raise InputShapeError(
            f"latent dim {z1.data.shape[-1]} != classifier dim {params.dim}")
    axis = z1.data.ndim - 1
    temporal = absolute(z1 * params.k1 + z2 * params.k2 + params.b)
    marginal = square(z1 * params.kbar + params.bbar)
    return tsum(temporal - marginal, axis=axis) + params.c


def linear_classifier_score(z1, z2, params: LinearClassifierParams) -> Tensor:
    z1, z2 = as_tensor(z1), as_tensor(z2)
    pair = concat([z1, z2], axis=z1.data.ndim - 1) if z1.data.ndim > 1 \
        else concat([z1, z2], axis=0)
    if pair.data.ndim == 1:
        return tsum(pair * params.weights) + params.bias
    return matmul(pair, Tensor(params.weights.data[:, None])) @ _ones_col() \
        if False else tsum(pair * params.weights, axis=1) + params.bias


def _ones_col():  # pragma: no cover - never reached, kept for clarity of the expression above
    raise NotImplementedError


def score_samples(first, second, label_is_temporal: bool,
                  clf: ClassifierParams | LinearClassifierParams) -> Tensor:
    if isinstance(clf, LinearClassifierParams):
        return linear_classifier_score(first, second, clf)
    return classifier_score(first, second, clf)


def ted_loss(samples: Sequence[PairSample],
             clf: ClassifierParams | LinearClassifierParams,
             config: TedConfig) -> Tensor:
    """Mean weighted BCE over a flat sample list (latents enter as constants)."""
    if not samples:
        raise InputShapeError("ted_loss needs at least one sample")
    z1 = Tensor(np.stack([s.first for s in samples]))
    z2 = Tensor(np.stack([s.second for s in samples]))
    labels = np.array([s.label for s in samples], dtype=np.float64)
    y = score_samples(z1, z2, True, clf)
    return _weighted_bce(y, labels, config)


def _weighted_bce(y: Tensor, labels: Array, config: TedConfig) -> Tensor:
    if not np.all(np.isfinite(y.data)):
        raise NumericalError("non-finite classifier score")
    w = config.positive_weight
    pos = labels * w
    neg = 1.0 - labels
    per_sample = log_sigmoid(y) * pos + log_sigmoid(-y) * neg
    return tmean(per_sample) * (-config.alpha)


def ted_loss_from_set(samples: SampleSet,
                      clf: ClassifierParams | LinearClassifierParams,
                      config: TedConfig) -> Tensor:
    """Loss over a built SampleSet, keeping the encoder gradient path alive.

    The temporal block reuses the anchor latents tensor once per kind; the
    mean runs over all (1 + len(kinds)) * N samples.
    """
    ys, labels = [], []
    for kind in samples.kinds:
        second = Tensor(samples.seconds[kind])
        ys.append(score_samples(samples.first, second, kind == KIND_TEMPORAL, clf))
        labels.append(np.full(samples.num_anchors(), 1.0 if kind == KIND_TEMPORAL else 0.0))
    y_all = concat(ys, axis=0)
    return _weighted_bce(y_all, np.concatenate(labels), config)


def ted_update_step(batch: TaggedBatch, buffer: ReplayBuffer,
                    encoder: DenseNetParams, target_encoder: DenseNetParams,
                    clf: ClassifierParams | LinearClassifierParams,
                    encoder_opt: AdamState, clf_opt: AdamState,
                    config: TedConfig, rng: np.random.Generator,
                    ema_rate: float = 0.01) -> float:
    """One full auxiliary update: build pairs, descend, refresh the target.

    Backpropagates the mean loss into encoder and classifier jointly (target
    latents are constants), applies both Adam steps, then moves the target
    encoder by its EMA rate.
    """
    samples = build_samples(batch, buffer, encoder, target_encoder, rng,
                            kinds=config.sample_kinds)
    loss = ted_loss_from_set(samples, clf, config)
    enc_tensors = encoder.tensors()
    clf_tensors = clf.tensors()
    zero_grads(enc_tensors + clf_tensors)
    backward(loss)
    adam_step(encoder_opt, enc_tensors)
    adam_step(clf_opt, clf_tensors)
    ema_update(encoder, target_encoder, ema_rate)
    return loss.item()
