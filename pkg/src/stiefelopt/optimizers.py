"""Gradient, momentum and Adam optimizers sharing one update pipeline.

Every step runs rgrad -> lift -> cache update -> velocity -> retraction.
For Euclidean weights the first two and the last are trivial (identity /
identity / addition); for Stiefel weights the cache math happens in the
flat (a, b) coordinates of the global tangent space, and the retraction is
the exact geodesic.

Cache arrays are plain element stores: the second moment squares every
coordinate, so it is *not* skew in its a block, and the computed velocity
is re-skewed before it is interpreted as a horizontal element again.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stiefel import (
    HorizontalElement,
    StiefelPoint,
    geodesic_step,
    lift,
    riemannian_gradient,
)

__all__ = [
    "EUCLIDEAN",
    "STIEFEL",
    "Hyperparameters",
    "AdamCache",
    "MomentumCache",
    "ScalarAdamCache",
    "adam_update_cache",
    "adam_velocity",
    "momentum_step",
    "gradient_velocity",
    "scalar_adam_update",
    "scalar_adam_velocity",
    "GradientDescent",
    "Momentum",
    "Adam",
    "make_optimizer",
    "optimizer_step",
    "section_rng",
]

# Weight kinds understood by the pipeline.
EUCLIDEAN = "euclidean"
STIEFEL = "stiefel"

# Stream tag for per-weight section sampling; must stay distinct from the
# tags used by training-loop RNG derivations.
_SECTION_STREAM = 2


@dataclass(frozen=True)
class Hyperparameters:
    """Step-size and decay settings shared by all three optimizers.

    Defaults: eta 0.001 for every optimizer, momentum alpha 0.5, Adam
    beta1 0.9 / beta2 0.99 / delta 3e-7.
    """

    eta: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.99
    delta: float = 3e-7
    alpha: float = 0.5

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")


@dataclass(frozen=True)
class AdamCache:
    """Bias-corrected first and second moments in flat coordinates."""

    b1: np.ndarray
    b2: np.ndarray
    t: int = 0


@dataclass(frozen=True)
class MomentumCache:
    """Accumulated velocity in flat coordinates."""

    bc: np.ndarray


@dataclass(frozen=True)
class ScalarAdamCache:
    """Adam variant that collapses the second moment to one scalar."""

    b1: np.ndarray
    b2: float = 0.0
    t: int = 0


def adam_update_cache(cache: AdamCache, bt: np.ndarray, t: int,
                      hp: Hyperparameters) -> AdamCache:
    """One Adam cache update; the stored moments stay bias-corrected:

        b1 <- (beta1 - beta1^t)/(1 - beta1^t) b1 + (1 - beta1)/(1 - beta1^t) bt
        b2 <- the same with beta2 and bt * bt.
    """
    if t < 1:
        raise ValueError("step counter must be >= 1")
    c1_old = (hp.beta1 - hp.beta1**t) / (1.0 - hp.beta1**t)
    c1_new = (1.0 - hp.beta1) / (1.0 - hp.beta1**t)
    c2_old = (hp.beta2 - hp.beta2**t) / (1.0 - hp.beta2**t)
    c2_new = (1.0 - hp.beta2) / (1.0 - hp.beta2**t)
    return AdamCache(
        b1=c1_old * cache.b1 + c1_new * bt,
        b2=c2_old * cache.b2 + c2_new * (bt * bt),
        t=t,
    )


def adam_velocity(cache: AdamCache, hp: Hyperparameters) -> np.ndarray:
    """Elementwise velocity -eta * b1 / sqrt(b2 + delta)."""
    return -hp.eta * cache.b1 / np.sqrt(cache.b2 + hp.delta)


def momentum_step(cache: MomentumCache, bt: np.ndarray,
                  hp: Hyperparameters) -> tuple[MomentumCache, np.ndarray]:
    """Velocity accumulation bc <- alpha bc + bt, returning -eta * bc."""
    bc = hp.alpha * cache.bc + bt
    return MomentumCache(bc=bc), -hp.eta * bc


def gradient_velocity(bt: np.ndarray, hp: Hyperparameters) -> np.ndarray:
    """Plain descent velocity -eta * bt (no cache)."""
    return -hp.eta * bt


def scalar_adam_update(cache: ScalarAdamCache, bt: np.ndarray, t: int,
                       hp: Hyperparameters) -> ScalarAdamCache:
    """Adam update with ||bt||^2 in place of the elementwise square."""
    if t < 1:
        raise ValueError("step counter must be >= 1")
    c1_old = (hp.beta1 - hp.beta1**t) / (1.0 - hp.beta1**t)
    c1_new = (1.0 - hp.beta1) / (1.0 - hp.beta1**t)
    c2_old = (hp.beta2 - hp.beta2**t) / (1.0 - hp.beta2**t)
    c2_new = (1.0 - hp.beta2) / (1.0 - hp.beta2**t)
    return ScalarAdamCache(
        b1=c1_old * cache.b1 + c1_new * bt,
        b2=float(c2_old * cache.b2 + c2_new * np.dot(bt, bt)),
        t=t,
    )


def scalar_adam_velocity(cache: ScalarAdamCache, hp: Hyperparameters) -> np.ndarray:
    """Same velocity formula as full Adam, with the scalar b2 broadcast."""
    return -hp.eta * cache.b1 / np.sqrt(cache.b2 + hp.delta)


class GradientDescent:
    """Cache-free descent; velocity is -eta times the lifted gradient."""

    name = "gradient"

    def __init__(self, hp: Hyperparameters | None = None):
        self.hp = hp or Hyperparameters()

    def init_cache(self, size: int, dtype) -> None:
        return None

    def apply(self, cache, bt: np.ndarray, t: int):
        return None, gradient_velocity(bt, self.hp)


class Momentum:
    """Heavy-ball descent with decay alpha."""

    name = "momentum"

    def __init__(self, hp: Hyperparameters | None = None):
        self.hp = hp or Hyperparameters()

    def init_cache(self, size: int, dtype) -> MomentumCache:
        return MomentumCache(bc=np.zeros(size, dtype=dtype))

    def apply(self, cache: MomentumCache, bt: np.ndarray, t: int):
        return momentum_step(cache, bt, self.hp)


class Adam:
    """Adam with the recursive bias-corrected cache form."""

    name = "adam"

    def __init__(self, hp: Hyperparameters | None = None):
        self.hp = hp or Hyperparameters()

    def init_cache(self, size: int, dtype) -> AdamCache:
        zeros = np.zeros(size, dtype=dtype)
        return AdamCache(b1=zeros, b2=zeros.copy(), t=0)

    def apply(self, cache: AdamCache, bt: np.ndarray, t: int):
        cache = adam_update_cache(cache, bt, t, self.hp)
        return cache, adam_velocity(cache, self.hp)


_OPTIMIZERS = {cls.name: cls for cls in (GradientDescent, Momentum, Adam)}


def make_optimizer(name: str, hp: Hyperparameters | None = None):
    try:
        return _OPTIMIZERS[name](hp)
    except KeyError:
        raise ValueError(f"unknown optimizer {name!r}; choose from {sorted(_OPTIMIZERS)}")


def section_rng(seed: int, t: int, weight_index: int) -> np.random.Generator:
    """Deterministic per-weight, per-step stream for section sampling."""
    return np.random.default_rng([seed, _SECTION_STREAM, t, weight_index])


def optimizer_step(optimizer, weights: list[np.ndarray], kinds: list[str],
                   grads: list[np.ndarray], caches: list, t: int, seed: int,
                   reskew: bool = True,
                   section_scrub: bool = True) -> tuple[list[np.ndarray], list]:
    """Advance every weight by one optimizer step.

    weights, kinds, grads and caches are parallel lists; kinds entries are
    EUCLIDEAN or STIEFEL.  The caller increments t exactly once per call
    (first call: t=1).  seed drives the per-weight section sampling.

    reskew=True projects each Stiefel velocity's a block back to skew
    before the retraction; section_scrub=True keeps the section's
    projection hygiene.  Disabling either exists only as a corruption hook
    for negative controls.
    """
    if not (len(weights) == len(kinds) == len(grads) == len(caches)):
        raise ValueError("weights, kinds, grads and caches must align")
    new_weights: list[np.ndarray] = []
    for i, (w, kind, g) in enumerate(zip(weights, kinds, grads)):
        if kind == STIEFEL:
            point = StiefelPoint(matrix=w)
            tangent = riemannian_gradient(point, g)
            sec, horiz = lift(point, tangent, section_rng(seed, t, i),
                              scrub=section_scrub)
            bt = horiz.to_flat()
        elif kind == EUCLIDEAN:
            bt = g.ravel()
        else:
            raise ValueError(f"unknown weight kind {kind!r}")

        caches[i], velocity = optimizer.apply(caches[i], bt, t)

        if kind == STIEFEL:
            step = HorizontalElement.from_flat(velocity, point.ambient_dim,
                                               point.subspace_dim)
            if reskew:
                step = step.with_skew_a()
            new_weights.append(geodesic_step(point, sec, step).matrix)
        else:
            new_weights.append(w + velocity.reshape(w.shape))
    return new_weights, caches
