"""Stochastic gradient machinery: momentum SGD, rate schedules, batching.

Parameters and gradients travel as ordered ``(name, array)`` pairs so the
optimizer stays agnostic of the network container.  Updates are applied
in place; the velocity buffers live in :class:`SgdState`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


def schedule_rate(schedule: str, base: float, epoch: int, gamma: float = 0.0) -> float:
    """Learning rate at a given epoch.

    ``constant`` returns ``base`` regardless of epoch; ``inverse_time``
    returns ``base / (1 + gamma * epoch)``.
    """
    if base <= 0:
        raise ValueError(f"base rate must be positive, got {base}")
    if schedule == "constant":
        return base
    if schedule == "inverse_time":
        if gamma < 0:
            raise ValueError(f"inverse_time decay factor must be >= 0, got {gamma}")
        return base / (1.0 + gamma * epoch)
    raise ValueError(f"unknown schedule {schedule!r}")


@dataclass
class SgdState:
    """Velocity buffers plus step bookkeeping for (Nesterov) momentum SGD."""

    base_rate: float
    momentum: float = 0.9
    nesterov: bool = True
    schedule: str = "constant"
    gamma: float = 0.0
    epoch: int = 0
    step: int = 0
    velocities: dict[str, np.ndarray] = field(default_factory=dict)

    def rate(self) -> float:
        return schedule_rate(self.schedule, self.base_rate, self.epoch, self.gamma)


def init_sgd_state(
    named_params,
    base_rate: float,
    momentum: float = 0.9,
    nesterov: bool = True,
    schedule: str = "constant",
    gamma: float = 0.0,
) -> SgdState:
    """Allocate zero velocity buffers mirroring every parameter array."""
    state = SgdState(
        base_rate=base_rate,
        momentum=momentum,
        nesterov=nesterov,
        schedule=schedule,
        gamma=gamma,
    )
    for name, arr in named_params:
        state.velocities[name] = np.zeros_like(arr)
    # Validates the schedule arguments up front.
    state.rate()
    return state


def sgd_step(state: SgdState, named_params, named_grads):
    """One momentum step over all parameter arrays, in place.

    The classic update is ``v <- momentum * v - rate * g`` followed by
    ``theta <- theta + v``.  With ``nesterov=True`` the parameter instead
    moves by the lookahead step ``momentum * v - rate * g`` after the
    velocity update.

    Raises
    ------
    ValueError
        If any gradient contains non-finite entries (the message names
        the offending array).
    ShapeError
        If a gradient shape disagrees with its parameter.
    """
    rate = state.rate()
    beta = state.momentum
    for (pname, theta), (gname, g) in zip(named_params, named_grads):
        if pname != gname:
            raise ValueError(f"parameter/gradient order mismatch: {pname} vs {gname}")
        if theta.shape != g.shape:
            raise ShapeError(
                f"gradient for {pname} has shape {g.shape}, expected {theta.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {pname}")
        v = state.velocities[pname]
        v *= beta
        v -= rate * g
        if state.nesterov:
            theta += beta * v - rate * g
        else:
            theta += v
    state.step += 1
    return named_params, state


@dataclass
class BatchPlan:
    """A seeded epoch permutation chopped into mini-batches.

    The permutation is a bijection on ``range(n)``; the final batch keeps
    whatever remainder is left, so every epoch visits each sample exactly
    once.
    """

    permutation: np.ndarray
    batch_size: int
    seed: int

    def batches(self):
        n = self.permutation.shape[0]
        for start in range(0, n, self.batch_size):
            yield self.permutation[start : start + self.batch_size]

    def __iter__(self):
        return self.batches()


def make_batches(n: int, batch_size: int, seed) -> BatchPlan:
    """Deterministic shuffled batch plan for one epoch.

    Raises
    ------
    ValueError
        If ``batch_size`` is not in ``[1, n]``.
    """
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}], got {batch_size}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return BatchPlan(permutation=perm, batch_size=int(batch_size), seed=seed)
