"""Truncated cylindrical Wiener driver and Hilbert-Schmidt diffusion coefficients.

The driving space is the span of the first K h-orthonormal sine modes of the
grid.  The diffusion coefficient acts as ``B(u) dw = sum_k b_k * sigma(u) .*
e_k * dw_k`` with a scalar Lipschitz gain ``sigma`` (constant 1 for additive
noise, clipped-linear or tanh for diagonal multiplicative noise).

Increments come from counter-based Philox streams keyed by (master seed,
path index), so every path is bitwise reproducible and paths never share
state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from dnpde import grid as gridmod

__all__ = [
    "Gain",
    "AdditiveGain",
    "ClippedLinearGain",
    "TanhGain",
    "NoiseModel",
    "PathSeed",
    "make_gain",
    "sample_increments",
    "aggregate_increments",
    "increment_checksum",
    "apply_b",
    "hs_norm",
    "smooth_noise",
    "default_bound",
    "amplitudes_power_law",
]

_MASK64 = (1 << 64) - 1


class Gain:
    """Scalar gain ``sigma`` with stated Lipschitz constant."""

    kind = "base"
    lipschitz = 1.0

    def __call__(self, u):
        raise NotImplementedError

    @property
    def sup(self):
        """Uniform bound on |sigma| (inf if unbounded)."""
        return np.inf

    def _key(self):
        return (type(self).__name__,)

    def __eq__(self, other):
        return type(other) is type(self) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())


class AdditiveGain(Gain):
    """sigma == 1: additive noise."""

    kind = "additive"
    lipschitz = 0.0

    def __call__(self, u):
        return np.ones_like(np.asarray(u, dtype=float))

    @property
    def sup(self):
        return 1.0


class ClippedLinearGain(Gain):
    """sigma(u) = clip(u, -limit, limit); 1-Lipschitz, bounded."""

    kind = "clipped"
    lipschitz = 1.0

    def __init__(self, limit=1.0):
        if not limit > 0:
            raise ValueError("limit must be positive")
        self.limit = float(limit)

    def _key(self):
        return (type(self).__name__, self.limit)

    def __call__(self, u):
        return np.clip(u, -self.limit, self.limit)

    @property
    def sup(self):
        return self.limit


class TanhGain(Gain):
    """sigma(u) = tanh(u): bounded and smooth, 1-Lipschitz."""

    kind = "tanh"
    lipschitz = 1.0

    def __call__(self, u):
        return np.tanh(u)

    @property
    def sup(self):
        return 1.0


def make_gain(kind, **params):
    if kind == "additive":
        return AdditiveGain()
    if kind == "clipped":
        return ClippedLinearGain(**params)
    if kind == "tanh":
        return TanhGain()
    raise ValueError(f"unknown gain kind {kind!r}")


def amplitudes_power_law(K, c, q):
    """b_k = c * k**(-q) for k = 1..K."""
    k = np.arange(1, K + 1, dtype=float)
    return tuple(c * k**-q)


@dataclass(frozen=True)
class NoiseModel:
    """Truncated spectral noise: per-mode amplitudes, gain, declared HS bound."""

    amplitudes: tuple
    gain: Gain
    bound: float | None = None

    def __post_init__(self):
        amps = tuple(float(a) for a in self.amplitudes)
        if not amps:
            raise ValueError("need at least one mode amplitude")
        object.__setattr__(self, "amplitudes", amps)
        if self.bound is not None and not self.bound > 0:
            raise ValueError("declared bound must be positive")

    @property
    def mode_count(self):
        return len(self.amplitudes)

    def is_additive(self):
        return isinstance(self.gain, AdditiveGain)


@dataclass(frozen=True)
class PathSeed:
    """Counter-based stream identity: one independent substream per path."""

    master_seed: int
    path_index: int = 0

    def generator(self):
        key = [self.master_seed & _MASK64, self.path_index & _MASK64]
        return np.random.Generator(np.random.Philox(key=key))


def sample_increments(seed: PathSeed, n_steps, dt, K):
    """Table of independent N(0, dt) increments, shape (n_steps, K).

    Bitwise reproducible from the seed: the same (master_seed, path_index)
    always yields the same table for a given shape.
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if n_steps < 0 or K < 1:
        raise ValueError("need n_steps >= 0 and K >= 1")
    g = seed.generator()
    z = g.standard_normal((int(n_steps), int(K)))
    return np.sqrt(dt) * z


def aggregate_increments(table, factor):
    """Sum consecutive groups of ``factor`` rows: couples dt levels to one path."""
    table = np.asarray(table)
    n, K = table.shape[0], table.shape[1:]
    if factor < 1 or n % factor:
        raise ValueError("factor must divide the number of steps")
    return table.reshape((n // factor, factor) + K).sum(axis=1)


def increment_checksum(table):
    """SHA-256 of the raw increment bytes (certifies path coupling)."""
    a = np.ascontiguousarray(np.asarray(table, dtype=float))
    return hashlib.sha256(a.tobytes()).hexdigest()


def _modes(model, grid):
    alphas, modes = gridmod.sine_eigenpairs(grid, model.mode_count)
    return alphas, modes


def apply_b(model: NoiseModel, grid, u, dw):
    """Apply the diffusion coefficient to an increment vector.

    ``u`` is a node array (trailing batch axes allowed), ``dw`` has shape
    (K,) or (K, *batch).  Returns ``sigma(u) .* sum_k b_k dw_k e_k``.
    """
    _, modes = _modes(model, grid)
    dw = np.asarray(dw, dtype=float)
    if dw.shape[0] != model.mode_count:
        raise ValueError("increment vector length does not match mode count")
    coeff = np.asarray(model.amplitudes)[(slice(None),) + (None,) * (dw.ndim - 1)] * dw
    # (K, *nodes) x (K, *batch) -> (*nodes, *batch)
    field = np.tensordot(modes, coeff, axes=(0, 0))
    return model.gain(u) * field


def hs_norm(model: NoiseModel, grid, u):
    """Hilbert-Schmidt norm of ``B(u)``: sqrt(sum_k b_k^2 ||sigma(u) e_k||^2)."""
    _, modes = _modes(model, grid)
    s = model.gain(np.asarray(u, dtype=float))
    total = 0.0
    for bk, ek in zip(model.amplitudes, modes):
        ek = ek[(...,) + (None,) * (s.ndim - grid.dim)]
        total = total + bk * bk * gridmod.dot_h(grid, s * ek, s * ek)
    return np.sqrt(total)


def smooth_noise(model: NoiseModel, delta, m, grid) -> NoiseModel:
    """Elliptic smoothing of the coefficient: b_k -> b_k (1 + delta*alpha_k)**(-m)."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if m < 1:
        raise ValueError("m must be >= 1")
    if delta == 0:
        return model
    alphas, _ = _modes(model, grid)
    amps = tuple(
        b * (1.0 + delta * a) ** (-m) for b, a in zip(model.amplitudes, alphas)
    )
    return NoiseModel(amps, model.gain, model.bound)


def default_bound(model: NoiseModel, grid):
    """A valid declared N_B for the catalog gains on this grid.

    Additive: the constant HS norm.  Multiplicative: the catalog gains vanish
    at 0 and are L-Lipschitz, so ``HS(u) <= sqrt(max_i sum_k b_k^2 e_k(i)^2)
    * L * ||u||`` bounds both the linear-growth and the Lipschitz condition.
    """
    _, modes = _modes(model, grid)
    if model.is_additive():
        return float(np.sqrt(sum(b * b for b in model.amplitudes)))
    b2 = np.asarray(model.amplitudes) ** 2
    spectral_sum = np.tensordot(b2, np.asarray(modes) ** 2, axes=(0, 0))
    return float(np.sqrt(spectral_sum.max())) * model.gain.lipschitz
