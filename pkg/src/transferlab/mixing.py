"""Mixing coefficients, blocking, decoupling, and dependency-matrix machinery.

Exact conditional-TV mixing coefficients are computed for finite Markov
chains; Gaussian linear systems get a geometric expected-TV surrogate
(a true uniform conditional-TV coefficient does not exist for unbounded
Gaussian conditioning events, so the profile carries an explicit surrogate
flag). Both feed the inflation factor used by burn-in bookkeeping, the
dependency-matrix norm bound, block partitioning, decoupled resampling, and
block-length selection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CovariateLaw, LdsLaw, spectral_norm, stationary_distribution
from .errors import BadPartition, InvalidMatrix, SampleTooShort, UnstableSystem


@dataclass(frozen=True)
class ExactProfile:
    """Exactly computed mixing coefficients phi(1..max_lag), optionally with a
    geometric tail bound phi(l) <= tail_gamma * tail_rho^l for l > max_lag."""

    phi: np.ndarray
    tail_gamma: float | None = None
    tail_rho: float | None = None

    kind = "exact"

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        phi.setflags(write=False)
        if phi.ndim != 1 or phi.size < 1:
            raise ValueError("phi must be a nonempty 1-D sequence")
        if phi.min() < -1e-12 or phi.max() > 1.0 + 1e-12:
            raise ValueError("phi values must lie in [0, 1]")
        if np.any(np.diff(phi) > 1e-12):
            raise ValueError("phi must be non-increasing in the lag")
        if (self.tail_gamma is None) != (self.tail_rho is None):
            raise ValueError("tail_gamma and tail_rho must be given together")
        if self.tail_rho is not None and not (0.0 <= self.tail_rho < 1.0):
            raise ValueError("tail_rho must lie in [0, 1)")
        object.__setattr__(self, "phi", phi)

    @property
    def max_lag(self) -> int:
        return self.phi.size

    def phi_at(self, lag: int) -> float:
        """phi at an integer lag >= 1; beyond max_lag the tail bound (or 0)."""
        if lag < 1:
            raise ValueError("lag must be >= 1")
        if lag <= self.phi.size:
            return float(self.phi[lag - 1])
        if self.tail_gamma is not None:
            return min(1.0, self.tail_gamma * self.tail_rho ** lag)
        return 0.0


@dataclass(frozen=True)
class GeometricProfile:
    """Geometric mixing envelope phi(k) <= gamma * rho^k.

    ``beta_surrogate`` marks profiles whose coefficients bound an expected
    (beta-type) TV rather than the uniform conditional TV.
    """

    gamma: float
    rho: float
    beta_surrogate: bool = False

    kind = "geometric"

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if not (0.0 <= self.rho < 1.0):
            raise ValueError("rho must lie in [0, 1)")


MixingProfile = ExactProfile | GeometricProfile


def phi_markov(p: np.ndarray, max_lag: int) -> ExactProfile:
    """Exact mixing coefficients of a stationary finite Markov chain.

    For a Markov chain the conditional law given the whole past depends only
    on the current state, so phi(i) = max_s TV(P^i(s, .), pi), computed by
    matrix powers with TV as half the L1 row distance to the stationary
    distribution.

    Raises
    ------
    NotErgodic
        If the chain has no unique stationary distribution.
    """
    p = np.asarray(p, dtype=float)
    if np.abs(p.sum(axis=1) - 1.0).max() > 1e-10:
        raise InvalidMatrix("transition rows must sum to 1")
    pi = stationary_distribution(p)
    phi = np.empty(max_lag)
    power = np.eye(p.shape[0])
    for i in range(max_lag):
        power = power @ p
        phi[i] = 0.5 * np.abs(power - pi[None, :]).sum(axis=1).max()
    # exact powers can wobble at machine precision; enforce monotone shape
    phi = np.minimum.accumulate(np.clip(phi, 0.0, 1.0))
    return ExactProfile(phi=phi)


def geometric_profile_from_lds(a: np.ndarray, mc_samples: int = 100_000,
                               seed: int = 0) -> GeometricProfile:
    """Geometric expected-TV mixing surrogate for a stable Gaussian LDS.

    The decay rate is the covariance contraction rate rho = rho(A)^2 and
    gamma is fitted so that gamma * rho equals the lag-1 Monte Carlo average
    of the Pinsker bound sqrt(KL/2) between the one-step conditional
    N(Ax, I) and the stationary law, over stationary states x. The uniform
    conditional-TV coefficient of a Gaussian LDS is unbounded, so the profile
    is flagged ``beta_surrogate``.

    Raises
    ------
    UnstableSystem
        If the spectral radius of A is >= 1.
    """
    law = LdsLaw(a=a)  # validates stability
    rho0 = law.spectral_radius
    rho = rho0 ** 2
    if rho == 0.0:
        return GeometricProfile(gamma=0.0, rho=0.0, beta_surrogate=True)
    sigma = law.second_moment()
    sigma_inv = np.linalg.inv(sigma)
    d = sigma.shape[0]
    _, logdet = np.linalg.slogdet(sigma)
    rng = np.random.default_rng(seed)
    x = law.sample_marginal(max(1, mc_samples), rng)
    mean_shift = np.einsum("ij,jk,ik->i", x @ law.a.T, sigma_inv, x @ law.a.T)
    kl = 0.5 * (np.trace(sigma_inv) - d + mean_shift + logdet)
    tv1 = float(np.mean(np.minimum(1.0, np.sqrt(np.maximum(kl, 0.0) / 2.0))))
    return GeometricProfile(gamma=tv1 / rho, rho=rho, beta_surrogate=True)


def expand_geometric(profile: GeometricProfile, max_lag: int) -> ExactProfile:
    """Geometric profile as explicit lags, anchored so phi(1) = gamma.

    With phi(lag) = gamma * rho^(lag-1) the closed form gamma / (1-sqrt(rho))^2
    is the exact infinite-lag limit of the mixing inflation series. Values
    are clipped into [0, 1].
    """
    lags = np.arange(max_lag)
    phi = np.clip(profile.gamma * profile.rho ** lags, 0.0, 1.0)
    return ExactProfile(phi=phi)


def phi_capital(profile: MixingProfile) -> float:
    """Mixing inflation factor: the squared sum of root coefficients.

    Geometric profiles use the closed form gamma / (1 - sqrt(rho))^2; exact
    profiles sum sqrt(phi) over stored lags plus the geometric tail when one
    is attached.
    """
    if isinstance(profile, GeometricProfile):
        if profile.gamma == 0.0:
            return 0.0
        return profile.gamma / (1.0 - math.sqrt(profile.rho)) ** 2
    s = float(np.sqrt(profile.phi).sum())
    if profile.tail_gamma is not None and profile.tail_gamma > 0:
        root_rho = math.sqrt(profile.tail_rho)
        s += math.sqrt(profile.tail_gamma) * root_rho ** (profile.max_lag + 1) / (1.0 - root_rho)
    return s * s


@dataclass(frozen=True)
class DependencyBound:
    matrix: np.ndarray
    spectral_norm: float


def dependency_matrix_bound(profile: MixingProfile, n: int) -> DependencyBound:
    """Upper-triangular dependency-matrix bound and its spectral norm.

    Unit diagonal, entry sqrt(2 * phi(j - i)) above it. The norm always
    satisfies ||G|| <= 1 + sqrt(2) * sum_i sqrt(phi(i)) (Schur test on the
    banded triangle); this is checked.
    """
    exact = expand_geometric(profile, n) if isinstance(profile, GeometricProfile) else profile
    m = np.eye(n)
    for lag in range(1, n):
        val = math.sqrt(2.0 * min(exact.phi_at(lag), 1.0))
        idx = np.arange(n - lag)
        m[idx, idx + lag] = val
    norm = spectral_norm(m)
    cap = 1.0 + math.sqrt(2.0) * sum(math.sqrt(exact.phi_at(lag)) for lag in range(1, n))
    assert norm <= cap + 1e-9, f"dependency norm {norm} exceeds its bound {cap}"
    return DependencyBound(matrix=m, spectral_norm=norm)


@dataclass(frozen=True)
class BlockPartition:
    """[0..n) tiled into an even number of consecutive equal blocks of length k."""

    n: int
    k: int
    blocks: tuple[tuple[int, int], ...]  # half-open (start, stop) ranges

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def odd_blocks(self) -> tuple[tuple[int, int], ...]:
        """Blocks a_1, a_3, ... in 1-based blocking order."""
        return self.blocks[0::2]

    @property
    def even_blocks(self) -> tuple[tuple[int, int], ...]:
        """Blocks a_2, a_4, ... in 1-based blocking order."""
        return self.blocks[1::2]


def make_blocks(n: int, k: int) -> BlockPartition:
    """Partition [0..n) into 2m consecutive blocks of equal length k.

    Raises
    ------
    BadPartition
        If k does not divide n or n/k is odd.
    """
    if k < 1 or n < 1:
        raise BadPartition("need n >= 1 and k >= 1")
    if n % k != 0:
        raise BadPartition(f"block length {k} does not divide {n}")
    if (n // k) % 2 != 0:
        raise BadPartition(f"n/k = {n // k} must be even")
    blocks = tuple((i * k, (i + 1) * k) for i in range(n // k))
    return BlockPartition(n=n, k=k, blocks=blocks)


def decouple_trajectory(law: CovariateLaw, partition: BlockPartition,
                        seed: int = 0) -> np.ndarray:
    """Blockwise-decoupled sample: block marginals preserved, blocks independent.

    Each block is generated as a fresh stationary trajectory segment of
    length k, so the within-block law matches the original process exactly
    while distinct blocks are exactly independent.
    """
    rng = np.random.default_rng(seed)
    out = np.empty((partition.n, law.d_x))
    for start, stop in partition.blocks:
        out[start:stop] = law.sample_path(stop - start, rng, burn_in=0)
    return out


def select_block_length(profile: GeometricProfile, m_samples: int, delta: float) -> int:
    """Smallest admissible block length for a geometric profile.

    Raw value log(gamma * m / delta) / log(1 / rho), rounded up, then
    adjusted upward to the nearest divisor k of m_samples with m_samples/k
    even. The returned k always satisfies (m_samples / k) * gamma * rho^k
    <= delta.

    Raises
    ------
    SampleTooShort
        If no admissible k <= m_samples / 2 exists.
    """
    if not isinstance(profile, GeometricProfile):
        raise TypeError("select_block_length expects a geometric profile")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    gamma, rho = profile.gamma, profile.rho
    if rho == 0.0 or gamma * m_samples <= delta:
        k_min = 1
    else:
        k_min = max(1, math.ceil(math.log(gamma * m_samples / delta) / math.log(1.0 / rho)))
    for k in range(k_min, m_samples // 2 + 1):
        if m_samples % k == 0 and (m_samples // k) % 2 == 0:
            assert (m_samples / k) * gamma * rho ** k <= delta + 1e-12, \
                "selected block length violates its tail condition"
            return k
    raise SampleTooShort(
        f"no divisor k of {m_samples} with even quotient in [{k_min}, {m_samples // 2}]")


def profile_to_json(profile: MixingProfile) -> dict:
    if isinstance(profile, GeometricProfile):
        return {"kind": "geometric", "gamma": profile.gamma, "rho": profile.rho,
                "beta_surrogate": profile.beta_surrogate,
                "phi_capital": phi_capital(profile)}
    out = {"kind": "exact", "phi": profile.phi.tolist(), "phi_capital": phi_capital(profile)}
    if profile.tail_gamma is not None:
        out["tail"] = {"gamma": profile.tail_gamma, "rho": profile.tail_rho}
    return out
