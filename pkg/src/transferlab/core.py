"""Shared domain types and matrix primitives.

Every other module consumes the types defined here: problem dimensions,
per-task datasets, linear heads, representation hypotheses, covariate laws,
and the full generative description of a task population. All types are
immutable after construction (arrays are marked read-only), and all
operations are pure functions of their inputs.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidMatrix, NotPSD, NotErgodic, UnstableSystem

# Relative singular-value / eigenvalue cutoff used by every pseudo-inverse
# in the package. Matches double-precision conditioning at the dimensions
# this laboratory runs at (a few hundred at most).
RANK_TOL = 1e-10


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def _require_finite(m: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(m)):
        raise InvalidMatrix(f"{name} contains non-finite entries")


# ---------------------------------------------------------------------------
# Matrix primitives
# ---------------------------------------------------------------------------

def pinv(m: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse with a relative singular-value cutoff.

    Singular values below ``tol * sigma_max`` are treated as zero. Satisfies
    the four Penrose identities to high relative accuracy.

    Raises
    ------
    InvalidMatrix
        If the input has non-finite entries.
    """
    m = np.asarray(m, dtype=float)
    _require_finite(m, "pinv input")
    if m.ndim != 2:
        raise InvalidMatrix("pinv expects a 2-D array")
    return np.linalg.pinv(m, rcond=tol)


def sqrt_psd(m: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Symmetric square root of a symmetric PSD matrix.

    Eigenvalues in ``[-tol_eff, 0)`` are clipped to zero, where
    ``tol_eff = tol * max(1, |lambda|_max)``; anything further below zero
    raises. The result S is symmetric with ``S @ S == m`` up to roundoff.

    Raises
    ------
    InvalidMatrix
        If the input is non-finite or not symmetric within 1e-10.
    NotPSD
        If an eigenvalue lies below ``-tol_eff``.
    """
    m = np.asarray(m, dtype=float)
    _require_finite(m, "sqrt_psd input")
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidMatrix("sqrt_psd expects a square matrix")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if np.abs(m - m.T).max(initial=0.0) > 1e-10 * scale:
        raise InvalidMatrix("sqrt_psd expects a symmetric matrix")
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    tol_eff = tol * max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -tol_eff:
        raise NotPSD(f"eigenvalue {w.min():g} below -{tol_eff:g}")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def inv_sqrt_psd(m: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Pseudo-inverse square root M^{+/2} of a symmetric PSD matrix.

    Eigenvalues below ``tol * lambda_max`` are treated as zero (their inverse
    square root is set to zero), so rank-deficient inputs are handled.
    """
    m = np.asarray(m, dtype=float)
    _require_finite(m, "inv_sqrt_psd input")
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    cutoff = tol * max(w.max(initial=0.0), 0.0)
    inv_root = np.where(w > max(cutoff, 0.0), 1.0 / np.sqrt(np.clip(w, 1e-300, None)), 0.0)
    return (v * inv_root) @ v.T


def spectral_norm(m: np.ndarray) -> float:
    """Largest singular value."""
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return 0.0
    return float(np.linalg.norm(m, 2))


def logdet_psd(m: np.ndarray) -> float:
    """Log-determinant of a symmetric positive definite matrix."""
    sign, val = np.linalg.slogdet(np.asarray(m, dtype=float))
    if sign <= 0:
        raise NotPSD("logdet_psd expects a positive definite matrix")
    return float(val)


# ---------------------------------------------------------------------------
# Dimensions and datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dims:
    """Problem dimensions: covariates in R^{d_x}, labels in R^{d_y}, features in R^r."""

    d_x: int
    d_y: int
    r: int

    def __post_init__(self):
        if min(self.d_x, self.d_y, self.r) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.r > self.d_x:
            raise ValueError(f"r={self.r} must not exceed d_x={self.d_x}")


class DatasetKind(enum.Enum):
    IID_DRAW = "iid_draw"
    TRAJECTORY = "trajectory"


@dataclass(frozen=True)
class TaskDataset:
    """One task's covariate/label sample with provenance."""

    task_id: int
    covariates: np.ndarray  # N x d_x
    labels: np.ndarray      # N x d_y
    kind: DatasetKind = DatasetKind.IID_DRAW

    def __post_init__(self):
        x = _readonly(np.atleast_2d(self.covariates))
        y = _readonly(np.atleast_2d(self.labels))
        if x.shape[0] != y.shape[0] or x.shape[0] < 1:
            raise ValueError("covariates and labels need an equal, positive row count")
        _require_finite(x, "covariates")
        _require_finite(y, "labels")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]


@dataclass(frozen=True)
class LinearHead:
    """Task-specific linear map F: R^r -> R^{d_y}.

    ``frobenius_bound == 0`` means unconstrained; otherwise ||F||_F must not
    exceed it.
    """

    f: np.ndarray  # d_y x r
    frobenius_bound: float = 0.0

    def __post_init__(self):
        f = _readonly(np.atleast_2d(self.f))
        _require_finite(f, "head matrix")
        if self.frobenius_bound < 0:
            raise ValueError("frobenius_bound must be nonnegative")
        if self.frobenius_bound > 0:
            nrm = float(np.linalg.norm(f))
            if nrm > self.frobenius_bound * (1 + 1e-12):
                raise ValueError(
                    f"||F||_F = {nrm:g} exceeds declared bound {self.frobenius_bound:g}")
        object.__setattr__(self, "f", f)

    @property
    def d_y(self) -> int:
        return self.f.shape[0]

    @property
    def r(self) -> int:
        return self.f.shape[1]


# ---------------------------------------------------------------------------
# Representations
# ---------------------------------------------------------------------------

class Representation:
    """A map g: R^{d_x} -> R^r applied row-wise to sample matrices."""

    sup_bound: float
    out_dim: int
    in_dim: int

    def features(self, x: np.ndarray) -> np.ndarray:
        """Apply g to each row of an (n, d_x) array, returning (n, r)."""
        raise NotImplementedError


@dataclass(frozen=True)
class LinearRep(Representation):
    """g(x) = G x for a full-row-rank G in R^{r x d_x}.

    sup_bound is declared metadata (0 = unbounded), since a linear map has no
    finite sup norm on all of R^{d_x}.
    """

    g: np.ndarray
    sup_bound: float = 0.0

    def __post_init__(self):
        g = _readonly(np.atleast_2d(self.g))
        _require_finite(g, "representation matrix")
        s = np.linalg.svd(g, compute_uv=False)
        if s.size == 0 or s[-1] < RANK_TOL * s[0]:
            raise InvalidMatrix("linear representation must have full row rank")
        object.__setattr__(self, "g", g)

    @property
    def out_dim(self) -> int:
        return self.g.shape[0]

    @property
    def in_dim(self) -> int:
        return self.g.shape[1]

    def features(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.g.T


@dataclass(frozen=True)
class TanhFeatures:
    """Family descriptor for g_theta(x) = tanh(W x), theta = vec(W), W in R^{r x d_x}."""

    r: int
    d_x: int

    @property
    def d_theta(self) -> int:
        return self.r * self.d_x


@dataclass(frozen=True)
class TanhRep(Representation):
    """g(x) = tanh(W x) elementwise; ||g(x)||_2 <= sqrt(r) for all x."""

    w: np.ndarray  # r x d_x

    def __post_init__(self):
        w = _readonly(np.atleast_2d(self.w))
        _require_finite(w, "tanh feature weights")
        object.__setattr__(self, "w", w)

    @property
    def sup_bound(self) -> float:
        return float(np.sqrt(self.out_dim))

    @property
    def out_dim(self) -> int:
        return self.w.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w.shape[1]

    @property
    def theta(self) -> np.ndarray:
        return self.w.reshape(-1)

    @property
    def family(self) -> TanhFeatures:
        return TanhFeatures(r=self.out_dim, d_x=self.in_dim)

    def features(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(np.asarray(x, dtype=float) @ self.w.T)


@dataclass(frozen=True)
class FiniteMember(Representation):
    """A member of a finite representation dictionary, tagged with its origin."""

    member: Representation
    index: int
    dictionary_id: str = ""

    @property
    def sup_bound(self) -> float:
        return self.member.sup_bound

    @property
    def out_dim(self) -> int:
        return self.member.out_dim

    @property
    def in_dim(self) -> int:
        return self.member.in_dim

    def features(self, x: np.ndarray) -> np.ndarray:
        return self.member.features(x)


# ---------------------------------------------------------------------------
# Covariate laws
# ---------------------------------------------------------------------------

class CovariateLaw:
    """Marginal/stationary covariate distribution on R^{d_x}.

    Every law exposes an exact second-moment matrix and seeded marginal
    sampling. Trajectory laws additionally expose path sampling.
    """

    d_x: int
    is_trajectory: bool = False

    def second_moment(self) -> np.ndarray:
        raise NotImplementedError

    def sample_marginal(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample_path(self, n: int, rng: np.random.Generator, burn_in: int = 0) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianLaw(CovariateLaw):
    """Zero-mean Gaussian covariates with covariance sigma_x (symmetric PSD)."""

    sigma_x: np.ndarray

    def __post_init__(self):
        s = _readonly(np.atleast_2d(self.sigma_x))
        _require_finite(s, "sigma_x")
        if s.shape[0] != s.shape[1]:
            raise InvalidMatrix("sigma_x must be square")
        root = sqrt_psd(s)  # raises NotPSD / InvalidMatrix on bad input
        object.__setattr__(self, "sigma_x", s)
        object.__setattr__(self, "_root", _readonly(root))

    @property
    def d_x(self) -> int:
        return self.sigma_x.shape[0]

    def second_moment(self) -> np.ndarray:
        return np.array(self.sigma_x)

    def sample_marginal(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.d_x)) @ self._root.T

    def sample_path(self, n: int, rng: np.random.Generator, burn_in: int = 0) -> np.ndarray:
        # iid law: a "path" is just an iid draw; burn-in is irrelevant.
        return self.sample_marginal(n, rng)


def lds_stationary_covariance(a: np.ndarray) -> np.ndarray:
    """Stationary covariance of x_{i+1} = A x_i + w_i with identity process noise.

    Solves Sigma = A Sigma A^T + I (equivalently Sigma = sum_k A^k (A^k)^T).

    Raises
    ------
    UnstableSystem
        If the spectral radius of A is >= 1.
    """
    import scipy.linalg

    a = np.asarray(a, dtype=float)
    _require_finite(a, "system matrix")
    rho = float(np.abs(np.linalg.eigvals(a)).max()) if a.size else 0.0
    if rho >= 1.0:
        raise UnstableSystem(f"spectral radius {rho:g} >= 1")
    sigma = scipy.linalg.solve_discrete_lyapunov(a, np.eye(a.shape[0]))
    return 0.5 * (sigma + sigma.T)


@dataclass(frozen=True)
class LdsLaw(CovariateLaw):
    """Stationary linear dynamical system x_{i+1} = A x_i + w_i, w_i ~ N(0, I)."""

    a: np.ndarray

    is_trajectory = True

    def __post_init__(self):
        a = _readonly(np.atleast_2d(self.a))
        sigma = lds_stationary_covariance(a)  # validates stability
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "_sigma", _readonly(sigma))
        object.__setattr__(self, "_sigma_root", _readonly(sqrt_psd(sigma)))

    @property
    def d_x(self) -> int:
        return self.a.shape[0]

    @property
    def spectral_radius(self) -> float:
        return float(np.abs(np.linalg.eigvals(self.a)).max())

    def second_moment(self) -> np.ndarray:
        return np.array(self._sigma)

    def sample_marginal(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.d_x)) @ self._sigma_root.T

    def sample_path(self, n: int, rng: np.random.Generator, burn_in: int = 0) -> np.ndarray:
        x = self._sigma_root @ rng.standard_normal(self.d_x)
        noise = rng.standard_normal((burn_in + n, self.d_x))
        out = np.empty((n, self.d_x))
        for i in range(burn_in + n):
            x = self.a @ x + noise[i]
            if i >= burn_in:
                out[i - burn_in] = x
        return out


@dataclass(frozen=True)
class MarkovLaw(CovariateLaw):
    """Finite stationary Markov chain embedded into R^{d_x}.

    State s maps to the indicator e_s padded or truncated to d_x, then
    centered to zero mean under the stationary distribution. This gives a
    bounded covariate source whose mixing coefficients are exactly
    computable.
    """

    transition: np.ndarray  # S x S row-stochastic
    d_x: int

    is_trajectory = True

    def __post_init__(self):
        p = _readonly(np.atleast_2d(self.transition))
        _require_finite(p, "transition matrix")
        if p.shape[0] != p.shape[1]:
            raise InvalidMatrix("transition matrix must be square")
        if np.any(p < -1e-15):
            raise InvalidMatrix("transition matrix must be nonnegative")
        if np.abs(p.sum(axis=1) - 1.0).max() > 1e-12:
            raise InvalidMatrix("transition rows must sum to 1 within 1e-12")
        pi = stationary_distribution(p)
        base = np.zeros((p.shape[0], self.d_x))
        for s in range(min(p.shape[0], self.d_x)):
            base[s, s] = 1.0
        emb = base - pi @ base
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "_pi", _readonly(pi))
        object.__setattr__(self, "_embedding", _readonly(emb))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def stationary(self) -> np.ndarray:
        return np.array(self._pi)

    @property
    def embedding(self) -> np.ndarray:
        """(S, d_x) matrix whose row s is the centered embedding of state s."""
        return np.array(self._embedding)

    def second_moment(self) -> np.ndarray:
        return self._embedding.T @ (self._pi[:, None] * self._embedding)

    def sample_states(self, n: int, rng: np.random.Generator) -> np.ndarray:
        states = np.empty(n, dtype=int)
        cum = np.cumsum(self.transition, axis=1)
        s = int(rng.choice(self.n_states, p=self._pi))
        u = rng.random(n)
        for i in range(n):
            s = min(int(np.searchsorted(cum[s], u[i], side="right")), self.n_states - 1)
            states[i] = s
        return states

    def sample_marginal(self, n: int, rng: np.random.Generator) -> np.ndarray:
        states = rng.choice(self.n_states, size=n, p=self._pi)
        return self._embedding[states]

    def sample_path(self, n: int, rng: np.random.Generator, burn_in: int = 0) -> np.ndarray:
        states = self.sample_states(burn_in + n, rng)
        return self._embedding[states[burn_in:]]


def stationary_distribution(p: np.ndarray) -> np.ndarray:
    """Unique stationary distribution of a row-stochastic matrix.

    Raises
    ------
    NotErgodic
        If the eigenvalue-1 eigenspace of P^T has dimension != 1 (no unique
        stationary distribution). Periodic but irreducible chains are fine.
    """
    p = np.asarray(p, dtype=float)
    w, v = np.linalg.eig(p.T)
    idx = np.where(np.abs(w - 1.0) < 1e-9)[0]
    if len(idx) != 1:
        raise NotErgodic(f"{len(idx)} unit eigenvalues; stationary distribution not unique")
    pi = np.real(v[:, idx[0]])
    pi = np.abs(pi)
    return pi / pi.sum()


# ---------------------------------------------------------------------------
# Task populations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskSpec:
    """One task's covariate law and true head."""

    law: CovariateLaw
    head: LinearHead


@dataclass(frozen=True)
class PopulationSpec:
    """Full generative description of T+1 tasks; index 0 is the target task.

    Labels follow the realizable model y = F_star^{(t)} g_star(x) + w with
    w ~ N(0, noise_sigma^2 I).
    """

    dims: Dims
    tasks: tuple[TaskSpec, ...]
    rep_star: Representation
    noise_sigma: float = 0.0

    def __post_init__(self):
        if len(self.tasks) < 1:
            raise ValueError("need at least the target task")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.rep_star.out_dim != self.dims.r or self.rep_star.in_dim != self.dims.d_x:
            raise ValueError("rep_star shape does not match dims")
        for t, task in enumerate(self.tasks):
            if task.law.d_x != self.dims.d_x:
                raise ValueError(f"task {t}: law dimension != d_x")
            if task.head.f.shape != (self.dims.d_y, self.dims.r):
                raise ValueError(f"task {t}: head shape != (d_y, r)")
        object.__setattr__(self, "tasks", tuple(self.tasks))

    @property
    def num_sources(self) -> int:
        return len(self.tasks) - 1

    @property
    def target(self) -> TaskSpec:
        return self.tasks[0]

    @property
    def sources(self) -> tuple[TaskSpec, ...]:
        return self.tasks[1:]
