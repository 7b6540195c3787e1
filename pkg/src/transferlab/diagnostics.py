"""Population and empirical diagnostics for fitted transfer models.

Computes the target excess risk and task-averaged estimation error, the
coverage coefficients (covariate coverage via Schur complements, head
coverage via whitened Grams), the task-diversity ratio and its plug-in
estimator, the misspecified-regression noise quantities, and the
hypercontractivity ratio. Quantities are evaluated analytically whenever
both representations are linear (every covariate law exposes an exact
second moment) and by seeded Monte Carlo otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CovariateLaw,
    LinearHead,
    LinearRep,
    PopulationSpec,
    Representation,
    inv_sqrt_psd,
    pinv,
    spectral_norm,
    sqrt_psd,
)
from .erm import ls_head
from .errors import RangeViolation

# Denominators below this are reported as undefined (None): the
# representation is already target-optimal and the diversity ratio is
# vacuous.
NU_UNDEFINED_THRESHOLD = 1e-12


@dataclass(frozen=True)
class StackedCovariance:
    """Joint feature second moments of (g, g_star) and the residual Schur complement.

    ``sigma`` stacks the blocks [[E g g^T, E g g_*^T], [E g_* g^T, E g_* g_*^T]];
    ``schur`` is E[g_* g_*^T] - E[g_* g^T] (E[g g^T])^+ E[g g_*^T], the feature
    covariance of g_* left unexplained by regressing on g.
    """

    sigma: np.ndarray
    schur: np.ndarray
    analytic: bool


def _joint_moments(law: CovariateLaw, g: Representation, g_star: Representation,
                   mc_samples: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """Blocks (E[g g^T], E[g g_*^T], E[g_* g_*^T]); analytic for linear reps."""
    if isinstance(g, LinearRep) and isinstance(g_star, LinearRep):
        sx = law.second_moment()
        m11 = g.g @ sx @ g.g.T
        m12 = g.g @ sx @ g_star.g.T
        m22 = g_star.g @ sx @ g_star.g.T
        return m11, m12, m22, True
    rng = np.random.default_rng(seed)
    x = law.sample_marginal(max(1, mc_samples), rng)
    zg = g.features(x)
    zs = g_star.features(x)
    n = x.shape[0]
    return zg.T @ zg / n, zg.T @ zs / n, zs.T @ zs / n, False


def stacked_covariance(law: CovariateLaw, g: Representation, g_star: Representation,
                       mc_samples: int = 200_000, seed: int = 0) -> StackedCovariance:
    """Stacked feature covariance of (g, g_star) under one task's covariate law."""
    m11, m12, m22, analytic = _joint_moments(law, g, g_star, mc_samples, seed)
    r1, r2 = m11.shape[0], m22.shape[0]
    sigma = np.zeros((r1 + r2, r1 + r2))
    sigma[:r1, :r1] = m11
    sigma[:r1, r1:] = m12
    sigma[r1:, :r1] = m12.T
    sigma[r1:, r1:] = m22
    schur = m22 - m12.T @ pinv(m11) @ m12
    schur = 0.5 * (schur + schur.T)
    return StackedCovariance(sigma=sigma, schur=schur, analytic=analytic)


def _schur(law, g, g_star, mc_samples, seed) -> np.ndarray:
    return stacked_covariance(law, g, g_star, mc_samples, seed).schur


def mu_x(spec: PopulationSpec, g: Representation,
         mc_samples: int = 200_000, seed: int = 0) -> float:
    """Covariate-coverage coefficient of the target by the sources, for a given g.

    max over source tasks t of || (S_t)^{+/2} S_0 (S_t)^{+/2} ||_2 where S_t is
    the task-t Schur complement of (g, g_star). Returns 0 when the target
    Schur complement vanishes (g already captures g_star on the target law).
    """
    g_star = spec.rep_star
    s0 = _schur(spec.target.law, g, g_star, mc_samples, seed)
    if spectral_norm(s0) < 1e-14:
        return 0.0
    worst = 0.0
    for t, task in enumerate(spec.sources, start=1):
        st = _schur(task.law, g, g_star, mc_samples, seed + t)
        half = inv_sqrt_psd(st)
        worst = max(worst, spectral_norm(half @ s0 @ half))
    return worst


def mu_x_grid(spec: PopulationSpec, dictionary, mc_samples: int = 200_000,
              seed: int = 0) -> float:
    """Grid-max variant of mu_x over a finite representation dictionary."""
    return max(mu_x(spec, g, mc_samples, seed) for g in dictionary)


def mu_f(heads) -> float:
    """Head-coverage coefficient: target head Gram whitened by the source average.

    heads[0] is the target. Requires range(F0^T F0) within range of the
    averaged source Gram (projector residual <= 1e-8).

    Raises
    ------
    RangeViolation
        If the target Gram has mass outside the source Gram range.
    """
    heads = list(heads)
    if len(heads) < 2:
        raise ValueError("need a target head and at least one source head")
    f0 = heads[0].f
    gram0 = f0.T @ f0
    gram_src = sum(h.f.T @ h.f for h in heads[1:]) / (len(heads) - 1)
    proj = gram_src @ pinv(gram_src)
    scale = max(spectral_norm(gram0), 1e-300)
    if spectral_norm(gram0 - proj @ gram0) > 1e-8 * scale:
        raise RangeViolation("target head Gram leaves the source head Gram range")
    half = inv_sqrt_psd(gram_src)
    return spectral_norm(half @ gram0 @ half)


def _risk_one_task(law: CovariateLaw, f: np.ndarray, f_star: np.ndarray,
                   g: Representation, g_star: Representation,
                   mc_samples: int, seed: int) -> float:
    """E || F g(X) - F_star g_star(X) ||^2 under one law."""
    if isinstance(g, LinearRep) and isinstance(g_star, LinearRep):
        sx = law.second_moment()
        c = f @ g.g - f_star @ g_star.g  # d_y x d_x
        return float(np.trace(c @ sx @ c.T))
    rng = np.random.default_rng(seed)
    x = law.sample_marginal(max(1, mc_samples), rng)
    diff = g.features(x) @ f.T - g_star.features(x) @ f_star.T
    return float(np.mean(np.sum(diff * diff, axis=1)))


def excess_risk_population(spec: PopulationSpec, head: LinearHead, g: Representation,
                           mc_samples: int = 200_000, seed: int = 0) -> float:
    """Target-population squared-loss gap E^(0) ||F g(X) - F_star^(0) g_star(X)||^2.

    Under the realizable label model the noise cancels, so this equals the
    excess risk of (F, g) over the optimal predictor.
    """
    return _risk_one_task(spec.target.law, head.f, spec.target.head.f,
                          g, spec.rep_star, mc_samples, seed)


def estimation_error_avg(spec: PopulationSpec, heads, g: Representation,
                         mc_samples: int = 200_000, seed: int = 0) -> float:
    """Source-task average of E^(t) ||F^(t) g(X) - F_star^(t) g_star(X)||^2."""
    heads = list(heads)
    if len(heads) != spec.num_sources:
        raise ValueError("need one fitted head per source task")
    total = 0.0
    for t, (task, head) in enumerate(zip(spec.sources, heads), start=1):
        total += _risk_one_task(task.law, head.f, task.head.f, g, spec.rep_star,
                                mc_samples, seed + t)
    return total / len(heads)


def infimal_risk(law: CovariateLaw, f_star: np.ndarray, g: Representation,
                 g_star: Representation, mc_samples: int = 200_000,
                 seed: int = 0) -> float:
    """inf_F E ||F g(X) - F_star g_star(X)||^2 = tr(F_star Schur(g) F_star^T)."""
    schur = _schur(law, g, g_star, mc_samples, seed)
    return float(np.trace(f_star @ schur @ f_star.T))


def nu_true(spec: PopulationSpec, g: Representation,
            mc_samples: int = 200_000, seed: int = 0) -> float | None:
    """Task-diversity ratio induced by g: source-averaged infimal error over target's.

    Returns None (undefined) when the target infimal excess risk is below
    NU_UNDEFINED_THRESHOLD, i.e. g is already target-optimal.
    """
    g_star = spec.rep_star
    denom = infimal_risk(spec.target.law, spec.target.head.f, g, g_star, mc_samples, seed)
    if denom < NU_UNDEFINED_THRESHOLD:
        return None
    numer = 0.0
    for t, task in enumerate(spec.sources, start=1):
        numer += infimal_risk(task.law, task.head.f, g, g_star, mc_samples, seed + t)
    numer /= spec.num_sources
    return numer / denom


def nu_hat(datasets, g: Representation) -> float | None:
    """Plug-in estimator of nu(g) from one data batch (target first).

    Per task the infimal error is estimated by mean ||Y||^2 minus the energy
    captured by the g-conditioned least-squares head; the ratio averages the
    sources and divides by the target. None when the target term is below
    NU_UNDEFINED_THRESHOLD.
    """
    datasets = list(datasets)
    if len(datasets) < 2:
        raise ValueError("need the target dataset plus at least one source")

    def term(ds):
        z = g.features(ds.covariates)
        f_hat = ls_head(z, ds.labels).f
        mean_y2 = float(np.sum(ds.labels * ds.labels)) / ds.n
        gram = z.T @ z / ds.n
        return mean_y2 - float(np.trace(f_hat @ gram @ f_hat.T))

    denom = term(datasets[0])
    if denom < NU_UNDEFINED_THRESHOLD:
        return None
    numer = sum(term(ds) for ds in datasets[1:]) / (len(datasets) - 1)
    return numer / denom


# ---------------------------------------------------------------------------
# Non-realizable least-squares (NRLS) noise quantities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NrlsQuantities:
    """Noise quantities of the misspecified target regression of Y on g(X)."""

    sigma_u_sq: float
    sigma_v_sq: float
    c_z: float
    h_z: float
    h_v: float
    misspecified_head: np.ndarray

    def as_dict(self) -> dict:
        return {
            "sigma_u_sq": self.sigma_u_sq,
            "sigma_v_sq": self.sigma_v_sq,
            "c_z": self.c_z,
            "h_z": self.h_z,
            "h_v": self.h_v,
        }


def _sphere_directions(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    dirs = rng.standard_normal((count, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return np.vstack([dirs, np.eye(dim)])


def nrls_quantities(target_law: CovariateLaw, rep: Representation,
                    true_head: LinearHead, rep_star: Representation,
                    noise_sigma: float, mc_samples: int = 200_000,
                    seed: int = 0, sphere_directions: int = 1000) -> NrlsQuantities:
    """Monte Carlo noise quantities of the second-stage regression through ``rep``.

    With Z = rep(X) and Y generated by (true_head, rep_star) plus noise, the
    population least-squares head F = E[Y Z^T] (E[Z Z^T])^+ defines the biased
    noise U = Y - F Z and interaction term V = U Z^T Sigma_Z^{-1/2}. Sphere
    suprema use ``sphere_directions`` random unit vectors plus the coordinate
    directions (a lower bound on the true supremum); the Psi_1 norm is
    estimated over moments p = 1..8.
    """
    rng = np.random.default_rng(seed)
    x = target_law.sample_marginal(max(1, mc_samples), rng)
    n = x.shape[0]
    z = rep.features(x)
    y = rep_star.features(x) @ true_head.f.T
    if noise_sigma > 0:
        y = y + noise_sigma * rng.standard_normal(y.shape)
    sigma_z = z.T @ z / n
    f_mis = (y.T @ z / n) @ pinv(sigma_z)
    u = y - z @ f_mis.T                         # n x d_y
    z_std = z @ inv_sqrt_psd(sigma_z).T         # n x r, standardized features
    u_norm2 = np.sum(u * u, axis=1)
    z_norm2 = np.sum(z_std * z_std, axis=1)
    sigma_u_sq = float(np.sqrt(np.mean(u_norm2 ** 2)))
    v_frob2 = u_norm2 * z_norm2                 # ||V_i||_F^2 for rank-one V_i
    sigma_v_sq = float(np.mean(v_frob2))

    dirs = _sphere_directions(z.shape[1], sphere_directions, rng)
    # chunk the direction block to keep the n x directions products small;
    # fourth powers via two in-place squarings (np.power is far slower)
    fourth_max = 0.0
    for lo in range(0, dirs.shape[0], 64):
        proj = z_std @ dirs[lo:lo + 64].T
        proj *= proj
        proj *= proj
        fourth_max = max(fourth_max, float(proj.mean(axis=0).max(initial=0.0)))
    c_z = float(np.sqrt(fourth_max))
    h_z = c_z  # same supremum after the change of variables v -> Sigma_Z^{1/2} v

    v_frob = np.sqrt(v_frob2)
    if sigma_v_sq > 0:
        psi1 = max(np.mean(v_frob ** p) ** (1.0 / p) / p for p in range(1, 9))
        h_v = float(psi1 ** 2 / sigma_v_sq)
    else:
        h_v = 0.0
    return NrlsQuantities(sigma_u_sq=sigma_u_sq, sigma_v_sq=sigma_v_sq,
                          c_z=c_z, h_z=h_z, h_v=h_v, misspecified_head=f_mis)


def nrls_excess(target_law: CovariateLaw, fitted_head: LinearHead,
                rep: Representation, true_head: LinearHead,
                rep_star: Representation, mc_samples: int = 200_000,
                seed: int = 0) -> float:
    """Excess of the fitted target head over the best head given ``rep``:
    ||(F_hat - F_mis) sqrt(Sigma_Z)||_F^2, analytic for linear reps."""
    if isinstance(rep, LinearRep) and isinstance(rep_star, LinearRep):
        sx = target_law.second_moment()
        sigma_z = rep.g @ sx @ rep.g.T
        cross = true_head.f @ rep_star.g @ sx @ rep.g.T  # E[Y Z^T]
        f_mis = cross @ pinv(sigma_z)
    else:
        q = nrls_quantities(target_law, rep, true_head, rep_star, 0.0, mc_samples, seed)
        f_mis = q.misspecified_head
        rng = np.random.default_rng(seed)
        x = target_law.sample_marginal(max(1, mc_samples), rng)
        z = rep.features(x)
        sigma_z = z.T @ z / x.shape[0]
    d = (fitted_head.f - f_mis) @ sqrt_psd(sigma_z)
    return float(np.sum(d * d))


@dataclass(frozen=True)
class HypercontractivityResult:
    c42: float
    argmax_index: int


def hypercontractivity_c42(laws, hypothesis_grid, f_star: np.ndarray,
                           g_star: Representation, mc_samples: int = 200_000,
                           seed: int = 0) -> HypercontractivityResult:
    """(4->2) moment ratio maximized over a grid of centered hypotheses.

    ``laws`` is the list of task laws forming a uniform mixture; each grid
    member is a pair (F, g) and the centered hypothesis is
    h(x) = F g(x) - F_star g_star(x). Members with second moment below 1e-14
    are skipped.
    """
    hypothesis_grid = list(hypothesis_grid)
    if not hypothesis_grid:
        raise ValueError("hypothesis grid is empty")
    laws = list(laws)
    per_law = max(1, mc_samples // len(laws))
    best, best_idx = 0.0, -1
    for idx, (f, g) in enumerate(hypothesis_grid):
        f = f.f if isinstance(f, LinearHead) else np.asarray(f, dtype=float)
        m2_acc, m4_acc = 0.0, 0.0
        for j, law in enumerate(laws):
            rng = np.random.default_rng(seed + 7919 * j)
            x = law.sample_marginal(per_law, rng)
            h = g.features(x) @ f.T - g_star.features(x) @ f_star.T
            norms2 = np.sum(h * h, axis=1)
            m2_acc += float(np.mean(norms2))
            m4_acc += float(np.mean(norms2 ** 2))
        m2 = m2_acc / len(laws)
        m4 = m4_acc / len(laws)
        if m2 < 1e-14:
            continue
        ratio = m4 / m2 ** 2
        if ratio > best:
            best, best_idx = ratio, idx
    return HypercontractivityResult(c42=best, argmax_index=best_idx)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiagnosticsReport:
    """All diagnostics for one fitted model on one population."""

    mu_x: float
    mu_f: float
    nu_true: float | None
    nu_hat: float | None
    excess_risk_target: float
    est_error_avg: float
    nrls: NrlsQuantities
    mu_x_variant: str = "given_g"  # or "grid_max"

    def to_json(self) -> dict:
        out = {
            "mu_x": self.mu_x,
            "mu_f": self.mu_f,
            "nu_true": self.nu_true,
            "nu_hat": self.nu_hat,
            "excess_risk_target": self.excess_risk_target,
            "est_error_avg": self.est_error_avg,
            "mu_x_variant": self.mu_x_variant,
        }
        out.update(self.nrls.as_dict())
        return out
