import numpy as np
import pytest

from transferlab.core import GaussianLaw, LdsLaw, MarkovLaw
from transferlab.errors import BadPartition, NotErgodic, SampleTooShort
from transferlab.mixing import (
    BlockPartition,
    ExactProfile,
    GeometricProfile,
    decouple_trajectory,
    dependency_matrix_bound,
    expand_geometric,
    geometric_profile_from_lds,
    make_blocks,
    phi_capital,
    phi_markov,
    profile_to_json,
    select_block_length,
)

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


# ---------------------------------------------------------------------------
# phi coefficients
# ---------------------------------------------------------------------------

def test_phi_markov_iid_chain_is_zero():
    p = np.tile([[0.3, 0.5, 0.2]], (3, 1))
    profile = phi_markov(p, max_lag=6)
    assert np.allclose(profile.phi, 0.0, atol=1e-14)


def test_phi_markov_two_cycle_is_half():
    p = np.array([[0.0, 1.0], [1.0, 0.0]])
    profile = phi_markov(p, max_lag=10)
    assert np.allclose(profile.phi, 0.5, atol=1e-15)


def test_phi_markov_lazy_chain_spectral_oracle():
    eps = 0.4
    p = (1 - eps) * np.eye(2) + eps * np.full((2, 2), 0.5)
    lam2 = abs(np.sort(np.linalg.eigvals(p).real)[0])
    profile = phi_markov(p, max_lag=12)
    expected = 0.5 * lam2 ** np.arange(1, 13)
    assert np.allclose(profile.phi, expected, atol=1e-10)


def test_phi_markov_not_ergodic():
    with pytest.raises(NotErgodic):
        phi_markov(np.eye(3), max_lag=4)


def test_phi_monotone_nonincreasing():
    rng = np.random.default_rng(0)
    for _ in range(10):
        p = rng.dirichlet(np.ones(4), size=4)
        profile = phi_markov(p, max_lag=20)
        assert np.all(np.diff(profile.phi) <= 1e-15)


# ---------------------------------------------------------------------------
# geometric LDS surrogate
# ---------------------------------------------------------------------------

def test_geometric_from_zero_matrix():
    profile = geometric_profile_from_lds(np.zeros((2, 2)))
    assert profile.gamma == 0.0 and profile.rho == 0.0
    assert profile.beta_surrogate
    assert phi_capital(profile) == 0.0


def test_geometric_rho_is_radius_squared():
    rng = np.random.default_rng(1)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    profile = geometric_profile_from_lds(0.7 * q, mc_samples=2_000, seed=2)
    assert profile.rho == pytest.approx(0.49, rel=1e-10)


def test_geometric_scalar_closed_form_kl_oracle():
    a = np.array([[0.5]])
    mc, seed = 100_000, 3
    profile = geometric_profile_from_lds(a, mc_samples=mc, seed=seed)
    # reconstruct the same stationary draws and average the closed-form scalar
    # Pinsker bound independently
    var = 1.0 / (1.0 - 0.25)
    rng = np.random.default_rng(seed)
    x = (rng.standard_normal((mc, 1)) * np.sqrt(var)).ravel()
    kl = 0.5 * ((1.0 / var) - 1.0 + (0.25 * x ** 2) / var + np.log(var))
    tv1 = np.mean(np.minimum(1.0, np.sqrt(kl / 2.0)))
    assert profile.gamma * profile.rho == pytest.approx(tv1, rel=1e-6)


# ---------------------------------------------------------------------------
# capital Phi
# ---------------------------------------------------------------------------

def test_phi_capital_zero_profile():
    assert phi_capital(ExactProfile(phi=np.zeros(5))) == 0.0


def test_phi_capital_geometric_closed_form():
    assert phi_capital(GeometricProfile(gamma=1.0, rho=0.25)) == pytest.approx(4.0)


def test_phi_capital_series_matches_closed_form():
    for gamma, rho in [(1.0, 0.25), (0.8, 0.6), (0.3, 0.9)]:
        geo = GeometricProfile(gamma=gamma, rho=rho)
        series = phi_capital(expand_geometric(geo, max_lag=10_000))
        assert series == pytest.approx(phi_capital(geo), rel=1e-8)


def test_phi_capital_exact_with_tail():
    geo = GeometricProfile(gamma=0.5, rho=0.4)
    truncated = expand_geometric(geo, max_lag=3)
    # attach the matching tail bound phi(l) <= gamma * rho^(l-1) = (g/r) r^l
    with_tail = ExactProfile(phi=truncated.phi, tail_gamma=0.5 / 0.4, tail_rho=0.4)
    assert phi_capital(with_tail) == pytest.approx(phi_capital(geo), rel=1e-12)


# ---------------------------------------------------------------------------
# dependency matrix
# ---------------------------------------------------------------------------

def test_dependency_matrix_independent_process():
    out = dependency_matrix_bound(ExactProfile(phi=np.zeros(4)), n=5)
    assert np.allclose(out.matrix, np.eye(5))
    assert out.spectral_norm == pytest.approx(1.0)


def test_dependency_matrix_two_by_two_golden_ratio():
    out = dependency_matrix_bound(ExactProfile(phi=np.array([0.5])), n=2)
    assert np.allclose(out.matrix, np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert out.spectral_norm == pytest.approx(GOLDEN, rel=1e-12)


def test_dependency_matrix_norm_bound_random_profiles():
    rng = np.random.default_rng(4)
    for _ in range(50):
        lags = int(rng.integers(1, 12))
        phi = np.sort(rng.uniform(0.0, 1.0, size=lags))[::-1]
        profile = ExactProfile(phi=phi)
        n = int(rng.integers(2, 30))
        out = dependency_matrix_bound(profile, n=n)
        cap = 1.0 + np.sqrt(2.0) * sum(np.sqrt(profile.phi_at(l)) for l in range(1, n))
        assert out.spectral_norm <= cap + 1e-9


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------

def test_make_blocks_small():
    part = make_blocks(8, 2)
    assert part.blocks == ((0, 2), (2, 4), (4, 6), (6, 8))
    assert part.odd_blocks == ((0, 2), (4, 6))
    assert part.even_blocks == ((2, 4), (6, 8))


def test_make_blocks_odd_count_rejected():
    with pytest.raises(BadPartition):
        make_blocks(4, 4)
    with pytest.raises(BadPartition):
        make_blocks(10, 3)


def test_make_blocks_coverage():
    part = make_blocks(1000, 10)
    assert part.num_blocks == 100
    seen = np.zeros(1000, dtype=int)
    for start, stop in part.blocks:
        seen[start:stop] += 1
    assert np.all(seen == 1)


# ---------------------------------------------------------------------------
# decoupling
# ---------------------------------------------------------------------------

def test_decoupled_halves_uncorrelated():
    law = LdsLaw(a=0.8 * np.eye(1))
    part = make_blocks(16, 8)
    reps = 2000
    prods = np.empty(reps)
    for i in range(reps):
        x = decouple_trajectory(law, part, seed=i).ravel()
        prods[i] = x[:8].mean() * x[8:].mean()
    stderr = prods.std(ddof=1) / np.sqrt(reps)
    assert abs(prods.mean()) <= 3 * stderr


def _energy_statistic(a, b):
    def mean_dist(u, v):
        d = np.linalg.norm(u[:, None, :] - v[None, :, :], axis=2)
        return d.mean()
    return 2 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b)


def test_decoupling_noop_for_iid_law():
    law = GaussianLaw(np.eye(2))
    part = make_blocks(200, 10)
    rng = np.random.default_rng(5)
    direct = law.sample_marginal(200, rng)
    decoupled = decouple_trajectory(law, part, seed=6)
    observed = _energy_statistic(direct, decoupled)
    pooled = np.vstack([direct, decoupled])
    perm_rng = np.random.default_rng(7)
    stats = []
    for _ in range(200):
        idx = perm_rng.permutation(400)
        stats.append(_energy_statistic(pooled[idx[:200]], pooled[idx[200:]]))
    assert observed < np.quantile(stats, 0.99)


def test_decoupling_expectation_inequality():
    # |E f(odd blocks of Z) - E f(odd blocks of Z~)| <= sum of interior even
    # phi(k) plus Monte Carlo slack, for f a clipped block average in [0, 1]
    p = np.array([[0.9, 0.1], [0.1, 0.9]])
    law = MarkovLaw(transition=p, d_x=1)
    k, n = 6, 24
    part = make_blocks(n, k)
    phi = phi_markov(p, max_lag=k)
    bound = (part.num_blocks // 2 - 1) * phi.phi_at(k)

    def f(x):
        odd = np.concatenate([x[s:e] for s, e in part.odd_blocks])
        return float(np.clip(np.mean(odd[:, 0] + 0.5), 0.0, 1.0))

    reps = 4000
    rng = np.random.default_rng(8)
    coupled = np.array([f(law.sample_path(n, rng)) for _ in range(reps)])
    decoupled = np.array([f(decouple_trajectory(law, part, seed=10_000 + i))
                          for i in range(reps)])
    diff = abs(coupled.mean() - decoupled.mean())
    stderr = np.sqrt(coupled.var(ddof=1) / reps + decoupled.var(ddof=1) / reps)
    assert diff <= bound + 3 * stderr


def test_decoupled_block_marginals_match():
    law = LdsLaw(a=np.array([[0.6, 0.2], [0.0, 0.5]]))
    part = make_blocks(12, 6)
    reps = 3000
    rng = np.random.default_rng(9)
    direct = np.stack([law.sample_path(12, rng) for _ in range(reps)])
    dec = np.stack([decouple_trajectory(law, part, seed=20_000 + i)
                    for i in range(reps)])
    # per-position mean and second moment agree within 3 standard errors
    for block in part.blocks:
        for pos in range(*block):
            for dim in range(2):
                a = direct[:, pos, dim]
                b = dec[:, pos, dim]
                se = np.sqrt(a.var(ddof=1) / reps + b.var(ddof=1) / reps)
                assert abs(a.mean() - b.mean()) <= 4 * se + 1e-12
                a2, b2 = a ** 2, b ** 2
                se2 = np.sqrt(a2.var(ddof=1) / reps + b2.var(ddof=1) / reps)
                assert abs(a2.mean() - b2.mean()) <= 4 * se2 + 1e-12


# ---------------------------------------------------------------------------
# block-length selection
# ---------------------------------------------------------------------------

def test_select_block_length_worked_example():
    # gamma * m / delta = 2720 ~ 1000 e -> raw log(2720) ~ 7.91 -> ceil 8;
    # 8 divides 272 with even quotient 34, so no further adjustment
    k = select_block_length(GeometricProfile(gamma=1.0, rho=np.exp(-1.0)), 272, 0.1)
    assert k == 8


def test_select_block_length_divisor_adjustment():
    # raw ceil gives 3, but 3 is skipped: 80/3 not integral -> next divisor 4
    profile = GeometricProfile(gamma=1.0, rho=0.05)
    k = select_block_length(profile, 80, 0.1)
    assert k in (3, 4) and 80 % k == 0 and (80 // k) % 2 == 0


def test_select_block_length_instant_mixing():
    assert select_block_length(GeometricProfile(gamma=0.5, rho=1e-12), 10, 0.1) == 1


def test_select_block_length_sample_too_short():
    with pytest.raises(SampleTooShort):
        select_block_length(GeometricProfile(gamma=5.0, rho=0.999), 16, 0.01)


def test_select_block_length_postcondition_random():
    rng = np.random.default_rng(10)
    base = np.array([240, 480, 960, 2520])
    checked = 0
    while checked < 100:
        gamma = float(rng.uniform(0.2, 5.0))
        rho = float(rng.uniform(0.05, 0.9))
        m = int(rng.choice(base) * rng.integers(1, 4))
        delta = float(rng.uniform(0.01, 0.2))
        profile = GeometricProfile(gamma=gamma, rho=rho)
        try:
            k = select_block_length(profile, m, delta)
        except SampleTooShort:
            continue
        assert (m / k) * gamma * rho ** k <= delta + 1e-12
        assert m % k == 0 and (m // k) % 2 == 0
        checked += 1


def test_profile_json_roundtrip_fields():
    geo = geometric_profile_from_lds(0.5 * np.eye(2), mc_samples=2_000, seed=11)
    j = profile_to_json(geo)
    assert j["kind"] == "geometric" and j["beta_surrogate"]
    exact = phi_markov(np.array([[0.0, 1.0], [1.0, 0.0]]), max_lag=4)
    j2 = profile_to_json(exact)
    assert j2["kind"] == "exact" and j2["phi"] == [0.5] * 4
    assert j2["phi_capital"] == pytest.approx((4 * np.sqrt(0.5)) ** 2)
