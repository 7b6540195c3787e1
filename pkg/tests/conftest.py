import numpy as np
import pytest

from transferlab.core import (
    Dims,
    GaussianLaw,
    LinearHead,
    LinearRep,
    PopulationSpec,
    TaskSpec,
)


def random_orthonormal_rows(r, d_x, rng):
    q, _ = np.linalg.qr(rng.standard_normal((d_x, r)))
    return q.T


def make_gaussian_population(d_x=6, d_y=2, r=2, t=3, noise_sigma=0.0, seed=0,
                             identical=False, scale_lo=0.5, scale_hi=2.0):
    """Random linear-Gaussian population; per-task SPD covariances unless identical."""
    rng = np.random.default_rng(seed)
    rep_star = LinearRep(random_orthonormal_rows(r, d_x, rng))
    tasks = []
    for _ in range(t + 1):
        if identical:
            sigma = np.eye(d_x)
        else:
            a = rng.standard_normal((d_x, d_x))
            sigma = a @ a.T / d_x + rng.uniform(scale_lo, scale_hi) * np.eye(d_x)
        head = LinearHead(rng.standard_normal((d_y, r)))
        tasks.append(TaskSpec(law=GaussianLaw(sigma_x=sigma), head=head))
    return PopulationSpec(dims=Dims(d_x=d_x, d_y=d_y, r=r), tasks=tuple(tasks),
                          rep_star=rep_star, noise_sigma=noise_sigma)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
