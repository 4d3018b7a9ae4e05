from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from ceqn.problems import LogisticProblem

DATA_DIR = Path(__file__).parent / "data"
FIXTURE_LIBSVM = DATA_DIR / "synthetic.libsvm"

# committed fixture shape: updated only when the file is regenerated
FIXTURE_N = 300
FIXTURE_D = 60
FIXTURE_NNZ = 2588


def random_logistic(rng, n=50, d=10, mu=1e-4, density=0.4):
    """Random sparse logistic instance with labels from a noisy hyperplane."""
    mask = rng.random((n, d)) < density
    design = sp.csr_matrix(rng.normal(size=(n, d)) * mask)
    w = rng.normal(size=d)
    labels = np.where(design @ w + 0.5 * rng.normal(size=n) > 0, 1.0, -1.0)
    return LogisticProblem(design, labels, mu)


def random_spd(rng, d, eig_low=0.5, eig_high=3.0):
    q = np.linalg.qr(rng.normal(size=(d, d)))[0]
    return q @ np.diag(np.linspace(eig_low, eig_high, d)) @ q.T


class AffinePullback:
    """The composition f(A x) with analytic gradient and Hessian action."""

    def __init__(self, problem, a):
        self.problem = problem
        self.a = np.asarray(a, dtype=np.float64)
        self.dimension = problem.dimension

    def value(self, x):
        return self.problem.value(self.a @ x)

    def gradient(self, x):
        return self.a.T @ self.problem.gradient(self.a @ x)

    def hvp(self, x, v):
        return self.a.T @ self.problem.hvp(self.a @ x, self.a @ v)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
