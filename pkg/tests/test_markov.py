import numpy as np
import pytest

from fplab.errors import ModelError
from fplab.markov import (
    MarkovChain,
    decomposition_check,
    folding_entropy,
    mean_entropy_change,
    mean_entropy_generated,
    step_distribution,
)

P_LAZY = np.array([[0.9, 0.1], [0.2, 0.8]])


def _entropy(p):
    p = np.asarray(p)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def test_step_distribution_cases():
    chain = MarkovChain(np.array([1.0, 0.0]), P_LAZY)
    assert np.allclose(step_distribution(chain), [0.9, 0.1])
    doubly = np.array([[0.3, 0.7], [0.7, 0.3]])
    uniform = MarkovChain(np.array([0.5, 0.5]), doubly)
    assert np.allclose(step_distribution(uniform), [0.5, 0.5])
    half = MarkovChain(np.array([0.5, 0.5]), P_LAZY)
    assert np.allclose(step_distribution(half), [0.55, 0.45])


def test_mean_entropy_generated_cases():
    ident = MarkovChain(np.array([0.3, 0.7]), np.eye(2))
    assert mean_entropy_generated(ident) == 0.0
    coin = MarkovChain(np.array([1.0, 0.0]), np.array([[0.5, 0.5], [0.5, 0.5]]))
    assert mean_entropy_generated(coin) == pytest.approx(np.log(2.0), abs=1e-15)


def test_mean_entropy_generated_against_path_enumeration():
    chain = MarkovChain(np.array([0.5, 0.5]), P_LAZY)
    # brute force: enumerate all one-step paths (i, j)
    total = 0.0
    for i in range(2):
        for j in range(2):
            joint = chain.p[i] * chain.P[i, j]
            if joint > 0:
                total += joint * (-np.log(chain.P[i, j]))
    assert mean_entropy_generated(chain) == pytest.approx(total, abs=1e-15)


def test_mean_entropy_change_cases():
    stat = MarkovChain(np.array([2.0 / 3.0, 1.0 / 3.0]), P_LAZY)
    assert abs(mean_entropy_change(stat)) < 1e-15
    spread = MarkovChain(np.array([1.0, 0.0]), np.array([[0.5, 0.5], [0.5, 0.5]]))
    assert mean_entropy_change(spread) == pytest.approx(np.log(2.0), abs=1e-15)
    half = MarkovChain(np.array([0.5, 0.5]), P_LAZY)
    expected = _entropy([0.55, 0.45]) - np.log(2.0)
    assert mean_entropy_change(half) == pytest.approx(expected, abs=1e-15)


def test_folding_entropy_cases():
    ident = MarkovChain(np.array([0.3, 0.7]), np.eye(2))
    assert folding_entropy(ident) == 0.0
    fair = MarkovChain(np.array([0.5, 0.5]), np.array([[0.5, 0.5], [0.5, 0.5]]))
    assert folding_entropy(fair) == pytest.approx(np.log(2.0), abs=1e-15)
    merging = MarkovChain(np.array([0.5, 0.5]), np.array([[1.0, 0.0], [1.0, 0.0]]))
    assert folding_entropy(merging) == pytest.approx(np.log(2.0), abs=1e-15)
    assert mean_entropy_generated(merging) == 0.0
    assert mean_entropy_change(merging) == pytest.approx(-np.log(2.0), abs=1e-15)


def test_decomposition_identity_random_chains():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(2, 7))
        P = rng.dirichlet(np.ones(n), size=n)
        p = rng.dirichlet(np.ones(n))
        chain = MarkovChain(p, P)
        assert decomposition_check(chain) <= 1e-12
        assert folding_entropy(chain) >= 0.0


def test_decomposition_with_zero_entries():
    # sparse transitions exercise the 0 ln 0 conventions
    P = np.array([[0.5, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.5, 0.5]])
    p = np.array([0.5, 0.0, 0.5])
    chain = MarkovChain(p, P)
    assert decomposition_check(chain) <= 1e-12
    assert folding_entropy(chain) >= 0.0
    ident = MarkovChain(np.array([0.25, 0.75]), np.eye(2))
    assert decomposition_check(ident) == 0.0


def test_chain_validation():
    with pytest.raises(ModelError, match="distribution"):
        MarkovChain(np.array([0.6, 0.6]), np.eye(2))
    with pytest.raises(ModelError, match="row-stochastic"):
        MarkovChain(np.array([0.5, 0.5]), np.array([[0.9, 0.2], [0.2, 0.8]]))
    with pytest.raises(ModelError, match="N x N"):
        MarkovChain(np.array([0.5, 0.5]), np.eye(3))
    with pytest.raises(ModelError):
        MarkovChain(np.array([-0.1, 1.1]), np.eye(2))
