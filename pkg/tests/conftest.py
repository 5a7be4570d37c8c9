import numpy as np
import pytest

from gccsolver.lattice import EventTree, build_binomial, build_incomplete_trinomial, random_tree


def one_step(probs, dS):
    """Root with one child per entry of ``probs``; ``dS`` per child (or None)."""
    b = len(probs)
    children = np.full((b + 1, b), -1)
    children[0] = np.arange(1, b + 1)
    prob = np.zeros((b + 1, b))
    prob[0] = probs
    d = 0 if dS is None else 1
    inc = np.zeros((b + 1, b, d))
    if dS is not None:
        inc[0, :, 0] = dS
    return EventTree([0] + [1] * b, children, prob, inc)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def binomial2():
    return build_binomial(2, traded=True)


@pytest.fixture
def trinomial3():
    return build_incomplete_trinomial(3)


@pytest.fixture
def random3(rng):
    return random_tree(rng, 3)
