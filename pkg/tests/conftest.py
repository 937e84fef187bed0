import numpy as np
import pytest
from hypothesis import strategies as st

from obbm.core import Instance, make_instance


def random_instance(rng: np.random.Generator, m: int, n: int, density: float = 0.6) -> Instance:
    w = rng.random((m, n))
    adj = rng.random((m, n)) < density
    return make_instance(w, rng.random(m), adjacency=adj)


@st.composite
def small_instances(draw, max_m: int = 5, max_n: int = 4):
    m = draw(st.integers(1, max_m))
    n = draw(st.integers(1, max_n))
    prob = st.floats(0.0, 1.0, allow_nan=False)
    weight = st.floats(0.0, 1.0, allow_nan=False)
    edges = []
    for t in range(m):
        for u in range(n):
            if draw(st.booleans()):
                edges.append((t, u, draw(weight)))
    probs = tuple(draw(prob) for _ in range(m))
    return Instance(n, m, tuple(edges), probs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_step():
    """One offline node, two certain arrivals with weights 1 then 2."""
    return make_instance([[1.0], [2.0]], [1.0, 1.0])


# -- shared trained policies ------------------------------------------------
# Both follow one recipe: 2000 teacher-forced instances from ER(p=0.75),
# BA(b=4) and GEOM(q=0.25), hidden width 32, four message-passing rounds,
# 64 epochs of Adam at 1e-3. They differ only in the training shape.

POLICY_FAMILIES = (("ER", {"p": 0.75}), ("BA", {"b": 4}), ("GEOM", {"q": 0.25}))


def policy_hyper():
    from obbm.neural import Hyperparams

    return Hyperparams(hidden=32, mp_layers=4, mlp_layers=2, batch_size=32, epochs=64, lr=1e-3)


def train_policy(m, n):
    from obbm.generators import GeneratorConfig
    from obbm.neural import MpnnModel, generate_training_set, train

    configs = [GeneratorConfig(f, m, n, p) for f, p in POLICY_FAMILIES]
    samples = generate_training_set(configs, 2000, 1)
    hyper = policy_hyper()
    return train(MpnnModel.init(hyper, 0), samples, hyper, 0).model


@pytest.fixture(scope="session")
def online_heavy_model():
    """Trained on ten arrivals against six offline nodes."""
    return train_policy(10, 6)


@pytest.fixture(scope="session")
def offline_heavy_model():
    """Trained on six arrivals against ten offline nodes."""
    return train_policy(6, 10)
