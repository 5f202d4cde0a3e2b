import numpy as np
import pytest

from drum.adapter import init_adapter
from drum.corpus import SyntheticSpec, gen_synthetic
from drum.trainer import toy_config, train

# The toy reconstruction run shared by trainer tests and the acceptance
# suite: 64 synthetic prompts, d_cond=64, 4 layers, 2000 steps, fixed seed.
TOY_SPEC = SyntheticSpec(n_users=8, history_len=8, d_sim=64, d_cond=64,
                         max_tokens=8, archetypes=2, seed=42)


@pytest.fixture(scope="session")
def toy_corpus():
    return gen_synthetic(TOY_SPEC)


@pytest.fixture(scope="session")
def toy_trained(toy_corpus):
    params = init_adapter(d_cond=64, d_model=64, n_heads=4, n_layers=4, seed=0)
    return train(toy_corpus, params, toy_config())


@pytest.fixture(scope="session")
def eval_corpus():
    # 2-archetype corpus with long histories for sampling-method comparisons.
    return gen_synthetic(SyntheticSpec(n_users=6, history_len=40, d_sim=32,
                                       d_cond=32, max_tokens=6, archetypes=2,
                                       seed=7))


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.Philox(1234))
