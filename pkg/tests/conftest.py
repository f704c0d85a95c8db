import pytest

from ltc_msda.checkpoint import Checkpoint
from ltc_msda.state import TrainConfig, TrainState
from ltc_msda.synth import DomainSpec, generate_domain, sample_batch
from ltc_msda.trainer import train_step


@pytest.fixture(scope="session")
def small_checkpoint():
    """A briefly trained M=2, K=3 model with a non-trivial stored graph."""
    cfg = TrainConfig(M=2, K=3, d=4, hidden_dim=8, per_domain_size=6, learning_rate=2e-2, sigma=2.0)
    sets = [generate_domain(DomainSpec(3, 2, 10, rotation=0.2 * i, noise_std=0.3, seed=i)) for i in range(3)]
    state = TrainState.initial(cfg)
    for _ in range(6):
        state, _ = train_step(state, sample_batch(sets, 6, state.rng), cfg)
    return Checkpoint.from_state(state, cfg.sigma)
