"""One-batch overfitting run shared by the SSL tests and the acceptance suite."""
import numpy as np

from roto.agent import AgentNets
from roto.auxmem import SequenceBatch
from roto.ssl import AuxConfig, AuxLearner

OBS_DIM, ACT_DIM = 24, 3
TACT = np.arange(18, 24)
PROP = np.arange(18)


def frozen_batch(rng, window: int, n: int = 64) -> SequenceBatch:
    obs = rng.normal(size=(n, window, OBS_DIM))
    obs[..., TACT] = rng.random((n, window, len(TACT))) < 0.3
    return SequenceBatch(obs, rng.uniform(-1, 1, (n, window - 1, ACT_DIM)), np.zeros((n, window), bool),
                         np.zeros(n, int), np.zeros(n, int))


def overfit(objective: str, steps: int = 500, seed: int = 0, lr: float = 3e-3):
    """Returns ``(final / initial loss, updates used)``."""
    nets = AgentNets.build(OBS_DIM, ACT_DIM, np.random.default_rng(seed), encoder_hidden=(64, 64, 32), head_hidden=(16,))
    cfg = AuxConfig(objective, lr_aux=lr, c_aux=1.0, horizon=1, decoder_hidden=(64, 64),
                    forward_hidden=(64, 64), projector_hidden=(64,))
    batch = frozen_batch(np.random.default_rng(seed + 1), cfg.window)
    learner = AuxLearner(nets, cfg, PROP, TACT, seed=seed)
    first = learner.loss(batch)
    for i in range(1, steps + 1):
        learner.update(batch)
        ratio = learner.loss(batch) / first
        if ratio < 0.01:
            return ratio, i
    return ratio, steps
