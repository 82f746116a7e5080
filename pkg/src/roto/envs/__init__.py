from .base import ENV_IDS, ContactEnv, EnvConfig, StepResult, count_bounces, r_dist, rotation_count
from .bounce2d import Bounce2D
from .find2d import Find2D
from .orbit2d import Orbit2D
from .trajectory import TrajectoryWriter, read_trajectory

ENV_CLASSES = {"find2d": Find2D, "bounce2d": Bounce2D, "orbit2d": Orbit2D}


def make_env(cfg: EnvConfig, **kwargs) -> ContactEnv:
    return ENV_CLASSES[cfg.env_id](cfg, **kwargs)


__all__ = [
    "ENV_IDS", "ENV_CLASSES", "ContactEnv", "EnvConfig", "StepResult", "Bounce2D", "Find2D", "Orbit2D",
    "TrajectoryWriter", "count_bounces", "make_env", "r_dist", "read_trajectory", "rotation_count",
]
