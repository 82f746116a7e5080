"""Small run configs that train in well under a second per update."""
from dataclasses import replace

from roto.envs import EnvConfig
from roto.harness import RunConfig
from roto.ppo import PPOConfig
from roto.ssl import AuxConfig


def tiny_config(env_id="bounce2d", objective="tfd", out_dir="run", **kw) -> RunConfig:
    cfg = RunConfig(
        env=EnvConfig(env_id=env_id, num_envs=8, episode_length=50),
        ppo=PPOConfig(rollout_length=16, minibatches=4, epochs=2, lr=3e-4),
        aux=AuxConfig(objective, horizon=2, lr_aux=1e-4, c_aux=0.1, decoder_hidden=(16,), forward_hidden=(16,),
                      projector_hidden=(8,)),
        total_steps=512, eval_every=2, eval_envs=4, checkpoint_every=1, seed=1, out_dir=str(out_dir),
        name="tiny", encoder_hidden=(32, 16), head_hidden=(16,),
    )
    return replace(cfg, **kw) if kw else cfg
