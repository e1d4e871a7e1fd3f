"""Episode execution helpers shared by the CLI commands and the test suite."""

from __future__ import annotations

import numpy as np

from .config import Config
from .env import TaskEnv, VectorEnv
from .metrics import EpisodeRecord
from .policy import PolicyParams, policy_forward


def run_episode(env: TaskEnv, seed: int, side: str | None,
                params: PolicyParams | None = None) -> EpisodeRecord:
    """One episode; the residual acts deterministically (mean action)."""
    obs = env.reset(seed=seed, side=side)
    while not env.done:
        if params is not None and env.residual_active:
            mean, _, _ = policy_forward(params, obs)
            obs, _, _, _ = env.step(mean)
        else:
            obs, _, _, _ = env.step(None)
    return EpisodeRecord.from_env(env)


def evaluate(config: Config, episodes: int, base_seed: int,
             params: PolicyParams | None = None,
             log_observations: bool = False) -> list[EpisodeRecord]:
    """Seeded batch, alternating left/right for an even side split."""
    env = TaskEnv(config, seed=base_seed, log_steps=True,
                  log_observations=log_observations)
    records = []
    for i in range(episodes):
        side = "left" if i % 2 == 0 else "right"
        records.append(run_episode(env, seed=base_seed + i, side=side, params=params))
    return records


def success_rate(records: list[EpisodeRecord]) -> float:
    return float(np.mean([r.summary["success"] for r in records]))


def make_vector_env_factory(config: Config, n_envs: int):
    def factory(seed: int) -> VectorEnv:
        venv = VectorEnv(config, n_envs, base_seed=seed, log_steps=False)
        venv.obs_dim = venv.envs[0].obs_dim
        venv.act_dim = venv.envs[0].act_dim
        venv.u_res_max = venv.envs[0].u_res_max
        return venv
    return factory
