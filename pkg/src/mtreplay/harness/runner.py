"""Training loop: one agent, one buffer, one schedule, several seeds.

Seeds run as independent workers (process pool) with non-overlapping RNG
streams derived from the seed, and the parent writes all CSV rows in seed
order, so repeated runs of the same config are byte-identical regardless
of scheduling.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from mtreplay.agent import AgentConfig, NonFiniteLossError, SacAgent
from mtreplay.envsim import EnvParams, GravitySchedule, PointMassEnv, make_eval_env
from mtreplay.harness.config import ExperimentConfig, default_out_root, write_config_json
from mtreplay.replay import Experience, MtrBuffer, make_buffer, save_buffer
from mtreplay.retention import age_histogram, cascade_ages, write_age_hist_csv

TRAIN_HEADER = ["seed", "global_step", "episode_index", "episode_return",
                "gravity_at_episode_start"]
EVAL_HEADER = ["seed", "global_step", "gravity", "episode_return"]


def _agent_config(cfg: ExperimentConfig) -> AgentConfig:
    lam = cfg.lambda_irm if cfg.buffer_kind == "mtr_irm" else 0.0
    return AgentConfig(
        state_dim=3, action_dim=1, hidden_width=cfg.hidden_width,
        n_hidden=cfg.n_hidden, learning_rate=cfg.learning_rate,
        adam_beta1=cfg.adam_beta1, adam_beta2=cfg.adam_beta2,
        gamma=cfg.gamma, tau=cfg.tau, lambda_irm=lam,
        initial_alpha=cfg.initial_alpha)


def _eval_episode(agent: SacAgent, gravity: float,
                  rng: np.random.Generator) -> float:
    env = make_eval_env(gravity)
    obs = env.reset(gravity, rng)
    total = 0.0
    while True:
        action = agent.act(obs, deterministic=True)
        obs, reward, done = env.step(action[0])
        total += reward
        if done:
            return total


def _run_seed(config_dict: dict, seed: int, out_dir: str) -> dict:
    cfg = ExperimentConfig.from_dict(config_dict)
    streams = np.random.SeedSequence(seed).spawn(7)
    rng_init, rng_noise, rng_buffer, rng_sampler, rng_env, rng_warmup, rng_eval = (
        np.random.default_rng(s) for s in streams)

    agent = SacAgent(_agent_config(cfg), rng_init, rng_noise)
    buffer = make_buffer(cfg.buffer_kind, cfg.buffer_capacity, rng_buffer,
                         n_sub=cfg.n_sub, beta=cfg.beta_mtr)
    schedule = GravitySchedule(cfg.schedule_kind, cfg.total_steps,
                               cycles=cfg.sine_cycles,
                               adjustment_period=cfg.adjustment_period,
                               seed=seed)
    env = PointMassEnv(EnvParams())

    train_rows: list[list] = []
    eval_rows: list[list] = []
    diagnostics: dict | None = None

    gravity = schedule.gravity_at(0) if cfg.total_steps > 0 else None
    if gravity is not None:
        obs = env.reset(gravity, rng_env)
    episode_return = 0.0
    episode_index = 0
    episode_start_gravity = gravity

    try:
        for step in range(cfg.total_steps):
            gravity = schedule.gravity_at(step)
            env.set_gravity(gravity)
            if step < cfg.warmup_steps:
                action = rng_warmup.uniform(-1.0, 1.0, size=1)
            else:
                action = agent.act(obs)
            next_obs, reward, done = env.step(action[0])
            # episodes end by time limit only, so bootstrap through them
            buffer.push(Experience(obs, np.asarray(action, dtype=np.float64),
                                   reward, next_obs, False, step))
            episode_return += reward
            obs = next_obs
            if step >= cfg.warmup_steps and step % cfg.train_frequency == 0:
                batch = buffer.sample(cfg.batch_size, rng_sampler)
                occupancies = (buffer.occupancies()[1:]
                               if isinstance(buffer, MtrBuffer) else None)
                agent.update(batch, occupancies)
            if done:
                train_rows.append([seed, step + 1, episode_index,
                                   episode_return, episode_start_gravity])
                episode_index += 1
                if episode_index % cfg.eval_every_episodes == 0:
                    for g_eval in cfg.eval_gravities:
                        for _ in range(cfg.episodes_per_eval):
                            ret = _eval_episode(agent, g_eval, rng_eval)
                            eval_rows.append([seed, step + 1, g_eval, ret])
                if step + 1 < cfg.total_steps:
                    next_gravity = schedule.gravity_at(step + 1)
                    obs = env.reset(next_gravity, rng_env)
                    episode_start_gravity = next_gravity
                    episode_return = 0.0
    except NonFiniteLossError as err:
        diagnostics = {"seed": seed, "error": str(err), **err.diagnostics}

    out = Path(out_dir)
    agent.save_checkpoint(out / f"checkpoint_seed{seed}", cfg.total_steps, seed)
    save_buffer(buffer, out / f"buffer_seed{seed}.bin")
    ages: list[int] = []
    if isinstance(buffer, MtrBuffer):
        ages = cascade_ages(buffer, cfg.total_steps).tolist()
    return {"seed": seed, "train_rows": train_rows, "eval_rows": eval_rows,
            "ages": ages, "diagnostics": diagnostics}


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def resolve_out_dir(config: ExperimentConfig) -> Path:
    if config.out_dir:
        return Path(config.out_dir)
    name = f"{config.buffer_kind}-{config.schedule_kind}-s{config.total_steps}"
    return default_out_root() / name


def run_experiment(config: ExperimentConfig,
                   max_workers: int | None = None) -> Path:
    """Run every seed, then write logs, config echo and checkpoints.

    Returns the output directory. A seed whose losses go non-finite is
    aborted and recorded in seed<k>_diagnostics.json; other seeds continue.
    """
    config.validate()
    out = resolve_out_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    write_config_json(config, out / "config.json")

    workers = max_workers if max_workers is not None else min(
        len(config.seeds), os.cpu_count() or 1)
    cfg_dict = config.to_dict()
    if workers <= 1 or len(config.seeds) == 1:
        results = [_run_seed(cfg_dict, seed, str(out)) for seed in config.seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_seed, cfg_dict, seed, str(out))
                       for seed in config.seeds]
            results = [f.result() for f in futures]

    results.sort(key=lambda r: config.seeds.index(r["seed"]))
    train_rows = [row for r in results for row in r["train_rows"]]
    eval_rows = [row for r in results for row in r["eval_rows"]]
    _write_csv(out / "train_log.csv", TRAIN_HEADER, train_rows)
    _write_csv(out / "eval_log.csv", EVAL_HEADER, eval_rows)

    if config.buffer_kind in ("mtr", "mtr_irm"):
        ages = np.concatenate([np.asarray(r["ages"], dtype=np.int64)
                               for r in results])
        lo, hi, counts = age_histogram(ages)
        write_age_hist_csv(out / "age_hist.csv", lo, hi, counts)

    for r in results:
        if r["diagnostics"] is not None:
            path = out / f"seed{r['seed']}_diagnostics.json"
            path.write_text(json.dumps(r["diagnostics"], indent=2) + "\n")
    return out
