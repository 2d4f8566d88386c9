"""Maximum-entropy actor-critic with a per-timescale invariance penalty.

The policy objective is the usual soft actor-critic loss, mean over the
batch of alpha * log pi(a|s) - Q1(s, a) with a reparameterized action
sample. On top of it, the invariance penalty treats each cascade sub-buffer
as a separate data environment: for sub-buffer i, take the gradient of the
policy loss with respect to a dummy scalar w that scales the action inside
the log-density only (the Q term does not depend on w), evaluate it at
w = 1, square it, and weight it by the sub-buffer's share of the cascade.

The w-derivative is taken analytically, so the penalty stays an ordinary
first-order function of the policy parameters:

    d/dw log pi(w*a | s) |_{w=1} = sum_d a_d * (2 a_d - eps_d / sigma_d)
                                             / (1 - a_d^2)

using a = tanh(mu + sigma*eps) and atanh(a) - mu = sigma*eps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mtreplay.autodiff import Tensor, parameter
from mtreplay.nets import (
    Adam,
    GaussianPolicy,
    QNet,
    flatten_params,
    polyak_update,
    set_flat_params,
)
from mtreplay.replay import SampledBatch

_ACTION_CLAMP = 1e-6


class NonFiniteLossError(RuntimeError):
    """A training loss left the reals; carries diagnostics for the log."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def policy_loss(policy: GaussianPolicy, q1: QNet, states: np.ndarray,
                eps: np.ndarray, alpha: float, squash: bool = True) -> Tensor:
    """Mean over the batch of alpha * log pi(a|s) - Q1(s, a)."""
    action, log_prob, _, _ = policy.sample(states, eps, squash=squash)
    q = q1.forward(Tensor(states), action)
    return (alpha * log_prob - q.reshape(-1)).mean()


def _w_gradient_from(action: Tensor, std: Tensor, eps: np.ndarray,
                     alpha: float) -> Tensor:
    a = action.clip(-1.0 + _ACTION_CLAMP, 1.0 - _ACTION_CLAMP)
    per_state = (a * (2.0 * a - eps / std) / (1.0 - a * a)).sum(axis=1)
    return alpha * per_state.mean()


def irm_w_gradient(policy: GaussianPolicy, states: np.ndarray,
                   eps: np.ndarray, alpha: float) -> Tensor:
    """Gradient of the batch policy loss w.r.t. the dummy action scale at 1.

    Only the entropy term depends on w, so the result is alpha times the
    batch mean of the analytic w-derivative of the log-density. The value
    is itself differentiable w.r.t. the policy parameters.
    """
    action, _, _, std = policy.sample(states, eps)
    return _w_gradient_from(action, std, eps, alpha)


def irm_policy_loss(policy: GaussianPolicy, q1: QNet, states: np.ndarray,
                    source_ids: list[int], cascade_occupancies: list[int],
                    eps: np.ndarray, alpha: float, lam: float
                    ) -> tuple[Tensor, float, float]:
    """Policy loss plus the occupancy-weighted invariance penalty.

    `cascade_occupancies[i-1]` is the live occupancy of sub-buffer i; the
    penalty sums over sub-buffers that contributed samples to this batch,
    reusing the batch's own per-item noise draws. With lam = 0 the result
    is exactly `policy_loss` (no extra randomness is consumed either way).

    Returns (total loss, mean log-prob, penalty value).
    """
    action, log_prob, _, std = policy.sample(states, eps)
    q = q1.forward(Tensor(states), action)
    base = (alpha * log_prob - q.reshape(-1)).mean()
    mean_logp = float(log_prob.data.mean())
    if lam == 0.0:
        return base, mean_logp, 0.0
    total_cascade = float(sum(cascade_occupancies))
    if total_cascade == 0.0:
        return base, mean_logp, 0.0
    ids = np.asarray(source_ids)
    penalty: Tensor | None = None
    for i, occupancy in enumerate(cascade_occupancies, start=1):
        idx = np.flatnonzero(ids == i)
        if idx.size == 0 or occupancy == 0:
            continue
        g = _w_gradient_from(action.take_rows(idx), std.take_rows(idx),
                             eps[idx], alpha)
        term = (occupancy / total_cascade) * (g * g)
        penalty = term if penalty is None else penalty + term
    if penalty is None:
        return base, mean_logp, 0.0
    return base + lam * penalty, mean_logp, float(penalty.data)


def q_target(policy: GaussianPolicy, q1_target: QNet, q2_target: QNet,
             rewards: np.ndarray, next_states: np.ndarray,
             terminals: np.ndarray, gamma: float, alpha: float,
             eps_next: np.ndarray) -> np.ndarray:
    """Bootstrapped TD target with the twin minimum and entropy bonus."""
    next_action, next_logp = policy.sample_np(next_states, eps_next)
    q_min = np.minimum(q1_target.forward_np(next_states, next_action),
                       q2_target.forward_np(next_states, next_action)).reshape(-1)
    return rewards + gamma * (1.0 - terminals) * (q_min - alpha * next_logp)


def q_loss(qnet: QNet, states: np.ndarray, actions: np.ndarray,
           targets: np.ndarray) -> Tensor:
    diff = qnet.forward(Tensor(states), Tensor(actions)).reshape(-1) - targets
    return (diff * diff).mean()


def entropy_coef_loss(log_alpha: Tensor, mean_log_prob: float,
                      target_entropy: float) -> Tensor:
    return -(log_alpha * (mean_log_prob + target_entropy))


# ---------------------------------------------------------------------------
# agent
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class AgentConfig:
    state_dim: int = 3
    action_dim: int = 1
    hidden_width: int = 32
    n_hidden: int = 2
    learning_rate: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    gamma: float = 0.99
    tau: float = 0.005
    lambda_irm: float = 0.0
    initial_alpha: float = 1.0


def _clone_qnet(src: QNet, cfg: AgentConfig) -> QNet:
    out = QNet(cfg.state_dim, cfg.action_dim, cfg.hidden_width,
               np.random.default_rng(0), n_hidden=cfg.n_hidden)
    for dst_p, src_p in zip(out.params, src.params):
        dst_p.data = src_p.data.copy()
        dst_p.requires_grad = False
    return out


class SacAgent:
    """SAC with twin critics, Polyak targets and automatic entropy tuning."""

    def __init__(self, config: AgentConfig, rng_init: np.random.Generator,
                 rng_noise: np.random.Generator):
        c = config
        self.config = c
        self.rng_noise = rng_noise
        self.policy = GaussianPolicy(c.state_dim, c.action_dim, c.hidden_width,
                                     rng_init, n_hidden=c.n_hidden)
        self.q1 = QNet(c.state_dim, c.action_dim, c.hidden_width, rng_init,
                       n_hidden=c.n_hidden)
        self.q2 = QNet(c.state_dim, c.action_dim, c.hidden_width, rng_init,
                       n_hidden=c.n_hidden)
        self.q1_target = _clone_qnet(self.q1, c)
        self.q2_target = _clone_qnet(self.q2, c)
        self.log_alpha = parameter(math.log(c.initial_alpha))
        self.target_entropy = -float(c.action_dim)
        adam = dict(lr=c.learning_rate, beta1=c.adam_beta1, beta2=c.adam_beta2)
        self.policy_opt = Adam(self.policy.params, **adam)
        self.q_opt = Adam(self.q1.params + self.q2.params, **adam)
        self.alpha_opt = Adam([self.log_alpha], **adam)
        self.updates_done = 0

    @property
    def alpha(self) -> float:
        return math.exp(float(self.log_alpha.data))

    def act(self, obs: np.ndarray, deterministic: bool = False,
            rng: np.random.Generator | None = None) -> np.ndarray:
        if deterministic:
            return self.policy.mean_action_np(obs)
        rng = rng if rng is not None else self.rng_noise
        eps = rng.standard_normal((1, self.config.action_dim))
        action, _ = self.policy.sample_np(np.atleast_2d(obs), eps)
        return action[0]

    def update(self, batch: SampledBatch,
               cascade_occupancies: list[int] | None = None) -> dict:
        """One gradient step on critics, actor and entropy coefficient."""
        c = self.config
        states, actions, rewards, next_states, terminals = batch.arrays()
        n = states.shape[0]
        alpha = self.alpha
        eps_next = self.rng_noise.standard_normal((n, c.action_dim))
        eps_actor = self.rng_noise.standard_normal((n, c.action_dim))

        targets = q_target(self.policy, self.q1_target, self.q2_target,
                           rewards, next_states, terminals, c.gamma, alpha,
                           eps_next)
        loss_q1 = q_loss(self.q1, states, actions, targets)
        loss_q2 = q_loss(self.q2, states, actions, targets)
        self.q_opt.zero_grad()
        (loss_q1 + loss_q2).backward()
        self.q_opt.step()

        occupancies = cascade_occupancies if cascade_occupancies is not None else []
        loss_pi, mean_logp, penalty = irm_policy_loss(
            self.policy, self.q1, states, batch.source_ids, occupancies,
            eps_actor, alpha, c.lambda_irm)
        self.policy_opt.zero_grad()
        loss_pi.backward()
        self.policy_opt.step()

        loss_alpha = entropy_coef_loss(self.log_alpha, mean_logp,
                                       self.target_entropy)
        self.alpha_opt.zero_grad()
        loss_alpha.backward()
        self.alpha_opt.step()

        polyak_update(self.q1_target.params, self.q1.params, c.tau)
        polyak_update(self.q2_target.params, self.q2.params, c.tau)
        self.updates_done += 1

        metrics = {
            "q1_loss": float(loss_q1.data),
            "q2_loss": float(loss_q2.data),
            "policy_loss": float(loss_pi.data),
            "irm_penalty": penalty,
            "alpha": self.alpha,
            "mean_log_prob": mean_logp,
        }
        if not all(math.isfinite(v) for v in metrics.values()):
            raise NonFiniteLossError(
                "non-finite loss encountered",
                {"update": self.updates_done, **metrics})
        return metrics

    # ---- checkpointing ----------------------------------------------------

    def _param_groups(self) -> dict[str, list[Tensor]]:
        return {
            "policy": self.policy.params,
            "q1": self.q1.params,
            "q2": self.q2.params,
            "q1_target": self.q1_target.params,
            "q2_target": self.q2_target.params,
            "log_alpha": [self.log_alpha],
        }

    def save_checkpoint(self, prefix: str | Path, step_count: int,
                        seed: int | None = None) -> None:
        """Flat float64 parameter file plus a JSON shape sidecar."""
        prefix = Path(prefix)
        groups = self._param_groups()
        flat = np.concatenate([flatten_params(ps) for ps in groups.values()])
        flat.tofile(str(prefix) + ".bin")
        sidecar = {
            "format": "mtreplay-checkpoint-1",
            "step_count": int(step_count),
            "seed": seed,
            "groups": {name: [list(p.data.shape) for p in ps]
                       for name, ps in groups.items()},
        }
        Path(str(prefix) + ".json").write_text(json.dumps(sidecar, indent=2))

    def load_checkpoint(self, prefix: str | Path) -> dict:
        prefix = Path(prefix)
        sidecar = json.loads(Path(str(prefix) + ".json").read_text())
        if sidecar.get("format") != "mtreplay-checkpoint-1":
            raise ValueError("unrecognized checkpoint format")
        flat = np.fromfile(str(prefix) + ".bin", dtype=np.float64)
        offset = 0
        for name, params in self._param_groups().items():
            shapes = sidecar["groups"][name]
            size = sum(int(np.prod(s)) for s in shapes)
            set_flat_params(params, flat[offset:offset + size])
            offset += size
        if offset != flat.size:
            raise ValueError("checkpoint size does not match agent layout")
        return sidecar
