"""Feedforward networks, the squashed-Gaussian policy head, and Adam.

The optimizer follows the published Adam update rule (bias-corrected first
and second moments) rather than wrapping a framework implementation, which
keeps parameter trajectories bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from mtreplay.autodiff import Tensor, as_tensor, concat_cols, parameter

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class Mlp:
    """Fully connected ReLU network; the last layer is linear."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.params: list[Tensor] = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            scale = 1e-2 if last else math.sqrt(2.0 / n_in)
            self.params.append(parameter(rng.normal(0.0, scale, size=(n_in, n_out))))
            self.params.append(parameter(np.zeros(n_out)))

    def forward(self, x) -> Tensor:
        h = as_tensor(x)
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n_layers - 1:
                h = h.relu()
        return h

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        """Plain-numpy forward pass (no graph), for targets and rollouts."""
        h = np.asarray(x, dtype=np.float64)
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            h = h @ self.params[2 * i].data + self.params[2 * i + 1].data
            if i < n_layers - 1:
                np.maximum(h, 0.0, out=h)
        return h


class QNet:
    """State-action value network: (state, action) -> scalar."""

    def __init__(self, state_dim: int, action_dim: int, hidden: int,
                 rng: np.random.Generator, n_hidden: int = 2):
        sizes = [state_dim + action_dim] + [hidden] * n_hidden + [1]
        self.net = Mlp(sizes, rng)

    @property
    def params(self) -> list[Tensor]:
        return self.net.params

    def forward(self, states: Tensor, actions: Tensor) -> Tensor:
        return self.net.forward(concat_cols(as_tensor(states), as_tensor(actions)))

    def forward_np(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return self.net.forward_np(np.concatenate([states, actions], axis=1))


class GaussianPolicy:
    """Diagonal Gaussian over pre-squash actions, squashed through tanh.

    The network maps state to (mean, log-std); log-std is clamped to
    [LOG_STD_MIN, LOG_STD_MAX] and emitted actions are tanh(u) with
    u ~ N(mean, std), so they lie strictly inside (-1, 1).
    """

    def __init__(self, state_dim: int, action_dim: int, hidden: int,
                 rng: np.random.Generator, n_hidden: int = 2):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.trunk = Mlp([state_dim] + [hidden] * n_hidden, rng)
        self.mean_head = Mlp([hidden, action_dim], rng)
        self.logstd_head = Mlp([hidden, action_dim], rng)

    @property
    def params(self) -> list[Tensor]:
        return self.trunk.params + self.mean_head.params + self.logstd_head.params

    def forward(self, states) -> tuple[Tensor, Tensor]:
        h = self.trunk.forward(states).relu()
        mean = self.mean_head.forward(h)
        log_std = self.logstd_head.forward(h).clip(LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    def sample(self, states, eps: np.ndarray, squash: bool = True
               ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Reparameterized sample for a fixed noise draw `eps`.

        Returns (action, log_prob, mean, std) as graph tensors. With the
        substitution u = mean + std * eps, the Gaussian log-density reduces
        to -eps^2/2 - log_std - log sqrt(2*pi); its total derivative w.r.t.
        the network parameters is exactly that of log N(u; mean, std)
        evaluated along the reparameterized path.
        """
        mean, log_std = self.forward(states)
        std = log_std.exp()
        u = mean + std * eps
        const = -0.5 * (eps * eps) - _LOG_SQRT_2PI
        gauss_logp = (as_tensor(const) - log_std).sum(axis=1)
        if not squash:
            return u, gauss_logp, mean, std
        action = u.tanh()
        # log(1 - tanh(u)^2) = 2*(log 2 - u - softplus(-2u)), stable for large |u|
        correction = 2.0 * (math.log(2.0) - u - (-2.0 * u).softplus())
        log_prob = gauss_logp - correction.sum(axis=1)
        return action, log_prob, mean, std

    def forward_np(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = self.trunk.forward_np(states)
        np.maximum(h, 0.0, out=h)
        mean = self.mean_head.forward_np(h)
        log_std = np.clip(self.logstd_head.forward_np(h), LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    def sample_np(self, states: np.ndarray, eps: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray]:
        """Graph-free squashed sample, used for bootstrap targets."""
        mean, log_std = self.forward_np(states)
        std = np.exp(log_std)
        u = mean + std * eps
        action = np.tanh(u)
        gauss_logp = (-0.5 * eps * eps - log_std - _LOG_SQRT_2PI).sum(axis=1)
        correction = 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))
        return action, gauss_logp - correction.sum(axis=1)

    def mean_action_np(self, state: np.ndarray) -> np.ndarray:
        """Deterministic action tanh(mean), used for evaluation."""
        mean, _ = self.forward_np(np.atleast_2d(state))
        return np.tanh(mean[0])

    def log_density(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """log pi(a|s) for arbitrary actions strictly inside (-1, 1)."""
        mean, log_std = self.forward_np(states)
        std = np.exp(log_std)
        u = np.arctanh(actions)
        gauss = -0.5 * ((u - mean) / std) ** 2 - log_std - _LOG_SQRT_2PI
        return (gauss - np.log1p(-actions * actions)).sum(axis=1)


class Adam:
    """Adam with bias correction, applied in place to float64 parameters."""

    def __init__(self, params: Sequence[Tensor], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> dict[str, list[np.ndarray]]:
        return {"m": self.m, "v": self.v}


def polyak_update(targets: Sequence[Tensor], sources: Sequence[Tensor],
                  tau: float) -> None:
    """Exponential smoothing of target parameters toward live parameters."""
    for t, s in zip(targets, sources):
        t.data *= 1.0 - tau
        t.data += tau * s.data


def flatten_params(params: Sequence[Tensor]) -> np.ndarray:
    return np.concatenate([p.data.ravel() for p in params])


def set_flat_params(params: Sequence[Tensor], flat: np.ndarray) -> None:
    i = 0
    for p in params:
        n = p.data.size
        p.data = flat[i:i + n].reshape(p.data.shape).astype(np.float64).copy()
        i += n
    if i != flat.size:
        raise ValueError("flat vector size does not match parameter count")
