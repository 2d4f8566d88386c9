"""Self-contained property checks behind the `verify` CLI subcommand.

Every analytic gradient is compared against central finite differences in
float64; the remaining checks cover the invariance-penalty reductions,
squashed-density normalization, quota apportionment, the retention closed
forms and the gravity schedules. The test suite runs the same checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from mtreplay.agent import (
    entropy_coef_loss,
    irm_policy_loss,
    irm_w_gradient,
    policy_loss,
    q_loss,
    q_target,
)
from mtreplay.autodiff import Tensor, parameter
from mtreplay.envsim import GRAVITY_FIXED, GravitySchedule
from mtreplay.nets import GaussianPolicy, QNet
from mtreplay.replay import apportion
from mtreplay.retention import RetentionParams, survival_probability, t_hat

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(slots=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def finite_difference_check(loss_fn: Callable[[], Tensor],
                            params: list[Tensor], h: float = 1e-6,
                            floor: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences.

    The denominator is floored at `floor`: the central difference of an
    O(1) loss carries ~1e-10 of absolute cancellation noise, so gradients
    much smaller than the floor cannot be compared relatively at all.
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.ravel()
        gflat = grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss_fn().data)
            flat[i] = orig - h
            down = float(loss_fn().data)
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            denom = max(abs(fd), abs(gflat[i]), floor)
            worst = max(worst, abs(fd - gflat[i]) / denom)
    return worst


def _jitter_biases(params: list[Tensor], rng: np.random.Generator) -> None:
    # zero biases leave whole pre-activation rows exactly on the ReLU kink,
    # where central differences disagree with any subgradient choice
    for p in params:
        if p.data.ndim == 1:
            p.data = rng.normal(0.0, 0.1, size=p.data.shape)


def _small_setup(seed: int = 0, batch: int = 16):
    rng = np.random.default_rng(seed)
    policy = GaussianPolicy(3, 1, 8, rng)
    q1 = QNet(3, 1, 8, rng)
    _jitter_biases(policy.params + q1.params, rng)
    states = rng.normal(size=(batch, 3))
    eps = rng.standard_normal((batch, 1))
    return rng, policy, q1, states, eps


def check_gradient_policy_loss() -> CheckResult:
    _, policy, q1, states, eps = _small_setup()
    err = finite_difference_check(
        lambda: policy_loss(policy, q1, states, eps, alpha=0.7),
        policy.params + q1.params)
    return CheckResult("gradient: policy loss", err < 1e-4,
                       f"max rel err {err:.2e}")


def check_gradient_q_loss() -> CheckResult:
    rng, policy, q1, states, eps = _small_setup(1)
    q2 = QNet(3, 1, 8, rng)
    actions = np.tanh(rng.normal(size=(16, 1)))
    rewards = rng.normal(size=16)
    next_states = rng.normal(size=(16, 3))
    terminals = (rng.random(16) < 0.3).astype(np.float64)
    targets = q_target(policy, q1, q2, rewards, next_states, terminals,
                       gamma=0.95, alpha=0.3, eps_next=eps)
    rng2 = np.random.default_rng(2)
    qnet = QNet(3, 1, 8, rng2)
    _jitter_biases(qnet.params, rng2)
    err = finite_difference_check(
        lambda: q_loss(qnet, states, actions, targets), qnet.params)
    return CheckResult("gradient: Q loss", err < 1e-4, f"max rel err {err:.2e}")


def check_gradient_entropy_coef() -> CheckResult:
    log_alpha = parameter(0.3)
    err = finite_difference_check(
        lambda: entropy_coef_loss(log_alpha, mean_log_prob=-0.4,
                                  target_entropy=-1.0),
        [log_alpha])
    return CheckResult("gradient: entropy coefficient loss", err < 1e-4,
                       f"max rel err {err:.2e}")


def w_gradient_finite_difference(policy: GaussianPolicy, states: np.ndarray,
                                 eps: np.ndarray, alpha: float,
                                 h: float = 1e-6) -> float:
    """Central difference over the dummy action scale w at w = 1.

    Evaluates the squashed log-density at w * a directly (atanh route), an
    independent path from the analytic derivative inside `irm_w_gradient`.
    """
    mean, log_std = policy.forward_np(states)
    std = np.exp(log_std)
    a = np.tanh(mean + std * eps)

    def loss_at(w: float) -> float:
        x = w * a
        u = np.arctanh(x)
        gauss = -0.5 * ((u - mean) / std) ** 2 - log_std - _LOG_SQRT_2PI
        logp = (gauss - np.log1p(-x * x)).sum(axis=1)
        return alpha * float(logp.mean())

    return (loss_at(1.0 + h) - loss_at(1.0 - h)) / (2.0 * h)


def check_gradient_irm_w() -> CheckResult:
    _, policy, _, states, eps = _small_setup(3)
    analytic = float(irm_w_gradient(policy, states, eps, alpha=0.9).data)
    fd = w_gradient_finite_difference(policy, states, eps, alpha=0.9)
    err = abs(analytic - fd) / max(abs(fd), abs(analytic), 1e-12)
    return CheckResult("gradient: dummy-scale w derivative", err < 1e-5,
                       f"analytic {analytic:.6e} vs fd {fd:.6e}, rel {err:.2e}")


def check_gradient_irm_penalty() -> CheckResult:
    rng, policy, q1, states, eps = _small_setup(4)
    ids = rng.integers(0, 4, size=16).tolist()
    occupancies = [40, 30, 20, 0]

    def loss() -> Tensor:
        return irm_policy_loss(policy, q1, states, ids, occupancies, eps,
                               alpha=0.5, lam=0.1)[0]

    err = finite_difference_check(loss, policy.params + q1.params)
    return CheckResult("gradient: invariance-penalized policy loss",
                       err < 1e-4, f"max rel err {err:.2e}")


def check_irm_reductions() -> CheckResult:
    rng, policy, q1, states, eps = _small_setup(5)
    ids = rng.integers(0, 3, size=16).tolist()
    occ = [50, 25, 25]
    plain = policy_loss(policy, q1, states, eps, alpha=0.6)
    with_zero_lam, _, pen0 = irm_policy_loss(policy, q1, states, ids, occ,
                                             eps, alpha=0.6, lam=0.0)
    lam_ok = float(plain.data) == float(with_zero_lam.data) and pen0 == 0.0
    _, _, pen_alpha0 = irm_policy_loss(policy, q1, states, ids, occ, eps,
                                       alpha=0.0, lam=0.1)
    w_alpha0 = float(irm_w_gradient(policy, states, eps, alpha=0.0).data)
    alpha_ok = pen_alpha0 == 0.0 and w_alpha0 == 0.0
    return CheckResult(
        "invariance penalty reductions (lambda=0 exact, alpha=0 zero)",
        lam_ok and alpha_ok,
        f"lambda0 equal: {lam_ok}, alpha0 penalty: {pen_alpha0}")


def check_density_normalization() -> CheckResult:
    rng = np.random.default_rng(6)
    policy = GaussianPolicy(3, 1, 8, rng)
    worst = 0.0
    for state in rng.normal(size=(4, 3)):
        u = np.linspace(-12.0, 12.0, 4001)
        a = np.tanh(u)
        states = np.repeat(state[None, :], len(u), axis=0)
        logp = policy.log_density(states, a[:, None])
        # substitute a = tanh(u): integral of pi(a) da over (-1, 1)
        integrand = np.exp(logp) * (1.0 - a * a)
        total = float(np.trapz(integrand, u))
        worst = max(worst, abs(total - 1.0))
    return CheckResult("squashed density integrates to one", worst < 1e-3,
                       f"max |integral - 1| = {worst:.2e}")


def check_apportionment() -> CheckResult:
    rng = np.random.default_rng(7)
    ok = True
    detail = ""
    for _ in range(300):
        counts = rng.integers(0, 30, size=rng.integers(1, 8)).tolist()
        total = sum(counts)
        if total == 0:
            continue
        n = int(rng.integers(0, total + 1))
        quotas = apportion(counts, n, rng)
        if sum(quotas) != n or any(q < 0 for q in quotas):
            ok, detail = False, f"bad quota sum for {counts}, n={n}"
            break
        if any(q > 0 and c == 0 for q, c in zip(quotas, counts)):
            ok, detail = False, f"zero-occupancy bucket drew samples: {counts}"
            break
        if any(q > c for q, c in zip(quotas, counts)):
            ok, detail = False, f"quota above occupancy for {counts}, n={n}"
            break
    return CheckResult("largest-remainder apportionment", ok,
                       detail or "sums exact, zero buckets empty")


def check_retention_identities() -> CheckResult:
    worst = 0.0
    for capacity, n_sub in [(2000, 10), (1_000_000, 20), (600, 6)]:
        for beta in (0.3, 0.5, 0.85, 0.99):
            params = RetentionParams(capacity, n_sub, beta)
            for k in range(1, n_sub + 1):
                direct = math.fsum(params.sub_capacity * beta ** -(i - 1)
                                   for i in range(1, k + 1))
                closed = t_hat(params, k)
                worst = max(worst, abs(closed - direct) / direct)
                s = survival_probability(params, closed)
                worst = max(worst, abs(s - beta ** k) / beta ** k)
    return CheckResult("retention closed forms (direct sum, survival identity)",
                       worst < 1e-12, f"max rel err {worst:.2e}")


def check_schedules() -> CheckResult:
    total = 30_000
    ok = True
    details = []
    fixed = GravitySchedule("fixed", total)
    if any(fixed.gravity_at(s) != GRAVITY_FIXED for s in range(0, total, 500)):
        ok, details = False, ["fixed schedule moved"]
    linear = GravitySchedule("linear", total)
    values = [linear.gravity_at(s) for s in range(0, total + 1, 250)]
    if linear.gravity_at(0) != -7.0 or linear.gravity_at(total) != -17.0:
        ok = False
        details.append("linear endpoints wrong")
    if any(b > a for a, b in zip(values, values[1:])):
        ok = False
        details.append("linear not nonincreasing")
    sine = GravitySchedule("sine", total)
    boundaries = [0, total // 3, 2 * total // 3, total]
    if any(abs(sine.gravity_at(b) + 12.0) > 1e-9 for b in boundaries):
        ok = False
        details.append("sine cycle boundaries off midpoint")
    rand = GravitySchedule("random", total, seed=11)
    for s in range(0, total, 1000):
        g = rand.gravity_at(s)
        if not -17.0 <= g <= -7.0:
            ok = False
            details.append("random gravity out of range")
            break
        if rand.gravity_at(s + 999) != g:
            ok = False
            details.append("gravity changed inside an adjustment period")
            break
    for kind in ("linear", "sine"):
        sched = GravitySchedule(kind, total)
        if any(not -17.0 <= sched.gravity_at(s) <= -7.0
               for s in range(0, total + 1, 100)):
            ok = False
            details.append(f"{kind} gravity out of range")
    return CheckResult("gravity schedules", ok, "; ".join(details) or "all invariants hold")


ALL_CHECKS: list[Callable[[], CheckResult]] = [
    check_gradient_policy_loss,
    check_gradient_q_loss,
    check_gradient_entropy_coef,
    check_gradient_irm_w,
    check_gradient_irm_penalty,
    check_irm_reductions,
    check_density_normalization,
    check_apportionment,
    check_retention_identities,
    check_schedules,
]


def run_all() -> list[CheckResult]:
    return [check() for check in ALL_CHECKS]
