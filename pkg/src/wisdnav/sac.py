"""Soft Actor-Critic on top of the numpy MLPs in :mod:`wisdnav.neural`."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import InsufficientData, InvalidConfig, ShapeMismatch
from .neural import (
    AdamState,
    GaussianHead,
    MlpParams,
    adam_step,
    init_mlp,
    mlp_backward,
    mlp_forward,
    policy_sample,
    policy_sample_backward,
)

log = logging.getLogger(__name__)

TRAINING_LOG_HEADER = (
    "episode", "return", "r_prog", "r_safe", "r_stab", "critic1_loss", "critic2_loss",
    "actor_loss", "alpha", "eval_sr", "mean_slip",
)
TERMINAL_OUTCOMES = ("goal_reached", "collision")


class Batch(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    """Ring buffer with uniform sampling; storage grows lazily up to ``capacity``."""

    def __init__(self, capacity: int = 500_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self._store = None
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def _grow(self, need: int):
        cur = 0 if self._store is None else self._store.shape[0]
        if need <= cur:
            return
        new = min(self.capacity, max(need, 2 * cur, 1024))
        store = np.zeros((new, self._width))
        if self._store is not None:
            store[:cur] = self._store
        self._store = store

    def push(self, s, a, r, s2, done) -> None:
        s, a, s2 = (np.asarray(x, dtype=float).ravel() for x in (s, a, s2))
        if self._store is None:
            self.obs_dim, self.act_dim = s.size, a.size
            self._width = 2 * s.size + a.size + 2
        elif s.size != self.obs_dim or a.size != self.act_dim:
            raise ValueError("transition dimensions changed within one buffer")
        if not math.isfinite(r):
            raise ValueError("reward must be finite")
        self._grow(self._next + 1)
        row = self._store[self._next]
        o, k = self.obs_dim, self.act_dim
        row[:o] = s
        row[o:o + k] = a
        row[o + k] = r
        row[o + k + 1:2 * o + k + 1] = s2
        row[-1] = float(done)
        self._next = (self._next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        if self.size < max(n, 1):
            raise InsufficientData(f"buffer holds {self.size} transitions, {n} requested")
        rows = self._store[rng.integers(0, self.size, size=n)]
        o, k = self.obs_dim, self.act_dim
        return Batch(rows[:, :o], rows[:, o:o + k], rows[:, o + k],
                     rows[:, o + k + 1:2 * o + k + 1], rows[:, -1])


@dataclass
class SacConfig:
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 128
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    alpha: float = 0.2
    auto_alpha: bool = False
    lr_alpha: float = 3e-4
    target_entropy: float | None = None
    episodes: int = 2000
    warmup: int = 1000
    updates_per_step: int = 1
    buffer_size: int = 500_000
    hidden_sizes: tuple = (512, 512)
    eval_every: int = 50
    eval_episodes: int = 10
    eval_seed: int = 1_000_000
    checkpoint_every: int = 0

    def validate(self) -> "SacConfig":
        if not 0.0 < self.gamma < 1.0:
            raise InvalidConfig("gamma must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise InvalidConfig("tau must lie in (0, 1]")
        if self.batch_size < 1 or self.episodes < 0 or self.warmup < 0:
            raise InvalidConfig("batch_size, episodes and warmup must be nonnegative")
        if self.alpha < 0 or min(self.lr_actor, self.lr_critic, self.lr_alpha) <= 0:
            raise InvalidConfig("alpha must be >= 0 and learning rates > 0")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise InvalidConfig("hidden_sizes must be a nonempty list of positive ints")
        return self

    @classmethod
    def from_dict(cls, doc) -> "SacConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise InvalidConfig(f"unknown SAC config keys: {sorted(unknown)}")
        doc = dict(doc)
        if "hidden_sizes" in doc:
            doc["hidden_sizes"] = tuple(int(h) for h in doc["hidden_sizes"])
        return cls(**doc).validate()


@dataclass
class SacNetworks:
    actor: MlpParams
    critic1: MlpParams
    critic2: MlpParams
    target1: MlpParams
    target2: MlpParams

    @property
    def obs_dim(self) -> int:
        return self.actor.sizes[0]

    @property
    def act_dim(self) -> int:
        return self.actor.sizes[-1] // 2

    @classmethod
    def create(cls, obs_dim, act_dim, hidden_sizes, rng: np.random.Generator) -> "SacNetworks":
        hidden = tuple(hidden_sizes)
        actor = init_mlp((obs_dim,) + hidden + (2 * act_dim,), rng, last_scale=0.01)
        c1 = init_mlp((obs_dim + act_dim,) + hidden + (1,), rng)
        c2 = init_mlp((obs_dim + act_dim,) + hidden + (1,), rng)
        return cls(actor, c1, c2, c1.copy(), c2.copy())

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("actor", "critic1", "critic2", "target1", "target2"):
            out.update(getattr(self, name).named(name))
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, np.ndarray]) -> "SacNetworks":
        def grab(prefix):
            n = sum(1 for k in tensors if k.startswith(prefix + ".W"))
            return MlpParams([np.asarray(tensors[f"{prefix}.W{i}"], dtype=float) for i in range(n)],
                             [np.asarray(tensors[f"{prefix}.b{i}"], dtype=float) for i in range(n)])

        return cls(*(grab(p) for p in ("actor", "critic1", "critic2", "target1", "target2")))


def actor_head(actor: MlpParams, s) -> tuple[GaussianHead, list]:
    out, cache = mlp_forward(actor, np.atleast_2d(s))
    return GaussianHead.from_outputs(out), cache


def critic_value(critic: MlpParams, s, a) -> tuple[np.ndarray, list]:
    q, cache = mlp_forward(critic, np.concatenate([np.atleast_2d(s), np.atleast_2d(a)], axis=1))
    return q[:, 0], cache


def soft_bellman_target(r, done, q1_next, q2_next, logp_next, gamma, alpha):
    """``r + gamma (1 - done) (min(Q1', Q2') - alpha log pi)``."""
    soft_v = np.minimum(q1_next, q2_next) - alpha * np.asarray(logp_next)
    return np.asarray(r, dtype=float) + gamma * (1.0 - np.asarray(done, dtype=float)) * soft_v


def critic_target(batch: Batch, nets: SacNetworks, alpha, gamma, rng) -> np.ndarray:
    """Bootstrap targets for a batch, next actions drawn from the current actor."""
    head, _ = actor_head(nets.actor, batch.s2)
    a2, logp2, _ = policy_sample(head, rng)
    q1, _ = critic_value(nets.target1, batch.s2, a2)
    q2, _ = critic_value(nets.target2, batch.s2, a2)
    return soft_bellman_target(batch.r, batch.done, q1, q2, logp2, gamma, alpha)


def critic_loss_grad(critic: MlpParams, s, a, y) -> tuple[float, MlpParams]:
    q, cache = critic_value(critic, s, a)
    err = q - y
    grads, _ = mlp_backward(critic, cache, (2.0 / err.size * err)[:, None])
    return float(np.mean(err * err)), grads


def critic_update(critic: MlpParams, adam: AdamState, s, a, y) -> float:
    """One Adam step on the mean squared soft Bellman residual; ``y`` is a constant."""
    loss, grads = critic_loss_grad(critic, s, a, y)
    adam_step(critic.arrays(), grads.arrays(), adam)
    return loss


def actor_objective_grad(actor, critic1, critic2, s, alpha, noise):
    """Mean of ``alpha log pi(a|s) - min(Q1, Q2)(s, a)`` for reparameterized ``a``
    and its gradient w.r.t. the actor parameters. Critics are only read."""
    head, cache = actor_head(actor, s)
    a, logp, eps = policy_sample(head, noise)
    q1, c1 = critic_value(critic1, s, a)
    q2, c2 = critic_value(critic2, s, a)
    pick1 = q1 <= q2
    n = len(q1)
    qmin = np.where(pick1, q1, q2)
    loss = float(np.mean(alpha * logp - qmin))

    obs_dim = np.atleast_2d(s).shape[1]
    _, g1 = mlp_backward(critic1, c1, np.where(pick1, -1.0 / n, 0.0)[:, None])
    _, g2 = mlp_backward(critic2, c2, np.where(pick1, 0.0, -1.0 / n)[:, None])
    grad_a = (g1 + g2)[:, obs_dim:]
    grad_out = policy_sample_backward(head, eps, a, grad_a, np.full(n, alpha / n))
    grads, _ = mlp_backward(actor, cache, grad_out)
    return loss, grads, logp


def actor_update(actor, adam: AdamState, critic1, critic2, s, alpha, rng):
    loss, grads, logp = actor_objective_grad(actor, critic1, critic2, s, alpha, rng)
    adam_step(actor.arrays(), grads.arrays(), adam)
    return loss, logp


def soft_update(target: MlpParams, source: MlpParams, tau: float) -> None:
    """Polyak averaging ``target <- tau * source + (1 - tau) * target`` in place."""
    if target.sizes != source.sizes:
        raise ShapeMismatch(f"target {target.sizes} vs source {source.sizes}")
    for t, p in zip(target.arrays(), source.arrays()):
        t *= 1.0 - tau
        t += tau * p


@dataclass
class EpisodeStats:
    episode: int
    ret: float = 0.0
    r_prog: float = 0.0
    r_safe: float = 0.0
    r_stab: float = 0.0
    critic1_loss: float = math.nan
    critic2_loss: float = math.nan
    actor_loss: float = math.nan
    alpha: float = math.nan
    eval_sr: float | None = None
    mean_slip: float = 0.0
    outcome: str = ""
    steps: int = 0

    def row(self) -> dict:
        return {
            "episode": self.episode, "return": self.ret, "r_prog": self.r_prog,
            "r_safe": self.r_safe, "r_stab": self.r_stab, "critic1_loss": self.critic1_loss,
            "critic2_loss": self.critic2_loss, "actor_loss": self.actor_loss,
            "alpha": self.alpha, "eval_sr": "" if self.eval_sr is None else self.eval_sr,
            "mean_slip": self.mean_slip,
        }


@dataclass
class EvalResult:
    success_rate: float
    mean_return: float
    mean_slip: float
    outcomes: list = field(default_factory=list)
    returns: list = field(default_factory=list)


def run_episode(env, policy: Callable[[np.ndarray], np.ndarray], seed: int):
    """Roll out one episode; returns (return, mean slip, outcome, step count)."""
    obs = env.reset(seed=seed)
    total, slip, steps = 0.0, 0.0, 0
    while True:
        res = env.step(policy(env.encode(obs)))
        obs = res.observation
        total += res.reward.total
        slip += res.info["slip"]
        steps += 1
        if res.terminal:
            return total, slip / steps, res.done, steps


class SACAgent(BaseEstimator):
    """Soft Actor-Critic agent with twin critics and Polyak-averaged targets.

    ``fit(env)`` trains against an environment exposing ``reset(seed)``,
    ``step(action)``, ``encode(obs)``, ``obs_dim`` and ``action_dim``.
    ``predict`` returns the deterministic ``tanh(mu)`` action for encoded
    observations. Every hyperparameter of :class:`SacConfig` is a
    constructor argument; ``random_state`` fixes the whole run.
    """

    def __init__(self, hidden_sizes=(512, 512), gamma=0.99, tau=0.005, batch_size=128,
                 lr_actor=3e-4, lr_critic=3e-4, alpha=0.2, auto_alpha=False, lr_alpha=3e-4,
                 target_entropy=None, episodes=2000, warmup=1000, updates_per_step=1,
                 buffer_size=500_000, eval_every=50, eval_episodes=10, eval_seed=1_000_000,
                 checkpoint_every=0, checkpoint_dir=None, random_state=0):
        self.hidden_sizes = hidden_sizes
        self.gamma = gamma
        self.tau = tau
        self.batch_size = batch_size
        self.lr_actor = lr_actor
        self.lr_critic = lr_critic
        self.alpha = alpha
        self.auto_alpha = auto_alpha
        self.lr_alpha = lr_alpha
        self.target_entropy = target_entropy
        self.episodes = episodes
        self.warmup = warmup
        self.updates_per_step = updates_per_step
        self.buffer_size = buffer_size
        self.eval_every = eval_every
        self.eval_episodes = eval_episodes
        self.eval_seed = eval_seed
        self.checkpoint_every = checkpoint_every
        self.checkpoint_dir = checkpoint_dir
        self.random_state = random_state

    @property
    def config(self) -> SacConfig:
        fields = SacConfig.__dataclass_fields__
        return SacConfig(**{k: v for k, v in self.get_params().items() if k in fields}).validate()

    def initialize(self, obs_dim: int, act_dim: int, action_mode: str = "twist"):
        cfg = self._cfg = self.config
        seq = np.random.SeedSequence(int(self.random_state))
        init_seq, self._env_seq, act_seq, upd_seq = seq.spawn(4)
        self.networks_ = SacNetworks.create(obs_dim, act_dim, cfg.hidden_sizes,
                                            np.random.default_rng(init_seq))
        self.action_mode_ = action_mode
        self._act_rng = np.random.default_rng(act_seq)
        self._upd_rng = np.random.default_rng(upd_seq)
        self.actor_opt_ = AdamState(lr=cfg.lr_actor)
        self.critic1_opt_ = AdamState(lr=cfg.lr_critic)
        self.critic2_opt_ = AdamState(lr=cfg.lr_critic)
        self.log_alpha_ = np.array([math.log(cfg.alpha) if cfg.alpha > 0 else -20.0])
        self.alpha_opt_ = AdamState(lr=cfg.lr_alpha)
        self.target_entropy_ = (-float(act_dim) if cfg.target_entropy is None
                                else float(cfg.target_entropy))
        self.buffer_ = ReplayBuffer(cfg.buffer_size)
        self.total_steps_ = 0
        self.training_log_: list[dict] = []
        self.eval_history_: list[tuple[int, EvalResult]] = []
        self.last_losses_ = (math.nan, math.nan, math.nan)
        return self

    @property
    def current_alpha(self) -> float:
        if self.auto_alpha:
            return float(math.exp(self.log_alpha_[0]))
        return float(self.alpha)

    # -- acting --------------------------------------------------------------

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "networks_")
        X = np.asarray(X, dtype=float)
        head, _ = actor_head(self.networks_.actor, X)
        a = head.mean_action
        return a[0] if X.ndim == 1 else a

    def sample_action(self, s, rng=None) -> np.ndarray:
        head, _ = actor_head(self.networks_.actor, s)
        a, _, _ = policy_sample(head, rng or self._act_rng)
        return a[0]

    # -- learning --------------------------------------------------------------

    def update(self) -> tuple[float, float, float]:
        cfg = self._cfg
        nets = self.networks_
        batch = self.buffer_.sample(cfg.batch_size, self._upd_rng)
        alpha = self.current_alpha
        y = critic_target(batch, nets, alpha, cfg.gamma, self._upd_rng)
        l1 = critic_update(nets.critic1, self.critic1_opt_, batch.s, batch.a, y)
        l2 = critic_update(nets.critic2, self.critic2_opt_, batch.s, batch.a, y)
        la, logp = actor_update(nets.actor, self.actor_opt_, nets.critic1, nets.critic2,
                                batch.s, alpha, self._upd_rng)
        if self.auto_alpha:
            grad = -np.mean(logp + self.target_entropy_)
            adam_step([self.log_alpha_], [np.array([grad])], self.alpha_opt_)
        soft_update(nets.target1, nets.critic1, cfg.tau)
        soft_update(nets.target2, nets.critic2, cfg.tau)
        self.last_losses_ = (l1, l2, la)
        return self.last_losses_

    def evaluate(self, env, episodes: int | None = None, seed: int | None = None) -> EvalResult:
        """Mean-action rollouts on seeds ``seed, seed + 1, ...``."""
        episodes = self.eval_episodes if episodes is None else episodes
        seed = self.eval_seed if seed is None else seed
        outcomes, returns, slips = [], [], []
        for k in range(episodes):
            ret, slip, outcome, _ = run_episode(env, self.predict, seed + k)
            outcomes.append(outcome)
            returns.append(ret)
            slips.append(slip)
        sr = sum(o == "goal_reached" for o in outcomes) / max(episodes, 1)
        return EvalResult(sr, float(np.mean(returns)), float(np.mean(slips)), outcomes, returns)

    def fit(self, env, y=None, callback=None):
        cfg = self.config
        self.initialize(env.obs_dim, env.action_dim, getattr(env, "action_mode", "twist"))
        env_rng = np.random.default_rng(self._env_seq)
        for ep in range(cfg.episodes):
            stats = self._train_episode(env, int(env_rng.integers(0, 2**31 - 1)), ep)
            if cfg.eval_every and (ep + 1) % cfg.eval_every == 0:
                result = self.evaluate(env)
                self.eval_history_.append((ep + 1, result))
                stats.eval_sr = result.success_rate
                log.info("episode %d eval sr=%.2f return=%.3f", ep + 1,
                         result.success_rate, result.mean_return)
            self.training_log_.append(stats.row())
            if cfg.checkpoint_every and self.checkpoint_dir and (ep + 1) % cfg.checkpoint_every == 0:
                self.save(Path(self.checkpoint_dir) / f"checkpoint_{ep + 1:05d}.wisd")
            if callback is not None:
                callback(self, stats)
        return self

    def _train_episode(self, env, seed: int, ep: int) -> EpisodeStats:
        cfg = self._cfg
        stats = EpisodeStats(ep)
        s = env.encode(env.reset(seed=seed))
        slip_sum = 0.0
        while True:
            if self.total_steps_ < cfg.warmup:
                a = self._act_rng.uniform(-1.0, 1.0, size=env.action_dim)
            else:
                a = self.sample_action(s)
            res = env.step(a)
            s2 = env.encode(res.observation)
            terminal = res.done in TERMINAL_OUTCOMES
            self.buffer_.push(s, a, res.reward.total, s2, terminal)
            self.total_steps_ += 1
            stats.ret += res.reward.total
            stats.r_prog += res.reward.progress
            stats.r_safe += res.reward.safety
            stats.r_stab += res.reward.stability
            slip_sum += res.info["slip"]
            stats.steps += 1
            if self.total_steps_ >= cfg.warmup and len(self.buffer_) >= cfg.batch_size:
                for _ in range(cfg.updates_per_step):
                    self.update()
            s = s2
            if res.terminal:
                break
        stats.critic1_loss, stats.critic2_loss, stats.actor_loss = self.last_losses_
        stats.alpha = self.current_alpha
        stats.mean_slip = slip_sum / stats.steps
        stats.outcome = res.done
        return stats

    # -- persistence -------------------------------------------------------------

    def checkpoint_meta(self) -> dict:
        nets = self.networks_
        return {
            "obs_dim": nets.obs_dim,
            "act_dim": nets.act_dim,
            "hidden_sizes": list(nets.actor.sizes[1:-1]),
            "action_mode": self.action_mode_,
            "alpha": self.current_alpha,
        }

    def save(self, path) -> None:
        from .harness.checkpoint import save_checkpoint

        save_checkpoint(self.networks_.named_tensors(), path, self.checkpoint_meta())

    @classmethod
    def load(cls, path, expect_act_dim: int | None = None, **params) -> "SACAgent":
        from .harness.checkpoint import load_checkpoint

        tensors, meta = load_checkpoint(path, expect_act_dim=expect_act_dim)
        agent = cls(hidden_sizes=tuple(meta["hidden_sizes"]), **params)
        agent.initialize(meta["obs_dim"], meta["act_dim"], meta.get("action_mode", "twist"))
        agent.networks_ = SacNetworks.from_named(tensors)
        return agent


def train(env, config: SacConfig, seed: int, callback=None) -> SACAgent:
    """Functional entry point: build an agent from ``config`` and fit it."""
    params = {k: v for k, v in asdict(config.validate()).items()}
    return SACAgent(**params, random_state=seed).fit(env, callback=callback)
