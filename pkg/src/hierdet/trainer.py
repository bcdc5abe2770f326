"""Q-learning protocol: epsilon-greedy rollouts, forced trigger, replay updates."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from hierdet import qlearn
from hierdet.environment import (
    N_ACTIONS,
    TERMINAL,
    Environment,
    EpisodeTrace,
    Scene,
    rollout,
)
from hierdet.errors import EmptyDataset
from hierdet.geometry import HierarchyScheme
from hierdet.qlearn import AdamState, QNetwork
from hierdet.replay import Experience, ReplayMemory, bellman_targets

log = logging.getLogger(__name__)

FULL_SCALE_LEARNING_RATE = 1e-6  # for large images and long runs
DESK_LEARNING_RATE = 1e-4


@dataclass
class TrainConfig:
    epochs: int = 50
    gamma: float = 0.90
    epsilon_start: float = 1.0
    epsilon_floor: float = 0.1
    epsilon_decrement: float = 0.1
    lr: float = DESK_LEARNING_RATE
    replay_capacity: int = 1000
    batch_size: int = 100
    max_steps: int = 8
    trigger_threshold: float = 0.5
    scheme: str = "overlapped"
    extractor: str = "zoom"
    hidden: int = 128
    keep_prob: float = 0.8
    grid: int = 7
    strides: tuple = (8, 16)
    eta: float = 3.0
    tau: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon_floor <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_floor <= epsilon_start <= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        for name in ("epochs", "replay_capacity", "batch_size", "max_steps", "hidden", "grid"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.scheme = HierarchyScheme.parse(self.scheme).value
        self.strides = tuple(int(s) for s in self.strides)

    def make_env(self) -> Environment:
        return Environment(scheme=HierarchyScheme.parse(self.scheme), extractor=self.extractor,
                           grid=self.grid, strides=self.strides, eta=self.eta, tau=self.tau,
                           max_steps=self.max_steps)

    def network_sizes(self, channels: int) -> list[int]:
        return [self.make_env().state_size(channels), self.hidden, self.hidden, N_ACTIONS]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strides"] = list(self.strides)
        return d


def epsilon_for_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Exploration rate for a 0-based epoch; held constant within the epoch."""
    if epoch < 0:
        raise ValueError("epoch index must be non-negative")
    # round() keeps 1.0 - 9 * 0.1 from landing a hair above the floor
    return max(round(cfg.epsilon_start - epoch * cfg.epsilon_decrement, 12), cfg.epsilon_floor)


def choose_action(q_values: np.ndarray, target_iou: Optional[float], epsilon: float,
                  rng: np.random.Generator, threshold: float = 0.5, forced: bool = True) -> int:
    if forced and target_iou is not None and target_iou > threshold:
        return TERMINAL
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(N_ACTIONS))
    return int(np.argmax(q_values))


@dataclass
class _Streams:
    init: np.random.Generator
    shuffle: np.random.Generator
    explore: np.random.Generator
    replay: np.random.Generator
    dropout: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "_Streams":
        return cls(*(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)))


def initial_network(cfg: TrainConfig, channels: int = 1) -> QNetwork:
    """The network ``train`` starts from for this config and seed."""
    return qlearn.init_weights(cfg.network_sizes(channels), _Streams.from_seed(cfg.seed).init, cfg.keep_prob)


def run_episode(scene: Scene, net: QNetwork, cfg: TrainConfig, mem: ReplayMemory,
                rng: np.random.Generator, epsilon: float, env: Optional[Environment] = None) -> EpisodeTrace:
    """Training rollout; pushes one experience per step into ``mem``."""
    env = env or cfg.make_env()

    def policy(vec, overlap):
        q = net(vec)
        return choose_action(q, overlap, epsilon, rng, cfg.trigger_threshold), q

    trace, transitions = rollout(env, scene, policy)
    for t in transitions:
        mem.push(Experience(t.state, t.action, t.reward, t.next_state, t.terminal))
    return trace


def update(net: QNetwork, opt: AdamState, batch: Sequence[Experience], gamma: float,
           rng: np.random.Generator) -> float:
    """One Adam step on the mean squared TD error of ``batch``; returns the loss."""
    targets, actions = bellman_targets(batch, net, gamma)
    states = np.stack([e.state for e in batch])
    q, cache = qlearn.forward(net, states, mode="train", rng=rng)
    td = q[np.arange(len(batch)), actions].astype(np.float64) - targets
    grads = qlearn.backward(net, cache, actions, td / len(batch))
    qlearn.adam_step(net, grads, opt)
    return float(0.5 * np.mean(td ** 2))


def train(dataset: Sequence[Scene], cfg: TrainConfig, checkpoint_dir: Optional[Path] = None,
          log_path: Optional[Path] = None,
          on_epoch: Optional[Callable[[int, QNetwork], None]] = None):
    """Run the full protocol; returns ``(network, per-epoch log records)``."""
    if not dataset:
        raise EmptyDataset("training needs at least one scene")
    streams = _Streams.from_seed(cfg.seed)
    env = cfg.make_env()
    net = initial_network(cfg, dataset[0].image.channels)
    opt = AdamState.for_network(net, cfg.lr)
    mem = ReplayMemory(cfg.replay_capacity)
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    log_file = open(log_path, "w") if log_path is not None else None

    records = []
    try:
        for epoch in range(cfg.epochs):
            eps = epsilon_for_epoch(cfg, epoch)
            order = streams.shuffle.permutation(len(dataset))
            returns, lengths, terminal_rewards, losses = [], [], [], []
            for i in order:
                trace = run_episode(dataset[i], net, cfg, mem, streams.explore, eps, env)
                returns.append(sum(s.reward for s in trace.steps))
                lengths.append(len(trace))
                if trace.steps[-1].action == TERMINAL:
                    terminal_rewards.append(trace.steps[-1].reward)
                if len(mem) >= cfg.batch_size:
                    batch = mem.sample(cfg.batch_size, streams.replay)
                    losses.append(update(net, opt, batch, cfg.gamma, streams.dropout))
            ckpt = None
            if checkpoint_dir is not None:
                ckpt = checkpoint_dir / f"epoch_{epoch + 1:03d}.hqdn"
                ckpt.write_bytes(qlearn.save(net))
            record = {
                "epoch": epoch + 1,
                "epsilon": eps,
                "mean_reward": float(np.mean(returns)),
                "mean_terminal_reward": float(np.mean(terminal_rewards)) if terminal_rewards else None,
                "mean_steps": float(np.mean(lengths)),
                "mean_loss": float(np.mean(losses)) if losses else None,
                "replay_size": len(mem),
                "checkpoint": ckpt.name if ckpt is not None else None,
            }
            records.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            log.info("epoch %d eps=%.2f reward=%.3f steps=%.2f", record["epoch"], eps,
                     record["mean_reward"], record["mean_steps"])
            if on_epoch is not None:
                on_epoch(epoch + 1, net)
    finally:
        if log_file is not None:
            log_file.close()
    return net, records
