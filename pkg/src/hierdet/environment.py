"""The search MDP over the region hierarchy.

Actions 0-4 zoom into ``children(region)[i]``; action 5 declares the current
region a detection. The state is the region descriptor followed by a
24-entry memory of the last four actions (most recent first).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from hierdet import features
from hierdet.errors import InvalidAction, NoGroundTruth
from hierdet.features import ImageRaster
from hierdet.geometry import Box, HierarchyScheme, children, iou

N_ACTIONS = 6
N_MOVES = 5
TERMINAL = 5
MEMORY_SLOTS = 4
MEMORY_SIZE = MEMORY_SLOTS * N_ACTIONS

TRIGGERED = "triggered"
STEP_LIMIT = "step_limit"


@dataclass(eq=False)
class Scene:
    image: ImageRaster
    boxes: list[Box]
    labels: list[str] = field(default_factory=list)
    scene_id: str = ""
    _maps: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.labels:
            self.labels = ["object"] * len(self.boxes)
        if len(self.labels) != len(self.boxes):
            raise ValueError("one label per ground-truth box required")
        for b in self.boxes:
            if b.clip(self.image.width, self.image.height) is None:
                raise ValueError(f"ground-truth box {b.as_tuple()} lies outside the image")

    def maps(self, s1: int, s2: int) -> features.FeatureMapSet:
        key = (s1, s2)
        if key not in self._maps:
            self._maps[key] = features.precompute_maps(self.image, s1, s2)
        return self._maps[key]

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (self.image == other.image and self.boxes == other.boxes
                and self.labels == other.labels and self.scene_id == other.scene_id)


@dataclass(frozen=True, eq=False)
class AgentState:
    descriptor: np.ndarray
    memory: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.descriptor, self.memory]).astype(np.float32)


def empty_memory() -> np.ndarray:
    return np.zeros(MEMORY_SIZE, dtype=np.float32)


def push_memory(memory: np.ndarray, action: int) -> np.ndarray:
    out = np.zeros(MEMORY_SIZE, dtype=np.float32)
    out[N_ACTIONS:] = memory[:-N_ACTIONS]
    out[action] = 1.0
    return out


def validate_action(action) -> int:
    if isinstance(action, (bool, np.bool_)) or not isinstance(action, (int, np.integer)):
        raise InvalidAction(f"action must be an integer, got {action!r}")
    if not 0 <= action < N_ACTIONS:
        raise InvalidAction(f"action {action} outside 0..{N_ACTIONS - 1}")
    return int(action)


def select_target(region: Box, scene: Scene) -> Box:
    """Ground-truth box with the highest IoU against ``region``; ties go to the lowest index."""
    if not scene.boxes:
        raise NoGroundTruth(f"scene {scene.scene_id!r} has no ground truth")
    best, best_iou = scene.boxes[0], iou(region, scene.boxes[0])
    for box in scene.boxes[1:]:
        v = iou(region, box)
        if v > best_iou:
            best, best_iou = box, v
    return best


def target_iou(region: Box, scene: Scene) -> float:
    return iou(region, select_target(region, scene))


def movement_reward(before: float, after: float) -> float:
    return float(np.sign(after - before))


def terminal_reward(overlap: float, tau: float = 0.5, eta: float = 3.0) -> float:
    return eta if overlap >= tau else -eta


@dataclass
class Environment:
    scheme: HierarchyScheme = HierarchyScheme.OVERLAPPED
    extractor: str = "zoom"
    grid: int = features.DEFAULT_GRID
    strides: tuple[int, int] = features.DEFAULT_STRIDES
    eta: float = 3.0
    tau: float = 0.5
    max_steps: int = 8

    def __post_init__(self):
        self.scheme = HierarchyScheme.parse(self.scheme)
        if self.extractor not in ("zoom", "crop"):
            raise ValueError(f"extractor must be 'zoom' or 'crop', got {self.extractor!r}")

    def state_size(self, channels: int = 1) -> int:
        return self.grid * self.grid * channels + MEMORY_SIZE

    def describe(self, scene: Scene, region: Box) -> np.ndarray:
        if self.extractor == "zoom":
            return features.extract_zoom(scene.image, region, self.grid)
        return features.extract_crop(scene.maps(*self.strides), region, self.grid)

    def reset(self, scene: Scene) -> tuple[AgentState, Box]:
        region = scene.image.bounds
        return AgentState(self.describe(scene, region), empty_memory()), region

    def step(self, region: Box, state: AgentState, action: int, scene: Scene):
        """Apply ``action``; returns ``(next_region, next_state, reward, done)``."""
        action = validate_action(action)
        target = select_target(region, scene)
        before = iou(region, target)
        memory = push_memory(state.memory, action)
        if action == TERMINAL:
            reward = terminal_reward(before, self.tau, self.eta)
            return region, AgentState(state.descriptor, memory), reward, True
        next_region = children(region, self.scheme)[action]
        reward = movement_reward(before, iou(next_region, target))
        return next_region, AgentState(self.describe(scene, next_region), memory), reward, False


@dataclass
class TraceStep:
    region: Box
    action: int
    reward: Optional[float]
    q_values: np.ndarray
    target_iou: Optional[float] = None


@dataclass
class EpisodeTrace:
    scene_id: str
    steps: list[TraceStep] = field(default_factory=list)
    status: str = STEP_LIMIT
    final_region: Optional[Box] = None
    final_q_values: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.steps)

    @property
    def movements(self) -> int:
        return sum(1 for s in self.steps if s.action != TERMINAL)

    def visited(self) -> list[tuple[int, Box, Optional[np.ndarray]]]:
        """Every analysed region as ``(step index, region, q_values)``."""
        out = [(i, s.region, s.q_values) for i, s in enumerate(self.steps)]
        if self.status == STEP_LIMIT and self.final_region is not None:
            out.append((len(self.steps), self.final_region, self.final_q_values))
        return out

    def to_records(self) -> list[dict]:
        return [
            {
                "scene": self.scene_id,
                "step": i,
                "region": list(s.region.as_tuple()),
                "action": s.action,
                "q_values": [float(q) for q in s.q_values],
                "reward": s.reward,
            }
            for i, s in enumerate(self.steps)
        ]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.to_records())


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


Policy = Callable[[np.ndarray, Optional[float]], tuple[int, np.ndarray]]


def rollout(env: Environment, scene: Scene, policy: Policy,
            scorer: Optional[Callable[[np.ndarray], np.ndarray]] = None):
    """Play one episode; returns ``(trace, transitions)``.

    ``policy(state_vector, target_iou)`` picks the action and reports the
    Q-values it saw. ``target_iou`` is None for scenes without ground truth,
    in which case rewards are not computed. ``scorer`` (optional) scores the
    last region when the episode stops on the step limit.
    """
    state, region = env.reset(scene)
    has_gt = bool(scene.boxes)
    trace = EpisodeTrace(scene.scene_id)
    transitions: list[Transition] = []
    moves = 0
    while True:
        vec = state.vector()
        overlap = target_iou(region, scene) if has_gt else None
        action, q = policy(vec, overlap)
        action = validate_action(action)
        if has_gt:
            next_region, next_state, reward, done = env.step(region, state, action, scene)
        else:
            next_region, next_state, reward, done = _step_unlabelled(env, region, state, action, scene)
        if action != TERMINAL:
            moves += 1
        limit = moves >= env.max_steps and not done
        trace.steps.append(TraceStep(region, action, reward, np.asarray(q, dtype=np.float64), overlap))
        next_vec = next_state.vector()
        transitions.append(Transition(vec, action, reward if reward is not None else 0.0,
                                      next_vec, bool(done or limit)))
        region, state = next_region, next_state
        if done:
            trace.status = TRIGGERED
            trace.final_region = region
            break
        if limit:
            trace.status = STEP_LIMIT
            trace.final_region = region
            if scorer is not None:
                trace.final_q_values = np.asarray(scorer(next_vec), dtype=np.float64)
            break
    return trace, transitions


def _step_unlabelled(env: Environment, region: Box, state: AgentState, action: int, scene: Scene):
    memory = push_memory(state.memory, action)
    if action == TERMINAL:
        return region, AgentState(state.descriptor, memory), None, True
    nxt = children(region, env.scheme)[action]
    return nxt, AgentState(env.describe(scene, nxt), memory), None, False
