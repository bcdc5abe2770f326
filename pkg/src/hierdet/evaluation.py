"""Precision-recall evaluation of the agent, a random agent and a ground-truth oracle.

Every region an episode analyses becomes a detection scored by the
terminal-action Q-value. Detections are ranked by score (ties broken by
scene index, then step) and matched VOC-style: a detection is a true
positive when its best-overlapping ground truth has IoU >= 0.5 and has not
been claimed by a higher-ranked detection. AP is the area under the
monotone precision envelope over all recall points.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from hierdet.environment import TERMINAL, TRIGGERED, Environment, EpisodeTrace, Scene, rollout
from hierdet.errors import TreeTooLarge
from hierdet.geometry import Box, HierarchyScheme, child_arrays, children, count_nodes, iou, iou_matrix
from hierdet.qlearn import QNetwork

IOU_THRESHOLD = 0.5


@dataclass
class Detection:
    scene: int
    region: Box
    score: float
    step: int = 0
    matched: bool = False


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    ap: float
    n_ground_truth: int
    detections: list

    @property
    def max_recall(self) -> float:
        return float(self.recall[-1]) if len(self.recall) else 0.0

    def to_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "score", "recall", "precision"])
            for k, (det, r, p) in enumerate(zip(self.detections, self.recall, self.precision)):
                w.writerow([k + 1, repr(float(det.score)), repr(float(r)), repr(float(p))])


def average_precision(recall: np.ndarray, precision: np.ndarray) -> float:
    """All-points interpolated AP."""
    if len(recall) == 0:
        return 0.0
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def pr_curve(detections: Sequence[Detection], ground_truth: Sequence[Sequence[Box]],
             threshold: float = IOU_THRESHOLD) -> PRCurve:
    """Rank, match and accumulate. ``ground_truth[i]`` holds scene ``i``'s boxes."""
    ranked = sorted(detections, key=lambda d: (-d.score, d.scene, d.step))
    claimed = [np.zeros(len(g), dtype=bool) for g in ground_truth]
    tp = np.zeros(len(ranked))
    for k, det in enumerate(ranked):
        det.matched = False
        gts = ground_truth[det.scene]
        if not gts:
            continue
        overlaps = [iou(det.region, g) for g in gts]
        j = int(np.argmax(overlaps))
        if overlaps[j] >= threshold and not claimed[det.scene][j]:
            claimed[det.scene][j] = True
            det.matched = True
            tp[k] = 1.0
    n_gt = sum(len(g) for g in ground_truth)
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(ranked) + 1) if ranked else np.zeros(0)
    recall = ctp / n_gt if n_gt else np.zeros(len(ranked))
    ap = average_precision(recall, precision) if n_gt else 0.0
    return PRCurve(recall, precision, ap, n_gt, ranked)


def detections_from_traces(traces: Sequence[EpisodeTrace]) -> list[Detection]:
    dets = []
    for idx, trace in enumerate(traces):
        for step, region, q in trace.visited():
            if q is not None:
                dets.append(Detection(idx, region, float(q[TERMINAL]), step))
    return dets


def evaluate_agent(dataset: Sequence[Scene], net: QNetwork, env: Environment):
    """Greedy episodes (no exploration, no forced trigger); returns ``(curve, traces)``."""

    def policy(vec, _overlap):
        q = net(vec)
        return int(np.argmax(q)), q

    traces = [rollout(env, scene, policy, scorer=net)[0] for scene in dataset]
    curve = pr_curve(detections_from_traces(traces), [s.boxes for s in dataset])
    return curve, traces


def random_baseline(dataset: Sequence[Scene], env: Environment, rng: np.random.Generator):
    """Uniform-random actions and uniform-random detection scores."""

    n_actions = TERMINAL + 1

    def policy(_vec, _overlap):
        return int(rng.integers(n_actions)), rng.random(n_actions)

    traces = [rollout(env, scene, policy, scorer=lambda _v: rng.random(n_actions))[0]
              for scene in dataset]
    curve = pr_curve(detections_from_traces(traces), [s.boxes for s in dataset])
    return curve, traces


def oracle_descent(root: Box, target: Box, scheme: HierarchyScheme, max_steps: int) -> tuple[Box, int]:
    """Greedy best-IoU descent towards ``target``; returns the final region and depth."""
    region, best = root, iou(root, target)
    for depth in range(max_steps):
        kids = children(region, scheme)
        overlaps = [iou(k, target) for k in kids]
        j = int(np.argmax(overlaps))
        if overlaps[j] <= best:
            return region, depth
        region, best = kids[j], overlaps[j]
    return region, max_steps


def oracle_upper_bound(dataset: Sequence[Scene], scheme, max_steps: int = 8) -> PRCurve:
    """One ground-truth-guided descent per object, scored by its final IoU."""
    scheme = HierarchyScheme.parse(scheme)
    dets = []
    for idx, scene in enumerate(dataset):
        for k, target in enumerate(scene.boxes):
            region, _ = oracle_descent(scene.image.bounds, target, scheme, max_steps)
            dets.append(Detection(idx, region, iou(region, target), k))
    return pr_curve(dets, [s.boxes for s in dataset])


def coverage_recall(scheme, image_size, max_steps: int, boxes: Sequence[Box],
                    node_cap: int = 2_000_000, threshold: float = IOU_THRESHOLD) -> float:
    """Fraction of ``boxes`` matched at IoU >= threshold by some node within ``max_steps`` levels."""
    scheme = HierarchyScheme.parse(scheme)
    if not boxes:
        return 0.0
    total = count_nodes(max_steps)
    if total > node_cap:
        raise TreeTooLarge(f"{total} hierarchy nodes exceed the cap of {node_cap}")
    w, h = (image_size, image_size) if np.isscalar(image_size) else image_size
    targets = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    covered = np.zeros(len(boxes), dtype=bool)
    level = np.array([[0.0, 0.0, float(w), float(h)]])
    for depth in range(max_steps + 1):
        for start in range(0, len(level), 4096):
            chunk = level[start:start + 4096]
            covered |= (iou_matrix(chunk, targets) >= threshold).any(axis=0)
        if covered.all():
            break
        if depth < max_steps:
            level = child_arrays(level, scheme)
    return float(covered.mean())


def steps_histogram(traces: Sequence[EpisodeTrace], dataset: Optional[Sequence[Scene]] = None,
                    threshold: float = IOU_THRESHOLD) -> dict[int, int]:
    """Movement steps taken before each correct trigger (successful detections only)."""
    counts: Counter = Counter()
    for idx, trace in enumerate(traces):
        if trace.status != TRIGGERED or not trace.steps:
            continue
        last = trace.steps[-1]
        overlap = last.target_iou
        if overlap is None and dataset is not None and dataset[idx].boxes:
            overlap = max(iou(last.region, g) for g in dataset[idx].boxes)
        if overlap is not None and overlap >= threshold:
            counts[trace.movements] += 1
    return dict(sorted(counts.items()))


def write_histogram_csv(path: Path, hist: dict[int, int]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["steps", "count"])
        for k, v in hist.items():
            w.writerow([k, v])
