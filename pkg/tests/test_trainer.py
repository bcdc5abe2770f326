import json

import numpy as np
import pytest

from hierdet import qlearn, trainer
from hierdet.data import SyntheticSpec, generate
from hierdet.environment import STEP_LIMIT, TERMINAL, TRIGGERED
from hierdet.errors import EmptyDataset
from hierdet.geometry import Box
from hierdet.replay import ReplayMemory
from hierdet.trainer import TrainConfig, choose_action, epsilon_for_epoch, run_episode, train

from conftest import make_scene


@pytest.mark.parametrize("epoch,expected", [(0, 1.0), (4, 0.6), (9, 0.1), (30, 0.1), (49, 0.1)])
def test_epsilon_schedule(epoch, expected):
    assert epsilon_for_epoch(TrainConfig(), epoch) == expected


def test_epsilon_never_below_floor():
    cfg = TrainConfig()
    assert min(epsilon_for_epoch(cfg, e) for e in range(200)) == 0.1


def test_forced_trigger(rng):
    q = np.array([9.0, 8, 7, 6, 5, -100])
    for eps in (0.0, 0.5, 1.0):
        assert choose_action(q, 0.6, eps, rng) == TERMINAL
    assert choose_action(q, 0.5, 0.0, rng) == 0  # strict inequality


def test_greedy_argmax_ties_low(rng):
    assert choose_action(np.array([0, 2, 1, 0, 0, 0.0]), 0.2, 0.0, rng) == 1
    assert choose_action(np.array([1, 3, 3, 0, 0, 0.0]), 0.2, 0.0, rng) == 1


def test_full_exploration_is_uniform(rng):
    n = 10_000
    counts = np.bincount([choose_action(np.zeros(6), 0.2, 1.0, rng) for _ in range(n)], minlength=6)
    sigma = np.sqrt(n * (1 / 6) * (5 / 6))
    assert np.all(np.abs(counts - n / 6) < 3 * sigma)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epsilon_floor=0.5, epsilon_start=0.2)
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.5)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_full_image_object_triggers_at_once(rng):
    cfg = TrainConfig()
    net = trainer.initial_network(cfg)
    mem = ReplayMemory(100)
    trace = run_episode(make_scene([Box(0, 0, 64, 64)]), net, cfg, mem, rng, epsilon=1.0)
    assert len(trace) == 1 and trace.status == TRIGGERED
    assert trace.steps[0].reward == 3.0
    assert len(mem) == 1 and mem.items()[0].terminal


def test_unreachable_object_episode(rng):
    cfg = TrainConfig()
    net = trainer.initial_network(cfg)
    mem = ReplayMemory(100)
    scene = make_scene([Box(0, 30, 64, 33)])  # thin strip, never IoU > 0.5
    trace = run_episode(scene, net, cfg, mem, rng, epsilon=0.0)
    if trace.status == STEP_LIMIT:
        assert len(trace) == cfg.max_steps
    else:
        assert trace.steps[-1].action == TERMINAL and trace.steps[-1].reward == -3.0
    assert len(mem) == len(trace)


def test_one_experience_per_step(rng):
    cfg = TrainConfig()
    net = trainer.initial_network(cfg)
    mem = ReplayMemory(1000)
    scenes = generate(SyntheticSpec(n_scenes=30, seed=3))
    total = 0
    for s in scenes:
        total += len(run_episode(s, net, cfg, mem, rng, epsilon=0.5))
        assert len(mem) == total


def test_forced_trigger_invariant_in_stored_experiences(rng):
    cfg = TrainConfig()
    net = trainer.initial_network(cfg)
    scenes = generate(SyntheticSpec(n_scenes=40, placement="aligned", depths=(1, 3), seed=4))
    for s in scenes:
        trace = run_episode(s, net, cfg, ReplayMemory(100), rng, epsilon=1.0)
        for step in trace.steps:
            if step.target_iou > 0.5:
                assert step.action == TERMINAL


def small_run(tmp_path, name, **kw):
    scenes = generate(SyntheticSpec(n_scenes=20, placement="aligned", depths=(1, 2), seed=1))
    cfg = TrainConfig(epochs=3, batch_size=10, replay_capacity=50, hidden=16, seed=9, **kw)
    out = tmp_path / name
    net, records = train(scenes, cfg, checkpoint_dir=out, log_path=out / "log.jsonl")
    return scenes, cfg, net, records, out


def test_zero_learning_rate_is_null_update(tmp_path):
    _, cfg, net, records, _ = small_run(tmp_path, "lr0", lr=0.0)
    start = trainer.initial_network(cfg)
    assert records[-1]["mean_loss"] is not None  # updates did run
    for p, q in zip(start.params, net.params):
        assert p.tobytes() == q.tobytes()


def test_training_is_bit_reproducible(tmp_path):
    *_, rec_a, out_a = small_run(tmp_path, "a")
    *_, rec_b, out_b = small_run(tmp_path, "b")
    for k in range(1, 4):
        name = f"epoch_{k:03d}.hqdn"
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
    assert rec_a == rec_b
    assert (out_a / "log.jsonl").read_bytes() == (out_b / "log.jsonl").read_bytes()


def test_log_records_and_checkpoints(tmp_path):
    _, cfg, net, records, out = small_run(tmp_path, "log")
    lines = [json.loads(l) for l in (out / "log.jsonl").read_text().splitlines()]
    assert lines == records
    assert [r["epoch"] for r in records] == [1, 2, 3]
    assert [r["checkpoint"] for r in records] == ["epoch_001.hqdn", "epoch_002.hqdn", "epoch_003.hqdn"]
    assert [r["epsilon"] for r in records] == [1.0, 0.9, 0.8]
    assert all(r["replay_size"] <= 50 for r in records)
    final = qlearn.load((out / "epoch_003.hqdn").read_bytes())
    for p, q in zip(final.params, net.params):
        assert p.tobytes() == q.tobytes()


def test_every_scene_once_per_epoch(monkeypatch):
    seen = []
    real = trainer.run_episode

    def spy(scene, *a, **k):
        seen.append(scene.scene_id)
        return real(scene, *a, **k)

    monkeypatch.setattr(trainer, "run_episode", spy)
    scenes = generate(SyntheticSpec(n_scenes=12, seed=2))
    train(scenes, TrainConfig(epochs=3, hidden=8, batch_size=5))
    for e in range(3):
        assert sorted(seen[12 * e:12 * (e + 1)]) == sorted(s.scene_id for s in scenes)
    assert seen[:12] != seen[12:24]  # reshuffled between epochs


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        train([], TrainConfig())
