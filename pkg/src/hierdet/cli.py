"""Command line entry point: ``hierdet {generate,train,eval,trace}``.

Settings come from a flat JSON config file (``--config``) with every key
also available as a flag; flags win. The effective config is written to
``<output_dir>/config.json``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from hierdet import data, evaluation, qlearn
from hierdet.environment import Scene, rollout
from hierdet.errors import (
    EmptyDataset,
    FormatError,
    InfeasiblePlacement,
    MissingImage,
    ParseError,
    TreeTooLarge,
)
from hierdet.trainer import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("hierdet")


@dataclass
class RunConfig:
    output_dir: str = "runs/default"
    # data source: a manifest path, or the synthetic generator when empty
    manifest: str = ""
    class_name: str = "object"
    n_scenes: int = 100
    image_size: int = 64
    channels: int = 1
    objects_min: int = 1
    objects_max: int = 1
    size_min: float = 0.1
    size_max: float = 0.9
    placement: str = "uniform"
    depth_min: int = 1
    depth_max: int = 3
    noise: float = 0.1
    foreground: float = 0.8
    # agent and training
    scheme: str = "overlapped"
    extractor: str = "zoom"
    epochs: int = 50
    gamma: float = 0.90
    epsilon_start: float = 1.0
    epsilon_floor: float = 0.1
    epsilon_decrement: float = 0.1
    lr: float = 1e-4
    replay_capacity: int = 1000
    batch_size: int = 100
    max_steps: int = 8
    trigger_threshold: float = 0.5
    hidden: int = 128
    keep_prob: float = 0.8
    grid: int = 7
    s1: int = 8
    s2: int = 16
    eta: float = 3.0
    tau: float = 0.5
    coverage_depth: int = -1
    seed: int = 0

    def synthetic_spec(self) -> data.SyntheticSpec:
        return data.SyntheticSpec(
            n_scenes=self.n_scenes, image_size=self.image_size, channels=self.channels,
            objects=(self.objects_min, self.objects_max), size_range=(self.size_min, self.size_max),
            placement=self.placement, scheme=self.scheme, depths=(self.depth_min, self.depth_max),
            noise=self.noise, foreground=self.foreground, label=self.class_name, seed=self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, gamma=self.gamma, epsilon_start=self.epsilon_start,
            epsilon_floor=self.epsilon_floor, epsilon_decrement=self.epsilon_decrement, lr=self.lr,
            replay_capacity=self.replay_capacity, batch_size=self.batch_size, max_steps=self.max_steps,
            trigger_threshold=self.trigger_threshold, scheme=self.scheme, extractor=self.extractor,
            hidden=self.hidden, keep_prob=self.keep_prob, grid=self.grid, strides=(self.s1, self.s2),
            eta=self.eta, tau=self.tau, seed=self.seed)

    def load_scenes(self) -> list[Scene]:
        if self.manifest:
            return data.load_voc_annotations(data.DatasetManifest.read(Path(self.manifest)), self.class_name)
        return data.generate(self.synthetic_spec())


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, type=type(f.default), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hierdet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in [("generate", "write a synthetic dataset"),
                           ("train", "train a Q-network"),
                           ("eval", "PR curves, coverage and step histogram"),
                           ("trace", "print one greedy search as JSON lines")]:
        sp = sub.add_parser(name, help=helptext)
        _add_config_flags(sp)
        if name in ("eval", "trace"):
            sp.add_argument("--checkpoint", required=True)
        if name == "trace":
            sp.add_argument("--image", required=True, help="PGM/PPM image")
            sp.add_argument("--annotation", help="VOC XML, enables rewards in the trace")
            sp.add_argument("--out", help="write the trace here instead of stdout")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        path = Path(args.config)
        try:
            values = json.loads(path.read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        except ValueError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(values, dict):
            raise UsageError(f"config {path} must be a flat JSON object")
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    for f in fields(RunConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            values[f.name] = flag_value
    try:
        cfg = RunConfig(**values)
        cfg.train_config()
        if not cfg.manifest:
            cfg.synthetic_spec()
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _echo_config(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=1, sort_keys=True) + "\n")


def _load_checkpoint(path: str, keep_prob: float) -> qlearn.QNetwork:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from None
    return qlearn.load(raw, keep_prob)


def cmd_generate(cfg: RunConfig) -> int:
    out = Path(cfg.output_dir)
    _echo_config(cfg, out)
    manifest = data.write_dataset(data.generate(cfg.synthetic_spec()), out)
    print(f"wrote {cfg.n_scenes} scenes to {manifest}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    out = Path(cfg.output_dir)
    scenes = cfg.load_scenes()
    tcfg = cfg.train_config()
    _echo_config(cfg, out)
    _, records = train(scenes, tcfg, checkpoint_dir=out / "checkpoints", log_path=out / "train_log.jsonl")
    last = records[-1]
    print(f"trained {last['epoch']} epochs, final checkpoint {out / 'checkpoints' / last['checkpoint']}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, checkpoint: str) -> int:
    out = Path(cfg.output_dir)
    net = _load_checkpoint(checkpoint, cfg.keep_prob)
    scenes = cfg.load_scenes()
    tcfg = cfg.train_config()
    env = tcfg.make_env()
    _echo_config(cfg, out)

    agent, traces = evaluation.evaluate_agent(scenes, net, env)
    rand, _ = evaluation.random_baseline(scenes, env, np.random.default_rng(cfg.seed))
    oracle = evaluation.oracle_upper_bound(scenes, env.scheme, cfg.max_steps)
    for name, curve in [("agent", agent), ("random", rand), ("oracle", oracle)]:
        curve.to_csv(out / f"pr_{name}.csv")
        print(f"AP {name}={curve.ap:.4f} max_recall={curve.max_recall:.4f}")

    depth = cfg.max_steps if cfg.coverage_depth < 0 else cfg.coverage_depth
    boxes = [b for s in scenes for b in s.boxes]
    sizes = {(s.image.width, s.image.height) for s in scenes}
    if len(sizes) == 1:
        cov = evaluation.coverage_recall(env.scheme, sizes.pop(), depth, boxes)
    else:
        hits = [evaluation.coverage_recall(env.scheme, (s.image.width, s.image.height), depth, s.boxes)
                * len(s.boxes) for s in scenes]
        cov = float(sum(hits) / max(len(boxes), 1))
    (out / "coverage.csv").write_text(f"scheme,depth,n_boxes,coverage\n{env.scheme.value},{depth},"
                                      f"{len(boxes)},{cov!r}\n")
    print(f"coverage {env.scheme.value} depth={depth}: {cov:.4f}")

    hist = evaluation.steps_histogram(traces, scenes)
    evaluation.write_histogram_csv(out / "steps_histogram.csv", hist)
    with open(out / "traces.jsonl", "w") as fh:
        for t in traces:
            fh.write(t.to_jsonl())
    return EXIT_OK


def cmd_trace(cfg: RunConfig, checkpoint: str, image: str, annotation: Optional[str],
              dest: Optional[str]) -> int:
    net = _load_checkpoint(checkpoint, cfg.keep_prob)
    raster = data.load_pnm(Path(image))
    boxes, labels = [], []
    if annotation:
        ann = data.parse_voc_annotation(Path(annotation))
        keep = [(n, b) for n, b, d in ann.objects if not d and n == cfg.class_name]
        labels, boxes = [n for n, _ in keep], [b for _, b in keep]
    scene = Scene(raster, boxes, labels, Path(image).stem)
    env = cfg.train_config().make_env()

    def policy(vec, _overlap):
        q = net(vec)
        return int(np.argmax(q)), q

    trace, _ = rollout(env, scene, policy)
    text = trace.to_jsonl()
    if dest:
        Path(dest).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        return cmd_trace(cfg, args.checkpoint, args.image, args.annotation, args.out)
    except UsageError as exc:
        print(f"hierdet: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ParseError, MissingImage, EmptyDataset, InfeasiblePlacement,
            TreeTooLarge, OSError, ValueError) as exc:
        print(f"hierdet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"hierdet: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
