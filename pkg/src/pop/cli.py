"""Command-line entry point: ``python3 -m pop <command> [--config FILE] [--seed N] [--out DIR]``.

Every command writes ``manifest.json`` next to its outputs; ``pop rerun
manifest.json --out DIR`` repeats the run from the recorded configuration.
Exit codes: 0 ok, 2 config error, 3 artifact error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .evaluation import EvalBenchConfig, EvalPriorConfig, SweepConfig, eval_bench, eval_prior, sweep_lr
from .metrics import CSV_SCHEMA_VERSION
from .policy import Policy
from .ppo import TrainConfig, train
from .prior import PriorConfig, sample_functions

EXIT_OK, EXIT_CONFIG, EXIT_ARTIFACT, EXIT_NUMERICAL = 0, 2, 3, 4
OUT_ROOT_ENV = "POP_OUT_ROOT"
MANIFEST_VERSION = 1

log = logging.getLogger("pop")


class ArtifactError(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class SamplePriorConfig:
    n: int = 12
    resolution: int = 128
    dim: int = 2
    features: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.dim != 2:
            raise ValueError("surface export needs dim = 2")
        if self.n < 1 or self.resolution < 2:
            raise ValueError("n must be >= 1 and resolution >= 2")


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    for p in (Path(path).with_suffix(".json"), Path(path).with_suffix(".bin")):
        h.update(p.read_bytes())
    return h.hexdigest()


def load_policy(path: str, dtype=np.float32) -> Policy:
    if not path:
        raise ArtifactError("no checkpoint given (set 'checkpoint' in the config or pass --checkpoint)")
    p = Path(path)
    if not p.with_suffix(".json").exists() or not p.with_suffix(".bin").exists():
        raise ArtifactError(f"checkpoint not found: {p}")
    try:
        return Policy.load(p, dtype=dtype)
    except (ValueError, KeyError, TypeError) as exc:
        raise ArtifactError(f"cannot load checkpoint {p}: {exc}") from None


def untrained_policy(trained: Policy) -> Policy:
    return Policy(trained.config, seed=trained.seed, dtype=trained.dtype)


# -- commands ----------------------------------------------------------------------------------------
def cmd_train(cfg: TrainConfig, out: Path, workers: int) -> tuple[list[str], str | None]:
    summary = train(cfg, out, progress=True)
    if any(not np.isfinite(r) for r in summary["episode_rewards"]):
        raise FloatingPointError("non-finite episode reward during training")
    return summary["outputs"], None


def cmd_eval_prior(cfg: EvalPriorConfig, out: Path, workers: int):
    policy = load_policy(cfg.checkpoint) if _needs_policy(cfg.methods) else None
    untrained = untrained_policy(policy) if policy is not None and "pop_untrained" in cfg.methods else None
    outputs = eval_prior(cfg, out, policy, untrained, workers)
    return outputs, file_sha256(cfg.checkpoint) if policy is not None else None


def cmd_eval_bench(cfg: EvalBenchConfig, out: Path, workers: int):
    policy = load_policy(cfg.checkpoint) if _needs_policy(cfg.methods) else None
    untrained = untrained_policy(policy) if policy is not None and "pop_untrained" in cfg.methods else None
    outputs = eval_bench(cfg, out, policy, untrained, workers)
    return outputs, file_sha256(cfg.checkpoint) if policy is not None else None


def cmd_sweep_lr(cfg: SweepConfig, out: Path, workers: int):
    return sweep_lr(cfg, out, workers), None


def cmd_sample_prior(cfg: SamplePriorConfig, out: Path, workers: int):
    prior = PriorConfig(dim=2, features=cfg.features)
    funcs = sample_functions(prior, cfg.n, seed=[cfg.seed, 31])
    g = np.linspace(prior.domain[0], prior.domain[1], cfg.resolution)
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([X1.ravel(), X2.ravel()], axis=1)
    outputs = []
    for i, f in enumerate(funcs):
        ys = f.evaluate(pts)
        name = f"surface_{i:03d}.csv"
        with open(out / name, "w") as fh:
            fh.write(f"# schema_version={CSV_SCHEMA_VERSION}\n")
            fh.write("x1,x2,y\n")
            for (a, b), y in zip(pts, ys):
                fh.write(f"{float(a)!r},{float(b)!r},{float(y)!r}\n")
        outputs.append(name)
        fname = f"function_{i:03d}.json"
        f.save(out / fname)
        outputs.append(fname)
    return outputs, None


def _needs_policy(methods) -> bool:
    return "pop" in methods or "pop_untrained" in methods


COMMANDS = {
    "train": (TrainConfig, cmd_train),
    "eval-prior": (EvalPriorConfig, cmd_eval_prior),
    "eval-bench": (EvalBenchConfig, cmd_eval_bench),
    "sweep-lr": (SweepConfig, cmd_sweep_lr),
    "sample-prior": (SamplePriorConfig, cmd_sample_prior),
}

# command-line spellings of common keys
SHORTCUTS = {
    "train": ("iterations", "batch_functions", "reward"),
    "eval-prior": ("checkpoint", "n_tasks", "dims", "horizon", "methods"),
    "eval-bench": ("checkpoint", "functions", "horizon", "repeats", "methods"),
    "sweep-lr": ("method", "grid", "n_tasks", "horizon"),
    "sample-prior": ("n", "resolution"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pop", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file (includes allowed)")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", help=f"output directory (default ${OUT_ROOT_ENV}/<command>-seed<N>)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        for key in SHORTCUTS[name]:
            p.add_argument(f"--{key.replace('_', '-')}", dest=f"short_{key}", metavar=key.upper(),
                           help=f"shortcut for --set {key}=...")
    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    return ap


def resolve_config(args):
    cls, _ = COMMANDS[args.command]
    values = cfgmod.parse_file(args.config) if args.config else {}
    values.update(cfgmod.parse_overrides(args.set))
    for key in SHORTCUTS[args.command]:
        v = getattr(args, f"short_{key}", None)
        if v is not None:
            values[key] = v
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if values.get("checkpoint"):
        values["checkpoint"] = str(Path(values["checkpoint"]).resolve())
    return cfgmod.build(cls, values)


def execute(command: str, cfg, out: Path, workers: int, argv: list[str]) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    _, fn = COMMANDS[command]
    t0 = time.time()
    outputs, ckpt_hash = fn(cfg, out, workers)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "argv": argv,
        "config": cfgmod.echo(cfg),
        "seed": cfg.seed,
        "code_version": __version__,
        "checkpoint_sha256": ckpt_hash,
        "workers": workers,
        "outputs": sorted(outputs),
        "wall_clock_s": round(time.time() - t0, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def rerun(manifest_path: str, out: Path, workers: int) -> dict:
    try:
        m = json.loads(Path(manifest_path).read_text())
        command = m["command"]
        cls, _ = COMMANDS[command]
    except (OSError, ValueError, KeyError) as exc:
        raise ArtifactError(f"unreadable manifest {manifest_path}: {exc}") from None
    if m.get("manifest_version") != MANIFEST_VERSION:
        raise ArtifactError(f"manifest version {m.get('manifest_version')!r} is not supported")
    try:
        cfg = cfgmod.from_echo(cls, m["config"])
    except (TypeError, ValueError) as exc:
        raise cfgmod.ConfigError(f"manifest config rejected: {exc}") from None
    ckpt = getattr(cfg, "checkpoint", "")
    if m.get("checkpoint_sha256") and ckpt and file_sha256(ckpt) != m["checkpoint_sha256"]:
        raise ArtifactError(f"checkpoint {ckpt} changed since the recorded run")
    return execute(command, cfg, out, workers, ["rerun", manifest_path])


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "rerun":
            rerun(args.manifest, Path(args.out), args.workers)
            return EXIT_OK
        cfg = resolve_config(args)
        root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
        out = Path(args.out) if args.out else root / f"{args.command}-seed{cfg.seed}"
        execute(args.command, cfg, out, args.workers, argv)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}" + (f" [key: {exc.key}]" if exc.key else ""), file=sys.stderr)
        return EXIT_CONFIG
    except ArtifactError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
