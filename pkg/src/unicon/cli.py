"""``unicon`` command line: train, probe, gradcheck, sweep, diagnose, gen-data.

Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
3 numeric divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from . import encoder as enc
from .dataio import DatasetSpec, LabeledBatch, load_dataset, write_csv
from .errors import TrainingDiverged, UniconError
from .gradients import MAIN_KINDS, certify
from .losses import KINDS
from .trainer import (
    ProbeConfig,
    TrainConfig,
    lambda_sweep,
    linear_probe,
    pretrain,
    stratified_split,
    write_sweep_csv,
)
from .universum import MixPolicy

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("unicon")


class UsageError(Exception):
    pass


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


@dataclass
class RunConfig:
    """Parsed run-config JSON.

    Top-level keys: ``dataset``, ``encoder``, ``loss``, ``mix``,
    ``schedule``, ``batch_size``, ``augment``, ``seed``, ``deterministic``,
    ``hardness_cap``, ``hardness_epochs``, ``probe``, ``output_dir``.
    """

    raw: dict
    dataset: DatasetSpec
    train: TrainConfig
    probe: ProbeConfig
    output_dir: str = "run"
    hardness_epochs: list = field(default_factory=list)

    @classmethod
    def load(cls, path, seed=None):
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot parse config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError(f"config {path} must hold a JSON object")
        if seed is not None:
            raw["seed"] = seed
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw):
        data = dict(raw)
        if "dataset" not in data:
            raise UsageError("config needs a 'dataset' section")
        dataset = DatasetSpec.from_dict(data.pop("dataset"))
        probe = ProbeConfig.from_dict(data.pop("probe", {}))
        output_dir = data.pop("output_dir", "run")
        hardness_epochs = [int(e) for e in data.pop("hardness_epochs", [])]
        train = TrainConfig.from_dict(data)
        if not hardness_epochs:
            hardness_epochs = sorted({1, train.epochs})
        return cls(raw, dataset, train, probe, output_dir, hardness_epochs)


def _threads(args):
    value = getattr(args, "threads", None)
    if value is None:
        env = os.environ.get("UNICON_THREADS")
        value = int(env) if env else None
    return value


@contextmanager
def thread_limit(n):
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=int(n)):
        yield


def _split(cfg: RunConfig):
    data = load_dataset(cfg.dataset)
    train, test = stratified_split(data, cfg.probe.test_fraction, cfg.probe.seed)
    return data, train, test


def cmd_train(args):
    cfg = RunConfig.load(args.config, args.seed)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    _, train, test = _split(cfg)
    try:
        params, record = pretrain(train, cfg.train, histogram_epochs=set(cfg.hardness_epochs))
    except TrainingDiverged as exc:
        (out / "divergence.json").write_text(
            canonical_json({"epoch": exc.epoch, "batch": exc.batch, "value": repr(exc.value)}) + "\n")
        raise
    accuracy = linear_probe(params, train, cfg.probe, test=test)
    shuffled = linear_probe(params, train, cfg.probe, test=test, shuffle_labels=True)

    digest = config_hash(cfg.raw)
    enc.save_checkpoint(params, out / "checkpoint.bin", epoch=cfg.train.epochs, extra={"config_hash": digest})
    (out / "record.jsonl").write_text(record.to_jsonl(), encoding="utf-8")
    (out / "timing.jsonl").write_text(
        "".join(canonical_json({"epoch": e.epoch, "seconds": e.seconds}) + "\n" for e in record.epochs))
    hardness = out / "hardness.csv"
    for i, epoch in enumerate(sorted(record.histograms)):
        record.histograms[epoch].write_csv(hardness, append=i > 0)
    summary = {"accuracy": accuracy, "shuffled_label_accuracy": shuffled,
               "final_loss": record.losses[-1], "train_size": len(train), "test_size": len(test)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    manifest = {
        "config_hash": digest,
        "config": cfg.raw,
        "version": __version__,
        "seed": cfg.train.seed,
        "threads": _threads(args),
        "files": sorted(p.name for p in out.iterdir()) + ["manifest.json"],
        "started": started,
        "finished": time.time(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_probe(args):
    cfg = RunConfig.load(args.config, args.seed)
    params, _ = enc.load_checkpoint(args.checkpoint)
    _, train, test = _split(cfg)
    acc = linear_probe(params, train, cfg.probe, test=test, shuffle_labels=args.shuffle_labels)
    print(json.dumps({"accuracy": acc}))
    return EXIT_OK


def cmd_gradcheck(args):
    kinds = MAIN_KINDS if args.loss == "all" else (args.loss,)
    reports = [
        certify(kind, args.n, args.dim, args.seed, tau=args.tau, h=args.step,
                tolerance=args.tolerance, corrupt=args.corrupt).to_dict()
        for kind in kinds
    ]
    passed = all(r["passed"] for r in reports)
    payload = reports[0] if len(reports) == 1 else {"passed": passed, "reports": reports}
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK if passed else EXIT_CHECK


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse number list {text!r}") from exc


def cmd_sweep(args):
    cfg = RunConfig.load(args.config, args.seed)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    policies = [MixPolicy("fixed", lam) for lam in _floats(args.lambdas)]
    policies += [MixPolicy("beta", gamma=g) for g in _floats(args.gammas or "")]
    if not policies:
        raise UsageError("no mixing policies given")
    _, train, test = _split(cfg)
    rows = lambda_sweep(train, test, policies, cfg.train, cfg.probe)
    write_sweep_csv(rows, out / "sweep.csv")
    for r in rows:
        print(f"{r.policy}\t{r.accuracy:.4f}\t{r.final_loss:.4f}")
    return EXIT_OK


def cmd_diagnose(args):
    from .diagnostics import export_embeddings, margin_report, record_hardness

    cfg = RunConfig.load(args.config, args.seed)
    params, header = enc.load_checkpoint(args.checkpoint)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    data = load_dataset(cfg.dataset)
    lam = cfg.train.mix.lam if cfg.train.mix.mode == "fixed" else 0.5
    hist = record_hardness(params, data, args.cap, header.get("epoch"), lam, cfg.train.seed)
    hist.write_csv(out / "diagnose_hardness.csv")
    report = margin_report(params, data, lam, cfg.train.seed)
    (out / "margin.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    export_embeddings(params, data, out / "embeddings.csv", lam, cfg.train.seed)
    print(json.dumps({"conventional_hardness": hist.conventional_mean,
                      "universum_hardness": hist.universum_mean,
                      "margin_ratio": report.ratio}, sort_keys=True))
    return EXIT_OK


def cmd_gen_data(args):
    if args.config:
        try:
            spec = DatasetSpec.from_json(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read dataset spec {args.config}: {exc}") from exc
        except ValueError as exc:
            raise UsageError(f"cannot parse dataset spec {args.config}: {exc}") from exc
    else:
        spec = DatasetSpec(class_count=args.classes, per_class=args.per_class, dim=args.dim,
                           center_spread=args.spread, noise_scale=args.noise, seed=args.seed or 0)
    data: LabeledBatch = load_dataset(spec)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_csv(data, args.out, header=args.header)
    print(f"wrote {len(data)} rows x {data.dim} features, {data.class_count} classes to {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="unicon", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    for target, default in ((parser, None), (common, argparse.SUPPRESS)):
        target.add_argument("--threads", type=int, default=default,
                            help="BLAS thread count; 1 forces the bit-deterministic path (env UNICON_THREADS)")
        target.add_argument("--seed", type=int, default=default, help="override the config seed")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("train", parents=[common], help="pre-train and probe; writes checkpoint, record and manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="run directory (default: output_dir from config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("probe", parents=[common], help="linear probe of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--shuffle-labels", action="store_true")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference certification of full-path gradients")
    p.add_argument("--loss", default="all", choices=("all",) + KINDS)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--corrupt", action="store_true", help="debug: corrupt one analytic coordinate")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", parents=[common], help="pretrain + probe for several mixing coefficients")
    p.add_argument("--config", required=True)
    p.add_argument("--lambdas", default="0.3,0.4,0.5,0.6,0.7")
    p.add_argument("--gammas", default="", help="Beta(gamma, gamma) policies to add")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diagnose", parents=[common], help="hardness histogram, margin report and embedding export")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True, help="run config naming the dataset")
    p.add_argument("--cap", type=int, default=1000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic blob dataset as CSV")
    p.add_argument("--config", help="dataset spec JSON")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=500)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--header", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "gradcheck" and args.seed is None:
        args.seed = 1
    try:
        with thread_limit(_threads(args)):
            return args.func(args)
    except UsageError as exc:
        print(f"unicon: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"unicon: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except UniconError as exc:
        print(f"unicon: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TypeError as exc:
        print(f"unicon: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
