"""Two-stage protocol: contrastive pre-training, then a frozen-encoder linear probe."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import encoder as enc
from . import objective
from .dataio import LabeledBatch, augment
from .diagnostics import hardness_inputs, histogram_from_embeddings
from .errors import ConfigError, ProbeError, TrainingDiverged
from .losses import UNIVERSUM_KINDS, LossConfig
from .universum import MixPolicy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProbeConfig:
    test_fraction: float = 0.2
    C: float = 1.0
    max_iter: int = 2000
    seed: int = 0

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 0.05
    warmup_epochs: int = 10
    momentum: float = 0.9
    weight_decay: float = 1e-4
    loss: LossConfig = field(default_factory=lambda: LossConfig("unicon", 0.1, reduction="mean"))
    mix: MixPolicy = field(default_factory=MixPolicy)
    widths: tuple = (32, 64, 16)
    activation: str = "relu"
    noise_scale: float = 0.1
    drop_prob: float = 0.1
    hardness_cap: int = 256
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.epochs < 1 or not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError("need epochs > warmup_epochs >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch size N must be at least 2")
        if not self.lr >= 0:
            raise ConfigError("learning rate must be non-negative")
        if not (0 <= self.momentum < 1 and self.weight_decay >= 0):
            raise ConfigError("momentum must lie in [0, 1) and weight decay be >= 0")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        kw = {}
        if "loss" in data:
            loss = dict(data.pop("loss"))
            loss.setdefault("reduction", "mean")
            kw["loss"] = LossConfig.from_dict(loss)
        if "mix" in data:
            kw["mix"] = MixPolicy.from_dict(data.pop("mix"))
        sched = data.pop("schedule", {})
        for key, name in (("epochs", "epochs"), ("warmup_epochs", "warmup_epochs"), ("lr", "lr"),
                          ("momentum", "momentum"), ("weight_decay", "weight_decay")):
            if key in sched:
                kw[name] = sched.pop(key)
        if sched:
            raise ConfigError(f"unknown schedule keys: {sorted(sched)}")
        if "encoder" in data:
            e = dict(data.pop("encoder"))
            if "widths" in e:
                kw["widths"] = tuple(int(w) for w in e.pop("widths"))
            if "activation" in e:
                kw["activation"] = e.pop("activation")
            if e:
                raise ConfigError(f"unknown encoder keys: {sorted(e)}")
        if "augment" in data:
            a = dict(data.pop("augment"))
            kw["noise_scale"] = float(a.pop("noise_scale", 0.1))
            kw["drop_prob"] = float(a.pop("drop_prob", 0.1))
            if a:
                raise ConfigError(f"unknown augment keys: {sorted(a)}")
        known = set(cls.__dataclass_fields__)
        for key in list(data):
            if key in known:
                kw[key] = data.pop(key)
        if data:
            raise ConfigError(f"unknown training keys: {sorted(data)}")
        if "widths" in kw:
            kw["widths"] = tuple(kw["widths"])
        return cls(**kw)

    def to_dict(self):
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "schedule": {"lr": self.lr, "warmup_epochs": self.warmup_epochs,
                         "momentum": self.momentum, "weight_decay": self.weight_decay},
            "loss": {"kind": self.loss.kind, "tau": self.loss.tau, "reduction": self.loss.reduction},
            "mix": self.mix.to_dict(),
            "encoder": {"widths": list(self.widths), "activation": self.activation},
            "augment": {"noise_scale": self.noise_scale, "drop_prob": self.drop_prob},
            "hardness_cap": self.hardness_cap,
            "seed": self.seed,
            "deterministic": self.deterministic,
        }


def schedule(epochs, warmup_epochs, peak):
    """Learning rate per epoch ``t = 1..T``.

    Linear warm-up ``peak * t / w`` for ``t <= w``, then
    ``peak * (1 + cos(pi * (t - w) / (T - w))) / 2``, which reaches 0 at ``t = T``.
    """
    out = []
    for t in range(1, epochs + 1):
        if t <= warmup_epochs:
            out.append(peak * (t / warmup_epochs))
        else:
            progress = (t - warmup_epochs) / (epochs - warmup_epochs)
            out.append(max(0.0, peak * 0.5 * (1.0 + math.cos(math.pi * progress))))
    return out


class SGD:
    """SGD with momentum and L2 weight decay (decay added to the gradient)."""

    def __init__(self, params: enc.EncoderParams, momentum=0.9, weight_decay=0.0):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers = [np.zeros_like(a) for a in params.arrays()]

    def step(self, grads, lr):
        for p, g, buf in zip(self.params.arrays(), grads, self.buffers):
            d = g + self.weight_decay * p if self.weight_decay else g
            if self.momentum:
                buf *= self.momentum
                buf += d
                d = buf
            p -= lr * d


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float
    steps: int
    dropped_batches: int
    conventional_hardness: float
    universum_hardness: float
    seconds: float = 0.0

    def to_json(self, include_time=False):
        d = asdict(self)
        if not include_time:
            d.pop("seconds")
        return json.dumps(d, sort_keys=True)


@dataclass
class RunRecord:
    epochs: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    histograms: dict = field(default_factory=dict)
    checkpoint: str | None = None

    @property
    def losses(self):
        return [e.loss for e in self.epochs]

    def to_jsonl(self, include_time=False):
        return "".join(e.to_json(include_time) + "\n" for e in self.epochs)


def _batches(n, size, rng):
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def train_step_grads(params, batch_views, config: TrainConfig, mix_seed):
    mixing = objective.prepare(config.loss.kind, batch_views, config.mix, mix_seed)
    value, gw, gb, _ = objective.evaluate(params, batch_views, mixing, config.loss.tau, config.loss.reduction)
    grads = []
    for w, b in zip(gw, gb):
        grads += [w, b]
    return value, grads


def pretrain(dataset: LabeledBatch, config: TrainConfig, params=None, snapshot_epochs=(),
             histogram_epochs=()):
    """Contrastive pre-training of a fresh (or given) encoder.

    Per epoch: shuffle, split into batches of ``N`` samples, augment to
    2N views, build the mixing for the loss, embed both streams with the
    shared encoder and backpropagate through anchors, mixtures and the
    mixup into one SGD step. Every random draw is keyed by
    ``(seed, epoch, batch)``.

    Returns ``(params, RunRecord)``. ``snapshot_epochs`` keep parameter
    copies, ``histogram_epochs`` keep hardness histograms.
    """
    if config.widths[0] != dataset.dim:
        raise ConfigError(f"encoder input width {config.widths[0]} != data dimension {dataset.dim}")
    if config.loss.kind in UNIVERSUM_KINDS and config.loss.kind != "un_uni":
        if np.unique(dataset.labels).size < 2:
            raise ConfigError("universum losses need at least two classes")
    if params is None:
        params = enc.init(config.widths, config.activation, config.seed)
    else:
        params = params.copy()
    opt = SGD(params, config.momentum, config.weight_decay)
    lrs = schedule(config.epochs, config.warmup_epochs, config.lr)
    lam_h = config.mix.lam if config.mix.mode == "fixed" else 0.5
    hx, hy, hu = hardness_inputs(dataset, min(config.hardness_cap, len(dataset)), lam_h, config.seed)
    record = RunRecord()
    supervised_mix = config.loss.kind in ("supcon", "add", "unicon", "supmix")

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        lr = lrs[epoch - 1]
        rng = np.random.default_rng([config.seed, epoch, 0])
        losses, dropped = [], 0
        for b, idx in enumerate(_batches(len(dataset), config.batch_size, rng)):
            labels = dataset.labels[idx]
            if idx.size < 2 or (supervised_mix and np.unique(labels).size < 2):
                dropped += 1
                log.info("epoch %d: dropped batch %d (%d samples, %d classes)",
                         epoch, b, idx.size, np.unique(labels).size)
                continue
            views = augment(dataset.subset(idx), config.noise_scale, config.drop_prob,
                            seed=[config.seed, epoch, b, 1])
            value, grads = train_step_grads(params, views, config, [config.seed, epoch, b, 2])
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, b, value)
            opt.step(grads, lr)
            losses.append(value)

        z, _ = enc.forward(params, hx)
        zu, _ = enc.forward(params, hu)
        hist = histogram_from_embeddings(z, hy, zu, epoch)
        record.epochs.append(EpochRecord(
            epoch=epoch,
            loss=math.fsum(losses) / len(losses) if losses else float("nan"),
            lr=lr,
            steps=len(losses),
            dropped_batches=dropped,
            conventional_hardness=hist.conventional_mean,
            universum_hardness=hist.universum_mean,
            seconds=time.perf_counter() - start,
        ))
        if epoch in histogram_epochs:
            record.histograms[epoch] = hist
        if epoch in snapshot_epochs:
            record.snapshots[epoch] = params.copy()
    return params, record


def stratified_split(dataset: LabeledBatch, test_fraction=0.2, seed=0):
    from sklearn.model_selection import train_test_split

    idx = np.arange(len(dataset))
    train, test = train_test_split(idx, test_size=test_fraction, random_state=seed, stratify=dataset.labels)
    return dataset.subset(np.sort(train)), dataset.subset(np.sort(test))


def linear_probe(params, dataset: LabeledBatch, config: ProbeConfig = ProbeConfig(), test=None,
                 shuffle_labels=False):
    """Top-1 accuracy of multinomial logistic regression on frozen representations.

    Fits on ``dataset`` and scores ``test``; without ``test`` a stratified
    split of ``dataset`` is used. ``shuffle_labels`` permutes the training
    labels (a chance-level control).
    """
    from sklearn.linear_model import LogisticRegression
    from sklearn.preprocessing import StandardScaler

    if np.unique(dataset.labels).size < 2:
        raise ProbeError("linear probe needs at least two classes")
    if test is None:
        dataset, test = stratified_split(dataset, config.test_fraction, config.seed)
    y_train = dataset.labels
    if shuffle_labels:
        y_train = np.random.default_rng(config.seed).permutation(y_train)
    f_train = enc.representations(params, dataset.features)
    f_test = enc.representations(params, test.features)
    scaler = StandardScaler().fit(f_train)
    clf = LogisticRegression(C=config.C, max_iter=config.max_iter)
    clf.fit(scaler.transform(f_train), y_train)
    return float(clf.score(scaler.transform(f_test), test.labels))


def entropy_of_mix_label(lam):
    """Entropy of the two-hot Mixup label and its derivative in ``lam``.

    ``H = -(lam log lam + (1 - lam) log(1 - lam))``, ``dH/dlam = -log(lam / (1 - lam))``.
    """
    if not 0.0 < lam < 1.0:
        raise ConfigError(f"lambda must lie in (0, 1), got {lam}")
    value = -(lam * math.log(lam) + (1.0 - lam) * math.log1p(-lam))
    return value, math.log1p(-lam) - math.log(lam)


@dataclass
class SweepRow:
    policy: str
    accuracy: float
    final_loss: float
    seconds: float


def lambda_sweep(train: LabeledBatch, test: LabeledBatch, policies, config: TrainConfig,
                 probe=ProbeConfig()):
    """One pretrain + probe per mixing policy, all with the same seeds."""
    rows = []
    for policy in policies:
        if not isinstance(policy, MixPolicy):
            policy = MixPolicy("fixed", float(policy))
        start = time.perf_counter()
        params, record = pretrain(train, replace(config, mix=policy))
        acc = linear_probe(params, train, probe, test=test)
        rows.append(SweepRow(policy.label(), acc, record.losses[-1], time.perf_counter() - start))
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lambda", "accuracy", "final_loss", "seconds"])
        for r in rows:
            writer.writerow([r.policy, repr(r.accuracy), repr(r.final_loss), f"{r.seconds:.3f}"])
