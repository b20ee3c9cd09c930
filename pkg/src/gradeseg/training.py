"""Training regimes, grade-stratified fold plans and the cross-validation loop."""

from __future__ import annotations

import contextlib
import enum
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .dataset import Grade, Subject, inject_grade_channel
from .errors import ConfigurationError, FormatError, ManifestError
from .model import (ModelSpec, ModelState, batch_loss, init_model, load_checkpoint,
                    one_hot, save_checkpoint, with_seed)
from .seeds import derive_seed

log = logging.getLogger(__name__)

INDEX_NAME = "index.tsv"


class Regime(str, enum.Enum):
    BASELINE = "BASELINE"
    HGG_ONLY = "HGG_ONLY"
    LGG_ONLY = "LGG_ONLY"
    TYPE_AWARE = "TYPE_AWARE"

    @property
    def in_channels(self) -> int:
        return 5 if self is Regime.TYPE_AWARE else 4

    def admits(self, grade: Grade) -> bool:
        """Whether subjects of ``grade`` are trained on and tested by this regime."""
        if self is Regime.HGG_ONLY:
            return grade is Grade.HGG
        if self is Regime.LGG_ONLY:
            return grade is Grade.LGG
        return True

    def prepare(self, subject: Subject) -> np.ndarray:
        """Model input for ``subject``; the type-aware network gets its true grade appended."""
        if self is Regime.TYPE_AWARE:
            return inject_grade_channel(subject.image, subject.grade)
        return subject.image


REGIMES = tuple(Regime)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: dict[str, int]

    def fold_ids(self, fold: int) -> list[str]:
        return [sid for sid, f in self.assignment.items() if f == fold]


def make_folds(cohort: Sequence[Subject], k: int = 5, seed: int = 0) -> FoldPlan:
    """Grade-stratified k-fold partition.

    Each grade is shuffled separately and dealt round-robin into folds. The LGG
    deal continues where the HGG deal stopped so total fold sizes also stay
    within one of each other.
    """
    if k < 2:
        raise ConfigurationError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    assignment: dict[str, int] = {}
    position = 0
    for grade in (Grade.HGG, Grade.LGG):
        members = [s.id for s in cohort if s.grade is grade]
        if len(members) < k:
            raise ConfigurationError(f"{grade.value}: {len(members)} subjects is fewer than k={k} folds")
        for idx in rng.permutation(len(members)):
            assignment[members[idx]] = position % k
            position += 1
    if len(assignment) != len(cohort):
        raise ConfigurationError("subject ids must be unique within a cohort")
    # keep cohort order so the plan serialises identically regardless of shuffling
    return FoldPlan(k, {s.id: assignment[s.id] for s in cohort})


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 2
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer.lower() not in ("adam", "sgd"):
            raise ConfigurationError(f"optimizer must be adam or sgd, got {self.optimizer!r}")


@dataclass
class RunRecord:
    regime: Regime
    fold: int
    train_ids: list[str]
    test_ids: list[str]
    checkpoints: list[Path] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    states: list[ModelState] = field(default_factory=list, repr=False)

    @property
    def epochs(self) -> int:
        return max(len(self.checkpoints), len(self.states))

    def state(self, epoch: int) -> ModelState:
        """Model after ``epoch`` (1-based)."""
        if self.states:
            return self.states[epoch - 1]
        path = self.checkpoints[epoch - 1]
        if not path.exists():
            raise ManifestError(f"missing checkpoint {path} ({self.regime.value}, fold {self.fold}, epoch {epoch})")
        return load_checkpoint(path)[0]


def split_fold(regime: Regime, plan: FoldPlan, fold: int,
               cohort: Sequence[Subject]) -> tuple[list[Subject], list[Subject]]:
    if not 0 <= fold < plan.k:
        raise ConfigurationError(f"fold {fold} outside [0, {plan.k})")
    train, test = [], []
    for subject in cohort:
        if not regime.admits(subject.grade):
            continue
        (test if plan.assignment[subject.id] == fold else train).append(subject)
    return train, test


def run_dir(root: str | os.PathLike, regime: Regime, fold: int) -> Path:
    return Path(root) / regime.value / str(fold)


def train_fold(regime: Regime, plan: FoldPlan, fold: int, cohort: Sequence[Subject],
               spec: ModelSpec, config: TrainConfig,
               out_dir: str | os.PathLike | None = None) -> RunRecord:
    """Train one (regime, fold) model, keeping one checkpoint per epoch.

    With ``out_dir`` the checkpoints go to ``out_dir/<regime>/<fold>/epoch_<e>.ckpt``;
    without it the per-epoch states are kept in memory on the record.
    """
    config.validate()
    if spec.in_channels != regime.in_channels:
        raise ConfigurationError(
            f"{regime.value} needs in_channels={regime.in_channels}, spec has {spec.in_channels}")
    train, test = split_fold(regime, plan, fold, cohort)
    if not train:
        raise ConfigurationError(f"{regime.value} fold {fold}: empty training set")

    state = init_model(with_seed(spec, derive_seed(spec.seed, "fold", fold)))
    params = {k: v.requires_grad_(True) for k, v in state.parameters.items()}
    images = torch.as_tensor(np.stack([regime.prepare(s) for s in train]), dtype=torch.float32)
    targets = torch.as_tensor(np.stack([one_hot(s.labels) for s in train]), dtype=torch.float32)
    if config.optimizer.lower() == "adam":
        opt = torch.optim.Adam(params.values(), lr=config.learning_rate)
    else:
        opt = torch.optim.SGD(params.values(), lr=config.learning_rate)
    order_rng = np.random.default_rng(derive_seed(config.seed, "batches", regime.value, fold))

    record = RunRecord(regime, fold, [s.id for s in train], [s.id for s in test])
    directory = run_dir(out_dir, regime, fold) if out_dir is not None else None
    if directory is not None:
        directory.mkdir(parents=True, exist_ok=True)
    with _flushed_denormals():
        _fit(record, params, state, images, targets, opt, order_rng, spec, config, directory)
    return record


@contextlib.contextmanager
def _flushed_denormals():
    # subnormal activations slow CPU convolutions several-fold
    torch.set_flush_denormal(True)
    try:
        yield
    finally:
        torch.set_flush_denormal(False)


def _fit(record, params, state, images, targets, opt, order_rng, spec, config, directory):
    regime, fold = record.regime, record.fold
    n = len(images)
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = torch.as_tensor(order[start:start + config.batch_size])
            opt.zero_grad()
            value = batch_loss(spec, params, images[idx], targets[idx])
            value.backward()
            opt.step()
            total += float(value.detach()) * len(idx)
        record.losses.append(total / n)
        snapshot = ModelState(state.spec, {k: v.detach().clone() for k, v in params.items()})
        if not snapshot.all_finite():
            raise FloatingPointError(f"{regime.value} fold {fold}: non-finite parameters at epoch {epoch}")
        if directory is not None:
            path = directory / f"epoch_{epoch}.ckpt"
            save_checkpoint(snapshot, path, {"regime": regime.value, "fold": fold, "epoch": epoch})
            record.checkpoints.append(path)
        else:
            record.states.append(snapshot)
        log.debug("%s fold %d epoch %d loss %.4f", regime.value, fold, epoch, record.losses[-1])
    if directory is not None:
        _write_run_files(record, directory)


def _write_run_files(record: RunRecord, directory: Path) -> None:
    lines = ["epoch,train_loss\n"] + [f"{e},{v!r}\n" for e, v in enumerate(record.losses, 1)]
    (directory / "losses.csv").write_text("".join(lines), encoding="utf-8")
    # marker written last: a run directory without it is treated as incomplete
    (directory / "complete").write_text(f"{len(record.losses)}\n", encoding="utf-8")


def _load_run(root: Path, regime: Regime, fold: int, epochs: int,
              train_ids: list[str], test_ids: list[str]) -> RunRecord | None:
    directory = run_dir(root, regime, fold)
    marker = directory / "complete"
    if not marker.exists() or marker.read_text().strip() != str(epochs):
        return None
    checkpoints = [directory / f"epoch_{e}.ckpt" for e in range(1, epochs + 1)]
    if not all(p.exists() for p in checkpoints):
        return None
    losses = [float(line.split(",")[1]) for line in
              (directory / "losses.csv").read_text().splitlines()[1:]]
    return RunRecord(regime, fold, train_ids, test_ids, checkpoints, losses)


@dataclass
class Manifest:
    root: Path | None
    k: int
    epochs: int
    records: list[RunRecord]

    def record(self, regime: Regime, fold: int) -> RunRecord:
        for r in self.records:
            if r.regime is regime and r.fold == fold:
                return r
        raise ManifestError(f"no run for ({regime.value}, fold {fold})")

    def missing(self) -> list[tuple[str, int, int]]:
        """(regime, fold, epoch) triples without a checkpoint on disk."""
        out = []
        for regime in REGIMES:
            for fold in range(self.k):
                try:
                    rec = self.record(regime, fold)
                except ManifestError:
                    out.extend((regime.value, fold, e) for e in range(1, self.epochs + 1))
                    continue
                if rec.states:
                    continue
                for e in range(1, self.epochs + 1):
                    if e > len(rec.checkpoints) or not rec.checkpoints[e - 1].exists():
                        out.append((regime.value, fold, e))
        return out


def _job(args):
    regime, plan, fold, cohort, spec, config, out_dir = args
    torch.set_num_threads(1)
    return train_fold(regime, plan, fold, cohort, spec, config, out_dir)


def run_all(cohort: Sequence[Subject], spec4: ModelSpec, spec5: ModelSpec, config: TrainConfig,
            plan: FoldPlan, out_dir: str | os.PathLike | None = None, jobs: int = 1) -> Manifest:
    """Train every regime on every fold of ``plan``.

    Completed run directories under ``out_dir`` are reused, so an interrupted
    invocation can be resumed and a finished one is a no-op. Records come back
    ordered by (regime, fold) whatever the execution order was.
    """
    if spec4.in_channels != 4 or spec5.in_channels != 5:
        raise ConfigurationError("spec4 must take 4 input channels and spec5 must take 5")
    root = Path(out_dir) if out_dir is not None else None
    slots: dict[tuple[Regime, int], RunRecord] = {}
    pending = []
    for regime in REGIMES:
        spec = spec5 if regime is Regime.TYPE_AWARE else spec4
        for fold in range(plan.k):
            if root is not None:
                train, test = split_fold(regime, plan, fold, cohort)
                done = _load_run(root, regime, fold, config.epochs,
                                 [s.id for s in train], [s.id for s in test])
                if done is not None:
                    slots[regime, fold] = done
                    continue
            pending.append((regime, plan, fold, cohort, spec, config, root))
    if pending:
        log.info("training %d of %d runs", len(pending), len(REGIMES) * plan.k)
    if jobs > 1 and len(pending) > 1:
        import multiprocessing

        with ProcessPoolExecutor(jobs, mp_context=multiprocessing.get_context("spawn")) as pool:
            for rec in pool.map(_job, pending):
                slots[rec.regime, rec.fold] = rec
    else:
        for args in pending:
            regime, _, fold = args[:3]
            log.info("training %s fold %d", regime.value, fold)
            rec = train_fold(*args)
            slots[rec.regime, rec.fold] = rec
    manifest = Manifest(root, plan.k, config.epochs,
                        [slots[r, f] for r in REGIMES for f in range(plan.k)])
    if root is not None:
        write_index(manifest, root / INDEX_NAME)
    return manifest


def write_index(manifest: Manifest, path: Path) -> None:
    lines = [f"# k={manifest.k}\tepochs={manifest.epochs}\n",
             "regime\tfold\tn_train\tn_test\ttrain_ids\ttest_ids\n"]
    for r in manifest.records:
        lines.append(f"{r.regime.value}\t{r.fold}\t{len(r.train_ids)}\t{len(r.test_ids)}\t"
                     f"{','.join(r.train_ids)}\t{','.join(r.test_ids)}\n")
    path.write_text("".join(lines), encoding="utf-8")


def read_manifest(root: str | os.PathLike) -> Manifest:
    """Load the run index written by :func:`run_all`; checkpoints are read lazily."""
    root = Path(root)
    index = root / INDEX_NAME
    if not index.exists():
        raise ManifestError(f"{index} not found; run the experiment first")
    lines = index.read_text(encoding="utf-8").splitlines()
    try:
        head = dict(item.split("=") for item in lines[0].lstrip("# ").split("\t"))
        k, epochs = int(head["k"]), int(head["epochs"])
    except (ValueError, KeyError, IndexError):
        raise FormatError(f"{index}: malformed header line") from None
    records = []
    for line in lines[2:]:
        regime, fold, _, _, train, test = line.split("\t")
        regime, fold = Regime(regime), int(fold)
        directory = run_dir(root, regime, fold)
        losses_file = directory / "losses.csv"
        losses = ([float(x.split(",")[1]) for x in losses_file.read_text().splitlines()[1:]]
                  if losses_file.exists() else [])
        records.append(RunRecord(
            regime, fold,
            train.split(",") if train else [],
            test.split(",") if test else [],
            [directory / f"epoch_{e}.ckpt" for e in range(1, epochs + 1)],
            losses,
        ))
    return Manifest(root, k, epochs, records)


def write_fold_plan(plan: FoldPlan, path: Path) -> None:
    lines = [f"# k={plan.k}\n"] + [f"{sid}\t{f}\n" for sid, f in plan.assignment.items()]
    path.write_text("".join(lines), encoding="utf-8")
