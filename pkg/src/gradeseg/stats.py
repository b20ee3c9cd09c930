"""Region Dice scoring and paired comparison of training regimes."""

from __future__ import annotations

import csv
import enum
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as sps

from .dataset import Subject
from .errors import ManifestError, PairingError, ShapeError
from .model import predict_labels
from .training import Manifest, Regime, RunRecord

ALPHA = 0.05
EXACT_MAX_N = 25
STRATIFIED = "STRATIFIED"  # HGG_ONLY for HGG subjects, LGG_ONLY for LGG subjects


class RegionKind(str, enum.Enum):
    CE = "CE"
    CORE = "CORE"
    WHOLE = "WHOLE"

    @property
    def labels(self) -> tuple[int, ...]:
        return {"CE": (4,), "CORE": (1, 4), "WHOLE": (1, 2, 4)}[self.value]


REGIONS = tuple(RegionKind)


def region_mask(labels: np.ndarray, region: RegionKind) -> np.ndarray:
    return np.isin(labels, RegionKind(region).labels)


def dice(pred_mask: np.ndarray, true_mask: np.ndarray) -> float:
    """2|A∩B| / (|A|+|B|), with 1.0 when both masks are empty."""
    a = np.asarray(pred_mask, dtype=bool)
    b = np.asarray(true_mask, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


# -- score table ----------------------------------------------------------------

class ScoreTable:
    """Dice per (subject, regime, epoch, region), plus the fold each subject was tested in."""

    COLUMNS = ("subject_id", "regime", "fold", "epoch", "region", "dice")

    def __init__(self) -> None:
        self.entries: dict[tuple[str, str, int, RegionKind], float] = {}
        self.folds: dict[tuple[str, str], int] = {}

    def add(self, subject_id: str, regime: str, fold: int, epoch: int,
            region: RegionKind, value: float) -> None:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"dice {value} outside [0, 1]")
        self.entries[subject_id, str(regime), int(epoch), RegionKind(region)] = float(value)
        self.folds[subject_id, str(regime)] = int(fold)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def epochs(self) -> list[int]:
        return sorted({key[2] for key in self.entries})

    def get(self, subject_id: str, regime: str, epoch: int, region: RegionKind) -> float:
        key = (subject_id, str(regime), epoch, RegionKind(region))
        if regime == STRATIFIED:
            for name in (Regime.HGG_ONLY.value, Regime.LGG_ONLY.value):
                if (subject_id, name, epoch, key[3]) in self.entries:
                    return self.entries[subject_id, name, epoch, key[3]]
        elif key in self.entries:
            return self.entries[key]
        raise PairingError(f"no {regime} score for subject {subject_id} at epoch {epoch} ({key[3].value})")

    def rows(self) -> list[tuple]:
        order = {r.value: i for i, r in enumerate(Regime)}
        keys = sorted(self.entries, key=lambda k: (order.get(k[1], 99), k[1], self.folds[k[0], k[1]],
                                                   k[2], k[0], REGIONS.index(k[3])))
        return [(sid, regime, self.folds[sid, regime], epoch, region.value, self.entries[sid, regime, epoch, region])
                for sid, regime, epoch, region in keys]

    def to_csv(self, path: str | os.PathLike) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for sid, regime, fold, epoch, region, value in self.rows():
            writer.writerow([sid, regime, fold, epoch, region, repr(value)])
        Path(path).write_text(buf.getvalue(), encoding="utf-8")

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> ScoreTable:
        table = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                table.add(row["subject_id"], row["regime"], int(row["fold"]), int(row["epoch"]),
                          RegionKind(row["region"]), float(row["dice"]))
        return table


Predictor = Callable[[RunRecord, int, Sequence[Subject]], np.ndarray]


def checkpoint_predictor(record: RunRecord, epoch: int, subjects: Sequence[Subject]) -> np.ndarray:
    images = np.stack([record.regime.prepare(s) for s in subjects])
    return predict_labels(record.state(epoch), images)


def score_runs(manifest: Manifest, cohort: Sequence[Subject],
               predictor: Predictor = checkpoint_predictor) -> ScoreTable:
    missing = manifest.missing()
    if missing:
        listed = ", ".join(f"({r}, fold {f}, epoch {e})" for r, f, e in missing[:10])
        more = f" and {len(missing) - 10} more" if len(missing) > 10 else ""
        raise ManifestError(f"incomplete manifest, missing checkpoints: {listed}{more}")
    by_id = {s.id: s for s in cohort}
    table = ScoreTable()
    for record in manifest.records:
        try:
            subjects = [by_id[sid] for sid in record.test_ids]
        except KeyError as exc:
            raise ManifestError(f"test subject {exc.args[0]} not in cohort") from None
        if not subjects:
            continue
        truth = {s.id: {r: region_mask(s.labels, r) for r in REGIONS} for s in subjects}
        for epoch in range(1, manifest.epochs + 1):
            predicted = predictor(record, epoch, subjects)
            for subject, labels in zip(subjects, predicted):
                for region in REGIONS:
                    value = dice(region_mask(labels, region), truth[subject.id][region])
                    table.add(subject.id, record.regime.value, record.fold, epoch, region, value)
    return table


# -- paired tests ---------------------------------------------------------------

def _signed_rank_counts(doubled_ranks: Sequence[int]) -> np.ndarray:
    """Number of sign assignments reaching each doubled positive-rank sum."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        counts[r:] = counts[r:] + counts[:total + 1 - r].copy()
    return counts


def wilcoxon_one_sided(diffs: Iterable[float]) -> tuple[float, float]:
    """One-sided signed-rank test of ``diffs > 0``; returns ``(W, p)``.

    Zero differences are dropped, tied magnitudes get average ranks and W is
    the sum of ranks of positive differences. Up to 25 non-zero differences
    the null distribution is counted exactly (ties included, on doubled ranks
    so that half-ranks stay integral); above that a continuity-corrected
    normal approximation with tie-corrected variance is used.
    """
    d = np.asarray(list(diffs), dtype=np.float64)
    if d.size == 0:
        raise ValueError("wilcoxon_one_sided needs at least one difference")
    d = d[d != 0]
    n = d.size
    if n == 0:
        return 0.0, 1.0
    ranks = sps.rankdata(np.abs(d))
    w = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = _signed_rank_counts(doubled)
        target = int(doubled[d > 0].sum())
        return w, float(counts[target:].sum()) / float(2**n)
    _, tie_sizes = np.unique(ranks, return_counts=True)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(((tie_sizes**3) - tie_sizes).sum()) / 48.0
    z = (w - mean - 0.5) / np.sqrt(var)
    return w, float(sps.norm.sf(z))


def better_ratio(variant_scores: Sequence[float], baseline_scores: Sequence[float]) -> float:
    """Percentage of pairs where the variant is strictly better."""
    v = np.asarray(variant_scores, dtype=np.float64)
    b = np.asarray(baseline_scores, dtype=np.float64)
    if v.shape != b.shape:
        raise PairingError(f"paired lists differ in length: {v.size} vs {b.size}")
    if v.size == 0:
        raise PairingError("no paired scores")
    return 100.0 * int(np.sum(v > b)) / v.size


@dataclass(frozen=True)
class ComparisonResult:
    region: RegionKind
    n: int
    better_ratio: float
    w_statistic: float
    p_value: float

    @property
    def significant(self) -> bool:
        return self.p_value < ALPHA


def paired_scores(table: ScoreTable, variant: str, baseline: str, subject_ids: Iterable[str],
                  epoch: int, region: RegionKind) -> tuple[np.ndarray, np.ndarray]:
    ids = sorted(set(subject_ids))
    if not ids:
        raise PairingError("empty subject set")
    v = np.array([table.get(sid, variant, epoch, region) for sid in ids])
    b = np.array([table.get(sid, baseline, epoch, region) for sid in ids])
    return v, b


def compare(table: ScoreTable, variant: str, baseline: str, subject_ids: Iterable[str],
            epoch: int, regions: Sequence[RegionKind] = REGIONS) -> dict[RegionKind, ComparisonResult]:
    """Better-ratio and Wilcoxon p-value of ``variant`` over ``baseline`` per region.

    ``variant`` and ``baseline`` are regime names or ``STRATIFIED``.
    """
    ids = sorted(set(subject_ids))
    out = {}
    for region in regions:
        v, b = paired_scores(table, variant, baseline, ids, epoch, region)
        w, p = wilcoxon_one_sided(v - b)
        out[RegionKind(region)] = ComparisonResult(RegionKind(region), len(ids), better_ratio(v, b), w, p)
    return out


def per_epoch_curves(table: ScoreTable, variant: str, baseline: str, subject_ids: Iterable[str],
                     region: RegionKind, epochs: Sequence[int] | None = None) -> list[tuple[int, float]]:
    ids = sorted(set(subject_ids))
    return [(e, better_ratio(*paired_scores(table, variant, baseline, ids, e, region)))
            for e in (epochs or table.epochs)]


@dataclass(frozen=True)
class Comparison:
    """One row of the headline table."""

    label: str
    slug: str
    variant: str
    grade: str | None  # restrict subjects to this grade; None = all

    def subjects(self, grades: Mapping[str, str]) -> list[str]:
        return sorted(sid for sid, g in grades.items() if self.grade is None or g == self.grade)


COMPARISONS = (
    Comparison("LGG vs. Baseline", "lgg_vs_baseline", Regime.LGG_ONLY.value, "LGG"),
    Comparison("HGG vs. Baseline", "hgg_vs_baseline", Regime.HGG_ONLY.value, "HGG"),
    Comparison("HGG/LGG vs. Baseline", "hgg_lgg_vs_baseline", STRATIFIED, None),
    Comparison("Type-aware vs. Baseline", "type_aware_vs_baseline", Regime.TYPE_AWARE.value, None),
)
