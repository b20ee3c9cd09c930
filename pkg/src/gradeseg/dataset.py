"""Synthetic two-grade tumour phantoms, on-disk subject format, grade handling.

Label convention follows BraTS: 0 background, 1 necrosis / non-enhancing
core, 2 edema, 4 enhancing tumour. Intensity channels mimic T1, T1c, T2 and
FLAIR.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, FormatError

LABEL_VALUES = (0, 1, 2, 4)
MANIFEST_NAME = "manifest.tsv"


class Grade(str, enum.Enum):
    LGG = "LGG"
    HGG = "HGG"

    @property
    def code(self) -> float:
        """Value of the injected grade plane."""
        return 1.0 if self is Grade.HGG else 0.0

    @classmethod
    def parse(cls, text: str) -> Grade:
        try:
            return cls(text.strip().upper())
        except ValueError:
            raise FormatError(f"grade: expected LGG or HGG, got {text!r}") from None


@dataclass(eq=False)
class Subject:
    id: str
    grade: Grade
    image: np.ndarray  # (channels, height, width) float32
    labels: np.ndarray  # (height, width) uint8

    def __post_init__(self) -> None:
        self.image = np.asarray(self.image, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        validate_volume(self.image)
        validate_labels(self.labels)
        if self.image.shape[1:] != self.labels.shape:
            raise FormatError(
                f"labels: shape {self.labels.shape} does not match image {self.image.shape[1:]}"
            )

    @property
    def channels(self) -> int:
        return self.image.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Subject):
            return NotImplemented
        return (
            self.id == other.id
            and self.grade == other.grade
            and self.image.shape == other.image.shape
            and self.image.tobytes() == other.image.tobytes()
            and np.array_equal(self.labels, other.labels)
        )


def validate_volume(image: np.ndarray) -> None:
    if image.ndim < 2 or image.shape[0] < 1:
        raise FormatError(f"image: expected (channels, *spatial) with channels >= 1, got {image.shape}")
    if not np.all(np.isfinite(image)):
        raise FormatError("image: contains non-finite values")


def validate_labels(labels: np.ndarray) -> None:
    bad = np.setdiff1d(np.unique(labels), LABEL_VALUES)
    if bad.size:
        raise FormatError(f"labels: illegal label value {int(bad[0])}")


@dataclass(frozen=True)
class PhantomConfig:
    image_size: int = 64
    n_channels: int = 4
    edema_radius_range: tuple[float, float] = (13.0, 20.0)
    core_radius_range: tuple[float, float] = (7.0, 12.0)
    hgg_enhancement_probability: float = 0.95
    lgg_enhancement_probability: float = 0.15
    noise_std: float = 0.08
    intensity_overlap: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.image_size < 8:
            raise ConfigurationError(f"image_size must be >= 8, got {self.image_size}")
        if self.n_channels < 1:
            raise ConfigurationError(f"n_channels must be >= 1, got {self.n_channels}")
        elo, ehi = self.edema_radius_range
        clo, chi = self.core_radius_range
        if not (0 < clo <= chi < elo <= ehi):
            raise ConfigurationError(
                "core_radius_range must lie strictly inside edema_radius_range "
                f"(got core {self.core_radius_range}, edema {self.edema_radius_range})"
            )
        if 2 * ehi >= self.image_size:
            raise ConfigurationError(
                f"edema radius {ehi} does not fit in a {self.image_size}px image"
            )
        for name in ("hgg_enhancement_probability", "lgg_enhancement_probability", "intensity_overlap"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {value}")
        if not self.hgg_enhancement_probability > self.lgg_enhancement_probability:
            raise ConfigurationError(
                "hgg_enhancement_probability must exceed lgg_enhancement_probability"
            )
        if self.noise_std < 0:
            raise ConfigurationError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be unsigned, got {self.seed}")


# Mean intensity per (tissue, channel); rows follow LABEL_VALUES, columns T1, T1c, T2, FLAIR.
_SHARED_MEANS = np.array([
    [0.45, 0.40, 0.30, 0.30],
    [0.30, 0.35, 0.70, 0.60],
    [0.40, 0.40, 0.65, 0.70],
    [0.40, 0.85, 0.55, 0.55],
])
# Grade-specific appearance. LGG core is made to resemble HGG edema and vice versa,
# so a model that ignores grade has to compromise between the two.
_GRADE_MEANS = {
    Grade.HGG: np.array([
        [0.45, 0.40, 0.30, 0.30],
        [0.20, 0.20, 0.85, 0.45],
        [0.40, 0.40, 0.55, 0.90],
        [0.45, 0.95, 0.55, 0.55],
    ]),
    Grade.LGG: np.array([
        [0.45, 0.40, 0.30, 0.30],
        [0.40, 0.40, 0.55, 0.90],
        [0.25, 0.25, 0.85, 0.45],
        [0.45, 0.70, 0.60, 0.60],
    ]),
}
_RIM_WIDTH = 2


def _tissue_means(grade: Grade, overlap: float, n_channels: int) -> np.ndarray:
    means = overlap * _SHARED_MEANS + (1.0 - overlap) * _GRADE_MEANS[grade]
    # extra channels beyond the four named sequences cycle through them
    return means[:, np.arange(n_channels) % 4]


def _blob(shape: tuple[int, int], center: np.ndarray, radius: float,
          rng: np.random.Generator, wobble: float = 0.15) -> np.ndarray:
    """Rotated ellipse with a low-order angular perturbation of its boundary."""
    rows, cols = np.indices(shape, dtype=np.float64)
    dy, dx = rows - center[0], cols - center[1]
    angle = rng.uniform(0, np.pi)
    aspect = rng.uniform(0.75, 1.0)
    u = dx * np.cos(angle) + dy * np.sin(angle)
    v = (-dx * np.sin(angle) + dy * np.cos(angle)) / aspect
    theta = np.arctan2(v, u)
    k = rng.integers(2, 5)
    phase = rng.uniform(0, 2 * np.pi)
    boundary = radius * (1.0 + wobble * rng.uniform(0.3, 1.0) * np.sin(k * theta + phase))
    return np.hypot(u, v) <= boundary


def generate_phantom(config: PhantomConfig, grade: Grade, subject_seed: int,
                     subject_id: str | None = None) -> Subject:
    config.validate()
    grade = Grade(grade)
    rng = np.random.default_rng([config.seed, 1 if grade is Grade.HGG else 0, subject_seed])
    size = config.image_size
    shape = (size, size)

    e_radius = rng.uniform(*config.edema_radius_range)
    c_radius = rng.uniform(*config.core_radius_range)
    margin = e_radius * 1.2
    center = rng.uniform(margin, size - margin, size=2) if size > 2 * margin else np.full(2, size / 2)
    edema = _blob(shape, center, e_radius, rng)
    shift = rng.normal(0.0, 0.25 * (e_radius - c_radius), size=2)
    core = _blob(shape, center + shift, c_radius, rng, wobble=0.1) & edema
    if not core.any():
        core[int(round(center[0])), int(round(center[1]))] = True
        edema |= core

    labels = np.zeros(shape, dtype=np.uint8)
    labels[edema] = 2
    labels[core] = 1
    if grade is Grade.HGG:
        if rng.random() < config.hgg_enhancement_probability:
            interior = ndimage.binary_erosion(core, iterations=_RIM_WIDTH)
            rim = core & ~interior
            labels[rim] = 4
    elif rng.random() < config.lgg_enhancement_probability:
        idx = np.argwhere(core)
        spot = idx[rng.integers(len(idx))]
        rows, cols = np.indices(shape)
        focus = (rows - spot[0]) ** 2 + (cols - spot[1]) ** 2 <= rng.uniform(1.0, 2.5) ** 2
        focus &= core
        focus[spot[0], spot[1]] = True
        labels[focus] = 4

    means = _tissue_means(grade, config.intensity_overlap, config.n_channels)
    tissue = np.searchsorted(LABEL_VALUES, labels)
    image = means[tissue].transpose(2, 0, 1)
    # per-subject contrast jitter and a smooth bias field, then white noise
    gain = rng.normal(1.0, 0.05, size=(config.n_channels, 1, 1))
    bias = ndimage.gaussian_filter(rng.normal(0.0, 1.0, size=(config.n_channels, *shape)),
                                   sigma=(0, size / 8, size / 8), mode="wrap")
    bias *= 0.05 / max(bias.std(), 1e-12)
    image = image * gain + bias
    image += rng.normal(0.0, config.noise_std, size=image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)

    if subject_id is None:
        subject_id = f"{grade.value.lower()}-{subject_seed:05d}"
    return Subject(subject_id, grade, image, labels)


def generate_cohort(config: PhantomConfig, n_hgg: int, n_lgg: int) -> list[Subject]:
    """HGG subjects first, then LGG; ids ``S0000``, ``S0001``, ... in that order."""
    if n_hgg < 1 or n_lgg < 1:
        raise ConfigurationError(f"cohort needs n_hgg >= 1 and n_lgg >= 1, got {n_hgg}, {n_lgg}")
    config.validate()
    grades = [Grade.HGG] * n_hgg + [Grade.LGG] * n_lgg
    return [generate_phantom(config, g, i, subject_id=f"S{i:04d}") for i, g in enumerate(grades)]


def stratify(cohort: Iterable[Subject]) -> tuple[list[Subject], list[Subject]]:
    hgg, lgg = [], []
    for subject in cohort:
        (hgg if subject.grade is Grade.HGG else lgg).append(subject)
    return hgg, lgg


def inject_grade_channel(image: np.ndarray, grade: Grade) -> np.ndarray:
    """Append a constant plane (1.0 for HGG, 0.0 for LGG) after the existing channels."""
    plane = np.full((1, *image.shape[1:]), Grade(grade).code, dtype=image.dtype)
    return np.concatenate([image, plane], axis=0)


# -- on-disk format -----------------------------------------------------------

_META_KEYS = ("id", "grade", "channels", "height", "width")


def save_subject(subject: Subject, directory: str | os.PathLike) -> None:
    if subject.image.ndim != 3:
        raise FormatError(f"image: on-disk format stores 2D subjects, got shape {subject.image.shape}")
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    c, h, w = subject.image.shape
    meta = {"id": subject.id, "grade": subject.grade.value, "channels": c, "height": h, "width": w}
    (path / "meta").write_text("".join(f"{k}={meta[k]}\n" for k in _META_KEYS), encoding="utf-8")
    (path / "image.f32").write_bytes(subject.image.astype("<f4").tobytes(order="C"))
    (path / "labels.u8").write_bytes(subject.labels.astype(np.uint8).tobytes(order="C"))


def _read_meta(path: Path) -> dict[str, str]:
    try:
        text = (path / "meta").read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"meta: not UTF-8 text ({path / 'meta'})") from exc
    meta: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"meta: line {lineno} is not key=value: {line!r}")
        meta[key.strip()] = value.strip()
    for key in _META_KEYS:
        if key not in meta:
            raise FormatError(f"{key}: missing from meta header")
    return meta


def _positive_int(meta: dict[str, str], key: str) -> int:
    try:
        value = int(meta[key])
    except ValueError:
        raise FormatError(f"{key}: not an integer: {meta[key]!r}") from None
    if value < 1:
        raise FormatError(f"{key}: must be positive, got {value}")
    return value


def load_subject(directory: str | os.PathLike) -> Subject:
    path = Path(directory)
    meta = _read_meta(path)
    grade = Grade.parse(meta["grade"])
    c, h, w = (_positive_int(meta, k) for k in ("channels", "height", "width"))

    raw = (path / "image.f32").read_bytes()
    if len(raw) != 4 * c * h * w:
        raise FormatError(f"image.f32: expected {4 * c * h * w} bytes for {c}x{h}x{w}, got {len(raw)}")
    image = np.frombuffer(raw, dtype="<f4").reshape(c, h, w).astype(np.float32)
    raw = (path / "labels.u8").read_bytes()
    if len(raw) != h * w:
        raise FormatError(f"labels.u8: expected {h * w} bytes for {h}x{w}, got {len(raw)}")
    labels = np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()
    return Subject(meta["id"], grade, image, labels)


def write_cohort(subjects: Sequence[Subject], directory: str | os.PathLike) -> Path:
    """Write every subject under ``directory/subjects/<id>`` plus the tab-separated manifest."""
    root = Path(directory)
    ids = [s.id for s in subjects]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("subject ids must be unique within a cohort")
    lines = []
    for subject in subjects:
        rel = f"subjects/{subject.id}"
        save_subject(subject, root / rel)
        lines.append(f"{subject.id}\t{rel}\t{subject.grade.value}\n")
    manifest = root / MANIFEST_NAME
    manifest.write_text("".join(lines), encoding="utf-8")
    return manifest


def read_cohort(directory: str | os.PathLike) -> list[Subject]:
    root = Path(directory)
    manifest = root / MANIFEST_NAME
    subjects = []
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise FormatError(f"{manifest}: line {lineno} needs 3 tab-separated fields")
        sid, rel, grade = fields
        subject = load_subject(root / rel)
        if subject.id != sid:
            raise FormatError(f"id: manifest says {sid!r}, meta says {subject.id!r}")
        if subject.grade is not Grade.parse(grade):
            raise FormatError(f"grade: manifest and meta disagree for {sid}")
        subjects.append(subject)
    return subjects
