"""Synthetic two-domain segmentation benchmark.

Scenes are seeded Voronoi partitions: random sites get classes drawn from the
spec's frequency vector, and each pixel takes the class of its nearest site,
giving contiguous regions with a controllable long tail. Pixels render as the
class palette color plus Gaussian noise; the target domain additionally
shifts the palette, which is the domain gap the adaptation has to close.
"""

import colorsys
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    InvalidInputError,
    MissingLabelsError,
    RoleError,
    ShapeError,
    SpecError,
)
from .seeding import derive_rng
from .serialization import read_header, read_tensor, write_header, write_tensor

DATASET_MAGIC = "PRSFDADS1"

DEFAULT_FREQUENCIES = (0.29, 0.21, 0.16, 0.12, 0.09, 0.08, 0.025, 0.025)
LONG_TAIL_CUTOFF = 0.03


def default_palette(num_classes, in_channels=3):
    """Evenly spaced hues at fixed saturation/value; deterministic."""
    colors = []
    for c in range(num_classes):
        rgb = colorsys.hsv_to_rgb(c / num_classes, 0.6, 0.45 + 0.4 * (c % 2))
        colors.append(rgb[:in_channels] if in_channels <= 3 else rgb + (0.5,) * (in_channels - 3))
    return np.asarray(colors)


@dataclass(frozen=True)
class DomainSpec:
    height: int = 64
    width: int = 64
    num_classes: int = 8
    in_channels: int = 3
    class_frequencies: tuple = DEFAULT_FREQUENCIES
    palette: tuple = None  # (C, in_channels) rows; defaults to spaced hues
    palette_shift: tuple = (0.18, -0.15, 0.12)
    noise_sigma: float = 0.15
    voronoi_sites: int = 24
    num_train: int = 40
    num_eval: int = 20
    seed: int = 0

    def __post_init__(self):
        freqs = np.asarray(self.class_frequencies, dtype=np.float64)
        if freqs.shape != (self.num_classes,):
            raise SpecError(f"need {self.num_classes} class frequencies, got {freqs.shape}")
        if np.any(freqs < 0):
            raise SpecError("class frequencies must be non-negative")
        if abs(freqs.sum() - 1.0) > 1e-6:
            raise SpecError(f"class frequencies must sum to 1, got {freqs.sum()}")
        palette = (
            default_palette(self.num_classes, self.in_channels)
            if self.palette is None
            else np.asarray(self.palette, dtype=np.float64)
        )
        if palette.shape != (self.num_classes, self.in_channels):
            raise SpecError(f"palette shape {palette.shape} != (C, in_channels)")
        if palette.min() < 0 or palette.max() > 1:
            raise SpecError("palette values must lie in [0, 1]")
        shift = np.asarray(self.palette_shift, dtype=np.float64)
        if shift.shape != (self.in_channels,):
            raise SpecError(f"palette_shift needs {self.in_channels} channels")
        if self.height < 1 or self.width < 1 or self.voronoi_sites < 1:
            raise SpecError("extents and site count must be positive")
        if self.noise_sigma < 0:
            raise SpecError("noise_sigma must be non-negative")
        object.__setattr__(self, "class_frequencies", tuple(float(f) for f in freqs))
        object.__setattr__(self, "palette", tuple(tuple(float(v) for v in row) for row in palette))
        object.__setattr__(self, "palette_shift", tuple(float(v) for v in shift))

    @property
    def long_tail_classes(self):
        return tuple(
            c for c, f in enumerate(self.class_frequencies) if f < LONG_TAIL_CUTOFF
        )

    def to_dict(self):
        return {
            "height": self.height,
            "width": self.width,
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "class_frequencies": list(self.class_frequencies),
            "palette": [list(row) for row in self.palette],
            "palette_shift": list(self.palette_shift),
            "noise_sigma": self.noise_sigma,
            "voronoi_sites": self.voronoi_sites,
            "num_train": self.num_train,
            "num_eval": self.num_eval,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        known = {
            "height", "width", "num_classes", "in_channels", "class_frequencies",
            "palette", "palette_shift", "noise_sigma", "voronoi_sites",
            "num_train", "num_eval", "seed",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown domain spec fields: {sorted(unknown)}")
        kwargs = dict(d)
        for key in ("class_frequencies", "palette_shift"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get("palette") is not None:
            kwargs["palette"] = tuple(tuple(row) for row in kwargs["palette"])
        return cls(**kwargs)


class TargetImages:
    """Label-free view of a dataset; the only thing adaptation phases accept."""

    def __init__(self, images):
        self.images = list(images)

    def __len__(self):
        return len(self.images)


@dataclass
class Dataset:
    images: list
    labels: list  # None for label-stripped target training splits
    role: str  # "source" | "target"

    def __post_init__(self):
        if self.role not in ("source", "target"):
            raise ConfigError(f"dataset role must be source or target, got {self.role!r}")
        if self.labels is not None and len(self.labels) != len(self.images):
            raise ShapeError("label count does not match image count")

    def __len__(self):
        return len(self.images)

    @property
    def has_labels(self):
        return self.labels is not None

    def images_only(self):
        return TargetImages(self.images)


@dataclass(frozen=True)
class DomainPair:
    source_train: Dataset
    source_val: Dataset
    target_train: Dataset  # label-stripped; ground truth never materialized here
    target_eval: Dataset


def _render_image(spec, rng, shifted):
    h, w, c = spec.height, spec.width, spec.num_classes
    sites_y = rng.uniform(0, h, size=spec.voronoi_sites)
    sites_x = rng.uniform(0, w, size=spec.voronoi_sites)
    site_class = rng.choice(c, size=spec.voronoi_sites, p=np.asarray(spec.class_frequencies))
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (yy[..., None] - sites_y) ** 2 + (xx[..., None] - sites_x) ** 2
    label = site_class[np.argmin(d2, axis=2)].astype(np.int64)
    palette = np.asarray(spec.palette)
    if shifted:
        palette = np.clip(palette + np.asarray(spec.palette_shift), 0.0, 1.0)
    image = palette[label] + rng.normal(0.0, spec.noise_sigma, size=(h, w, spec.in_channels))
    return np.clip(image, 0.0, 1.0), label


def generate_pair(spec):
    """Build the four splits of a two-domain benchmark, deterministic per spec."""
    splits = {}
    for domain_idx, domain in enumerate(("source", "target")):
        shifted = domain == "target"
        for split_idx, (split, count) in enumerate(
            (("train", spec.num_train), ("eval", spec.num_eval))
        ):
            images, labels = [], []
            for i in range(count):
                rng = derive_rng(spec.seed, domain_idx, split_idx, i)
                img, lab = _render_image(spec, rng, shifted)
                images.append(img)
                labels.append(lab)
            splits[(domain, split)] = (images, labels)
    src_tr, src_ev = splits[("source", "train")], splits[("source", "eval")]
    tgt_tr, tgt_ev = splits[("target", "train")], splits[("target", "eval")]
    return DomainPair(
        source_train=Dataset(src_tr[0], src_tr[1], "source"),
        source_val=Dataset(src_ev[0], src_ev[1], "source"),
        target_train=Dataset(tgt_tr[0], None, "target"),
        target_eval=Dataset(tgt_ev[0], tgt_ev[1], "target"),
    )


def color_perturb(image, strength, rng):
    """Per-channel affine jitter plus pixel noise, clamped to [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if strength < 0:
        raise InvalidInputError("perturbation strength must be non-negative")
    if image.min() < -1e-9 or image.max() > 1.0 + 1e-9:
        raise InvalidInputError("image values must lie in [0, 1]")
    if strength == 0:
        return image.copy()
    channels = image.shape[-1]
    gain = rng.uniform(1.0 - strength, 1.0 + strength, size=channels)
    offset = rng.uniform(-strength, strength, size=channels)
    noise = rng.normal(0.0, 0.25 * strength, size=image.shape)
    return np.clip(image * gain + offset + noise, 0.0, 1.0)


def class_frequencies(dataset, num_classes=None):
    """Pixel counts per class over all labels, normalized to sum to 1."""
    if not dataset.has_labels:
        raise MissingLabelsError("dataset carries no labels")
    if num_classes is None:
        num_classes = int(max(lab.max() for lab in dataset.labels)) + 1
    counts = np.zeros(num_classes, dtype=np.int64)
    for lab in dataset.labels:
        counts += np.bincount(lab.ravel(), minlength=num_classes)
    return counts / counts.sum()


def save_dataset(dataset, path):
    meta = {
        "role": dataset.role,
        "count": len(dataset),
        "has_labels": dataset.has_labels,
    }
    with open(path, "wb") as fh:
        write_header(fh, DATASET_MAGIC, meta)
        for i, img in enumerate(dataset.images):
            write_tensor(fh, img)
            if dataset.has_labels:
                write_tensor(fh, dataset.labels[i].astype(np.float64))


def load_dataset(path, expect_role=None):
    with open(path, "rb") as fh:
        meta = read_header(fh, DATASET_MAGIC)
        role = meta["role"]
        if expect_role is not None and role != expect_role:
            raise RoleError(f"dataset at {path} has role {role!r}, expected {expect_role!r}")
        images, labels = [], [] if meta["has_labels"] else None
        for _ in range(meta["count"]):
            images.append(read_tensor(fh))
            if meta["has_labels"]:
                labels.append(read_tensor(fh).astype(np.int64))
    return Dataset(images, labels, role)
