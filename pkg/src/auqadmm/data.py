"""Datasets, partitioning and problem builders.

* IDX (MNIST) reader/writer,
* class-based sharding across workers,
* Gaussian blob generator used as a small stand-in for image data,
* the four-quadrant denoising problem used to illustrate weighted averaging.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .losses import ElasticNetLoss, MultinomialLoss, SmoothedSvmLoss, weighted_prox
from .problem import ConsensusProblem, ElasticNet, Tikhonov
from .weights import RestrictionInterval, auq_weights

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    """Malformed IDX file; the message names the field and byte offset."""


class ConfigError(ValueError):
    """Inconsistent experiment or partitioning parameters."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels outside [0, {self.class_count})")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def select_classes(self, classes: int) -> "Dataset":
        """Keep only samples with label < ``classes``."""
        keep = self.labels < classes
        return Dataset(self.features[keep], self.labels[keep], classes)


# --- IDX ----------------------------------------------------------------------


def _header(buf: bytes, ndim: int, magic: int, name: str) -> Tuple[int, ...]:
    need = 4 * (ndim + 1)
    if len(buf) < need:
        raise IDXFormatError(f"{name}: truncated header, expected {need} bytes at "
                             f"byte offset 0, got {len(buf)}")
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise IDXFormatError(f"{name}: magic mismatch at byte offset 0: "
                             f"expected 0x{magic:08x}, got 0x{got:08x}")
    return struct.unpack(">" + "I" * ndim, buf[4:need])


def parse_idx_images(buf: bytes, name: str = "images") -> np.ndarray:
    """Raw IDX image bytes -> uint8 array of shape ``(count, rows, cols)``."""
    count, rows, cols = _header(buf, 3, IMAGES_MAGIC, name)
    size = count * rows * cols
    payload = buf[16:]
    if len(payload) < size:
        raise IDXFormatError(f"{name}: truncated pixel payload at byte offset "
                             f"{16 + len(payload)}: expected {size} bytes from offset 16")
    return np.frombuffer(payload, dtype=np.uint8, count=size).reshape(count, rows, cols)


def parse_idx_labels(buf: bytes, name: str = "labels") -> np.ndarray:
    (count,) = _header(buf, 1, LABELS_MAGIC, name)
    payload = buf[8:]
    if len(payload) < count:
        raise IDXFormatError(f"{name}: truncated label payload at byte offset "
                             f"{8 + len(payload)}: expected {count} bytes from offset 8")
    return np.frombuffer(payload, dtype=np.uint8, count=count).copy()


def load_idx(images_path, labels_path, class_count: int | None = None) -> Dataset:
    """Read an IDX image/label file pair; pixels are scaled to ``[0, 1]``."""
    images = parse_idx_images(Path(images_path).read_bytes(), str(images_path))
    labels = parse_idx_labels(Path(labels_path).read_bytes(), str(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError(
            f"{labels_path}: count field at byte offset 4 is {labels.shape[0]}, "
            f"but {images_path} holds {images.shape[0]} images"
        )
    features = images.reshape(images.shape[0], images.shape[1] * images.shape[2])
    features = features.astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 0
    return Dataset(features, labels, class_count)


def idx_bytes(images: np.ndarray, labels: np.ndarray) -> Tuple[bytes, bytes]:
    """Encode uint8 images ``(count, rows, cols)`` and labels as IDX bytes."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    img = struct.pack(">IIII", IMAGES_MAGIC, count, rows, cols) + images.tobytes()
    lab = struct.pack(">II", LABELS_MAGIC, labels.shape[0]) + labels.tobytes()
    return img, lab


def write_idx(images_path, labels_path, images, labels) -> None:
    img, lab = idx_bytes(images, labels)
    Path(images_path).write_bytes(img)
    Path(labels_path).write_bytes(lab)


# --- partitioning and synthetic data -----------------------------------------


def partition_by_class(d: Dataset, workers: int, per_worker: int) -> List[Dataset]:
    """Split ``d`` so that each worker sees only its own classes.

    Classes are dealt round-robin (worker ``j`` gets every class ``c`` with
    ``c % workers == j``).  A worker receives at most ``per_worker`` samples,
    split as evenly as possible across its classes and taken in dataset order.
    """
    C = d.class_count
    if workers < 1:
        raise ConfigError(f"need at least one worker, got {workers}")
    if workers > C:
        raise ConfigError(f"{workers} workers but only {C} classes: cannot give every "
                          "worker a class")
    if C % workers:
        raise ConfigError(f"{C} classes cannot be split evenly over {workers} workers")
    if per_worker < 0:
        raise ConfigError("per_worker must be nonnegative")
    shards = []
    for j in range(workers):
        classes = [c for c in range(C) if c % workers == j]
        base, extra = divmod(per_worker, len(classes))
        idx = []
        for i, c in enumerate(classes):
            quota = base + (1 if i < extra else 0)
            idx.extend(np.flatnonzero(d.labels == c)[:quota].tolist())
        idx = np.array(sorted(idx), dtype=np.int64)
        shards.append(Dataset(d.features[idx], d.labels[idx], C))
    return shards


def synth_blobs(m: int, C: int, per_class: int, noise: float, seed: int = 0) -> Dataset:
    """Gaussian clusters around ``C`` random unit-norm centers in ``R^m``.

    Samples are stored class by class.
    """
    if m < 1 or C < 1 or per_class < 0 or noise < 0:
        raise ValueError("synth_blobs needs positive sizes and nonnegative noise")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((C, m))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    labels = np.repeat(np.arange(C), per_class)
    features = centers[labels] + noise * rng.standard_normal((labels.size, m))
    return Dataset(features, labels, C)


def make_problem(kind: str, shards: Sequence[Dataset], *, rho1: float = 1e-2,
                 rho2: float = 1e-2, tikhonov: float = 1.0,
                 svm_eps: float = 1.0 / 5000) -> ConsensusProblem:
    """Build the consensus problem of one benchmark from per-worker shards.

    ``elasticnet`` regresses the class index; ``svm`` labels the first half
    of the classes ``+1`` and the rest ``-1``.
    """
    kind = kind.lower()
    if kind == "elasticnet":
        losses = [ElasticNetLoss(s.features, s.labels.astype(np.float64)) for s in shards]
        return ConsensusProblem(losses, ElasticNet(rho1, rho2))
    if kind == "multinomial":
        losses = [MultinomialLoss(s.features, s.labels, s.class_count) for s in shards]
        return ConsensusProblem(losses, Tikhonov(tikhonov))
    if kind == "svm":
        losses = []
        for s in shards:
            y = np.where(s.labels < s.class_count / 2, 1.0, -1.0)
            losses.append(SmoothedSvmLoss(s.features.T, y, eps=svm_eps))
        return ConsensusProblem(losses, Tikhonov(tikhonov))
    raise ConfigError(f"unknown loss {kind!r}")


# --- quadrant denoising -------------------------------------------------------


@dataclass(frozen=True)
class DenoiseInstance:
    ground_truth: np.ndarray
    noisy: np.ndarray
    masks: Tuple[np.ndarray, ...]
    shape: Tuple[int, int]
    alpha: float = 1e-3

    def local_data(self, j: int) -> np.ndarray:
        """``b_j``: the noisy image inside quadrant ``j``, zero elsewhere."""
        return np.where(self.masks[j], self.noisy, 0.0)


def demo_image(size: int = 32, seed: int = 0) -> np.ndarray:
    """Smooth synthetic test image with values in ``[0, 1]``."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    img = np.zeros((size, size))
    for _ in range(6):
        cx, cy = rng.uniform(0.1, 0.9, 2)
        width = rng.uniform(0.08, 0.25)
        img += rng.uniform(0.4, 1.0) * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * width**2))
    lo, hi = int(0.3 * size), int(0.55 * size)
    img[lo:hi, lo:hi] += 0.5
    img -= img.min()
    return img / img.max()


def quadrant_masks(rows: int, cols: int) -> Tuple[np.ndarray, ...]:
    r, c = np.mgrid[0:rows, 0:cols]
    top, left = r < rows // 2, c < cols // 2
    quads = (top & left, top & ~left, ~top & left, ~top & ~left)
    return tuple(q.ravel() for q in quads)


def quadrant_denoise(image, noise: float = 0.1, seed: int = 0, alpha: float = 1e-3
                     ) -> Tuple[DenoiseInstance, ConsensusProblem]:
    """Four-worker denoising problem, one worker per image quadrant.

    Worker ``j`` only observes its quadrant:
    ``f_j(u) = 1/2 ||M_j (u - b)||^2`` with ``M_j`` the quadrant mask, so its
    Hessian is ``diag(M_j)``.  ``g(v) = alpha/2 ||v||^2``.  Noise is additive
    Gaussian with standard deviation ``noise`` times the image's dynamic range.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {image.shape}")
    rows, cols = image.shape
    if rows % 2 or cols % 2:
        raise ValueError(f"image sides must be even, got {image.shape}")
    rng = np.random.default_rng(seed)
    truth = image.ravel().copy()
    span = truth.max() - truth.min()
    noisy = truth + noise * (span if span > 0 else 1.0) * rng.standard_normal(truth.size)
    masks = quadrant_masks(rows, cols)
    inst = DenoiseInstance(truth, noisy, masks, (rows, cols), alpha)
    eye = sp.identity(truth.size, format="csr")
    losses = [ElasticNetLoss(eye[np.flatnonzero(m)], noisy[m]) for m in masks]
    return inst, ConsensusProblem(losses, Tikhonov(alpha))


def denoise_first_iterate(inst: DenoiseInstance, problem: ConsensusProblem, rank: int = 5,
                          interval=(0.1, 1.0), seed: int = 0) -> dict:
    """First averaging step with and without uncertainty weights.

    The local models are the workers' data fits ``b_j``; they are averaged by
    the v-update once with identity weights and once with the first AUQ
    weights (computed on the restriction interval ``interval``).
    """
    n = inst.ground_truth.size
    local = [inst.local_data(j) for j in range(len(inst.masks))]
    ri = RestrictionInterval.start(*interval)
    W = auq_weights(problem.losses, local, ri, rank, seed=seed)
    ones = [np.ones(n) for _ in local]
    reg = problem.regularizer
    return {
        "local": local,
        "weights": W,
        "v_unweighted": weighted_prox(reg, local, ones),
        "v_weighted": weighted_prox(reg, local, W),
    }
