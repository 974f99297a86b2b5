"""Toy modality encoders: image patches and token ids in, equal-shape
feature sequences out.

Both encoders emit (rows, feature_dim) matrices with a learned leading
classification row, and the token budget is tied to the patch count so the
two modalities always produce the same number of rows for one document.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, ShapeError
from .nn import LinearParams, NamedTensors, linear

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
NUM_RESERVED_IDS = 3


@dataclass(frozen=True)
class EncoderConfig:
    height: int = 16
    width: int = 16
    channels: int = 1
    patch: int = 4
    vocab_size: int = 64
    feature_dim: int = 32

    def __post_init__(self):
        if self.patch < 1:
            raise ConfigError("patch size must be >= 1")
        if self.height % self.patch or self.width % self.patch:
            raise ConfigError(
                f"image {self.height}x{self.width} not divisible by patch {self.patch}"
            )
        if self.vocab_size <= NUM_RESERVED_IDS:
            raise ConfigError("vocab must be larger than the reserved ids")

    @property
    def num_patches(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def rows(self) -> int:
        """Sequence rows per modality: patches plus the classification row."""
        return self.num_patches + 1

    @property
    def n_max(self) -> int:
        # Token sequences are padded/truncated to exactly the vision row count
        # so paired samples share their (rows, feature_dim) shape.
        return self.rows


@dataclass
class DocumentImage:
    """Raw pixels in [0, 1], stored float32 (the corpus container precision)."""

    pixels: np.ndarray  # (H, W, C)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3:
            raise DataError(f"image must be (H, W, C), got {self.pixels.shape}")


@dataclass
class TokenSequence:
    """Fixed-length id sequence: [CLS] content... [SEP] [PAD]..."""

    ids: np.ndarray  # (n_max,) integer ids

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.ndim != 1:
            raise DataError("token ids must be a flat sequence")
        if self.ids[0] != CLS_ID:
            raise DataError("token sequence must start with [CLS]")
        real = self.ids != PAD_ID
        if not real.any() or self.ids[np.flatnonzero(real)[-1]] != SEP_ID:
            raise DataError("last real token must be [SEP]")

    @property
    def mask(self) -> np.ndarray:
        """True at real-token positions, False at padding."""
        return self.ids != PAD_ID

    @classmethod
    def build(cls, content_ids, n_max: int) -> "TokenSequence":
        """Wrap raw content ids with [CLS]/[SEP], truncating or padding to n_max."""
        content = list(content_ids)[: n_max - 2]
        ids = [CLS_ID] + content + [SEP_ID]
        ids += [PAD_ID] * (n_max - len(ids))
        return cls(np.array(ids, dtype=np.int64))


@dataclass
class ModalityFeatures:
    """A (.., rows, feature_dim) feature block for one modality."""

    tensor: Tensor

    def __post_init__(self):
        if self.tensor.ndim < 2:
            raise ShapeError(f"features must be at least 2-d, got {self.tensor.shape}")

    @property
    def rows(self) -> int:
        return self.tensor.shape[-2]

    @property
    def feature_dim(self) -> int:
        return self.tensor.shape[-1]


@dataclass
class VisionEncoderParams:
    proj: LinearParams  # patch pixels -> feature_dim
    cls_row: Tensor  # (1, feature_dim)
    positions: Tensor  # (rows, feature_dim)

    @classmethod
    def create(cls, rng: np.random.Generator, cfg: EncoderConfig) -> "VisionEncoderParams":
        patch_dim = cfg.patch * cfg.patch * cfg.channels
        return cls(
            proj=LinearParams.create(rng, patch_dim, cfg.feature_dim),
            cls_row=Tensor(rng.normal(0.0, 0.02, size=(1, cfg.feature_dim)), requires_grad=True),
            positions=Tensor(rng.normal(0.0, 0.02, size=(cfg.rows, cfg.feature_dim)), requires_grad=True),
        )

    def named_tensors(self, prefix: str) -> NamedTensors:
        yield from self.proj.named_tensors(f"{prefix}.proj")
        yield f"{prefix}.cls_row", self.cls_row
        yield f"{prefix}.positions", self.positions


@dataclass
class TextEncoderParams:
    table: Tensor  # (vocab_size, feature_dim)
    positions: Tensor  # (n_max, feature_dim)

    @classmethod
    def create(cls, rng: np.random.Generator, cfg: EncoderConfig) -> "TextEncoderParams":
        return cls(
            table=Tensor(rng.normal(0.0, 0.02, size=(cfg.vocab_size, cfg.feature_dim)), requires_grad=True),
            positions=Tensor(rng.normal(0.0, 0.02, size=(cfg.n_max, cfg.feature_dim)), requires_grad=True),
        )

    def named_tensors(self, prefix: str) -> NamedTensors:
        yield f"{prefix}.table", self.table
        yield f"{prefix}.positions", self.positions


def patchify(cfg: EncoderConfig, pixels: np.ndarray) -> np.ndarray:
    """Cut (.., H, W, C) pixels into (.., num_patches, patch*patch*C) rows.

    Patches are ordered row-major over the patch grid; each patch flattens
    row-major over (row, col, channel).
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.shape[-3] != cfg.height or pixels.shape[-2] != cfg.width or pixels.shape[-1] != cfg.channels:
        raise ConfigError(
            f"image shape {pixels.shape[-3:]} does not match configured "
            f"{(cfg.height, cfg.width, cfg.channels)}"
        )
    p = cfg.patch
    lead = pixels.shape[:-3]
    grid_h, grid_w = cfg.height // p, cfg.width // p
    x = pixels.reshape(lead + (grid_h, p, grid_w, p, cfg.channels))
    x = np.moveaxis(x, -4, -3)  # (.., grid_h, grid_w, p, p, C)
    return x.reshape(lead + (grid_h * grid_w, p * p * cfg.channels))


def patch_embed(params: VisionEncoderParams, cfg: EncoderConfig, image) -> ModalityFeatures:
    """Project flattened patches, prepend the learned [CLS] row, add positions.

    ``image`` is a DocumentImage or a (.., H, W, C) array; a leading batch
    axis is carried through.
    """
    pixels = image.pixels if isinstance(image, DocumentImage) else np.asarray(image)
    patches = patchify(cfg, pixels)
    projected = linear(params.proj, Tensor(patches))
    lead = patches.shape[:-2]
    cls = ad.broadcast_to(params.cls_row, lead + (1, cfg.feature_dim))
    rows = ad.concat([cls, projected], axis=-2)
    return ModalityFeatures(ad.add(rows, params.positions))


def token_embed(
    params: TextEncoderParams, cfg: EncoderConfig, tokens
) -> tuple[ModalityFeatures, np.ndarray]:
    """Embed token ids and return the features plus the real-token mask.

    ``tokens`` is a TokenSequence or a (.., n_max) id array.  Ids outside the
    vocabulary are a data error.
    """
    ids = tokens.ids if isinstance(tokens, TokenSequence) else np.asarray(tokens, dtype=np.int64)
    if ids.shape[-1] != cfg.n_max:
        raise DataError(f"token sequence length {ids.shape[-1]} != configured {cfg.n_max}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise DataError(
            f"token id out of vocabulary (vocab_size={cfg.vocab_size}, "
            f"got range [{ids.min()}, {ids.max()}])"
        )
    embedded = ad.gather_rows(params.table, ids)
    return ModalityFeatures(ad.add(embedded, params.positions)), ids != PAD_ID


def pool_cls(features: ModalityFeatures) -> Tensor:
    """Select the classification row (row 0) of each sequence."""
    picked = ad.narrow(features.tensor, -2, 0, 1)
    shape = picked.shape[:-2] + (features.feature_dim,)
    return ad.reshape(picked, shape)
