"""Dual-encoder abstraction plus self-contained toy encoders with analytic gradients.

A :class:`DualEncoder` maps images and texts into one embedding space; every
attack and the retrieval harness consume only this interface, so real
vision-language models can be wired in by implementing ``encode_image``,
``encode_text`` and (for image attacks) ``weighted_cosine_gradient``.

The toy encoders exist for desk-scale verification.  The image side mean-pools
non-overlapping patches and applies a fixed seeded random linear projection,
so image->embedding is linear and gradients have a closed form.  The text side
maps each token to a fixed row and averages.  Token rows are built from
family-level "prototype" patch patterns shared by all encoders constructed
with the same ``family_seed`` (two encoders with the same family model two
networks trained on the same data), plus a per-seed private component; see
``ToyDualEncoder.from_seed``.
"""

from __future__ import annotations

import abc
from collections.abc import Mapping, Sequence

import numpy as np

from .core import (
    CapabilityError,
    ConfigurationError,
    DegenerateEmbeddingError,
    ShapeMismatchError,
    TextSample,
    stable_token_hash,
    validate_image,
)

__all__ = [
    "DualEncoder",
    "ToyDualEncoder",
    "ToyImageEncoder",
    "ToyTextEncoder",
    "cosine_similarity",
    "token_prototype",
    "weighted_cosine_gradient",
]

NORM_TOL = 1e-12

# Sub-seed tags so projection, private rows and prototypes never collide.
_TAG_PROJECTION = 101
_TAG_PRIVATE = 102
_TAG_PROTOTYPE = 103
_OOV_SENTINEL = "\x00oov\x00"


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of the angle between two embeddings, in [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ShapeMismatchError(f"embedding shapes differ: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu <= NORM_TOL or nv <= NORM_TOL:
        raise DegenerateEmbeddingError("cosine similarity of a (near-)zero embedding")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


class DualEncoder(abc.ABC):
    """Deterministic image/text encoder pair sharing one embedding space."""

    embedding_dim: int
    supports_image_gradients: bool = False

    @abc.abstractmethod
    def encode_image(self, x: np.ndarray) -> np.ndarray:
        """Embed an (H, W, C) image with intensities in [0, 1]."""

    @abc.abstractmethod
    def encode_text(self, t: TextSample) -> np.ndarray:
        """Embed a text sample."""

    def weighted_cosine_gradient(
        self, x: np.ndarray, targets: Sequence[np.ndarray], weights: Sequence[float]
    ) -> np.ndarray:
        """Gradient wrt pixels of sum_j weights[j] * cos(encode_image(x), targets[j])."""
        raise CapabilityError(f"{type(self).__name__} does not support image gradients")

    @property
    def description(self) -> str:
        return type(self).__name__


def weighted_cosine_gradient(
    enc: DualEncoder,
    x: np.ndarray,
    targets: Sequence[np.ndarray],
    weights: Sequence[float],
) -> np.ndarray:
    """Validated front door for ``enc.weighted_cosine_gradient``."""
    if not enc.supports_image_gradients:
        raise CapabilityError(f"{enc.description} does not support image gradients")
    if len(targets) != len(weights) or len(targets) < 1:
        raise ValueError("targets and weights must have equal length >= 1")
    return enc.weighted_cosine_gradient(x, targets, weights)


def token_prototype(family_seed: int, token: str, n_patches: int) -> np.ndarray:
    """Family-level patch-mean pattern associated with a token.

    Values lie in (0.05, 0.95) so the pattern is realizable as pixel
    intensities; all encoders of one family agree on it.
    """
    ss = np.random.SeedSequence((int(family_seed), _TAG_PROTOTYPE, stable_token_hash(token)))
    g = np.random.default_rng(ss).standard_normal(n_patches)
    return 0.5 + 0.45 * np.tanh(1.5 * g)


class ToyImageEncoder:
    """Mean-pooled patches followed by a fixed random linear projection."""

    def __init__(self, projection: np.ndarray, patch_size: int, image_hw: tuple[int, int]):
        h, w = image_hw
        if patch_size < 1 or h % patch_size or w % patch_size:
            raise ConfigurationError(
                f"patch size {patch_size} must divide the image height/width {image_hw}"
            )
        n_patches = (h // patch_size) * (w // patch_size)
        projection = np.asarray(projection, dtype=np.float64)
        if projection.ndim != 2 or projection.shape[1] != n_patches:
            raise ConfigurationError(
                f"projection must be (embedding_dim, {n_patches}), got {projection.shape}"
            )
        projection.flags.writeable = False
        self.projection = projection
        self.patch_size = patch_size
        self.image_hw = (int(h), int(w))
        self.embedding_dim = projection.shape[0]

    def patch_means(self, x: np.ndarray) -> np.ndarray:
        x = validate_image(x)
        h, w = self.image_hw
        if x.shape[:2] != (h, w):
            raise ConfigurationError(
                f"encoder expects a {h}x{w} image, got {x.shape[0]}x{x.shape[1]}"
            )
        p = self.patch_size
        flat = x.mean(axis=2)  # collapse channels first; the pooling is a plain mean
        return flat.reshape(h // p, p, w // p, p).mean(axis=(1, 3)).ravel()

    def encode(self, x: np.ndarray) -> np.ndarray:
        return self.projection @ self.patch_means(x)

    def weighted_cosine_gradient(self, x, targets, weights) -> np.ndarray:
        x = validate_image(x)
        m = self.patch_means(x)
        u = self.projection @ m
        nu = float(np.linalg.norm(u))
        if nu <= NORM_TOL:
            raise DegenerateEmbeddingError("image embedding has (near-)zero norm")
        acc = np.zeros(self.embedding_dim)
        for v, wgt in zip(targets, weights):
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (self.embedding_dim,):
                raise ShapeMismatchError(f"target shape {v.shape} != ({self.embedding_dim},)")
            nv = float(np.linalg.norm(v))
            if nv <= NORM_TOL:
                raise DegenerateEmbeddingError("target embedding has (near-)zero norm")
            acc += wgt * (v / (nu * nv) - (np.dot(u, v) / (nu**3 * nv)) * u)
        s = self.projection.T @ acc
        p = self.patch_size
        h, w = self.image_hw
        per_pixel = np.repeat(np.repeat(s.reshape(h // p, w // p), p, axis=0), p, axis=1)
        per_pixel = per_pixel / (p * p * x.shape[2])
        return np.broadcast_to(per_pixel[:, :, None], x.shape).copy()


class ToyTextEncoder:
    """Token-row lookup table; a text embeds as the mean of its token rows."""

    def __init__(self, rows: Mapping[str, np.ndarray], oov_row: np.ndarray, embedding_dim: int):
        self.embedding_dim = int(embedding_dim)
        self._rows = {}
        for token, row in rows.items():
            row = np.asarray(row, dtype=np.float64)
            if row.shape != (self.embedding_dim,):
                raise ConfigurationError(f"row for {token!r} has shape {row.shape}")
            row.flags.writeable = False
            self._rows[token] = row
        oov_row = np.asarray(oov_row, dtype=np.float64)
        if oov_row.shape != (self.embedding_dim,):
            raise ConfigurationError(f"oov row has shape {oov_row.shape}")
        oov_row.flags.writeable = False
        self._oov_row = oov_row

    def row(self, token: str) -> np.ndarray:
        return self._rows.get(token, self._oov_row)

    def __contains__(self, token: str) -> bool:
        return token in self._rows

    def encode(self, t: TextSample) -> np.ndarray:
        return np.mean(np.stack([self.row(w) for w in t.words]), axis=0)


class ToyDualEncoder(DualEncoder):
    """Toy image+text encoder pair for desk-scale experiments."""

    supports_image_gradients = True

    def __init__(self, image_encoder: ToyImageEncoder, text_encoder: ToyTextEncoder, seed: int | None = None):
        if image_encoder.embedding_dim != text_encoder.embedding_dim:
            raise ConfigurationError("image and text encoders disagree on embedding_dim")
        self.image_encoder = image_encoder
        self.text_encoder = text_encoder
        self.embedding_dim = image_encoder.embedding_dim
        self.seed = seed

    @classmethod
    def from_seed(
        cls,
        seed: int,
        vocabulary: Sequence[str],
        *,
        image_hw: tuple[int, int] = (32, 32),
        patch_size: int = 8,
        embedding_dim: int = 32,
        family_seed: int = 0,
        token_noise: float = 0.35,
    ) -> "ToyDualEncoder":
        """Build an encoder whose tables are reconstructible from the arguments.

        Token rows are ``W @ (prototype(token) + token_noise * private(token))``
        where the prototype depends only on ``family_seed`` and the private
        component on ``seed``, so encoders of one family share similarity
        structure without sharing parameters.
        """
        h, w = image_hw
        if patch_size < 1 or h % patch_size or w % patch_size:
            raise ConfigurationError(f"patch size {patch_size} incompatible with image {image_hw}")
        n_patches = (h // patch_size) * (w // patch_size)
        seed = int(seed)
        proj_rng = np.random.default_rng(np.random.SeedSequence((seed, _TAG_PROJECTION)))
        projection = proj_rng.standard_normal((embedding_dim, n_patches))
        image_encoder = ToyImageEncoder(projection, patch_size, image_hw)

        def make_row(token: str) -> np.ndarray:
            proto = token_prototype(family_seed, token, n_patches)
            ss = np.random.SeedSequence((seed, _TAG_PRIVATE, stable_token_hash(token)))
            priv = np.random.default_rng(ss).standard_normal(n_patches)
            return projection @ (proto + token_noise * priv)

        rows = {token: make_row(token) for token in sorted(set(vocabulary))}
        text_encoder = ToyTextEncoder(rows, make_row(_OOV_SENTINEL), embedding_dim)
        return cls(image_encoder, text_encoder, seed=seed)

    def encode_image(self, x: np.ndarray) -> np.ndarray:
        return self.image_encoder.encode(x)

    def encode_text(self, t: TextSample) -> np.ndarray:
        return self.text_encoder.encode(t)

    def weighted_cosine_gradient(self, x, targets, weights) -> np.ndarray:
        return self.image_encoder.weighted_cosine_gradient(x, targets, weights)

    @property
    def description(self) -> str:
        return f"toy{self.seed}" if self.seed is not None else "toy"
