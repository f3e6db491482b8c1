"""Shared domain types, deterministic randomness, and perturbation-budget primitives.

Images are plain ``numpy`` float64 arrays of shape (H, W, C) with intensities
in [0, 1]; :func:`validate_image` is the single place the invariants are
enforced.  Texts are immutable :class:`TextSample` values.  All randomness in
the package flows through :class:`RandomStream` instances passed explicitly,
never through a global RNG.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AttackConfig",
    "CapabilityError",
    "ConfigurationError",
    "DatasetError",
    "DegenerateEmbeddingError",
    "RandomStream",
    "ShapeMismatchError",
    "TextSample",
    "project_linf",
    "validate_image",
    "words_changed",
]


class ShapeMismatchError(ValueError):
    """Array arguments do not have the shapes the operation requires."""


class DegenerateEmbeddingError(ValueError):
    """An embedding with (near-)zero norm reached a similarity computation."""


class CapabilityError(RuntimeError):
    """An encoder lacks a capability the caller depends on (e.g. gradients)."""


class ConfigurationError(ValueError):
    """Inconsistent configuration, e.g. image incompatible with an encoder."""


class DatasetError(ValueError):
    """A dataset manifest entry could not be loaded."""


def validate_image(x) -> np.ndarray:
    """Return ``x`` as a float64 (H, W, C) array, checking the image invariants.

    Raises :class:`ShapeMismatchError` for bad shapes and ``ValueError`` for
    values outside [0, 1] or non-finite entries.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeMismatchError(f"image must have 3 axes (H, W, C), got shape {arr.shape}")
    h, w, c = arr.shape
    if h < 1 or w < 1 or c not in (1, 3):
        raise ShapeMismatchError(f"invalid image shape {arr.shape}: need H>=1, W>=1, C in {{1,3}}")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"image intensities outside [0,1]: min={arr.min()}, max={arr.max()}")
    return arr


@dataclass(frozen=True)
class TextSample:
    """An ordered, non-empty sequence of word tokens."""

    words: tuple[str, ...]

    def __post_init__(self):
        if not isinstance(self.words, tuple):
            object.__setattr__(self, "words", tuple(self.words))
        if len(self.words) < 1:
            raise ValueError("text must contain at least one token")
        for w in self.words:
            if not isinstance(w, str) or not w:
                raise ValueError(f"tokens must be non-empty strings, got {w!r}")
            if any(ch.isspace() for ch in w):
                raise ValueError(f"token contains whitespace: {w!r}")

    @classmethod
    def from_string(cls, text: str) -> "TextSample":
        return cls(tuple(text.split()))

    def replace_word(self, position: int, token: str) -> "TextSample":
        if not 0 <= position < len(self.words):
            raise IndexError(f"position {position} out of range for length {len(self.words)}")
        words = list(self.words)
        words[position] = token
        return TextSample(tuple(words))

    @property
    def text(self) -> str:
        return " ".join(self.words)

    def __len__(self) -> int:
        return len(self.words)

    def __iter__(self):
        return iter(self.words)

    def __getitem__(self, i):
        return self.words[i]


@dataclass(frozen=True)
class AttackConfig:
    """All attack budgets and schedules.

    Defaults follow the standard configuration used throughout the test
    suite: eps_x = 2/255, alpha = 0.5/255, T = 10, k = 10, eps_t = 1,
    A_x = A_t = 4, scale factors {0.5, 0.75, 1.0, 1.25, 1.5}.
    """

    eps_x: float = 2 / 255
    eps_t: int = 1
    alpha: float = 0.5 / 255
    T: int = 10
    k: int = 10
    A_x: int = 4
    A_t: int = 4
    scale_factors: tuple[float, ...] = (0.5, 0.75, 1.0, 1.25, 1.5)
    seed: int = 0
    # Optional knobs; None means "derive from the fields above".
    init_amplitude: float | None = None  # noise amplitude at init, defaults to eps_x
    block_grid: tuple[int, int] = (3, 3)

    def __post_init__(self):
        object.__setattr__(self, "scale_factors", tuple(float(f) for f in self.scale_factors))
        object.__setattr__(self, "block_grid", tuple(int(v) for v in self.block_grid))
        if self.eps_x < 0:
            raise ConfigurationError("eps_x must be >= 0")
        if self.T < 0:
            raise ConfigurationError("T must be >= 0")
        if self.T > 0 and self.alpha <= 0:
            raise ConfigurationError("alpha must be > 0 when T > 0")
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        if self.eps_t < 1:
            raise ConfigurationError("eps_t must be >= 1")
        if self.A_x < 0 or self.A_t < 0:
            raise ConfigurationError("A_x and A_t must be >= 0")
        if not self.scale_factors or any(f <= 0 for f in self.scale_factors):
            raise ConfigurationError("scale_factors must be non-empty and all > 0")
        if self.init_amplitude is not None and self.init_amplitude < 0:
            raise ConfigurationError("init_amplitude must be >= 0")
        if len(self.block_grid) != 2 or any(v < 1 for v in self.block_grid):
            raise ConfigurationError("block_grid must be two integers >= 1")


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFF_FFFF_FFFF_FFFF
    if isinstance(tag, str):
        digest = hashlib.sha256(tag.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big")
    raise TypeError(f"stream tags must be int or str, got {type(tag).__name__}")


def stable_token_hash(token: str) -> int:
    """64-bit hash of a token, stable across processes (unlike ``hash``)."""
    return _tag_to_int(token)


@dataclass
class RandomStream:
    """Deterministic random source: equal seeds yield bit-identical draws.

    Substreams are forked with :meth:`derive`; a stream and its children are
    independent and reproducible from the root seed plus the tag path, so
    per-sample streams can be handed to concurrent workers.
    """

    seed: int
    _key: tuple[int, ...] = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        self.seed = int(self.seed)
        if self._key is None:
            self._key = (self.seed,)
        self._rng = np.random.default_rng(np.random.SeedSequence(self._key))

    def derive(self, *tags) -> "RandomStream":
        """Fork a child stream identified by a path of int/str tags."""
        if not tags:
            raise ValueError("derive requires at least one tag")
        key = self._key + tuple(_tag_to_int(t) for t in tags)
        return RandomStream(self.seed, key)

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)."""
        return int(self._rng.integers(low, high))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        out = self._rng.uniform(low, high, size)
        return float(out) if size is None else out

    def normal(self, size=None):
        out = self._rng.standard_normal(size)
        return float(out) if size is None else out

    def choice(self, seq):
        if len(seq) == 0:
            raise ValueError("cannot choose from an empty sequence")
        return seq[self.integers(0, len(seq))]


def project_linf(x: np.ndarray, ref: np.ndarray, eps: float) -> np.ndarray:
    """Project ``x`` onto the l-inf ball of radius ``eps`` around ``ref``, then [0, 1].

    Guarantees ``abs(out - ref) <= eps`` under float64 subtraction, not just in
    exact arithmetic, so budget audits can compare exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ShapeMismatchError(f"shape mismatch: {x.shape} vs {ref.shape}")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    hi = ref + eps
    # ref+eps can round half an ulp past the budget; step back where it did.
    hi = np.where(hi - ref > eps, np.nextafter(hi, -np.inf), hi)
    lo = ref - eps
    lo = np.where(ref - lo > eps, np.nextafter(lo, np.inf), lo)
    np.minimum(hi, 1.0, out=hi)
    np.maximum(lo, 0.0, out=lo)
    return np.clip(x, lo, hi)


def words_changed(a: TextSample, b: TextSample) -> int:
    """Count positions where two equal-length texts differ."""
    if len(a) != len(b):
        raise ValueError(f"texts must have equal length, got {len(a)} and {len(b)}")
    return sum(1 for wa, wb in zip(a.words, b.words) if wa != wb)
