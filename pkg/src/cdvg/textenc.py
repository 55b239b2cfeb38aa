"""Frozen text branch: hash-seeded bag-of-tokens embedder, lexicons, negative sampling.

The embedder has no trainable state. Every token maps to a fixed Gaussian
vector drawn from a generator seeded by a 64-bit BLAKE2b digest of the token,
so embeddings are reproducible across processes and platforms.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractViolation

EMBED_DIM = 64

# 3x3 thirds grid, row-major from the top-left cell
DIRECTION_GRID: tuple[tuple[str, str, str], ...] = (
    ("upper left", "top", "upper right"),
    ("left", "center", "right"),
    ("lower left", "bottom", "lower right"),
)
DIRECTION_CELL = {name: (r, c) for r, row in enumerate(DIRECTION_GRID) for c, name in enumerate(row)}

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _token_vector(token: str, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
    return np.random.default_rng(seed).standard_normal(dim)


def encode_text(text: str, dim: int = EMBED_DIM) -> np.ndarray:
    """Unit-norm embedding of ``text``; token order is ignored."""
    tokens = tokenize(text)
    if not tokens:
        raise ContractViolation(f"text has no tokens: {text!r}")
    vec = np.mean([_token_vector(t, dim) for t in tokens], axis=0)
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise ContractViolation(f"degenerate embedding for {text!r}")
    return vec / norm


def encode_texts(texts: Sequence[str], dim: int = EMBED_DIM) -> np.ndarray:
    return np.stack([encode_text(t, dim) for t in texts]) if texts else np.zeros((0, dim))


# -- lexicons ----------------------------------------------------------------------------
def _read_pairs(text: str) -> list[tuple[str, ...]]:
    rows = []
    for line in text.splitlines():
        line = line.strip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        rows.append(tuple(part.strip() for part in line.split("\t") if part.strip()))
    return rows


def _phrase_regex(phrases: Sequence[str]) -> re.Pattern:
    alts = sorted(phrases, key=len, reverse=True)
    body = "|".join(r"\s+".join(map(re.escape, p.split())) for p in alts)
    return re.compile(rf"(?<![a-z0-9])({body})(?![a-z0-9])", re.IGNORECASE)


@dataclass(frozen=True)
class DirectionLexicon:
    """Direction phrases and their mirror partners (self-mirrored phrases never swap)."""

    mirror: dict[str, str]
    pattern: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for a, b in self.mirror.items():
            if self.mirror.get(b) != a:
                raise ContractViolation(f"mirror table is not an involution at {a!r}")
        object.__setattr__(self, "pattern", _phrase_regex(list(self.mirror)))

    @classmethod
    def parse(cls, text: str) -> "DirectionLexicon":
        mirror: dict[str, str] = {}
        for row in _read_pairs(text):
            if len(row) == 1:
                mirror[row[0]] = row[0]
            elif len(row) == 2:
                mirror[row[0]], mirror[row[1]] = row[1], row[0]
            else:
                raise ContractViolation(f"bad lexicon line: {row!r}")
        return cls(mirror)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "DirectionLexicon":
        if path is None:
            return cls.parse(resources.files("cdvg.lexicons").joinpath("directions.txt").read_text("utf-8"))
        return cls.parse(Path(path).read_text("utf-8"))

    @property
    def phrases(self) -> tuple[str, ...]:
        return tuple(self.mirror)

    def find(self, text: str) -> list[tuple[int, int, str]]:
        """All (start, end, canonical phrase) occurrences, left to right."""
        out = []
        for m in self.pattern.finditer(text):
            canon = " ".join(m.group(1).lower().split())
            out.append((m.start(1), m.end(1), canon))
        return out


@dataclass(frozen=True)
class ModalityLexicon:
    """The two modality words, in their canonical surface forms."""

    optical: str = "optical"
    sar: str = "SAR"

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ModalityLexicon":
        if path is None:
            text = resources.files("cdvg.lexicons").joinpath("modalities.txt").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        rows = _read_pairs(text)
        if len(rows) != 1 or len(rows[0]) != 2:
            raise ContractViolation("modality lexicon needs exactly one tab-separated pair")
        return cls(*rows[0])

    def opposite(self, word: str) -> str:
        return self.sar if word.lower() == self.optical.lower() else self.optical


DIRECTIONS = DirectionLexicon.load()
MODALITIES = ModalityLexicon.load()


def make_orientation_negative(text: str, rng: np.random.Generator,
                              lexicon: DirectionLexicon = DIRECTIONS) -> str | None:
    """Replace one direction phrase by its mirror; ``None`` if nothing can be swapped."""
    hits = [h for h in lexicon.find(text) if lexicon.mirror[h[2]] != h[2]]
    if not hits:
        return None
    start, end, phrase = hits[int(rng.integers(len(hits)))] if len(hits) > 1 else hits[0]
    return text[:start] + lexicon.mirror[phrase] + text[end:]


def make_modality_negative(text: str, lexicon: ModalityLexicon = MODALITIES) -> str | None:
    """Swap every modality word to the other modality; ``None`` if none occurs."""
    pat = _phrase_regex([lexicon.optical, lexicon.sar])
    if not pat.search(text):
        return None
    return pat.sub(lambda m: lexicon.opposite(m.group(1)), text)


def direction_from_center(cx: float, cy: float) -> str:
    """Thirds partition of the unit square; boundary values go to the lower-index cell."""
    if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
        raise ContractViolation(f"normalized center ({cx}, {cy}) outside [0, 1]")
    return DIRECTION_GRID[third_index(cy)][third_index(cx)]


def third_index(u: float) -> int:
    if 3.0 * u <= 1.0:
        return 0
    if 3.0 * u <= 2.0:
        return 1
    return 2


# -- batch text sampling -----------------------------------------------------------------
@dataclass(frozen=True)
class NegativeSamplingConfig:
    adversarial_ratio: float = 0.5
    random_negatives: tuple[int, int] = (0, 10)
    capacity: int = 20
    seed: int = 0


def adversarial_variant(text: str, rng: np.random.Generator) -> str | None:
    """Orientation swap when possible, otherwise a modality swap."""
    return make_orientation_negative(text, rng) or make_modality_negative(text)


def sample_batch_texts(positives: Sequence[str], global_pool: Sequence[str],
                       config: NegativeSamplingConfig, rng: np.random.Generator) -> tuple[list[str], np.ndarray]:
    """Build the fixed-size text list for one batch.

    Order: positives, adversarial variants, random negatives, padding. Returns
    the list and a boolean mask marking the positives.
    """
    pos = list(dict.fromkeys(positives))
    if not pos:
        raise ContractViolation("at least one positive text is required")
    if len(pos) > config.capacity:
        raise ContractViolation(f"{len(pos)} positives exceed text capacity {config.capacity}")
    texts = list(pos)
    used = set(texts)

    n_adv = min(math.ceil(config.adversarial_ratio * len(pos)), config.capacity - len(texts))
    if n_adv > 0:
        for i in rng.permutation(len(pos)):
            if n_adv == 0:
                break
            for variant in (make_orientation_negative(pos[i], rng), make_modality_negative(pos[i])):
                if variant is not None and variant not in used:
                    texts.append(variant)
                    used.add(variant)
                    n_adv -= 1
                    break

    pool = [t for t in dict.fromkeys(global_pool) if t not in used]
    order = rng.permutation(len(pool))
    lo, hi = config.random_negatives
    n_rand = min(int(rng.integers(lo, hi + 1)), config.capacity - len(texts))
    need = config.capacity - len(texts)
    if need > len(pool):
        raise ContractViolation(f"global pool has {len(pool)} unused texts, {need} needed for padding")
    # random negatives first, then padding; both come from the shuffled pool
    texts.extend(pool[j] for j in order[:n_rand])
    texts.extend(pool[j] for j in order[n_rand:need])
    mask = np.zeros(len(texts), dtype=bool)
    mask[: len(pos)] = True
    return texts, mask
