"""Deterministic synthetic multimodal dataset.

Each sample couples a token sequence with a small image grid. A sample
carries k triples; triple t places a multi-token entity pattern at a
free span of the text, draws a relation id, and paints an axis-aligned
rectangle into the grid with a channel signature derived from the
(entity pattern, relation) pair. The signature is the only bridge
between modalities, so recovering (span, relation, box) requires
reading both the text and the image rather than memorizing either.

Rectangles are cell-aligned and restricted to the menu of boxes whose
normalized (cx, cy, w, h) all lie in [0.5, 1): this is exactly the range
the box head can emit (sigmoid applied after ReLU), so every gold box is
representable by the network.

All randomness flows through SplitMix64 streams (see rng.py) split per
sample id, so a DatasetSpec reproduces byte-identical data on any
platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DataError
from .geometry import BoxCxCyWh
from .rng import Stream, fold

PAD_ID = 0
FILLER_IDS = range(1, 10)
ENTITY_TOKEN_BASE = 10
MAX_PATTERN_LEN = 3


@dataclass(frozen=True)
class Triple:
    """(entity span, relation, object box); spans are inclusive indices."""

    start: int
    end: int
    relation: int
    box: BoxCxCyWh


@dataclass(eq=False)
class SyntheticSample:
    id: str
    tokens: list[int]
    grid: np.ndarray  # (G, G, c_img) floats in [0, 1]
    gold: list[Triple]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SyntheticSample)
            and self.id == other.id
            and self.tokens == other.tokens
            and np.array_equal(self.grid, other.grid)
            and self.gold == other.gold
        )


@dataclass(frozen=True)
class DatasetSpec:
    seed: int = 0
    n_train: int = 2000
    n_test: int = 200
    L: int = 16
    G: int = 4
    c_img: int = 8
    R: int = 8
    max_triples: int = 6
    n_entity_patterns: int = 12
    sigma_noise: float = 0.02


def pattern_length(pattern: int) -> int:
    return 1 + pattern % MAX_PATTERN_LEN


def pattern_tokens(pattern: int) -> list[int]:
    base = ENTITY_TOKEN_BASE + MAX_PATTERN_LEN * pattern
    return [base + t for t in range(pattern_length(pattern))]


def required_vocab(spec: DatasetSpec) -> int:
    return ENTITY_TOKEN_BASE + MAX_PATTERN_LEN * spec.n_entity_patterns


def box_menu(G: int) -> list[tuple[int, int]]:
    """Cell-aligned (lo, hi) extents per axis with cx and w in [0.5, 1)."""
    menu = [
        (lo, hi)
        for lo in range(G)
        for hi in range(lo + 1, G + 1)
        if 2 * (hi - lo) >= G and hi - lo < G and G <= lo + hi < 2 * G
    ]
    return menu


def _level_codes(n: int, width: int, stream: Stream) -> np.ndarray:
    """n well-separated codes in [0.25, 1]^width: mixed-radix level
    patterns (the fewest levels per channel that fit n codes) in shuffled
    order, with small per-code jitter."""
    levels = 2
    while levels ** width < n:
        levels += 1
    values = np.linspace(0.25, 1.0, levels)
    patterns = stream.shuffled(list(range(levels ** width)))[:n]
    codes = np.empty((n, width), dtype=np.float64)
    for row, pattern in enumerate(patterns):
        for ch in range(width):
            codes[row, ch] = values[pattern % levels]
            pattern //= levels
    return codes + stream.uniform_array((n, width), -0.05, 0.05)


def _signature_table(spec: DatasetSpec) -> np.ndarray:
    """(n_entity_patterns, R, c_img) channel codes; half entity, half relation."""
    half = spec.c_img // 2
    ent_codes = _level_codes(spec.n_entity_patterns, half,
                             Stream(fold(spec.seed, "signature", "entity")))
    rel_codes = _level_codes(spec.R, spec.c_img - half,
                             Stream(fold(spec.seed, "signature", "relation")))
    table = np.zeros((spec.n_entity_patterns, spec.R, spec.c_img))
    table[:, :, :half] = ent_codes[:, None, :]
    table[:, :, half:] = rel_codes[None, :, :]
    return table


def validate_spec(spec: DatasetSpec) -> None:
    if spec.R < 1:
        raise CapacityError("need at least one relation type")
    if spec.max_triples < 1:
        raise CapacityError("max_triples must be >= 1")
    if spec.c_img < 2:
        raise CapacityError("need at least two image channels for signatures")
    if spec.n_entity_patterns < spec.max_triples:
        raise CapacityError(
            f"{spec.n_entity_patterns} entity patterns cannot supply "
            f"{spec.max_triples} distinct entities per sample")
    if not box_menu(spec.G):
        raise CapacityError(f"grid side {spec.G} leaves no representable boxes (need G >= 2)")
    shortest = sorted(pattern_length(p) for p in range(spec.n_entity_patterns))
    if sum(shortest[: spec.max_triples]) > spec.L:
        raise CapacityError(
            f"{spec.max_triples} entity spans cannot fit in {spec.L} tokens")


def _place_spans(stream: Stream, lengths: list[int], L: int) -> list[int] | None:
    """Non-overlapping random starts for the given span lengths, or None."""
    occupied = [False] * L
    starts: list[int] = []
    for n in lengths:
        candidates = [
            s for s in range(L - n + 1)
            if not any(occupied[s:s + n])
        ]
        if not candidates:
            return None
        s = candidates[stream.below(len(candidates))]
        starts.append(s)
        for j in range(s, s + n):
            occupied[j] = True
    return starts


def _generate_sample(spec: DatasetSpec, signatures: np.ndarray, split: str, index: int) -> SyntheticSample:
    stream = Stream(fold(spec.seed, "sample", split, index))
    menu = box_menu(spec.G)
    amp = min(1.0, 1.5 / spec.max_triples)

    k = 1 + stream.below(spec.max_triples)
    for _attempt in range(64):
        patterns = stream.shuffled(list(range(spec.n_entity_patterns)))[:k]
        lengths = [pattern_length(p) for p in patterns]
        if sum(lengths) > spec.L:
            continue
        starts = _place_spans(stream, lengths, spec.L)
        if starts is not None:
            break
    else:
        raise CapacityError(
            f"could not place {k} entity spans in {spec.L} tokens after 64 attempts")

    tokens = [FILLER_IDS.start + stream.below(len(FILLER_IDS)) for _ in range(spec.L)]
    grid = np.zeros((spec.G, spec.G, spec.c_img), dtype=np.float64)
    gold: list[Triple] = []
    for pattern, start in zip(patterns, starts):
        for offset, tok in enumerate(pattern_tokens(pattern)):
            tokens[start + offset] = tok
        relation = stream.below(spec.R)
        bx = menu[stream.below(len(menu))]
        by = menu[stream.below(len(menu))]
        grid[by[0]:by[1], bx[0]:bx[1], :] += amp * signatures[pattern, relation]
        box = BoxCxCyWh(
            cx=(bx[0] + bx[1]) / (2.0 * spec.G),
            cy=(by[0] + by[1]) / (2.0 * spec.G),
            w=(bx[1] - bx[0]) / spec.G,
            h=(by[1] - by[0]) / spec.G,
        )
        gold.append(Triple(start, start + pattern_length(pattern) - 1, relation, box))

    if spec.sigma_noise > 0.0:
        grid += stream.gaussian_array(grid.shape, spec.sigma_noise)
    np.clip(grid, 0.0, 1.0, out=grid)
    return SyntheticSample(id=f"{split}-{index:05d}", tokens=tokens, grid=grid, gold=gold)


def generate(spec: DatasetSpec) -> tuple[list[SyntheticSample], list[SyntheticSample]]:
    """Deterministically generate (train, test) sample lists."""
    validate_spec(spec)
    signatures = _signature_table(spec)
    train = [_generate_sample(spec, signatures, "train", i) for i in range(spec.n_train)]
    test = [_generate_sample(spec, signatures, "test", i) for i in range(spec.n_test)]
    return train, test


# ---------------------------------------------------------------------------
# On-disk format: one JSON object per line.


def sample_to_json(sample: SyntheticSample) -> str:
    return json.dumps({
        "id": sample.id,
        "tokens": sample.tokens,
        "grid": sample.grid.tolist(),
        "gold": [
            {"start": t.start, "end": t.end, "rel": t.relation,
             "box": [t.box.cx, t.box.cy, t.box.w, t.box.h]}
            for t in sample.gold
        ],
    })


def save_jsonl(samples: list[SyntheticSample], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sample in samples:
            f.write(sample_to_json(sample))
            f.write("\n")


def _validate_sample(sample: SyntheticSample) -> None:
    L = len(sample.tokens)
    if not sample.gold:
        raise DataError(f"sample {sample.id}: no gold triples")
    for t in sample.gold:
        if not (0 <= t.start <= t.end < L):
            raise DataError(f"sample {sample.id}: span ({t.start}, {t.end}) outside [0, {L})")
        if t.relation < 0:
            raise DataError(f"sample {sample.id}: negative relation id")
        for component in (t.box.cx, t.box.cy, t.box.w, t.box.h):
            if not (0.0 <= component <= 1.0):
                raise DataError(f"sample {sample.id}: box component {component} outside [0, 1]")


def load_jsonl(path: str) -> list[SyntheticSample]:
    samples: list[SyntheticSample] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                sample = SyntheticSample(
                    id=raw["id"],
                    tokens=[int(x) for x in raw["tokens"]],
                    grid=np.asarray(raw["grid"], dtype=np.float64),
                    gold=[
                        Triple(int(g["start"]), int(g["end"]), int(g["rel"]),
                               BoxCxCyWh(*[float(v) for v in g["box"]]))
                        for g in raw["gold"]
                    ],
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed sample record ({exc})") from exc
            if sample.grid.ndim != 3:
                raise DataError(f"{path}:{lineno}: grid must be G x G x c, got shape {sample.grid.shape}")
            _validate_sample(sample)
            samples.append(sample)
    return samples
