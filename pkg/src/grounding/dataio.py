"""Grounding samples: RLE codec, PPM/PGM files, the synthetic generator and dataset directories.

A dataset directory holds ``images/NNNNNN.ppm`` plus ``annotations.jsonl``; each
JSON line is ``{"image": ..., "tokens": [...], "phrases": [{"span": [s, e],
"rle": [...], "thing": bool, "plural": bool}, ...]}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

# Fixed narrative vocabulary (64 entries); token id = list index.
VOCABULARY: tuple[str, ...] = (
    "<unk>", ".", ",", "a", "an", "the", "and", "some", "this", "picture",
    "shows", "there", "is", "are", "on", "of", "with", "in", "near", "image",
    # colours
    "red", "green", "blue", "yellow", "cyan", "magenta", "orange", "purple",
    # shapes, singular then plural
    "disk", "rectangle", "triangle", "disks", "rectangles", "triangles",
    # category words
    "round", "boxy", "pointy", "object", "shape", "thing",
    # stuff
    "background", "ground", "texture",
    # filler
    "left", "right", "top", "bottom", "center", "corner", "small", "large",
    "two", "three", "four", "several", "also", "next", "to", "above",
    "below", "bright", "dark", "plain", "scene",
)
assert len(VOCABULARY) == 64 and len(set(VOCABULARY)) == 64
TOKEN_ID = {tok: i for i, tok in enumerate(VOCABULARY)}

COLOURS: dict[str, tuple[int, int, int]] = {
    "red": (220, 40, 40), "green": (40, 190, 60), "blue": (40, 70, 220), "yellow": (230, 220, 50),
    "cyan": (50, 210, 220), "magenta": (210, 50, 200), "orange": (240, 140, 30), "purple": (120, 50, 170),
}
SHAPES = ("disk", "rectangle", "triangle")
PLURAL = {"disk": "disks", "rectangle": "rectangles", "triangle": "triangles"}
CATEGORY = {"disk": ("round", "object"), "rectangle": ("boxy", "object"), "triangle": ("pointy", "object")}


class DatasetError(ValueError):
    """A malformed dataset file; the message names the file and record index."""


@dataclass
class PhraseAnnotation:
    span: tuple[int, int]
    mask: np.ndarray          # (H, W) uint8 in {0, 1}
    is_thing: bool
    is_plural: bool

    def __eq__(self, other):
        return (isinstance(other, PhraseAnnotation) and tuple(self.span) == tuple(other.span)
                and self.is_thing == other.is_thing and self.is_plural == other.is_plural
                and np.array_equal(self.mask, other.mask))


@dataclass
class GroundingSample:
    image: np.ndarray                         # (H, W, 3) float64 in [0, 1]
    tokens: list[str]
    phrases: list[PhraseAnnotation] = field(default_factory=list)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def spans(self) -> list[tuple[int, int]]:
        return [p.span for p in self.phrases]

    def gt_masks(self) -> np.ndarray:
        return np.stack([p.mask for p in self.phrases]).astype(np.float64)

    def validate(self) -> None:
        h, w = self.image.shape[:2]
        if h % 32 or w % 32:
            raise ValueError(f"image extents must be multiples of 32, got {h}x{w}")
        for i, p in enumerate(self.phrases):
            s, e = p.span
            if not 0 <= s < e <= len(self.tokens):
                raise ValueError(f"phrase {i}: span {p.span} outside 0..{len(self.tokens)}")
            if p.mask.shape != (h, w):
                raise ValueError(f"phrase {i}: mask shape {p.mask.shape} != {(h, w)}")

    def __eq__(self, other):
        return (isinstance(other, GroundingSample) and np.array_equal(self.image, other.image)
                and self.tokens == other.tokens and self.phrases == other.phrases)


# -- run-length codec -------------------------------------------------------

def rle_encode(mask) -> list[int]:
    """Alternating run lengths of a row-major binary sequence, zeros first."""
    flat = np.asarray(mask).reshape(-1)
    if flat.size and not np.isin(flat, (0, 1)).all():
        raise ValueError("rle_encode expects values in {0, 1}")
    flat = flat.astype(np.int8)
    if flat.size == 0:
        return [0]
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def rle_decode(runs: Sequence[int], length: int) -> np.ndarray:
    runs = [int(r) for r in runs]
    if any(r < 0 for r in runs):
        raise ValueError("negative run length")
    if sum(runs) != length:
        raise ValueError(f"run lengths sum to {sum(runs)}, expected {length}")
    values = np.arange(len(runs)) % 2
    return np.repeat(values, runs).astype(np.uint8)


# -- netpbm -----------------------------------------------------------------

def _to_bytes(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    h, w, _ = image.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + _to_bytes(image).tobytes())


def write_pgm(path, gray: np.ndarray) -> None:
    h, w = gray.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + _to_bytes(gray).tobytes())


def _read_netpbm(path, magic: bytes, channels: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated header")
        fields.append(raw[start:pos])
    pos += 1
    if fields[0] != magic or fields[3] != b"255":
        raise ValueError(f"{path}: expected 8-bit {magic.decode()} file")
    w, h = int(fields[1]), int(fields[2])
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * channels, offset=pos)
    shape = (h, w, channels) if channels > 1 else (h, w)
    return data.reshape(shape).astype(np.float64) / 255.0


def read_ppm(path) -> np.ndarray:
    return _read_netpbm(path, b"P6", 3)


def read_pgm(path) -> np.ndarray:
    return _read_netpbm(path, b"P5", 1)


# -- synthetic generator ----------------------------------------------------

@dataclass
class SyntheticConfig:
    image_size: int = 64
    n_samples: int = 20
    max_shapes: int = 3

    def validate(self) -> None:
        if self.image_size < 32 or self.image_size % 32:
            raise ValueError(f"image_size must be a positive multiple of 32, got {self.image_size}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.max_shapes < 1:
            raise ValueError("max_shapes must be >= 1")


BLOCK = 32
DISK_RADIUS = 10.0


def _shape_mask(kind: str, variant: int, y0: int, x0: int, size: int) -> np.ndarray:
    """Instance mask inside the 32-px block at (y0, x0); edges follow the 16-px grid lattice."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    ly, lx = yy - y0, xx - x0
    inside = (ly >= 0) & (ly < BLOCK) & (lx >= 0) & (lx < BLOCK)
    if kind == "disk":
        # centred on the block's 16-px cell nearest the image centre, clipped to the block
        cy = y0 + (24 if y0 + BLOCK <= size / 2 else 8)
        cx = x0 + (24 if x0 + BLOCK <= size / 2 else 8)
        return (inside & ((yy - cy) ** 2 + (xx - cx) ** 2 <= DISK_RADIUS ** 2)).astype(np.uint8)
    if kind == "rectangle":
        half = BLOCK // 2
        region = [(ly < half), (ly >= half), (lx < half), (lx >= half)][variant]
        return (inside & region).astype(np.uint8)
    if kind == "triangle":
        # right angle at one block corner, hypotenuse on the block diagonal
        u = lx if variant in (0, 2) else BLOCK - lx
        v = ly if variant in (0, 1) else BLOCK - ly
        return (inside & (u + v < BLOCK)).astype(np.uint8)
    raise ValueError(kind)


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    fy, fx, phase = rng.uniform(1, 4), rng.uniform(1, 4), rng.uniform(0, 2 * np.pi)
    base = rng.uniform(0.35, 0.55)
    texture = 0.06 * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    grain = rng.normal(0.0, 0.02, (size, size, 3))
    return np.clip(base + texture[..., None] + grain, 0.0, 1.0)


def _one_sample(rng: np.random.Generator, cfg: SyntheticConfig) -> GroundingSample:
    size = cfg.image_size
    per_side = size // BLOCK
    blocks = [(by * BLOCK, bx * BLOCK) for by in range(per_side) for bx in range(per_side)]
    n_shapes = int(rng.integers(1, min(cfg.max_shapes, len(blocks)) + 1))
    chosen = sorted(rng.choice(len(blocks), size=n_shapes, replace=False).tolist())
    colours = rng.choice(len(COLOURS), size=n_shapes, replace=False).tolist()
    colour_names = list(COLOURS)

    image = _background(rng, size)
    instances = []
    for block_idx, colour_idx in zip(chosen, colours):
        kind = SHAPES[int(rng.integers(len(SHAPES)))]
        variant = int(rng.integers(4))
        y0, x0 = blocks[block_idx]
        mask = _shape_mask(kind, variant, y0, x0, size)
        colour = np.array(COLOURS[colour_names[colour_idx]]) / 255.0
        shade = colour + rng.normal(0.0, 0.02, (size, size, 3))
        image = np.where(mask[..., None].astype(bool), np.clip(shade, 0, 1), image)
        instances.append((colour_names[colour_idx], kind, mask))
    image = np.rint(image * 255.0) / 255.0

    tokens = ["this", "picture", "shows"]
    phrases: list[PhraseAnnotation] = []

    def add(words, mask, thing, plural, det):
        tokens.append(det)
        start = len(tokens)
        tokens.extend(words)
        phrases.append(PhraseAnnotation((start, len(tokens)), mask.astype(np.uint8), thing, plural))
        tokens.append(",")

    for colour, kind, mask in instances:
        add([colour, kind], mask, True, False, "a")
    for kind in SHAPES:
        members = [m for _, k, m in instances if k == kind]
        if len(members) == 1:
            add(list(CATEGORY[kind]), members[0], True, False, "the")
        elif len(members) > 1:
            add([PLURAL[kind]], np.bitwise_or.reduce(members), True, True, "some")
    union = np.bitwise_or.reduce([m for _, _, m in instances])
    add(["background"], 1 - union, False, False, "the")
    tokens[-1] = "."
    return GroundingSample(image=image, tokens=tokens, phrases=phrases)


def generate_synthetic(seed: int, config: SyntheticConfig | None = None) -> list[GroundingSample]:
    """Deterministic list of samples; sample i depends only on (seed, i, config)."""
    cfg = config or SyntheticConfig()
    cfg.validate()
    return [_one_sample(np.random.default_rng([seed, i]), cfg) for i in range(cfg.n_samples)]


# -- dataset directories ----------------------------------------------------

ANNOTATIONS = "annotations.jsonl"


def save_dataset(samples: Sequence[GroundingSample], path) -> None:
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        rel = f"images/{i:06d}.ppm"
        write_ppm(root / rel, s.image)
        record = {
            "image": rel,
            "tokens": list(s.tokens),
            "phrases": [{"span": [int(p.span[0]), int(p.span[1])], "rle": rle_encode(p.mask),
                         "thing": bool(p.is_thing), "plural": bool(p.is_plural)} for p in s.phrases],
        }
        lines.append(json.dumps(record))
    (root / ANNOTATIONS).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> list[GroundingSample]:
    root = Path(path)
    ann = root / ANNOTATIONS
    if not ann.is_file():
        raise DatasetError(f"{ann}: annotation file not found")
    samples = []
    referenced = set()
    for idx, line in enumerate(l for l in ann.read_text().splitlines() if l.strip()):
        where = f"{ann.name} record {idx}"
        try:
            rec = json.loads(line)
            image_rel = rec["image"]
            tokens = [str(t) for t in rec["tokens"]]
            raw_phrases = rec["phrases"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetError(f"{where}: malformed annotation line ({exc})") from None
        image_path = root / image_rel
        if not image_path.is_file():
            raise DatasetError(f"{where}: image file {image_rel} not found")
        referenced.add(Path(image_rel).name)
        try:
            image = read_ppm(image_path)
        except ValueError as exc:
            raise DatasetError(f"{where}: {exc}") from None
        h, w = image.shape[:2]
        phrases = []
        for j, p in enumerate(raw_phrases):
            try:
                span = (int(p["span"][0]), int(p["span"][1]))
                mask = rle_decode(p["rle"], h * w).reshape(h, w)
                phrases.append(PhraseAnnotation(span, mask, bool(p["thing"]), bool(p["plural"])))
            except (KeyError, TypeError, IndexError) as exc:
                raise DatasetError(f"{where}: malformed phrase {j} ({exc})") from None
            except ValueError as exc:
                raise DatasetError(f"{where}: phrase {j} RLE length mismatch for {image_rel} ({exc})") from None
        sample = GroundingSample(image=image, tokens=tokens, phrases=phrases)
        try:
            sample.validate()
        except ValueError as exc:
            raise DatasetError(f"{where}: {exc}") from None
        samples.append(sample)
    on_disk = {p.name for p in (root / "images").glob("*.ppm")} if (root / "images").is_dir() else set()
    if on_disk != referenced:
        raise DatasetError(f"{ann.name}: {len(samples)} records but {len(on_disk)} image files in images/ "
                           f"(unreferenced: {sorted(on_disk - referenced)[:3]})")
    return samples
