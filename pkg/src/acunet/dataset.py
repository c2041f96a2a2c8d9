"""Annotated score pages, target-mask rasterisation and augmentation.

A piece lives in a directory::

    <piece>/page.png    grayscale page at original resolution, black ink on white
    <piece>/audio.wav   mono, 22.05 kHz
    <piece>/notes.csv   onset_sec,pitch_midi,duration_sec,x_px,y_staff_mid_px
    <piece>/split       train | valid | test

Note coordinates are given in the downscaled page frame. Inside the package
pages are stored as ink maps (ink = 1, background = 0).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import cached_property
from itertools import groupby
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from . import audio
from .audio import AudioSignal, Spectrogram
from .errors import LoadError, MissingFileError

logger = logging.getLogger(__name__)

DOWNSCALE = 3
MASK_HEIGHT = 20
MAX_SHIFT = 10
SPLITS = ("train", "valid", "test")
CSV_HEADER = ["onset_sec", "pitch_midi", "duration_sec", "x_px", "y_staff_mid_px"]


@dataclass(frozen=True)
class NoteAnnotation:
    onset: float
    pitch: int
    duration: float
    x: int
    y_staff_mid: int

    @property
    def onset_frame(self) -> int:
        return frame_index(self.onset)

    @property
    def duration_frames(self) -> int:
        return frame_index(self.duration)

    @property
    def symbol(self) -> tuple[int, int]:
        """Pitch plus duration on the frame grid; the unit of phrase matching."""
        return self.pitch, self.duration_frames


@dataclass
class ScorePage:
    pixels: np.ndarray  # downscaled ink map in [0, 1]
    original_shape: tuple[int, int]
    original: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass
class Piece:
    name: str
    page: ScorePage
    signal: AudioSignal
    notes: list[NoteAnnotation]
    split: str = "train"

    @cached_property
    def spectrogram(self) -> Spectrogram:
        return audio.spectrogram(self.signal)

    @property
    def onset_frames(self) -> list[int]:
        return [n.onset_frame for n in self.notes]


def frame_index(seconds: float) -> int:
    return int(np.floor(seconds * audio.FPS + 0.5))


def downscale_page(pixels: np.ndarray, factor: int = DOWNSCALE) -> ScorePage:
    """Block-mean downsampling; trailing rows/columns that do not fill a block are dropped."""
    if factor < 1:
        raise ValueError(f"downscale factor must be >= 1, got {factor}")
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w = pixels.shape
    hh, ww = h // factor, w // factor
    blocks = pixels[: hh * factor, : ww * factor].reshape(hh, factor, ww, factor)
    return ScorePage(blocks.mean(axis=(1, 3)), (h, w), pixels)


# -- loading and saving -------------------------------------------------------


def _require(path: Path) -> Path:
    if not path.is_file():
        raise MissingFileError(f"missing file: {path}")
    return path


def read_page_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        gray = np.asarray(img.convert("L"), dtype=np.float64)
    return 1.0 - gray / 255.0


def write_page_png(path: str | Path, ink: np.ndarray) -> None:
    gray = np.round(255.0 * (1.0 - np.clip(ink, 0.0, 1.0))).astype(np.uint8)
    Image.fromarray(gray, mode="L").save(path)


def write_mask_png(path: str | Path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(path)


def read_notes_csv(path: Path, page_shape: tuple[int, int]) -> list[NoteAnnotation]:
    h, w = page_shape
    notes = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != CSV_HEADER:
            raise LoadError(f"{path}: line 1: expected header {','.join(CSV_HEADER)}")
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise LoadError(f"{path}: line {line}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                onset, pitch, dur, x, y = (float(c) for c in row)
            except ValueError as exc:
                raise LoadError(f"{path}: line {line}: {exc}") from None
            if onset < 0 or dur < 0:
                raise LoadError(f"{path}: line {line}: negative onset or duration")
            if not 0 <= x < w:
                raise LoadError(f"{path}: line {line}: x_px={x:g} outside page width {w}")
            if not 0 <= y < h:
                raise LoadError(f"{path}: line {line}: y_staff_mid_px={y:g} outside page height {h}")
            notes.append(NoteAnnotation(onset, int(round(pitch)), dur, int(round(x)), int(round(y))))
    if not notes:
        raise LoadError(f"{path}: no notes")
    notes.sort(key=lambda n: n.onset)
    return notes


def load_piece(directory: str | Path, factor: int = DOWNSCALE) -> Piece:
    directory = Path(directory)
    page = downscale_page(read_page_png(_require(directory / "page.png")), factor)
    wav = _require(directory / "audio.wav")
    try:
        signal = audio.read_wav(wav)
    except ValueError as exc:
        raise LoadError(str(exc)) from None
    notes = read_notes_csv(_require(directory / "notes.csv"), page.shape)
    split = _require(directory / "split").read_text().strip()
    if split not in SPLITS:
        raise LoadError(f"{directory / 'split'}: unknown split {split!r}")
    n_frames = len(audio.frame_centers(len(signal.samples)))
    for n in notes:
        if n.onset_frame >= n_frames:
            raise LoadError(f"{directory}: note at {n.onset:g}s lies beyond the audio ({n_frames} frames)")
    return Piece(directory.name, page, signal, notes, split)


def save_piece(piece: Piece, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    original = piece.page.original
    if original is None:
        original = np.kron(piece.page.pixels, np.ones((DOWNSCALE, DOWNSCALE)))
    write_page_png(directory / "page.png", original)
    audio.write_wav(directory / "audio.wav", piece.signal)
    with open(directory / "notes.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for n in piece.notes:
            writer.writerow([repr(n.onset), n.pitch, repr(n.duration), n.x, n.y_staff_mid])
    (directory / "split").write_text(piece.split + "\n")
    return directory


def load_corpus(root: str | Path, split: str | None = None) -> list[Piece]:
    """Load every piece directory under ``root``, optionally filtered by split."""
    root = Path(root)
    if not root.is_dir():
        raise MissingFileError(f"dataset directory not found: {root}")
    pieces = [load_piece(d) for d in sorted(root.iterdir()) if d.is_dir()]
    if split is not None:
        pieces = [p for p in pieces if p.split == split]
    logger.info("loaded %d pieces from %s", len(pieces), root)
    return pieces


def save_corpus(pieces: Iterable[Piece], root: str | Path) -> None:
    for piece in pieces:
        save_piece(piece, Path(root) / piece.name)


# -- targets ------------------------------------------------------------------


def notes_in_excerpt(piece: Piece, end_frame: int) -> list[NoteAnnotation]:
    lo = end_frame - audio.EXCERPT_FRAMES + 1
    return [n for n in piece.notes if lo <= n.onset_frame <= end_frame]


def find_matching_occurrences(
    query: Sequence[tuple[int, int]], piece: Piece
) -> list[tuple[int, int]]:
    """All ``(start, stop)`` note-index ranges whose symbols equal ``query``.

    Symbols are ``(pitch, duration_frames)`` pairs; overlapping matches are
    all reported.
    """
    query = list(query)
    if not query:
        raise ValueError("query must contain at least one note")
    symbols = [n.symbol for n in piece.notes]
    m = len(query)
    return [(i, i + m) for i in range(len(symbols) - m + 1) if symbols[i : i + m] == query]


def rasterize_occurrence(mask: np.ndarray, notes: Sequence[NoteAnnotation]) -> None:
    """Fill one rectangle per staff segment of ``notes`` into ``mask`` in place."""
    h, w = mask.shape
    half = MASK_HEIGHT // 2
    for y, seg in groupby(notes, key=lambda n: n.y_staff_mid):
        xs = [n.x for n in seg]
        x0, x1 = max(min(xs), 0), min(max(xs) + 1, w)
        y0, y1 = max(y - half, 0), min(y + half, h)
        mask[y0:y1, x0:x1] = 1


def build_target_mask(piece: Piece, end_frame: int) -> np.ndarray:
    """Binary (uint8) mask marking every page region that matches the excerpt."""
    mask = np.zeros(piece.page.shape, dtype=np.uint8)
    heard = notes_in_excerpt(piece, end_frame)
    if not heard:
        return mask
    for start, stop in find_matching_occurrences([n.symbol for n in heard], piece):
        rasterize_occurrence(mask, piece.notes[start:stop])
    return mask


def _shift(arr: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(arr)
    h, w = arr.shape
    src_y = slice(max(-dy, 0), h - max(dy, 0))
    dst_y = slice(max(dy, 0), h - max(-dy, 0))
    src_x = slice(max(-dx, 0), w - max(dx, 0))
    dst_x = slice(max(dx, 0), w - max(-dx, 0))
    out[dst_y, dst_x] = arr[src_y, src_x]
    return out


def augment_shift(
    page: np.ndarray, mask: np.ndarray, dx: int, dy: int, max_shift: int = MAX_SHIFT
) -> tuple[np.ndarray, np.ndarray]:
    """Translate page and mask by (dx, dy) pixels, filling with background."""
    if abs(dx) > max_shift or abs(dy) > max_shift:
        raise ValueError(f"shift ({dx}, {dy}) exceeds the maximum of {max_shift} px")
    h, w = page.shape
    if abs(dx) >= w or abs(dy) >= h:
        return np.zeros_like(page), np.zeros_like(mask)
    return _shift(page, dx, dy), _shift(mask, dx, dy)


@dataclass
class Sample:
    page: np.ndarray  # (H, W) ink map
    excerpt: np.ndarray  # (78, 40)
    mask: np.ndarray  # (H, W) uint8
    piece: str = ""
    end_frame: int = 0


def make_sample(piece: Piece, end_frame: int, dx: int = 0, dy: int = 0, max_shift: int = MAX_SHIFT) -> Sample:
    page = piece.page.pixels
    mask = build_target_mask(piece, end_frame)
    if dx or dy:
        page, mask = augment_shift(page, mask, dx, dy, max_shift)
    spec = audio.excerpt(piece.spectrogram, end_frame).values
    return Sample(page, spec, mask, piece.name, end_frame)


def stack_samples(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch arrays ``(pages, excerpts, masks)`` of shapes (B,H,W), (B,78,40), (B,H,W)."""
    pages = np.stack([s.page for s in samples])
    excerpts = np.stack([s.excerpt for s in samples])
    masks = np.stack([s.mask for s in samples]).astype(np.float64)
    return pages, excerpts, masks
