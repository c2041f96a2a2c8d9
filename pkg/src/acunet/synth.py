"""Deterministic synthetic score pages with aligned audio.

Pages are rendered at three times the network resolution and block-mean
downscaled, mirroring the real pipeline. Each staff is a five-line system;
a note of pitch ``p`` is drawn as a filled notehead at the vertical position
that pitch occupies on a treble staff. Audio is a sum of decaying sines at
each note's fundamental (plus two weak harmonics). Pitch sequences are built
partly from a few repeated motifs so that excerpts often match several page
positions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import audio
from .audio import AudioSignal
from .dataset import DOWNSCALE, NoteAnnotation, Piece, downscale_page

# treble-staff position (half line-gaps above the middle line) of natural pitches
STAFF_STEP = {64: -4, 65: -3, 67: -2, 69: -1, 71: 0, 72: 1, 74: 2, 76: 3, 77: 4}


@dataclass
class SynthConfig:
    pieces: int = 48
    staves_per_page: int = 2
    notes_per_staff: int = 9
    notes_per_piece: int | None = None  # default: fill every staff
    pitches: tuple[int, ...] = (64, 67, 71, 74, 77)
    durations: tuple[float, ...] = (0.5,)
    n_motifs: int = 2
    motif_length: int = 4
    motif_prob: float = 0.5
    split_weights: tuple[int, int, int] = (4, 1, 1)
    line_gap: int = 4  # downscaled px between staff lines
    staff_spacing: int = 36
    top_margin: int = 20
    first_note_x: int = 16
    note_spacing: int = 12
    right_margin: int = 8
    lead_in: float = 0.25
    tail: float = 1.0

    def __post_init__(self) -> None:
        for name in ("pieces", "staves_per_page", "notes_per_staff", "n_motifs", "motif_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.notes_per_piece is not None and not 1 <= self.notes_per_piece <= self.capacity:
            raise ValueError(f"notes_per_piece must lie in [1, {self.capacity}]")
        unknown = set(self.pitches) - set(STAFF_STEP)
        if unknown:
            raise ValueError(f"pitches {sorted(unknown)} have no staff position")

    @property
    def capacity(self) -> int:
        return self.staves_per_page * self.notes_per_staff

    @property
    def page_shape(self) -> tuple[int, int]:
        h = self.top_margin + self.staff_spacing * (self.staves_per_page - 1) + self.top_margin + 4
        w = self.first_note_x + self.note_spacing * (self.notes_per_staff - 1) + self.right_margin + 8
        return h, w

    def staff_middle(self, staff: int) -> int:
        return self.top_margin + self.staff_spacing * staff

    def split_counts(self) -> tuple[int, int, int]:
        total = sum(self.split_weights)
        n_valid = int(round(self.pieces * self.split_weights[1] / total))
        n_test = int(round(self.pieces * self.split_weights[2] / total))
        return self.pieces - n_valid - n_test, n_valid, n_test

    def to_dict(self) -> dict:
        return asdict(self)


def _pitch_sequence(rng: np.random.Generator, cfg: SynthConfig, n: int) -> list[tuple[int, float]]:
    alphabet = [(p, d) for p in cfg.pitches for d in cfg.durations]

    def draw():
        return alphabet[int(rng.integers(len(alphabet)))]

    motifs = [[draw() for _ in range(cfg.motif_length)] for _ in range(cfg.n_motifs)]
    seq: list[tuple[int, float]] = []
    while len(seq) < n:
        if rng.random() < cfg.motif_prob:
            seq.extend(motifs[int(rng.integers(len(motifs)))])
        else:
            seq.append(draw())
    return seq[:n]


def _render_page(cfg: SynthConfig, notes: list[NoteAnnotation]) -> np.ndarray:
    f = DOWNSCALE
    h, w = cfg.page_shape
    canvas = np.zeros((h * f, w * f))
    yy, xx = np.mgrid[0 : h * f, 0 : w * f]
    half_gap = cfg.line_gap * f / 2
    for staff in range(cfg.staves_per_page):
        mid = cfg.staff_middle(staff) * f + f // 2
        for k in (-2, -1, 0, 1, 2):
            y = int(round(mid + k * cfg.line_gap * f))
            canvas[y - 1 : y + 1, 4 * f : (w - 4) * f] = 1.0
        # clef-like block and closing bar line
        top, bottom = int(mid - 2.5 * cfg.line_gap * f), int(mid + 2.5 * cfg.line_gap * f)
        canvas[top:bottom, 5 * f : 8 * f] = 1.0
        canvas[int(mid - 2 * cfg.line_gap * f) : int(mid + 2 * cfg.line_gap * f) + 1, (w - 5) * f : (w - 5) * f + 2] = 1.0
    for n in notes:
        cy = n.y_staff_mid * f + f // 2 - STAFF_STEP[n.pitch] * half_gap
        cx = n.x * f + f // 2
        rx, ry = 1.25 * half_gap, 0.9 * half_gap
        canvas[((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0] = 1.0
        # stem: up for notes below the middle line, down otherwise
        length = int(3.5 * cfg.line_gap * f)
        if STAFF_STEP[n.pitch] < 0:
            x0 = int(cx + rx) - 2
            canvas[int(cy) - length : int(cy), x0 : x0 + 2] = 1.0
        else:
            x0 = int(cx - rx)
            canvas[int(cy) : int(cy) + length, x0 : x0 + 2] = 1.0
    return canvas


def _render_audio(cfg: SynthConfig, notes: list[NoteAnnotation]) -> AudioSignal:
    sr = audio.SAMPLE_RATE
    end = notes[-1].onset + notes[-1].duration + cfg.tail
    out = np.zeros(int(np.ceil(end * sr)))
    for n in notes:
        start = int(round(n.onset * sr))
        length = int(round(n.duration * sr))
        t = np.arange(length) / sr
        freq = 440.0 * 2.0 ** ((n.pitch - 69) / 12)
        tone = sum(a * np.sin(2 * np.pi * k * freq * t) for k, a in ((1, 1.0), (2, 0.25), (3, 0.1)))
        env = np.exp(-t / 0.35)
        fade = min(length, int(0.01 * sr))
        env[length - fade :] *= np.linspace(1.0, 0.0, fade)
        out[start : start + length] += 0.5 * tone * env
    return AudioSignal(out)


def generate_piece(rng: np.random.Generator, cfg: SynthConfig, name: str, split: str) -> Piece:
    n = cfg.notes_per_piece or cfg.capacity
    seq = _pitch_sequence(rng, cfg, n)
    notes = []
    onset = cfg.lead_in
    for i, (pitch, dur) in enumerate(seq):
        staff, col = divmod(i, cfg.notes_per_staff)
        notes.append(
            NoteAnnotation(
                onset=onset,
                pitch=pitch,
                duration=dur,
                x=cfg.first_note_x + col * cfg.note_spacing,
                y_staff_mid=cfg.staff_middle(staff),
            )
        )
        onset += dur
    page = downscale_page(_render_page(cfg, notes), DOWNSCALE)
    return Piece(name, page, _render_audio(cfg, notes), notes, split)


def synth_generate(seed: int, config: SynthConfig | None = None) -> list[Piece]:
    """Generate a reproducible corpus; the same seed yields identical pieces."""
    cfg = config or SynthConfig()
    rng = np.random.default_rng(seed)
    n_train, n_valid, _ = cfg.split_counts()
    pieces = []
    for i in range(cfg.pieces):
        split = "train" if i < n_train else "valid" if i < n_train + n_valid else "test"
        pieces.append(generate_piece(rng, cfg, f"piece_{i:04d}", split))
    return pieces
