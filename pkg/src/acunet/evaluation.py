"""Pixel-level precision/recall/F1, ablation tables and overlay rendering."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
from PIL import Image

from .checkpoint import Checkpoint
from .dataset import Piece, Sample, make_sample, stack_samples
from .errors import ConfigError, DimensionError
from .model import ConditionedUNet, ModelConfig, format_film_blocks, parse_film_blocks
from .tensor import no_grad

logger = logging.getLogger(__name__)

THRESHOLD = 0.5
ABLATION_SETS = ("E", "D-F", "C-G", "B-H", "A-I", "A-E", "E-I")

Predictor = Union[ConditionedUNet, Checkpoint, Callable[[Sequence[Sample]], np.ndarray]]


def binarize(p: np.ndarray, threshold: float = THRESHOLD) -> np.ndarray:
    """1 where ``p >= threshold``, else 0."""
    return (np.asarray(p) >= threshold).astype(np.uint8)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction shape {pred.shape} != ground truth shape {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def _ratio(num: int, den: int, errors: int) -> float:
    if den == 0:
        return 1.0 if errors == 0 else 0.0
    return num / den


def precision_recall_f1(c: ConfusionCounts) -> tuple[float, float, float]:
    """Precision, recall and F1 from pixel counts.

    A zero denominator yields 1.0 if the matching error count is also zero
    (nothing predicted and nothing to find), else 0.0.
    """
    precision = _ratio(c.tp, c.tp + c.fp, c.fp)
    recall = _ratio(c.tp, c.tp + c.fn, c.fn)
    f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, c.fp + c.fn)
    return precision, recall, f1


@dataclass
class EvalReport:
    counts: ConfusionCounts
    per_piece: dict[str, ConfusionCounts] = field(default_factory=dict)
    label: str = ""
    threshold: float = THRESHOLD

    @property
    def precision(self) -> float:
        return precision_recall_f1(self.counts)[0]

    @property
    def recall(self) -> float:
        return precision_recall_f1(self.counts)[1]

    @property
    def f1(self) -> float:
        return precision_recall_f1(self.counts)[2]

    def macro(self) -> tuple[float, float, float]:
        scores = np.array([precision_recall_f1(c) for c in self.per_piece.values()])
        return tuple(float(v) for v in scores.mean(axis=0))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["piece", "tp", "fp", "fn", "tn", "precision", "recall", "f1"])
            for name, c in self.per_piece.items():
                w.writerow([name, c.tp, c.fp, c.fn, c.tn, *(f"{v:.6f}" for v in precision_recall_f1(c))])
            c = self.counts
            w.writerow(["micro", c.tp, c.fp, c.fn, c.tn, *(f"{v:.6f}" for v in precision_recall_f1(c))])
            w.writerow(["macro", "", "", "", "", *(f"{v:.6f}" for v in self.macro())])


def _as_predict_fn(predictor: Predictor, batch_size: int) -> Callable[[Sequence[Sample]], np.ndarray]:
    if isinstance(predictor, Checkpoint):
        from .training import model_from_checkpoint

        predictor = model_from_checkpoint(predictor)
    if isinstance(predictor, ConditionedUNet):
        model = predictor

        def predict(samples):
            pages, excerpts, _ = stack_samples(samples)
            out = []
            with no_grad():
                for i in range(0, len(samples), batch_size):
                    out.append(model(pages[i : i + batch_size], excerpts[i : i + batch_size]).data[:, 0])
            return np.concatenate(out)

        return predict
    return predictor


def evaluate(
    pieces: Sequence[Piece],
    predictor: Predictor,
    threshold: float = THRESHOLD,
    batch_size: int = 32,
    label: str = "",
) -> EvalReport:
    """Score every onset-aligned excerpt of every piece; corpus metrics are micro-averaged."""
    if not pieces:
        raise ConfigError("cannot evaluate an empty split")
    predict = _as_predict_fn(predictor, batch_size)
    per_piece: dict[str, ConfusionCounts] = {}
    total = ConfusionCounts()
    for piece in pieces:
        samples = [make_sample(piece, f) for f in piece.onset_frames]
        probs = predict(samples)
        counts = ConfusionCounts()
        for s, p in zip(samples, probs):
            counts = counts + confusion(binarize(p, threshold), s.mask)
        per_piece[piece.name] = counts
        total = total + counts
    return EvalReport(total, per_piece, label, threshold)


def always_positive(samples: Sequence[Sample]) -> np.ndarray:
    return np.ones((len(samples),) + samples[0].mask.shape)


def oracle_predictor(samples: Sequence[Sample]) -> np.ndarray:
    return np.stack([s.mask.astype(np.float64) for s in samples])


def row_label(blocks) -> str:
    return f"FiLM Layers ({format_film_blocks(blocks)})"


@dataclass
class AblationRow:
    label: str
    film_blocks: frozenset[str]
    precision: float
    recall: float
    f1: float
    val_loss: float = float("nan")


def ablation(
    corpus: Sequence[Piece],
    film_block_sets: Sequence[str] = ABLATION_SETS,
    base_config: ModelConfig | None = None,
    train_config=None,
    split: str = "test",
) -> list[AblationRow]:
    """Train one model per FiLM block set and evaluate each on ``split``."""
    from .training import TrainConfig, train

    base_config = base_config or ModelConfig()
    train_config = train_config or TrainConfig()
    test = [p for p in corpus if p.split == split]
    rows = []
    for label in film_block_sets:
        blocks = parse_film_blocks(label)
        cfg = ModelConfig(**{**base_config.to_dict(), "film_blocks": blocks})
        result = train(corpus, cfg, train_config)
        report = evaluate(test, result.model, label=row_label(blocks))
        rows.append(AblationRow(row_label(blocks), blocks, report.precision, report.recall, report.f1,
                                result.checkpoint.val_loss))
        logger.info("%s: P %.4f R %.4f F1 %.4f", rows[-1].label, report.precision, report.recall, report.f1)
    return rows


def write_ablation_csv(rows: Sequence[AblationRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["architecture", "film_blocks", "precision", "recall", "f1", "val_loss"])
        for r in rows:
            w.writerow([r.label, format_film_blocks(r.film_blocks), f"{r.precision:.4f}", f"{r.recall:.4f}",
                        f"{r.f1:.4f}", f"{r.val_loss:.6f}"])


def overlay_image(page: np.ndarray, prob: np.ndarray) -> np.ndarray:
    """RGB overlay: grayscale page, with probability ``p`` blended toward pure red.

    A pixel's red channel is ``(1-p)*gray + 255*p`` and its green/blue channels
    ``(1-p)*gray``, so ``p = 0`` leaves the page untouched and ``p = 1`` is
    full red regardless of the page.
    """
    page = np.asarray(page, dtype=np.float64)
    prob = np.clip(np.asarray(prob, dtype=np.float64), 0.0, 1.0)
    if page.shape != prob.shape:
        raise DimensionError(f"page shape {page.shape} != probability map shape {prob.shape}")
    gray = 255.0 * (1.0 - np.clip(page, 0.0, 1.0))
    rgb = np.stack([(1.0 - prob) * gray + 255.0 * prob, (1.0 - prob) * gray, (1.0 - prob) * gray], axis=-1)
    return np.round(rgb).astype(np.uint8)


def render_overlay(page: np.ndarray, prob: np.ndarray, path: str | Path) -> tuple[Path, Path]:
    """Write the overlay to ``path`` and the raw map to ``<stem>_prob.png``."""
    path = Path(path)
    rgb = overlay_image(page, prob)
    Image.fromarray(rgb, mode="RGB").save(path)
    prob_path = path.with_name(path.stem + "_prob.png")
    raw = np.round(255.0 * np.clip(prob, 0.0, 1.0)).astype(np.uint8)
    Image.fromarray(raw, mode="L").save(prob_path)
    return path, prob_path
