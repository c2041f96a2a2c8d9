import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from acunet import evaluation as ev
from acunet.errors import ConfigError, DimensionError
from acunet.evaluation import ConfusionCounts, binarize, confusion, precision_recall_f1
from acunet.model import ModelConfig, parse_film_blocks
from acunet.synth import SynthConfig, synth_generate
from acunet.training import TrainConfig
from oracles import count_confusion


def test_binarize_uses_greater_equal():
    np.testing.assert_array_equal(binarize(np.array([0.4, 0.5, 0.6])), [0, 1, 1])


def test_binarize_boundaries():
    p = np.random.default_rng(0).random(50)
    assert binarize(p, 0.0).all()
    assert not binarize(p, 1.0 + 1e-9).any()


@given(st.floats(0, 1), st.floats(0, 1))
def test_threshold_monotone(t1, t2):
    lo, hi = min(t1, t2), max(t1, t2)
    p = np.random.default_rng(1).random((8, 8))
    g = np.random.default_rng(2).random((8, 8)) < 0.3
    assert np.all(binarize(p, hi) <= binarize(p, lo))
    c_lo, c_hi = confusion(binarize(p, lo), g), confusion(binarize(p, hi), g)
    assert c_hi.fp <= c_lo.fp
    assert precision_recall_f1(c_hi)[1] <= precision_recall_f1(c_lo)[1]


class TestConfusion:
    def test_all_ones_match(self):
        c = confusion(np.ones((3, 4)), np.ones((3, 4)))
        assert (c.tp, c.fp, c.fn, c.tn) == (12, 0, 0, 0)

    def test_all_false_positive(self):
        assert confusion(np.ones(7), np.zeros(7)).fp == 7

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        pred, truth = rng.random((6, 7)) < 0.5, rng.random((6, 7)) < 0.3
        c = confusion(pred, truth)
        assert (c.tp, c.fp, c.fn, c.tn) == count_confusion(pred, truth)
        assert c.total == 42

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            confusion(np.ones(3), np.ones(4))


class TestMetrics:
    def test_worked_example(self):
        p, r, f = precision_recall_f1(ConfusionCounts(3, 1, 2, 0))
        assert (p, r) == (0.75, 0.6)
        assert f == 6 / 9 and round(f, 4) == 0.6667

    def test_empty_empty(self):
        assert precision_recall_f1(ConfusionCounts()) == (1.0, 1.0, 1.0)

    def test_zero_denominator_with_errors(self):
        assert precision_recall_f1(ConfusionCounts(0, 0, 5, 0)) == (1.0, 0.0, 0.0)
        assert precision_recall_f1(ConfusionCounts(0, 5, 0, 0)) == (0.0, 1.0, 0.0)

    def test_f1_identity_on_random_draws(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            tp, fp, fn = (int(v) for v in rng.integers(0, 10**6, 3))
            p, r, f = precision_recall_f1(ConfusionCounts(tp, fp, fn, 0))
            if p + r > 0:
                assert abs(f - 2 * p * r / (p + r)) <= 1e-12

    @given(st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 1000))
    def test_in_unit_interval(self, tp, fp, fn):
        assert all(0.0 <= v <= 1.0 for v in precision_recall_f1(ConfusionCounts(tp, fp, fn, 0)))


@pytest.fixture(scope="module")
def test_pieces():
    corpus = synth_generate(5, SynthConfig(pieces=6, notes_per_staff=5))
    return [p for p in corpus if p.split != "train"]


def test_oracle_predictor_is_perfect(test_pieces):
    report = ev.evaluate(test_pieces, ev.oracle_predictor)
    assert (report.precision, report.recall, report.f1) == (1.0, 1.0, 1.0)


def test_zero_predictor_has_zero_recall(test_pieces):
    report = ev.evaluate(test_pieces, lambda s: np.zeros((len(s),) + s[0].mask.shape))
    assert report.recall == 0.0


def test_always_positive_precision_is_mask_density(test_pieces):
    report = ev.evaluate(test_pieces, ev.always_positive)
    c = report.counts
    assert report.recall == 1.0 and c.fn == 0 and c.tn == 0
    assert report.precision == c.tp / c.total


def test_micro_metrics_from_summed_counts(test_pieces):
    rng = np.random.default_rng(0)
    report = ev.evaluate(test_pieces, lambda s: rng.random((len(s),) + s[0].mask.shape))
    total = sum(report.per_piece.values(), ConfusionCounts())
    assert total == report.counts
    assert (report.precision, report.recall, report.f1) == precision_recall_f1(total)


def test_evaluate_is_deterministic_for_a_model(test_pieces):
    from acunet.model import build_model

    model = build_model(ModelConfig(base_filters=1))
    a, b = ev.evaluate(test_pieces, model), ev.evaluate(test_pieces, model)
    assert a.counts == b.counts


def test_empty_split():
    with pytest.raises(ConfigError):
        ev.evaluate([], ev.always_positive)


def test_report_csv(tmp_path, test_pieces):
    report = ev.evaluate(test_pieces, ev.always_positive)
    report.write_csv(tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["piece", "tp", "fp", "fn", "tn", "precision", "recall", "f1"]
    assert [r[0] for r in rows[-2:]] == ["micro", "macro"]
    assert len(rows) == len(test_pieces) + 3


def test_table_labels_round_trip():
    assert len(ev.ABLATION_SETS) == 7
    labels = [ev.row_label(parse_film_blocks(s)) for s in ev.ABLATION_SETS]
    assert labels == [f"FiLM Layers ({s})" for s in ("E", "D-F", "C-G", "B-H", "A-I", "A-E", "E-I")]
    for s in ev.ABLATION_SETS:
        inner = ev.row_label(parse_film_blocks(s))[len("FiLM Layers (") : -1]
        assert parse_film_blocks(inner) == parse_film_blocks(s)


def test_ablation_tiny(tmp_path):
    corpus = synth_generate(9, SynthConfig(pieces=4, notes_per_staff=4, split_weights=(2, 1, 1)))
    rows = ev.ablation(
        corpus, ["E", "A,C"], ModelConfig(base_filters=1), TrainConfig(batch_size=4, max_epochs=1)
    )
    assert [r.label for r in rows] == ["FiLM Layers (E)", "FiLM Layers (A,C)"]
    assert all(0 <= v <= 1 for r in rows for v in (r.precision, r.recall, r.f1))
    ev.write_ablation_csv(rows, tmp_path / "t.csv")
    lines = list(csv.reader(open(tmp_path / "t.csv")))
    assert lines[0] == ["architecture", "film_blocks", "precision", "recall", "f1", "val_loss"]
    assert lines[2][1] == "A,C"


class TestOverlay:
    page = np.random.default_rng(0).random((12, 9))

    def test_zero_probability_is_page(self):
        rgb = ev.overlay_image(self.page, np.zeros_like(self.page))
        gray = np.round(255 * (1 - self.page)).astype(np.uint8)
        for ch in range(3):
            np.testing.assert_array_equal(rgb[..., ch], gray)

    def test_linear_mapping(self):
        blank = np.zeros((1, 5))
        prob = np.linspace(0, 1, 5)[None]
        rgb = ev.overlay_image(np.ones((1, 5)), prob)  # all-ink page is black
        np.testing.assert_array_equal(rgb[0, :, 0], np.round(255 * prob[0]).astype(np.uint8))
        assert not rgb[..., 1:].any()
        np.testing.assert_array_equal(ev.overlay_image(blank, np.ones((1, 5)))[0], [[255, 0, 0]] * 5)

    def test_files_written(self, tmp_path):
        prob = np.random.default_rng(1).random((12, 9))
        overlay, raw = ev.render_overlay(self.page, prob, tmp_path / "o.png")
        assert Image.open(overlay).size == (9, 12) and Image.open(overlay).mode == "RGB"
        np.testing.assert_array_equal(np.asarray(Image.open(raw)), np.round(255 * prob).astype(np.uint8))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ev.overlay_image(self.page, np.zeros((3, 3)))

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            ev.render_overlay(self.page, np.zeros_like(self.page), tmp_path / "missing" / "o.png")
