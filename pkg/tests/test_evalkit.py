import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from m3dnet.errors import InvalidInputError, UndefinedAUCError
from m3dnet.evalkit import (
    AblationCell,
    AblationGrid,
    EvalReport,
    compute_auc,
    load_embeddings,
    roc_curve,
    trapezoid_auc,
    write_embeddings,
)
from m3dnet.evalkit.ablation import cell_overrides, enumerate_cells

from oracles import auc_pairwise_oracle

# scores drawn from a small grid so ties are common
tied_scores = st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]), min_size=2, max_size=30)


def _with_both_classes(draw_scores, draw_labels):
    labels = list(draw_labels)
    labels[0], labels[-1] = 0, 1
    return draw_scores, labels


@given(st.data())
def test_auc_matches_pairwise_oracle(data):
    scores = data.draw(tied_scores)
    labels = data.draw(st.lists(st.integers(0, 1), min_size=len(scores), max_size=len(scores)))
    scores, labels = _with_both_classes(scores, labels)
    assert compute_auc(scores, labels) == auc_pairwise_oracle(scores, labels)


@given(st.data())
def test_auc_invariant_under_monotone_transform(data):
    scores = data.draw(tied_scores)
    labels = data.draw(st.lists(st.integers(0, 1), min_size=len(scores), max_size=len(scores)))
    scores, labels = _with_both_classes(scores, labels)
    transformed = [math.exp(3 * s) - 7 for s in scores]
    assert compute_auc(transformed, labels) == compute_auc(scores, labels)


@given(st.data())
def test_auc_inversion_and_trapezoid(data):
    scores = data.draw(tied_scores)
    labels = data.draw(st.lists(st.integers(0, 1), min_size=len(scores), max_size=len(scores)))
    scores, labels = _with_both_classes(scores, labels)
    auc = compute_auc(scores, labels)
    assert compute_auc([-s for s in scores], labels) == pytest.approx(1 - auc, abs=1e-12)
    assert trapezoid_auc(roc_curve(scores, labels)) == pytest.approx(auc, abs=1e-12)


def test_auc_known_values():
    assert compute_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert compute_auc([0.5, 0.5], ["real", "fake"]) == 0.5
    assert compute_auc([0.9, 0.1], [0, 1]) == 0.0


def test_auc_errors():
    with pytest.raises(UndefinedAUCError):
        compute_auc([0.1, 0.2], [1, 1])
    with pytest.raises(InvalidInputError):
        compute_auc([0.1, 0.2], [0, 2])
    with pytest.raises(InvalidInputError):
        compute_auc([0.1], [0, 1])
    with pytest.raises(InvalidInputError):
        compute_auc([float("nan"), 0.2], [0, 1])


def test_roc_endpoints_and_monotonicity():
    pts = roc_curve([0.3, 0.3, 0.7, 0.1, 0.9], [0, 1, 1, 0, 0])
    assert pts[0] == (0.0, 0.0, float("inf")) and pts[-1][:2] == (1.0, 1.0)
    fpr = [p[0] for p in pts]
    tpr = [p[1] for p in pts]
    assert fpr == sorted(fpr) and tpr == sorted(tpr)
    assert len(pts) == 1 + 4  # one point per distinct score


def _report():
    scores, labels = [0.2, 0.6, 0.4, 0.9], [0, 1, 0, 1]
    return EvalReport("synth", compute_auc(scores, labels), roc_curve(scores, labels), 2, 2, "test",
                      ["a", "b", "c", "d"], scores, labels, {"aggregation": "frame"})


def test_report_round_trip_and_recomposition(tmp_path):
    rep = _report()
    js, txt = rep.write(tmp_path)
    back = EvalReport.from_dict(json.loads(js.read_text()))
    assert back == rep
    # the stored per-item scores reproduce the headline number
    assert compute_auc(back.scores, back.labels) == back.auc
    assert "AUC" in txt.read_text()


def test_grid_round_trip_and_completeness():
    axes = {"heads": [2, 4], "pfm": ["on", "off"]}
    cells = [AblationCell(p, "ok", report=_report(), structure={"pfm": ["x"]}, final_train_auc=0.9)
             for p in enumerate_cells(axes)]
    grid = AblationGrid(axes, cells, {"k": 1})
    back = AblationGrid.from_json(grid.to_json())
    assert back.to_json() == grid.to_json()
    assert back.complete()
    assert not AblationGrid(axes, cells[:3]).complete()
    assert "heads=2,pfm=on" in grid.table()


def test_cell_overrides_map_axes_to_config_keys():
    assert cell_overrides({"heads": 8, "pfm": "off", "attention": "on"}) == {
        "mfm.heads": 8, "pfm.enabled": False, "mfm.attention_enabled": True}
    with pytest.raises(KeyError):
        cell_overrides({"depth": 3})
    assert len(enumerate_cells({"heads": [2, 4, 8, 16], "pfm": ["on", "off"], "attention": ["on", "off"]})) == 16


@given(st.integers(0, 6), st.integers(1, 5), st.integers(0, 1000))
def test_embeddings_round_trip(tmp_path_factory, n, d, seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, d)).astype(np.float32)
    labels = rng.integers(0, 2, n)
    path = write_embeddings(tmp_path_factory.mktemp("e") / "e.m3de", m, labels)
    back, lab = load_embeddings(path)
    assert np.array_equal(back, m) and np.array_equal(lab, labels.astype(np.uint8))
    assert path.stat().st_size == 16 + 4 * n * d + n


def test_embedding_file_validation(tmp_path):
    path = write_embeddings(tmp_path / "e.m3de", np.zeros((2, 3), np.float32), [0, 1])
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(InvalidInputError):
        load_embeddings(path)
    with pytest.raises(InvalidInputError):
        write_embeddings(tmp_path / "x", np.zeros((2, 3)), [0])


def test_embed_layers_from_a_model(detector, synth16):
    from m3dnet.evalkit import embed

    small = synth16.select([0, 1, 8, 9])
    fused = embed(detector, small, "fused")
    rgb = embed(detector, small, "rgb_branch")
    assert fused.shape == (4, detector.cfg.mfm.width)
    assert rgb.shape == (4, detector.cfg.backbone.output_dim)
    with pytest.raises(InvalidInputError):
        embed(detector, small, "logits")
