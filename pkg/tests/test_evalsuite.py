import itertools
import json
import os

import numpy as np
import pytest

from pseudosal.core import BinaryMask
from pseudosal.errors import InvalidArgument
from pseudosal.evalsuite import (
    AblationPlan,
    MetricsReport,
    MetricsRow,
    adaptive_threshold,
    combine_runs,
    emit_report,
    evaluate,
    label_quality_curve,
    max_f_score,
    oracle_label_fusion,
    rank_correlation,
    run_ablations,
)
from pseudosal.objective import f_beta, soft_contingency


def _mask(a):
    return BinaryMask(np.asarray(a, np.uint8))


def test_identity_scores_perfect():
    g = {"a": _mask([[0, 1], [1, 1]]), "b": _mask([[1, 0], [0, 0]])}
    row = evaluate({k: v.values.astype(float) for k, v in g.items()}, g)
    assert row.f_score == pytest.approx(100) and row.mae == pytest.approx(0)
    assert row.precision == pytest.approx(100) and row.recall == pytest.approx(100)


def test_constant_half_prediction_mae():
    g = {"a": _mask([[0, 1], [0, 1]])}
    assert evaluate({"a": np.full((2, 2), 0.5)}, g).mae == pytest.approx(50)


def test_adaptive_threshold_cap():
    assert adaptive_threshold(np.array([0.1, 0.3])) == pytest.approx(0.4)
    assert adaptive_threshold(np.array([0.9, 0.9])) == 0.98


def test_id_mismatch_rejected():
    with pytest.raises(InvalidArgument):
        evaluate({"a": np.zeros((2, 2))}, {"b": _mask(np.zeros((2, 2)))})


def test_permutation_invariance(rng):
    ids = [f"i{k}" for k in range(6)]
    preds = {i: rng.random((5, 5)) for i in ids}
    gts = {i: _mask(rng.random((5, 5)) > 0.6) for i in ids}
    a = evaluate(preds, gts)
    rev = {i: preds[i] for i in reversed(ids)}
    b = evaluate(rev, {i: gts[i] for i in reversed(ids)})
    assert a == b


def test_binary_predictions_match_objective(rng):
    # for a binary prediction with mean m, the threshold 2m (capped) keeps exactly the ones
    gts, preds = {}, {}
    for k in range(5):
        p = (rng.random((8, 8)) > 0.5).astype(float)
        gts[k] = _mask(rng.random((8, 8)) > 0.5)
        preds[k] = p
    row = evaluate(preds, gts)
    ref = np.mean([f_beta(soft_contingency(preds[k], gts[k].values)) for k in preds])
    assert row.f_score == pytest.approx(100 * ref, abs=1e-9)


def test_pooled_variant_and_max_f(rng):
    preds = {k: rng.random((6, 6)) for k in range(3)}
    gts = {k: _mask(preds[k] > 0.5) for k in preds}
    pooled = evaluate(preds, gts, pooling="pooled")
    assert 0 <= pooled.f_score <= 100
    assert max_f_score(preds, gts) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(InvalidArgument):
        evaluate(preds, gts, pooling="median")


def test_combine_runs_std():
    rows = [MetricsRow("m", "d", f, 10, 50, 50) for f in (80.0, 82.0)]
    c = combine_runs(rows)
    assert c.f_score == pytest.approx(81) and c.n_runs == 2
    assert c.std["f_score"] == pytest.approx(np.sqrt(2))
    assert combine_runs(rows[:1]).std is None


def test_label_quality_curve_order(rng):
    gts = {k: _mask(rng.random((6, 6)) > 0.5) for k in range(4)}
    noisy = {k: _mask(rng.random((6, 6)) > 0.5) for k in gts}
    rows = label_quality_curve([("noisy", noisy), ("exact", gts)], gts)
    assert [r.stage for r in rows] == [0, 1]
    assert (rows[1].f_score, rows[1].mae, rows[1].precision, rows[1].recall) == pytest.approx((100, 0, 100, 100))
    assert rows[1].f_score > rows[0].f_score


def test_oracle_fusion_examples():
    g = {"x": _mask([[1, 1, 0]])}
    sets = [{"x": _mask([[0, 0, 1]])}, {"x": _mask([[1, 0, 1]])}, {"x": _mask([[1, 0, 0]])},
            {"x": _mask([[0, 0, 0]])}]
    # pixel 0: a match exists; pixel 1: nobody says 1; pixel 2: a 0 exists
    assert oracle_label_fusion(sets, g)["x"].values.tolist() == [[1, 0, 0]]
    three = [{"x": _mask([[1]])}, {"x": _mask([[1]])}, {"x": _mask([[0]])}]
    assert oracle_label_fusion(three, {"x": _mask([[0]])})["x"].values.tolist() == [[0]]
    # binary labels: without a match every set disagrees with GT, so the vote is unanimous
    wrong = [{"x": _mask([[1]])}, {"x": _mask([[1]])}]
    assert oracle_label_fusion(wrong, {"x": _mask([[0]])})["x"].values.tolist() == [[1]]


def _brute_force_oracle(sets, gt):
    out = np.zeros_like(gt)
    for i, j in itertools.product(range(gt.shape[0]), range(gt.shape[1])):
        vals = [s[i, j] for s in sets]
        if gt[i, j] in vals:
            out[i, j] = gt[i, j]
        else:
            out[i, j] = 1 if 2 * sum(vals) > len(vals) else 0
    return out


def test_oracle_fusion_dominance_and_brute_force():
    r = np.random.default_rng(9)
    for trial in range(200):
        gt = (r.random((8, 8)) > r.uniform(0.2, 0.8)).astype(np.uint8)
        sets = [(r.random((8, 8)) > r.uniform(0.2, 0.8)).astype(np.uint8) for _ in range(4)]
        fused = oracle_label_fusion([{"k": _mask(s)} for s in sets], {"k": _mask(gt)})["k"].values
        assert np.array_equal(fused, _brute_force_oracle(sets, gt))
        f_fused = f_beta(soft_contingency(fused, gt))
        for s in sets:
            assert f_fused >= f_beta(soft_contingency(s, gt))


def test_oracle_fusion_errors():
    with pytest.raises(InvalidArgument):
        oracle_label_fusion([], {})
    with pytest.raises(InvalidArgument):
        oracle_label_fusion([{"a": _mask([[1]])}, {"b": _mask([[1]])}], {"a": _mask([[1]])})


def test_rank_correlation():
    assert rank_correlation([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1)
    assert rank_correlation([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1)


def test_metrics_report_json_roundtrip():
    rep = MetricsReport([MetricsRow("pipeline", "test", 70.5, 8.25, 71, 69, max_f=75, n_images=3)])
    back = MetricsReport.from_json(rep.to_json())
    assert back.rows == rep.rows
    assert back.row("pipeline").f_score == 70.5
    with pytest.raises(KeyError):
        back.row("other")


def test_ablation_plan_validation():
    with pytest.raises(InvalidArgument):
        AblationPlan([])
    with pytest.raises(InvalidArgument):
        AblationPlan(["more_epochs"])
    with pytest.raises(InvalidArgument):
        AblationPlan(["single_method:sobel"])
    p = AblationPlan(["single_method:all", "direct_fusion", "single_method:rbd"])
    assert p.expanded(["rbd", "mc"]) == ["single_method:rbd", "single_method:mc", "direct_fusion"]
    assert AblationPlan(["oracle_gt_training"]).needs_gt and not p.needs_gt


def test_run_ablations_cardinality(small_ds, tmp_path):
    from pseudosal.handcrafted import MethodDescriptor
    from pseudosal.model import NetConfig, OptimConfig
    from pseudosal.pipeline import StagePlan, run_full_pipeline

    plan = StagePlan(stage_a_epochs=1, self_sup_max_iters=1, stability_threshold=0, fusion_epochs=1,
                     net=NetConfig(base_width=4))
    optim = OptimConfig(batch_size=4)
    train, test = small_ds.subset("train"), small_ds.subset("test")
    state = run_full_pipeline(train, [MethodDescriptor("rbd"), MethodDescriptor("mc")], plan, optim, tmp_path)
    res = run_ablations(AblationPlan(["direct_fusion", "no_self_supervision"]), train, test, state, plan, optim)
    assert [r.name for r in res.report.rows] == ["pipeline", "direct_fusion", "no_self_supervision"]
    assert set(res.predictions) == {"pipeline", "direct_fusion", "no_self_supervision"}
    again = run_ablations(AblationPlan(["direct_fusion"]), train, test, state, plan, optim)
    assert again.report.rows[1] == res.report.rows[1]
    no_gt = type(train)([s.__class__(s.id, s.image, None, s.split) for s in train], split="train")
    with pytest.raises(InvalidArgument):
        run_ablations(AblationPlan(["oracle_gt_training"]), no_gt, test, state, plan, optim)


def _report_inputs(rng, n=5):
    ids = [f"s{k}" for k in range(n)]
    gts = {i: (rng.random((8, 8)) > 0.5).astype(np.uint8) for i in ids}
    pipe = {i: rng.random((8, 8)).astype(np.float32) for i in ids}
    oracle = {i: rng.random((8, 8)).astype(np.float32) for i in ids}
    images = {i: rng.random((8, 8, 3)).astype(np.float32) for i in ids}
    rep = MetricsReport([evaluate(pipe, gts, name="pipeline"), evaluate(oracle, gts, name="oracle_gt_training")])
    return rep, {"gts": gts, "images": images, "pipeline": pipe, "oracle_gt_training": oracle}


def test_emit_report_files(tmp_path, rng):
    rep, per_image = _report_inputs(rng)
    curves = {"rbd": [MetricsRow("rbd/raw", "train", 50, 20, 50, 50, stage=0),
                      MetricsRow("rbd/iter0", "train", 60, 15, 60, 60, stage=1)]}
    written = emit_report(rep, curves, tmp_path, per_image, failure_k=3)
    for name in ("report.md", "metrics.json", "curves.svg", "curves.png", "scatter.svg"):
        assert (tmp_path / name).is_file()
    assert len(list((tmp_path / "failures").glob("*.png"))) == 3
    assert sorted(p.name for p in (tmp_path / "failures").glob("*.png"))[0].startswith("00_")
    text = (tmp_path / "report.md").read_text()
    assert "| pipeline | test |" in text and "90.31" in text
    rows = json.loads((tmp_path / "metrics.json").read_text())["rows"]
    assert len(rows) == 4
    # one scatter marker per test image
    svg = (tmp_path / "scatter.svg").read_text()
    group = svg.split('<g id="per_image_mae">', 1)[1].split("</g>", 1)[0]
    assert group.count("<use ") == 5
    assert set(written) >= {"report", "metrics", "curves", "scatter", "failures"}


def test_emit_report_without_curves(tmp_path, rng):
    rep, _ = _report_inputs(rng)
    emit_report(rep, {}, tmp_path)
    assert "curve plot skipped" in (tmp_path / "report.md").read_text()
    assert not (tmp_path / "curves.svg").exists()


def test_emit_report_is_byte_stable(tmp_path, rng):
    rep, per_image = _report_inputs(rng)
    emit_report(rep, {}, tmp_path / "a", per_image, failure_k=1)
    emit_report(rep, {}, tmp_path / "b", per_image, failure_k=1)
    for name in ("report.md", "metrics.json", "scatter.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_emit_report_unwritable(tmp_path, rng):
    rep, _ = _report_inputs(rng)
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(0o500)
    with pytest.raises(OSError):
        emit_report(rep, {}, ro / "sub")


def test_emit_report_path_is_a_file(tmp_path, rng):
    rep, _ = _report_inputs(rng)
    (tmp_path / "f").write_text("x")
    with pytest.raises(OSError):
        emit_report(rep, {}, tmp_path / "f")
