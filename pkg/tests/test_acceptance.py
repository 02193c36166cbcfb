"""End-to-end acceptance checks. Each test prints one ``CRITERION n: PASS|FAIL`` line."""

import math
import traceback
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossalign.align import LossConfig, TrainConfig, build_training_data, train
from crossalign.align.synthetic import SyntheticWorld
from crossalign.align.encoders import encode
from crossalign.align.losses import class_prototypes, classification_loss, cross_view_loss, mil_nce_loss
from crossalign.align.train import initial_state
from crossalign.cli import main
from crossalign.corrgen import partition_categories
from crossalign.eval import Target, average_precision, harmonic_mean, retrieval_recall_at_k
from crossalign.geometry import Assignment, Box2D, ScoredDetection, box_regression_loss, giou, hungarian_match, iou, nms

from oracles import brute_force_nms, central_diff, enumerate_assignment_cost, pr_curve_ap

DATA = Path(__file__).resolve().parent.parent / "src" / "crossalign" / "data"
GOLDEN = Path(__file__).resolve().parent / "golden"


def verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def rel_error(analytic, numeric, floor=1e-2):
    """Per-coordinate relative error with a floor at 1% of the largest gradient entry."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-300)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor * scale)
    return float(np.max(np.abs(analytic - numeric) / denom))


# 1 ---------------------------------------------------------------------------


def test_criterion_1_harmonic_mean(capsys):
    rows = [((39.0, 46.3), 42.3), ((42.7, 49.2), 45.7)]
    got = [round(harmonic_mean(*args), 2) for args, _ in rows]
    ok = all(abs(g - want) <= 0.05 for g, (_, want) in zip(got, rows))
    verdict(capsys, 1, ok, f"HM = {got[0]:.2f}, {got[1]:.2f}; expected 42.3, 45.7 within 0.05")


# 2 ---------------------------------------------------------------------------


def _gradient_instances(seed):
    rng = np.random.default_rng([2024, seed])
    n, d = int(rng.integers(1, 9)), int(rng.integers(2, 17))
    a, g = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    temp = float(rng.uniform(0.05, 1.0))
    yield "cross_view", (lambda x: cross_view_loss(x, g, temp)[0]), a, cross_view_loss(a, g, temp)[1]

    m = int(rng.integers(1, 9))
    texts = rng.normal(size=(m, d))
    mask = rng.random((n, m)) < 0.4
    mask[np.arange(n), rng.integers(0, m, n)] = True
    yield "mil_nce", (lambda x: mil_nce_loss(x, texts, mask, temp)[0]), a, mil_nce_loss(a, texts, mask, temp)[1]

    k = int(rng.integers(2, 6))
    bag_of = np.concatenate([np.arange(k), rng.integers(0, k, size=k)])
    protos = class_prototypes(rng.normal(size=(len(bag_of), d)), bag_of, k)
    labels = rng.integers(0, k, n)
    yield (
        "classification",
        (lambda x: classification_loss(x, protos, labels, temp)[0]),
        a,
        classification_loss(a, protos, labels, temp)[1],
    )

    corner = rng.uniform(0, 100, size=(n, 2))
    target = np.hstack([corner, corner + rng.uniform(2, 30, size=(n, 2))])
    pred = target + rng.uniform(-5, 5, size=target.shape)
    pred[:, 2:] = np.maximum(pred[:, 2:], pred[:, :2] + 0.5)
    match = Assignment(tuple(zip(rng.permutation(n).tolist(), rng.permutation(n).tolist())))
    yield (
        "box_regression",
        (lambda x: box_regression_loss(x, target, match)[0]),
        pred,
        box_regression_loss(pred, target, match)[1],
    )


def test_criterion_2_gradient_suite(capsys):
    worst = {}
    for seed in range(50):
        for name, fn, x, grad in _gradient_instances(seed):
            worst[name] = max(worst.get(name, 0.0), rel_error(grad, central_diff(fn, x, 1e-5)))
    ok = len(worst) == 4 and all(v < 1e-5 for v in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(capsys, 2, ok, f"max relative error over 50 instances at h=1e-5: {detail}")


# 3 ---------------------------------------------------------------------------


def test_criterion_3_loss_identities(capsys):
    rng = np.random.default_rng(3)
    checks = {}
    checks["N=1 cross-view is 0"] = all(
        cross_view_loss(rng.normal(size=(1, d)), rng.normal(size=(1, d)))[0] == 0.0 for d in (2, 5, 16)
    )
    a, t = rng.normal(size=(4, 8)), rng.normal(size=(6, 8))
    checks["all-positive MIL-NCE is 0"] = mil_nce_loss(a, t, np.ones((4, 6), bool))[0] == 0.0
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng([3, seed])
        n = int(r.integers(1, 9))
        x, y = r.normal(size=(n, 16)), r.normal(size=(n, 16))
        worst = max(worst, abs(mil_nce_loss(x, y, np.eye(n, dtype=bool), 0.2)[0] - cross_view_loss(x, y, 0.2)[0]))
    checks["singleton bag equals cross-view"] = worst <= 1e-12
    g = rng.normal(size=(1, 5))
    ln2 = cross_view_loss(rng.normal(size=(2, 5)), np.vstack([g, g]))[0]
    checks["uniform negatives give ln 2"] = abs(ln2 - math.log(2)) <= 1e-12
    failed = [k for k, v in checks.items() if not v]
    verdict(capsys, 3, not failed, f"failed: {failed}" if failed else f"{len(checks)} identities hold, singleton gap {worst:.1e}")


# 4 ---------------------------------------------------------------------------


def _random_box(rng, extent=30.0):
    x, y = rng.uniform(0, extent, 2)
    w, h = rng.uniform(0.5, 12.0, 2)
    return Box2D(float(x), float(y), float(x + w), float(y + h))


def test_criterion_4_oracle_equivalence(capsys):
    bad = {"nms": 0, "hungarian": 0, "ap": 0}
    for seed in range(200):
        rng = np.random.default_rng([4, 0, seed])
        n = int(rng.integers(0, 21))
        dets = [ScoredDetection(_random_box(rng), int(rng.integers(0, 3)), float(rng.random())) for _ in range(n)]
        thr, conf = float(rng.uniform(0.1, 0.9)), float(rng.uniform(0, 0.5))
        expected = brute_force_nms([(d.box.as_tuple(), d.category_id, d.score) for d in dets], thr, conf)
        bad["nms"] += nms(dets, thr, conf) != [dets[i] for i in expected]

        rng = np.random.default_rng([4, 1, seed])
        shape = tuple(int(v) for v in rng.integers(1, 8, 2))
        cost = rng.normal(size=shape)
        got = hungarian_match(cost)
        bad["hungarian"] += abs(got.total_cost - enumerate_assignment_cost(cost)) > 1e-9 or len(got.pairs) != min(shape)

        rng = np.random.default_rng([4, 2, seed])
        targets = [(str(rng.choice(["p", "q"])), _int_box(rng), int(rng.integers(1, 3))) for _ in range(rng.integers(0, 5))]
        scene = []
        for _ in range(rng.integers(0, 7)):
            if targets and rng.random() < 0.5:
                image, b, c = targets[rng.integers(len(targets))]
                b = (b[0], b[1], b[2] + int(rng.integers(0, 3)), b[3])
            else:
                image, b, c = str(rng.choice(["p", "q"])), _int_box(rng), int(rng.integers(1, 3))
            scene.append((image, b, c, float(rng.choice([0.1, 0.3, 0.5, 0.7, 0.9]))))
        dets = [ScoredDetection(Box2D(*b), c, s, i) for i, b, c, s in scene]
        tgts = [Target(Box2D(*b), c, i) for i, b, c in targets]
        for thr in (0.5, 0.75):
            got = average_precision(dets, tgts, thr)
            want = {c: pr_curve_ap(scene, targets, thr, c) for c in {t[2] for t in targets}}
            bad["ap"] += set(got) != set(want) or any(abs(got[c] - want[c]) > 1e-12 for c in want)
    ok = not any(bad.values())
    verdict(capsys, 4, ok, f"mismatches out of 200 each: {bad}")


def _int_box(rng):
    x, y = (int(v) for v in rng.integers(0, 13, 2))
    return (x, y, x + int(rng.integers(1, 7)), y + int(rng.integers(1, 7)))


# 5 ---------------------------------------------------------------------------

ABLATION = {"both": (1.0, 1.0), "image-image": (1.0, 0.0), "text-only": (0.0, 1.0)}


def test_criterion_5_synthetic_alignment(capsys):
    world = SyntheticWorld(seed=0)
    records, bags, provider = world.dataset(320)
    data = build_training_data(records, bags, provider)
    test = world.sample(256, stream=1)
    gallery = world.ground_prototypes()
    recall, means = {}, {}
    for name, (ag, at) in ABLATION.items():
        cfg = TrainConfig(seed=0, loss=LossConfig(lambda_ag=ag, lambda_at=at, lambda_cls=0.0))
        assert cfg.epochs * math.ceil(len(data) / cfg.batch_size) == 200 and cfg.dim == 16 and cfg.batch_size == 32
        result = train(data, cfg)
        recall[name] = retrieval_recall_at_k(encode(result.state.aerial, test.aerial), gallery, test.labels, 1)
        means[name] = result.epoch_means()
    first, last = means["both"][0], means["both"][-1]
    a = recall["both"] >= 0.90
    b = recall["both"] >= recall["image-image"] >= recall["text-only"] and recall["both"] - recall["text-only"] >= 0.05
    c = last < 0.5 * first
    detail = (
        f"recall@1 both {recall['both']:.3f}, image-image {recall['image-image']:.3f}, text-only {recall['text-only']:.3f}; "
        f"loss {first:.3f} -> {last:.3f}; (a) {a} (b) {b} (c) {c}"
    )
    verdict(capsys, 5, a and b and c, detail)


# 6 ---------------------------------------------------------------------------


def test_criterion_6_pipeline_determinism_and_counts(capsys, tmp_path):
    import json

    outs = []
    for k in range(2):
        path = tmp_path / f"aligned{k}.jsonl"
        assert main(["--config", str(DATA / "toy_config.yaml"), "--set", f"corrgen.output={path}", "corrgen"]) == 0
        outs.append(path.read_bytes())
    golden = outs[0] == outs[1] == (GOLDEN / "toy_aligned.jsonl").read_bytes()

    fixture = json.loads((DATA / "xview60.json").read_text())
    aerial = {int(k): v for k, v in fixture["aerial_categories"].items()}
    ground = {int(k): v for k, v in fixture["ground_categories"].items()}
    part = partition_categories(aerial, ground, fixture["name_map"])
    split = (len(part.common), len(part.unique_aerial))

    capsys.readouterr()
    text = tmp_path / "text.jsonl"
    assert main(["--set", f"vocab.categories={DATA / 'xview60.json'}", "--set", f"vocab.output={text}", "vocab"]) == 0
    vocab_out = capsys.readouterr().out
    variants = "variants: 360" in vocab_out.splitlines()
    ok = golden and split == (12, 48) and variants
    verdict(capsys, 6, ok, f"golden-identical reruns {golden}; common/unique {split[0]}/{split[1]}; 360 variants {variants}")


# 7 ---------------------------------------------------------------------------


@st.composite
def boxes(draw):
    x0, y0 = draw(st.floats(-50, 50)), draw(st.floats(-50, 50))
    return Box2D(x0, y0, x0 + draw(st.floats(0.01, 40)), y0 + draw(st.floats(0.01, 40)))


@settings(max_examples=300, deadline=None)
@given(boxes(), boxes())
def _iou_giou_props(a, b):
    v = iou(a, b)
    assert v == iou(b, a) and 0.0 <= v <= 1.0
    g = giou(a, b)
    assert g == pytest.approx(giou(b, a), abs=1e-12)
    assert -1.0 < g <= v + 1e-12


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 100), st.floats(0, 100))
def _hm_props(a, b):
    h = harmonic_mean(a, b)
    assert min(a, b) - 1e-9 <= h <= max(a, b) + 1e-9 and h <= (a + b) / 2 + 1e-9


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 0.75]))
def _ap_monotone_invariance(seed, thr):
    rng = np.random.default_rng(seed)
    tgts = [Target(Box2D(*_int_box(rng)), int(rng.integers(1, 3)), "p") for _ in range(rng.integers(1, 5))]
    dets = []
    for _ in range(rng.integers(0, 7)):
        src = tgts[rng.integers(len(tgts))]
        box = src.box if rng.random() < 0.5 else Box2D(*_int_box(rng))
        dets.append(ScoredDetection(box, src.category_id, float(rng.choice([0.1, 0.3, 0.5, 0.7, 0.9])), "p"))
    warped = [ScoredDetection(d.box, d.category_id, math.exp(3 * d.score) / 100, d.image_id) for d in dets]
    assert average_precision(dets, tgts, thr) == average_precision(warped, tgts, thr)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def _loss_permutation_equivariance(seed, n):
    rng = np.random.default_rng(seed)
    a, g, t = rng.normal(size=(n, 6)), rng.normal(size=(n, 6)), rng.normal(size=(5, 6))
    mask = rng.random((n, 5)) < 0.5
    mask[:, 2] = True
    perm = rng.permutation(n)
    l1, g1 = cross_view_loss(a, g)
    l2, g2 = cross_view_loss(a[perm], g[perm])
    assert abs(l1 - l2) < 1e-12 and np.allclose(g1[perm], g2, atol=1e-12)
    m1, h1 = mil_nce_loss(a, t, mask)
    m2, h2 = mil_nce_loss(a[perm], t, mask[perm])
    assert abs(m1 - m2) < 1e-12 and np.allclose(h1[perm], h2, atol=1e-12)


def _frozen_encoders():
    world = SyntheticWorld(seed=5, dim=8)
    records, bags, provider = world.dataset(64)
    data = build_training_data(records, bags, provider)
    for loss in (LossConfig(), LossConfig(lambda_at=0.0), LossConfig(lambda_ag=0.0, lambda_cls=0.0)):
        cfg = TrainConfig(epochs=3, batch_size=16, dim=8, seed=5, loss=loss)
        before = initial_state(data, cfg)
        after = train(data, cfg).state
        for x, y in ((before.ground, after.ground), (before.text, after.text)):
            assert not y.trainable
            assert all(np.array_equal(x.arrays[k], y.arrays[k]) for k in x.arrays)


PROPERTY_SUITES = {
    "IoU symmetry/range and GIoU bounds": _iou_giou_props,
    "HM bounds": _hm_props,
    "AP monotone score invariance": _ap_monotone_invariance,
    "contrastive loss permutation equivariance": _loss_permutation_equivariance,
    "frozen ground/text encoders": _frozen_encoders,
}


def test_criterion_7_property_suites(capsys):
    failed = []
    for name, suite in PROPERTY_SUITES.items():
        try:
            suite()
        except Exception:
            failed.append(name)
            traceback.print_exc()
    verdict(capsys, 7, not failed, f"failed: {failed}" if failed else f"{len(PROPERTY_SUITES)} suites pass")
