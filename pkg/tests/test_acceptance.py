"""Acceptance gate: every criterion at its stated tolerance.

Each test records a PASS/FAIL line (printed in the pytest terminal summary)
before asserting.  Run directly with ``python tests/test_acceptance.py`` for
the same lines without pytest.
"""

import time

import numpy as np
import pytest

import acceptance_log
from oracles import (
    brute_force_raster,
    finite_difference_check,
    oracle_assign,
    random_box_scene,
    random_mask_scene,
    scalar_assemble,
    targets_match,
)
from protoseg.assignment import build_targets, fcos_levels
from protoseg.evaluation import EvalConfig, average_precision, evaluate
from protoseg.geometry import BBox, BinaryMask, Detection, InstanceAnnotation, Scene, SoftMask, box_iou, mask_iou
from protoseg.ingest import parse_scene_file, rasterize_polygon, write_scene_file
from protoseg.geometry import rle_roundtrip
from protoseg.prototypes import (
    PrototypeStack,
    assemble,
    binarize,
    fit_coefficients,
    gt_basis,
    mask_logits,
    reconstruct,
    smooth_basis,
)
from protoseg.synth import (
    OCCLUSION_LEVEL,
    SynthConfig,
    contested_location,
    gen_occlusion_case,
    gen_scene,
    gen_scenes,
    render_image,
)
from protoseg.toy import ModelConfig, TrainHyper, forward, init_model, model_to_json, predict, toy_targets, train
from protoseg.toy.training import curve_to_csv


def _verdict(number, name, checks, detail):
    passed = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    acceptance_log.record(number, name, passed, detail + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert passed, f"criterion {number}: {detail}"


def test_criterion_1_assignment_oracle():
    rng = np.random.default_rng(20240601)
    levels = fcos_levels(3)
    start = time.perf_counter()
    mismatches = 0
    positives = 0
    for n in range(1000):
        scene = random_box_scene(rng, f"a{n}", integer=bool(n % 2))
        for mode in ("area", "center"):
            tmap = build_targets(scene, levels, mode)
            positives += sum(tmap.positive_counts())
            if not targets_match(tmap, oracle_assign(scene, levels, mode), tol=1e-12):
                mismatches += 1
    elapsed = time.perf_counter() - start
    _verdict(1, "assignment oracle equivalence",
             {"exact": mismatches == 0, "runtime": elapsed < 30.0},
             f"{mismatches} mismatching maps of 2000, {positives} positives checked, {elapsed:.1f}s (< 30s)")


def test_criterion_2_center_preservation():
    center_large = area_small = 0
    for seed in range(200):
        scene = gen_occlusion_case(seed)
        row, col = contested_location(scene)
        large, small = 0, 1
        assert scene.instances[large].area > scene.instances[small].area
        if build_targets(scene, [OCCLUSION_LEVEL], "center").levels[0].owner[row, col] == large:
            center_large += 1
        if build_targets(scene, [OCCLUSION_LEVEL], "area").levels[0].owner[row, col] == small:
            area_small += 1
    _verdict(2, "center preservation",
             {"center-aware": center_large == 200, "area-minimal": area_small == 200},
             f"center-aware kept the large instance {center_large}/200, area-minimal gave the small one {area_small}/200")


def test_criterion_3_assembly_semantics():
    rng = np.random.default_rng(3)
    worst = 0.0
    sign_ok = scale_ok = True
    for _ in range(100):
        h, w = (int(v) for v in rng.integers(4, 12, size=2))
        P = rng.normal(scale=2.0, size=(h, w, 32))
        C = rng.normal(size=32)
        stack = PrototypeStack(P)
        worst = max(worst, float(np.abs(assemble(stack, C).values - scalar_assemble(P, C)).max()))
        m = binarize(assemble(stack, C), 0.5)
        sign_ok &= bool(np.array_equal(m.bits, mask_logits(stack, C) > 0))
        lam = float(np.exp(rng.uniform(-5, 5)))
        scale_ok &= binarize(assemble(stack, lam * C), 0.5) == m
    _verdict(3, "mask assembly semantics",
             {"reference": worst < 1e-12, "sign": sign_ok, "scaling": scale_ok},
             f"max |assemble - scalar| = {worst:.2e} (< 1e-12), sign test exact: {sign_ok}, scale invariant: {scale_ok}")


def _disjoint_box_scenes(count):
    out, i = [], 0
    cfg = SynthConfig(seed=404, instance_count=(1, 4))
    while len(out) < count:
        scene = gen_scene(cfg, i)
        i += 1
        boxes = [inst.box for inst in scene.instances]
        if all(box_iou(a, b) == 0.0 for j, a in enumerate(boxes) for b in boxes[j + 1:]):
            out.append(scene)
    return out


def test_criterion_4_coefficient_capacity():
    scenes = _disjoint_box_scenes(50)
    gt_ious = []
    for scene in scenes:
        masks = [inst.mask for inst in scene.instances]
        P = gt_basis(masks)
        gt_ious += [mask_iou(reconstruct(P, fit_coefficients(P, m)), m) for m in masks]
    basis = smooth_basis(64, 64, 32, seed=0)
    by_k = {}
    for k in (4, 32):
        P = basis.first(k)
        by_k[k] = float(np.mean([mask_iou(reconstruct(P, fit_coefficients(P, inst.mask)), inst.mask)
                                 for s in scenes for inst in s.instances]))
    _verdict(4, "coefficient capacity",
             {"gt basis": min(gt_ious) >= 0.99, "random basis": by_k[32] >= by_k[4]},
             f"GT basis min IoU {min(gt_ious):.4f} over {len(gt_ious)} instances (>= 0.99); "
             f"smooth basis mean IoU k=4 {by_k[4]:.4f}, k=32 {by_k[32]:.4f}")


def test_criterion_5_gradient_check():
    cfg = ModelConfig(c=1, k=2, trunk_channels=(3, 4, 4), head_channels=4, seed=3)
    model = init_model(cfg)
    box = BBox(0.5, 1.0, 7.0, 7.5)
    scene = Scene("grad", 8, 8, (InstanceAnnotation(0, box, BinaryMask.from_box(BBox(1, 2, 6, 7), 8, 8)),))
    targets = toy_targets(scene, cfg)
    start = time.perf_counter()
    worst, where = finite_difference_check(model, render_image(scene), targets, scene, h=1e-5)
    elapsed = time.perf_counter() - start
    _verdict(5, "gradient correctness",
             {"one positive": targets.positive_counts() == [1], "error": worst < 1e-4, "runtime": elapsed < 60.0},
             f"max relative error {worst:.2e} (< 1e-4) over all {model.num_parameters()} parameters, "
             f"worst at {where[0]}[{where[1]}], {elapsed:.1f}s (< 60s)")


def test_criterion_6_head_arity():
    rng = np.random.default_rng(6)
    arity_ok = fusion_ok = True
    for i in range(5):
        cfg = ModelConfig(c=int(rng.integers(1, 6)), k=int(rng.integers(1, 33)),
                          trunk_channels=tuple(int(v) for v in rng.integers(2, 9, size=3)),
                          head_channels=int(rng.integers(2, 9)), seed=i)
        model = init_model(cfg)
        img = rng.random((16, 32))
        out = forward(model, img)
        arity_ok &= out.per_location().shape == (2 * 4, cfg.c + 1 + 4 + cfg.k)
        plain = init_model(ModelConfig(**{**cfg.to_dict(), "fuse_branches": False}))
        other = forward(plain, img)
        same = all(np.array_equal(getattr(out, n), getattr(other, n))
                   for n in ("cls_logits", "ctr_logits", "reg_raw", "protos"))
        fusion_ok &= same and not np.array_equal(out.coeffs, other.coeffs)
    _verdict(6, "head arity", {"arity": arity_ok, "fusion": fusion_ok},
             f"per-location outputs == c+1+4+k: {arity_ok}; fusion off changes coefficients only: {fusion_ok}")


@pytest.fixture(scope="module")
def learnability():
    train_scenes = gen_scenes(SynthConfig(seed=1), 300)
    test_scenes = gen_scenes(SynthConfig(seed=2), 50)
    config = ModelConfig(c=1, k=32, seed=0)
    hyper = TrainHyper(lr=0.01, epochs=20, seed=0)
    start = time.perf_counter()
    model, curve = train(init_model(config), train_scenes, hyper)
    preds = {s.id: predict(model, render_image(s)) for s in test_scenes}
    box = evaluate(preds, test_scenes, EvalConfig(kind="box"))
    mask = evaluate(preds, test_scenes, EvalConfig(kind="mask"))
    elapsed = time.perf_counter() - start
    rerun, curve2 = train(init_model(config), train_scenes, hyper)
    identical = model_to_json(model) == model_to_json(rerun) and curve_to_csv(curve) == curve_to_csv(curve2)
    return {"curve": curve, "box": box, "mask": mask, "elapsed": elapsed, "identical": identical}


@pytest.mark.slow
def test_criterion_7_toy_learnability(learnability):
    curve = learnability["curve"]
    first, last = curve[0].mean_total, curve[-1].mean_total
    drop = 1.0 - last / first
    box50, mask50 = learnability["box"].AP50, learnability["mask"].AP50
    final = curve[-1].means
    _verdict(7, "toy learnability",
             {"loss drop": drop >= 0.60, "box AP50": box50 >= 0.5, "mask AP50": mask50 >= 0.3,
              "runtime": learnability["elapsed"] < 900.0, "rerun": learnability["identical"]},
             f"loss {first:.4f} -> {last:.4f} (drop {drop:.1%}, needs >= 60%; final center BCE "
             f"{final['center_bce']:.4f}), box AP50 {box50:.3f} (>= 0.5), mask AP50 {mask50:.3f} (>= 0.3), "
             f"{learnability['elapsed']:.0f}s (< 900s), bit-identical rerun: {learnability['identical']}")


@pytest.mark.slow
@pytest.mark.parametrize("part", ["box AP50", "mask AP50", "runtime", "rerun"])
def test_criterion_7_parts(learnability, part):
    # the same run as above, one clause per test so passing clauses stay visible
    value = {
        "box AP50": learnability["box"].AP50 >= 0.5,
        "mask AP50": learnability["mask"].AP50 >= 0.3,
        "runtime": learnability["elapsed"] < 900.0,
        "rerun": learnability["identical"],
    }[part]
    assert value


def _gt_detection(inst, score=0.9):
    return Detection(inst.class_id, score, inst.box, SoftMask(inst.mask.bits.astype(np.float64)))


def test_criterion_8_evaluator_fixtures():
    scenes = gen_scenes(SynthConfig(seed=8, num_classes=2), 20)
    perfect = {s.id: [_gt_detection(g) for g in s.instances] for s in scenes}
    perfect_ok = all(evaluate(perfect, scenes, EvalConfig(kind=k)).mAP == 1.0 for k in ("box", "mask"))

    def filled(box, size=64):
        return BinaryMask.from_box(BBox(*box), size, size)

    fixture = Scene("iou60", 64, 64, (InstanceAnnotation(0, BBox(0, 0, 10, 10), filled((0, 0, 10, 10))),
                                      InstanceAnnotation(0, BBox(40, 40, 50, 50), filled((40, 40, 50, 50)))))
    det = Detection(0, 0.8, BBox(0, 0, 10, 6), SoftMask(filled((0, 0, 10, 6)).bits.astype(float)))
    expected = float(np.mean([51 / 101] * 3 + [0.0] * 7))
    fixture_maps = [evaluate({"iou60": [det]}, [fixture], EvalConfig(kind=k)).mAP for k in ("box", "mask")]
    fixture_ok = all(m == expected for m in fixture_maps)

    ap_ok = average_precision([True, False], 2) == 51 / 101

    rng = np.random.default_rng(88)
    gts, dets = [], []
    for _ in range(8):
        x, y = (int(v) for v in rng.integers(0, 44, size=2))
        w, h = (int(v) for v in rng.integers(3, 20, size=2))
        gts.append(InstanceAnnotation(0, BBox(x, y, x + w, y + h), filled((x, y, x + w, y + h))))
        dx, dy = (int(v) for v in rng.integers(-3, 4, size=2))
        b = (max(0, x + dx), max(0, y + dy), min(64, x + dx + w), min(64, y + dy + h))
        dets.append(Detection(0, float(rng.random()), BBox(*b), SoftMask(filled(b).bits.astype(float))))
    sc = Scene("filled", 64, 64, tuple(gts))
    kinds = [evaluate({"filled": dets}, [sc], EvalConfig(kind=k)) for k in ("box", "mask")]
    same_ok = kinds[0].mAP == kinds[1].mAP and kinds[0].per_threshold == kinds[1].per_threshold
    _verdict(8, "evaluator fixtures",
             {"perfect": perfect_ok, "iou 0.6": fixture_ok, "51/101": ap_ok, "box == mask": same_ok},
             f"perfect mAP 1.0: {perfect_ok}; IoU-0.6 fixture mAP {fixture_maps[0]!r} vs {expected!r}; "
             f"AP[TP,FP | 2 GT] == 51/101: {ap_ok}; box == mask on filled boxes: {same_ok}")


def test_criterion_9_codecs():
    rng = np.random.default_rng(9)
    rle_ok = all(
        rle_roundtrip(m) == m
        for m in (BinaryMask(rng.random(tuple(int(v) for v in rng.integers(1, 40, size=2))) < rng.random())
                  for _ in range(1000))
    )
    scenes = [random_mask_scene(rng, f"f{i}") for i in range(1000)]
    once = write_scene_file(scenes)
    back = parse_scene_file(once)
    json_ok = write_scene_file(back) == once and all(
        a.id == b.id and len(a) == len(b)
        and all(x.mask == y.mask and x.class_id == y.class_id
                and x.box.as_tuple() == tuple(round(v, 6) for v in y.box.as_tuple())
                for x, y in zip(b.instances, a.instances))
        for a, b in zip(scenes, back)
    )
    poly_ok = True
    for _ in range(100):
        n = int(rng.integers(3, 12))
        w, h = (int(v) for v in rng.integers(4, 32, size=2))
        pts = [tuple(p) for p in rng.uniform(-4, max(w, h) + 4, size=(n, 2))]
        poly_ok &= bool(np.array_equal(rasterize_polygon(pts, w, h).bits, brute_force_raster(pts, w, h)))
    _verdict(9, "codec round-trips",
             {"rle": rle_ok, "scene json": json_ok, "rasterizer": poly_ok},
             f"RLE identity on 1000 masks: {rle_ok}; scene JSON identity on 1000 scenes: {json_ok}; "
             f"rasterizer == point-in-polygon on 100 polygons: {poly_ok}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
