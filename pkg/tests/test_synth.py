import filecmp
import json
from fractions import Fraction

import numpy as np
import pytest

from planocomp.align import Status, alignment_from_dict
from planocomp.config import ConfigError, PipelineConfig, StoreConfig, load_config
from planocomp.evaluation.runner import evaluate
from planocomp.evaluation.synth import (
    PERTURBATIONS,
    SynthSpec,
    generate_synthetic,
    load_dataset,
    make_catalog,
    write_dataset,
)
from planocomp.ingest.imaging import RackImage
from planocomp.model import Catalog
from planocomp.power import HarvestSource
from planocomp.providers import OracleDetector, OracleFeatures
from planocomp.search import run_search

SPEC = SynthSpec()
PRODUCTS = make_catalog(SPEC)
CATALOG = Catalog([p.model for p in PRODUCTS.values()])


def search(rack):
    det = OracleDetector(OracleDetector.dump({rack.key: list(rack.boxes)}))
    feat = OracleFeatures(OracleFeatures.dump(SPEC.descriptor_dim, {rack.key: rack.features}))
    return run_search(RackImage(rack.key, rack.image), rack.reference, CATALOG, det, feat)


@pytest.mark.parametrize("seed", range(5))
def test_unperturbed_truth_is_all_mt(seed):
    r = generate_synthetic(seed, SPEC, products=PRODUCTS)
    assert set(r.truth.statuses) == {Status.MT}
    assert r.truth.mu == 1
    assert obj_boxes_inside(r)


def obj_boxes_inside(r):
    h, w = r.image.shape[:2]
    return all(0 <= d.top_left[0] and d.bottom_right[0] <= w and 0 <= d.top_left[1] and d.bottom_right[1] <= h for d in r.truth_detections)


def test_remove_one_of_three():
    spec = SynthSpec(planogram=(("P00", 1), ("P01", 3), ("P02", 2)))
    r = generate_synthetic(4, spec, "remove")
    # the group with quantity >= 2 is chosen at random; check the arithmetic for whichever it was
    g = r.perturbation["group"]
    assert r.truth.statuses[g] is Status.MI
    total = sum(q for _, q in spec.planogram)
    assert r.truth.mu == Fraction(total - 1, total)
    assert len(r.truth_detections) == total - 1


def test_remove_when_single_group_of_three():
    spec = SynthSpec(planogram=(("P03", 3),))
    r = generate_synthetic(0, spec, "remove")
    assert r.truth.statuses == (Status.MI,) and r.truth.mu == Fraction(2, 3)


def test_swap_foreign_and_shift_are_recorded():
    spec = SynthSpec(planogram=(("P00", 2), ("P01", 2), ("P02", 2)))
    swap = generate_synthetic(1, spec, "swap")
    assert swap.perturbation["kind"] == "swap" and Status.NM in swap.truth.statuses
    foreign = generate_synthetic(1, spec, "foreign")
    assert foreign.perturbation["label"] not in {"P00", "P01", "P02"}
    assert foreign.truth.statuses.count(Status.NM) == 1 and foreign.truth.mu == 1
    shift = generate_synthetic(1, spec, "shift")
    st = {s for s in shift.truth.statuses}
    assert st == {Status.MT, Status.MI, Status.ME}
    assert shift.truth.mu == Fraction(5, 6)


def test_same_seed_same_rack():
    a = generate_synthetic(9, SPEC, "shift", products=PRODUCTS)
    b = generate_synthetic(9, SPEC, "shift", products=PRODUCTS)
    assert np.array_equal(a.image, b.image)
    assert a.boxes == b.boxes and a.perturbation == b.perturbation
    assert np.array_equal(a.features.descriptors, b.features.descriptors)


def test_dataset_is_byte_identical(tmp_path):
    write_dataset(tmp_path / "a", 5, 6, SPEC, PERTURBATIONS)
    write_dataset(tmp_path / "b", 5, 6, SPEC, PERTURBATIONS)
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    names = ["catalog.json", "manifest.json", "oracle_boxes.json", "oracle_features.json"]
    assert all(filecmp.cmp(tmp_path / "a" / n, tmp_path / "b" / n, shallow=False) for n in names)
    imgs = sorted(p.name for p in (tmp_path / "a" / "images").iterdir())
    assert len(imgs) == 6
    assert all(filecmp.cmp(tmp_path / "a" / "images" / n, tmp_path / "b" / "images" / n, shallow=False) for n in imgs)


def test_dataset_round_trip(tmp_path):
    write_dataset(tmp_path, 2, 3, SPEC, ("remove",))
    ds = load_dataset(tmp_path)
    assert len(ds.entries) == 3 and set(ds.catalog) == set(PRODUCTS)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    for e, raw in zip(ds.entries, manifest["racks"]):
        assert e.truth.to_dict() == raw["truth"]
        assert alignment_from_dict(e.truth.to_dict()).statuses == e.truth.statuses


def test_overflow_is_an_error():
    with pytest.raises(ValueError):
        SynthSpec(width_range=(80, 1600))
    spec = SynthSpec(planogram=tuple((f"P0{i}", 3) for i in range(8)))
    with pytest.raises(ValueError, match="overflows"):
        generate_synthetic(0, spec)


def test_unknown_perturbation():
    with pytest.raises(ValueError):
        generate_synthetic(0, SPEC, "explode")


def test_spec_from_dict():
    s = SynthSpec.from_dict({"n_products": 4, "width_range": [60, 90], "planogram": [["P00", 2]]})
    assert s.width_range == (60, 90) and s.planogram == (("P00", 2),)
    with pytest.raises(ValueError):
        SynthSpec.from_dict({"colour": 1})


@pytest.mark.parametrize("kind", PERTURBATIONS)
def test_pipeline_reproduces_truth(kind):
    for seed in range(3):
        r = generate_synthetic(seed, SPEC, kind, products=PRODUCTS)
        out = search(r)
        assert out.result.statuses == r.truth.statuses
        assert out.mu == r.truth.mu


def test_search_returns_best_iteration():
    for seed in range(10):
        r = generate_synthetic(seed, SPEC, "remove", products=PRODUCTS)
        out = search(r)
        assert out.mu == max(t.mu for t in out.trace)


def test_runner_reports(tmp_path):
    write_dataset(tmp_path / "ds", 1, 5, SPEC, PERTURBATIONS)
    ds = load_dataset(tmp_path / "ds")
    serial = evaluate(ds)
    parallel = evaluate(ds, workers=3)
    assert [r.key for r in parallel.racks] == [e.key for e in ds.entries]
    assert serial.detection == parallel.detection and serial.compliance == parallel.compliance
    assert serial.detection.f1 == 1.0 and all(r.reproduced for r in serial.racks)
    text = serial.to_text()
    assert "Table 1" in text and "Table 2" in text and "Table 3" in text
    out = serial.write(tmp_path / "rep")
    lines = (out / "traces.jsonl").read_text().splitlines()
    assert len(lines) == 5 and all(json.loads(x)["trace"] for x in lines)


def test_pipeline_config(tmp_path):
    (tmp_path / "c.yaml").write_text(
        """
change: {pixel_threshold: 0.2}
detect: {tau_base: 1.0, tau_slope: 0.15, nms_iou: 0.4}
align: {border: dynamic}
search: {max_stall: 3}
providers: {detector: oracle, boxes: data/boxes.json}
node: {wakes_per_day: 4}
harvest:
  - {kind: solar, width_mm: 52, height_mm: 27, lux: 250}
  - {kind: rf, dbm: -8}
service: {queue_size: 8, workers: 1}
simulation: {days: 5, change_probability: 0.5}
eval: {workers: 2}
"""
    )
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg.change.pixel_threshold == 0.2
    assert cfg.search.detect.tau(1.0) == pytest.approx(0.85) and cfg.search.detect.nms_iou == 0.4
    assert cfg.search.align.border == "dynamic" and cfg.search.max_stall == 3
    assert cfg.providers.boxes == tmp_path / "data" / "boxes.json"
    assert cfg.node.wakes_per_day == 4
    assert cfg.harvest[0] == HarvestSource.solar(lux=250)
    assert cfg.harvest[1].output_current == pytest.approx(0.018)
    assert cfg.service.queue_size == 8 and cfg.simulation.days == 5 and cfg.eval_workers == 2
    assert load_config(None) == PipelineConfig()


@pytest.mark.parametrize(
    "text",
    ["bogus: {}", "detect: {tau: 1}", "align: {border: wide}", "node: {active_current: -1}", "harvest: [{kind: wind}]"],
)
def test_bad_pipeline_config(tmp_path, text):
    (tmp_path / "c.yaml").write_text(text)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.yaml")


def test_store_config(tmp_path):
    CATALOG.save(tmp_path / "cat.json")
    good = {"token": "t", "catalog": "cat.json", "devices": {"cam": {"rack_count": 2, "racks": [[["P00", 2]], [{"label": "P01", "quantity": 1}]]}}}
    (tmp_path / "s.json").write_text(json.dumps(good))
    s = StoreConfig.load(tmp_path / "s.json")
    assert s.devices["cam"].rack_count == 2 and s.devices["cam"].references[0].pairs() == [("P00", 2)]
    for bad in (
        {**good, "token": ""},
        {**good, "devices": {"cam": {"rack_count": 3, "racks": [[["P00", 1]]]}}},
        {**good, "devices": {"cam": {"racks": [[["ZZ", 1]]]}}},
        {**good, "devices": {"cam": {"racks": []}}},
    ):
        with pytest.raises(ConfigError):
            StoreConfig.from_dict(bad, tmp_path)
