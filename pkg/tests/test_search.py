import numpy as np
import pytest

from scenes import DIM, FixedDetector, FixedFeatures, Scene, product
from planocomp.align import AlignmentResult, Status, align_and_check, compliance_control
from planocomp.model import CandidateBox, FeatureSet, PlanogramGroup, PlanogramSeq
from planocomp.providers import DetectorProvider, ProviderError
from planocomp.search import RoiSpec, SearchParams, decay_alpha, run_search, select_roi

A, B, C = product("A", seed=1), product("B", seed=2), product("C", seed=3)
CAT = {"A": A, "B": B, "C": C}


def test_decay_alpha():
    assert decay_alpha(1.0) == 0.75
    assert decay_alpha(0.75) == 0.5625
    a = 1.0
    for n in range(1, 60):
        a = decay_alpha(a)
        assert a == pytest.approx(0.75**n) and a > 0


def test_roi_empty_when_compliant():
    res = align_and_check(PlanogramSeq.of(("A", 1)), PlanogramSeq((PlanogramGroup("A", 1, (0, 80)),)))
    assert not select_roi(res, 1600, CAT)


def aligned(rows):
    ref = PlanogramSeq(tuple(r for r, _ in rows))
    det = PlanogramSeq(tuple(d for _, d in rows))
    return compliance_control(AlignmentResult(ref, det))


def test_roi_between_compliant_neighbours():
    model = product("B", w=100)
    res = aligned([
        (PlanogramGroup("A", 1), PlanogramGroup("A", 1, (100, 200))),
        (PlanogramGroup("B", 3), PlanogramGroup("B", 2, (220, 380))),
        (PlanogramGroup("C", 1), PlanogramGroup("C", 1, (400, 500))),
    ])
    assert [s.value for s in res.statuses] == ["MT", "MI", "MT"]
    roi = select_roi(res, 1600, {"A": A, "B": model, "C": C})
    assert roi.bounds() == [(150.0, 450.0)]


def test_roi_clamped_at_border():
    model = product("B", w=100)
    res = aligned([
        (PlanogramGroup("B", 1), PlanogramGroup("C", 1, (10, 90))),
        (PlanogramGroup("A", 1), PlanogramGroup("A", 1, (300, 400))),
    ])
    roi = select_roi(res, 1600, {"A": A, "B": model, "C": C})
    assert roi.bounds() == [(0.0, 350.0)]


def perfect_scene():
    s = Scene(seed=5)
    s.place(A, 100, visible=range(0, 40, 2))
    s.place(A, 200, visible=range(1, 40, 2))
    s.place(B, 320)
    s.place(C, 450)
    s.clutter()
    return s


def test_perfect_detections_finish_in_one_iteration():
    s = perfect_scene()
    det, feat = FixedDetector(s.boxes), FixedFeatures(s.features())
    ref = PlanogramSeq.of(("A", 2), ("B", 1), ("C", 1))
    out = run_search(s.rack(), ref, CAT, det, feat)
    assert out.iterations == 1 and out.mu == 1
    assert det.calls == 1 and feat.calls == 1
    assert len(out.detections) == 4


def test_nothing_found_stalls_after_six():
    ref = PlanogramSeq.of(("A", 2), ("B", 1))
    out = run_search(Scene().rack(), ref, CAT, FixedDetector([]), FixedFeatures(FeatureSet.empty(DIM)))
    assert out.iterations == 6 and out.mu == 0
    assert [r.stall_count for r in out.trace] == [1, 2, 3, 4, 5, 6]
    taus = [r.tau for r in out.trace]
    assert taus == pytest.approx([0.95 - 0.2 * 0.75**i for i in range(6)], abs=1e-12)


def test_hard_product_found_on_second_iteration():
    s = Scene(seed=6)
    s.place(A, 100, visible=range(0, 40, 2))
    s.place(A, 200, visible=range(1, 40, 2))
    s.place(B, 320, ratio=0.78)
    ref = PlanogramSeq.of(("A", 2), ("B", 1))
    out = run_search(s.rack(), ref, CAT, FixedDetector(s.boxes), FixedFeatures(s.features()))
    assert out.iterations == 2 and out.mu == 1
    assert out.trace[0].mu == pytest.approx(2 / 3)
    assert out.trace[0].tau == pytest.approx(0.75) and out.trace[1].tau == pytest.approx(0.80)
    # the second pass only re-searches products that were not settled
    assert out.trace[1].searched == ("B", "C")


def test_mt_groups_are_frozen():
    s = Scene(seed=7)
    s.place(A, 100, visible=range(0, 40, 2))
    s.place(A, 200, visible=range(1, 40, 2))
    s.place(B, 320, ratio=0.9)  # never passes before tau approaches 0.95
    ref = PlanogramSeq.of(("A", 2), ("B", 1))
    out = run_search(s.rack(), ref, CAT, FixedDetector(s.boxes), FixedFeatures(s.features()))
    for rec in out.trace:
        assert rec.statuses[0] == "MT"


def test_empty_reference_is_trivially_compliant():
    out = run_search(Scene().rack(), PlanogramSeq(), CAT, FixedDetector([]), FixedFeatures(FeatureSet.empty(DIM)))
    assert out.mu == 1 and out.iterations == 0


def test_reference_must_be_covered_by_catalog():
    with pytest.raises(ValueError):
        run_search(Scene().rack(), PlanogramSeq.of(("Z", 1)), CAT, FixedDetector([]),
                   FixedFeatures(FeatureSet.empty(DIM)))


class Broken(DetectorProvider):
    def candidates(self, rack):
        raise OSError("camera gone")


def test_provider_failure_aborts_with_diagnostic():
    with pytest.raises(ProviderError, match="camera gone"):
        run_search(Scene().rack(), PlanogramSeq.of(("A", 1)), CAT, Broken(), FixedFeatures(FeatureSet.empty(DIM)))


def test_max_stall_is_configurable():
    ref = PlanogramSeq.of(("A", 1))
    out = run_search(Scene().rack(), ref, CAT, FixedDetector([]), FixedFeatures(FeatureSet.empty(DIM)),
                     SearchParams(max_stall=3))
    assert out.iterations == 3
