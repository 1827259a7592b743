"""Focused, iterative re-search of a rack until it is compliant or progress stalls."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from planocomp.align import AlignmentResult, AlignParams, Status, align_and_check
from planocomp.detect import DetectParams, detect_product, filter_boxes
from planocomp.ingest.imaging import RackImage
from planocomp.model import Detection, PlanogramSeq, ProductModel, obj_to_planogram
from planocomp.providers import DetectorProvider, FeatureProvider, ProviderError

log = logging.getLogger(__name__)


def decay_alpha(alpha: float, factor: float = 0.75) -> float:
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return factor * alpha


@dataclass(frozen=True)
class RoiInterval:
    ref_index: int
    label: str
    start: float
    end: float


@dataclass(frozen=True)
class RoiSpec:
    intervals: tuple[RoiInterval, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.intervals)

    def bounds(self) -> list[tuple[float, float]]:
        return [(iv.start, iv.end) for iv in self.intervals]

    def contains(self, x: float) -> bool:
        return any(iv.start <= x <= iv.end for iv in self.intervals)


def select_roi(
    result: AlignmentResult,
    rack_width: float,
    catalog: Mapping[str, ProductModel],
    expand: float = 0.5,
) -> RoiSpec:
    """Image intervals to re-search, one per non-MT reference group.

    Each interval runs from the right edge of the nearest MT group on the
    left to the left edge of the nearest MT group on the right (image
    borders when there is none), widened by ``expand`` times the product's
    reference width on both sides and clamped to the image.
    """
    if not result.statuses:
        raise ValueError("result has no statuses; run compliance_control first")
    positions = list(zip(result.ref_aligned, result.det_aligned, result.statuses, result.ref_index))
    mt_spans = [
        d.span if s is Status.MT else None for _, d, s, _ in positions
    ]
    out = []
    for i, (r, _, s, k) in enumerate(positions):
        if r.is_gap or s is Status.MT:
            continue
        left = next((sp[1] for sp in reversed(mt_spans[:i]) if sp is not None), 0.0)
        right = next((sp[0] for sp in mt_spans[i + 1 :] if sp is not None), float(rack_width))
        pad = expand * catalog[r.label].width_ref if r.label in catalog else 0.0
        lo = max(0.0, min(left, right) - pad)
        hi = min(float(rack_width), max(left, right) + pad)
        assert k is not None
        out.append(RoiInterval(k, r.label, lo, hi))
    return RoiSpec(tuple(out))


@dataclass(frozen=True)
class SearchParams:
    detect: DetectParams = DetectParams()
    align: AlignParams = AlignParams()
    alpha0: float = 1.0
    alpha_decay: float = 0.75
    max_stall: int = 6
    roi_expand: float = 0.5
    max_iterations: int = 200


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    alpha: float
    tau: float
    mu: Fraction
    stall_count: int
    statuses: tuple[str, ...]
    roi: tuple[tuple[float, float], ...]
    searched: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "alpha": self.alpha,
            "tau": self.tau,
            "mu": float(self.mu),
            "mu_exact": f"{self.mu.numerator}/{self.mu.denominator}",
            "stall_count": self.stall_count,
            "statuses": list(self.statuses),
            "roi": [list(iv) for iv in self.roi],
            "searched": list(self.searched),
        }


@dataclass
class SearchOutcome:
    result: AlignmentResult
    detections: list[Detection]
    trace: list[IterationRecord] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def mu(self) -> Fraction:
        assert self.result.mu is not None
        return self.result.mu


def _mt_members(result: AlignmentResult, detections: Sequence[Detection]) -> set[int]:
    """Indices of detections that make up MT groups."""
    members: set[int] = set()
    for d_group, status in zip(result.det_aligned, result.statuses):
        if status is not Status.MT or d_group.span is None:
            continue
        lo, hi = d_group.span
        for i, det in enumerate(detections):
            if det.label == d_group.label and lo <= det.top_left[0] and det.bottom_right[0] <= hi:
                members.add(i)
    return members


def _settled_labels(result: AlignmentResult) -> set[str]:
    """Labels that appear only in MT positions."""
    seen: dict[str, bool] = {}
    for r, d, s in zip(result.ref_aligned, result.det_aligned, result.statuses):
        for g in (r, d):
            if not g.is_gap:
                seen[g.label] = seen.get(g.label, True) and s is Status.MT
    return {label for label, ok in seen.items() if ok}


def _sort_key(d: Detection):
    return (d.center[0], d.label, d.center[1])


def _drop_frozen_neighbours(frozen: list[Detection], fresh: list[Detection]) -> list[Detection]:
    """Discard fresh detections that would merge into a frozen group of the same label."""
    fresh = list(fresh)
    while True:
        tagged = sorted([(d, True) for d in frozen] + [(d, False) for d in fresh], key=lambda t: _sort_key(t[0]))
        bad = None
        for i, (d, is_frozen) in enumerate(tagged):
            if is_frozen:
                continue
            for j in (i - 1, i + 1):
                if 0 <= j < len(tagged) and tagged[j][1] and tagged[j][0].label == d.label:
                    bad = d
                    break
            if bad is not None:
                break
        if bad is None:
            return fresh
        fresh.remove(bad)


def run_search(
    rack: RackImage,
    ref: PlanogramSeq,
    catalog: Mapping[str, ProductModel],
    detector: DetectorProvider,
    features: FeatureProvider,
    params: SearchParams = SearchParams(),
) -> SearchOutcome:
    """Detect products on one rack and align them with its reference planogram.

    Boxes and scene features are extracted once. Each iteration relaxes the
    ratio-test threshold, re-detects every product that is not settled
    within the regions around non-compliant groups, and re-aligns.
    Detections forming MT groups are frozen. The loop ends at full
    compliance or after ``max_stall`` iterations without improvement. The
    returned outcome is the first iteration that reached the best ratio, so
    spurious matches admitted by a looser threshold cannot make it worse.
    """
    missing = {g.label for g in ref} - set(catalog)
    if missing:
        raise ValueError(f"catalog lacks reference products {sorted(missing)}")
    if len(ref) == 0:
        return SearchOutcome(align_and_check(ref, PlanogramSeq(), params.align), [])

    try:
        candidates = detector.candidates(rack)
        scene = features.extract(rack)
    except ProviderError:
        raise
    except Exception as e:  # provider implementations are external code
        raise ProviderError(f"provider failed on {rack.key!r}: {e}") from e

    filtered = {label: filter_boxes(candidates, model, params.detect) for label, model in catalog.items()}
    full = RoiSpec((RoiInterval(-1, "*", 0.0, float(rack.width)),))

    frozen: list[Detection] = []
    active: list[Detection] = []
    result: AlignmentResult | None = None
    mu = best = Fraction(0)
    alpha = params.alpha0
    stall = 0
    trace: list[IterationRecord] = []
    kept_result: AlignmentResult | None = None
    kept_detections: list[Detection] = []
    best_kept = Fraction(0)

    while stall < params.max_stall and mu != 1 and len(trace) < params.max_iterations:
        tau = params.detect.tau(alpha)
        if result is None:
            roi, labels = full, list(catalog)
        else:
            roi = select_roi(result, rack.width, catalog, params.roi_expand) or full
            settled = _settled_labels(result)
            labels = [label for label in catalog if label not in settled]
        scene_roi = scene.within_x(roi.bounds())
        frozen_spans = [(d.top_left[0], d.bottom_right[0]) for d in frozen]

        fresh: list[Detection] = []
        for label in labels:
            for det in detect_product(filtered[label], scene_roi, catalog[label], tau, params.detect, True):
                cx = det.center[0]
                if roi.contains(cx) and not any(lo <= cx <= hi for lo, hi in frozen_spans):
                    fresh.append(det)
        relabelled = set(labels)
        kept = [d for d in active if not (d.label in relabelled and roi.contains(d.center[0]))]
        fresh = _drop_frozen_neighbours(frozen, kept + fresh)
        detections = frozen + fresh

        result = align_and_check(ref, obj_to_planogram(detections), params.align)
        assert result.mu is not None
        mu = result.mu
        members = _mt_members(result, detections)
        if mu > best:
            best, stall = mu, 0
        else:
            stall += 1
        frozen = [d for i, d in enumerate(detections) if i in members]
        active = [d for i, d in enumerate(detections) if i not in members]
        if kept_result is None or mu > best_kept:
            kept_result, kept_detections, best_kept = result, frozen + active, mu

        trace.append(
            IterationRecord(
                len(trace) + 1,
                alpha,
                tau,
                mu,
                stall,
                tuple(s.value for s in result.statuses),
                tuple(roi.bounds()),
                tuple(labels),
            )
        )
        log.debug("rack %s iteration %d tau=%.4f mu=%s", rack.key, len(trace), tau, mu)
        alpha = decay_alpha(alpha, params.alpha_decay)

    assert kept_result is not None
    return SearchOutcome(kept_result, kept_detections, trace)
