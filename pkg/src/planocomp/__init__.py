"""Embedded planogram compliance pipeline.

Change-gated capture, detector-output filtering, local-feature gating,
planogram alignment with quantity-aware gap penalties, focused iterative
search, edge-node energy simulation and an evaluation harness.
"""

from planocomp.model import (
    GAP_DET,
    GAP_REF,
    CandidateBox,
    Detection,
    FeatureSet,
    LocalFeature,
    PlanogramGroup,
    PlanogramSeq,
    ProductModel,
    iou,
    obj_to_planogram,
)
from planocomp.align import AlignmentResult, AlignParams, compliance_control, nw_align, align_and_check

__all__ = [
    "GAP_DET",
    "GAP_REF",
    "AlignParams",
    "AlignmentResult",
    "CandidateBox",
    "Detection",
    "FeatureSet",
    "LocalFeature",
    "PlanogramGroup",
    "PlanogramSeq",
    "ProductModel",
    "align_and_check",
    "compliance_control",
    "iou",
    "nw_align",
    "obj_to_planogram",
]

__version__ = "0.1.0"
