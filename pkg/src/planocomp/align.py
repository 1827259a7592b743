"""Planogram alignment with quantity-valued gap penalties, and compliance scoring.

The score matrix is indexed ``F[d][t]`` with ``d`` running over detected
groups and ``t`` over reference groups. Skipping a reference group costs its
required quantity; skipping a detected group costs its detected quantity.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Literal

from planocomp.model import (
    GAP_DET_GROUP,
    GAP_REF_GROUP,
    PlanogramGroup,
    PlanogramSeq,
)


class Move(enum.IntEnum):
    DIAG = 0
    UP = 1  # consume a reference group against a detected-side gap
    LEFT = 2  # consume a detected group against a reference-side gap


class Status(str, enum.Enum):
    MT = "MT"  # label and quantity match
    ME = "ME"  # label matches, more items than required
    MI = "MI"  # label matches, fewer items than required
    NM = "NM"  # labels differ, or one side is a gap


def quantity_substitution(det: PlanogramGroup, ref: PlanogramGroup) -> int:
    """+min(q_d, q_t) on a label match, -max(q_d, q_t) otherwise."""
    if det.label == ref.label:
        return min(det.quantity, ref.quantity)
    return -max(det.quantity, ref.quantity)


@dataclass(frozen=True)
class AlignParams:
    """Scoring rules for :func:`nw_align`.

    Attributes:
        substitution: score for pairing a detected group with a reference group.
        border: ``"unit"`` charges 1 per step along the first row and column;
            ``"dynamic"`` charges the skipped group's quantity there too.
    """

    substitution: Callable[[PlanogramGroup, PlanogramGroup], float] = quantity_substitution
    border: Literal["unit", "dynamic"] = "unit"

    def __post_init__(self) -> None:
        if self.border not in ("unit", "dynamic"):
            raise ValueError(f"unknown border rule {self.border!r}")

    def delete_penalty(self, ref: PlanogramGroup, on_border: bool) -> float:
        return 1 if on_border and self.border == "unit" else ref.quantity

    def insert_penalty(self, det: PlanogramGroup, on_border: bool) -> float:
        return 1 if on_border and self.border == "unit" else det.quantity


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    values: list[list[float]]
    trace: list[list[Move | None]]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.values), len(self.values[0])

    @property
    def terminal(self) -> float:
        return self.values[-1][-1]


@dataclass(frozen=True)
class AlignmentResult:
    """Aligned reference/detected sequences, optionally with compliance statuses.

    ``statuses`` is empty and ``mu`` is ``None`` until :func:`compliance_control`
    has run.
    """

    ref_aligned: PlanogramSeq
    det_aligned: PlanogramSeq
    score: float = 0
    statuses: tuple[Status, ...] = ()
    mu: Fraction | None = None
    ref_index: tuple[int | None, ...] = field(default=())

    def __post_init__(self) -> None:
        if len(self.ref_aligned) != len(self.det_aligned):
            raise ValueError(
                f"aligned sequences differ in length: {len(self.ref_aligned)} vs {len(self.det_aligned)}"
            )
        if self.statuses and len(self.statuses) != len(self.ref_aligned):
            raise ValueError("one status per aligned position is required")
        if not self.ref_index:
            idx: list[int | None] = []
            k = 0
            for g in self.ref_aligned:
                if g.is_gap:
                    idx.append(None)
                else:
                    idx.append(k)
                    k += 1
            object.__setattr__(self, "ref_index", tuple(idx))

    def __len__(self) -> int:
        return len(self.ref_aligned)

    @property
    def positions(self) -> list[tuple[PlanogramGroup, PlanogramGroup]]:
        return list(zip(self.ref_aligned, self.det_aligned))

    def to_dict(self) -> dict:
        return {
            "mu": None if self.mu is None else float(self.mu),
            "mu_exact": None if self.mu is None else f"{self.mu.numerator}/{self.mu.denominator}",
            "score": self.score,
            "positions": [
                {
                    "ref": r.to_dict(),
                    "det": d.to_dict(),
                    "status": s.value if s else None,
                }
                for r, d, s in zip(
                    self.ref_aligned, self.det_aligned, self.statuses or (None,) * len(self)
                )
            ],
        }


def alignment_from_dict(data: dict) -> AlignmentResult:
    """Inverse of :meth:`AlignmentResult.to_dict` (statuses and ratio included)."""
    pos = data["positions"]
    ref = PlanogramSeq(tuple(PlanogramGroup.from_dict(p["ref"]) for p in pos))
    det = PlanogramSeq(tuple(PlanogramGroup.from_dict(p["det"]) for p in pos))
    statuses = tuple(Status(p["status"]) for p in pos if p.get("status"))
    mu = Fraction(data["mu_exact"]) if data.get("mu_exact") else None
    return AlignmentResult(ref, det, data.get("score", 0), statuses, mu)


def fill_matrix(ref: PlanogramSeq, det: PlanogramSeq, params: AlignParams = AlignParams()) -> ScoreMatrix:
    E, T = len(det), len(ref)
    F: list[list[float]] = [[0] * (T + 1) for _ in range(E + 1)]
    trace: list[list[Move | None]] = [[None] * (T + 1) for _ in range(E + 1)]
    for t in range(1, T + 1):
        F[0][t] = F[0][t - 1] - params.delete_penalty(ref[t - 1], on_border=True)
        trace[0][t] = Move.UP
    for d in range(1, E + 1):
        F[d][0] = F[d - 1][0] - params.insert_penalty(det[d - 1], on_border=True)
        trace[d][0] = Move.LEFT
    for d in range(1, E + 1):
        o_d = det[d - 1]
        for t in range(1, T + 1):
            o_t = ref[t - 1]
            dia = F[d - 1][t - 1] + params.substitution(o_d, o_t)
            up = F[d][t - 1] - params.delete_penalty(o_t, on_border=False)
            left = F[d - 1][t] - params.insert_penalty(o_d, on_border=False)
            # tie-break order DIAG > UP > LEFT
            best, move = dia, Move.DIAG
            if up > best:
                best, move = up, Move.UP
            if left > best:
                best, move = left, Move.LEFT
            F[d][t] = best
            trace[d][t] = move
    return ScoreMatrix(F, trace)


def nw_align(ref: PlanogramSeq, det: PlanogramSeq, params: AlignParams = AlignParams()) -> AlignmentResult:
    """Globally align a detected planogram against its reference.

    Returns an :class:`AlignmentResult` without statuses. Reference groups
    with no detected counterpart are paired with ``GAP_DET``; detected groups
    with no reference counterpart are paired with ``GAP_REF``.
    """
    if any(g.is_gap for g in ref) or any(g.is_gap for g in det):
        raise ValueError("input sequences must not contain gap sentinels")
    M = fill_matrix(ref, det, params)
    d, t = len(det), len(ref)
    r_out: list[PlanogramGroup] = []
    s_out: list[PlanogramGroup] = []
    while (d, t) != (0, 0):
        move = M.trace[d][t]
        if move is Move.DIAG:
            r_out.append(ref[t - 1])
            s_out.append(det[d - 1])
            d, t = d - 1, t - 1
        elif move is Move.UP:
            r_out.append(ref[t - 1])
            s_out.append(GAP_DET_GROUP)
            t -= 1
        else:
            r_out.append(GAP_REF_GROUP)
            s_out.append(det[d - 1])
            d -= 1
    r_out.reverse()
    s_out.reverse()
    return AlignmentResult(PlanogramSeq(tuple(r_out)), PlanogramSeq(tuple(s_out)), score=M.terminal)


def compliance_control(aligned: AlignmentResult) -> AlignmentResult:
    """Tag every aligned position and compute the compliance ratio ``mu``.

    ``mu`` is the number of correctly present required items over the number
    of required items, as an exact fraction. An empty reference is fully
    compliant.
    """
    statuses: list[Status] = []
    total = 0
    required = 0
    for r, d in zip(aligned.ref_aligned, aligned.det_aligned):
        if r.label == d.label:
            if d.quantity == r.quantity:
                statuses.append(Status.MT)
            elif d.quantity > r.quantity:
                statuses.append(Status.ME)
            else:
                statuses.append(Status.MI)
            total += min(d.quantity, r.quantity)
        else:
            statuses.append(Status.NM)
        required += r.quantity
    mu = Fraction(total, required) if required else Fraction(1)
    return replace(aligned, statuses=tuple(statuses), mu=mu)


def align_and_check(
    ref: PlanogramSeq, det: PlanogramSeq, params: AlignParams = AlignParams()
) -> AlignmentResult:
    return compliance_control(nw_align(ref, det, params))
