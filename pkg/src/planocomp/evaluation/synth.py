"""Seeded synthetic racks with ground truth and matching oracle provider files.

Products are flat-colored rectangles. Each product model carries random
descriptors; a rendered rack carries noisy copies of them. Model features are
spread across a product's instances on the rack (each copy lands on one
instance, a small fraction on two) so that identical neighbours do not
defeat the ratio test.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import cv2
import numpy as np
from PIL import Image

from planocomp.align import AlignmentResult, align_and_check, alignment_from_dict
from planocomp.model import (
    CandidateBox,
    Catalog,
    Detection,
    FeatureSet,
    PlanogramSeq,
    ProductModel,
    obj_to_planogram,
)
from planocomp.providers import OracleDetector, OracleFeatures

PERTURBATIONS = ("none", "remove", "swap", "foreign", "shift")


@dataclass(frozen=True)
class SynthSpec:
    """Catalog and rack geometry for :func:`generate_synthetic`.

    ``planogram`` fixes the reference as ``(label, quantity)`` pairs; when
    empty a reference is drawn per seed from the catalog.
    """

    n_products: int = 8
    width_range: tuple[int, int] = (80, 180)
    height_range: tuple[int, int] = (150, 300)
    descriptor_dim: int = 32
    features_per_product: int = 64
    rack_width: int = 1600
    rack_height: int = 400
    groups_range: tuple[int, int] = (3, 6)
    quantity_range: tuple[int, int] = (1, 3)
    item_gap: int = 10
    margin: int = 20
    baseline_offset: int = 40
    visibility: float = 0.9
    shared_fraction: float = 0.05
    noise_range: tuple[float, float] = (0.02, 0.15)
    clutter: int = 200
    jitter_probability: float = 0.5
    jitter_shift: float = 0.03
    junk_boxes: int = 3
    catalog_seed: int = 0
    planogram: tuple[tuple[str, int], ...] = ()

    def __post_init__(self) -> None:
        if self.n_products < 2:
            raise ValueError("at least two products are needed")
        if not 0 <= self.visibility <= 1 or not 0 <= self.shared_fraction <= 1:
            raise ValueError("visibility and shared_fraction must lie in [0, 1]")
        if self.width_range[1] + 2 * self.margin > self.rack_width:
            raise ValueError("products are wider than the rack")
        if self.height_range[1] + self.baseline_offset > self.rack_height:
            raise ValueError("products are taller than the rack")

    @property
    def labels(self) -> list[str]:
        return [f"P{i:02d}" for i in range(self.n_products)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> SynthSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown synth spec keys {sorted(unknown)}")
        kw = {}
        for k, v in data.items():
            if k == "planogram":
                kw[k] = tuple((str(a), int(b)) for a, b in v)
            elif isinstance(v, list):
                kw[k] = tuple(v)
            else:
                kw[k] = v
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class SynthProduct:
    model: ProductModel
    color: tuple[int, int, int]


def make_catalog(spec: SynthSpec = SynthSpec()) -> dict[str, SynthProduct]:
    """Product models drawn from ``spec.catalog_seed``; shared by every rack of a dataset."""
    rng = np.random.default_rng(spec.catalog_seed)
    out = {}
    for label in spec.labels:
        w = int(rng.integers(spec.width_range[0], spec.width_range[1] + 1))
        h = int(rng.integers(spec.height_range[0], spec.height_range[1] + 1))
        n = spec.features_per_product
        # keep keypoints off the edges so jittered neighbour boxes do not reach them
        xy = np.column_stack([rng.uniform(0.08 * w, 0.92 * w, n), rng.uniform(0.08 * h, 0.92 * h, n)])
        desc = rng.normal(0.0, 1.0, (n, spec.descriptor_dim))
        color = tuple(int(c) for c in rng.integers(30, 226, 3))
        out[label] = SynthProduct(ProductModel(label, float(w), float(h), FeatureSet(xy, desc)), color)
    return out


@dataclass(frozen=True)
class Instance:
    label: str
    x0: int


@dataclass(frozen=True, eq=False)
class SynthRack:
    """One annotated rack plus the oracle outputs for it."""

    key: str
    image: np.ndarray  # (H, W, 3) uint8, RGB
    reference: PlanogramSeq
    truth_detections: tuple[Detection, ...]
    truth: AlignmentResult
    perturbation: dict
    boxes: tuple[CandidateBox, ...]
    features: FeatureSet

    @property
    def truth_statuses(self) -> tuple[str, ...]:
        return tuple(s.value for s in self.truth.statuses)

    def manifest_entry(self, image_path: str) -> dict:
        return {
            "key": self.key,
            "image": image_path,
            "reference": self.reference.to_list(),
            "truth_detections": [d.to_dict() for d in self.truth_detections],
            "truth": self.truth.to_dict(),
            "perturbation": self.perturbation,
        }


def _layout(groups: Sequence[tuple[str, int]], products: Mapping[str, SynthProduct], spec: SynthSpec):
    """Left-to-right placement; returns instances and the total width used."""
    x = spec.margin
    inst = []
    for label, q in groups:
        w = int(products[label].model.width_ref)
        for _ in range(q):
            inst.append(Instance(label, x))
            x += w + spec.item_gap
    return inst, x - spec.item_gap + spec.margin


def _draw_reference(rng: np.random.Generator, spec: SynthSpec, products: Mapping[str, SynthProduct]):
    labels = list(products)
    widest = max(p.model.width_ref for p in products.values())
    budget = spec.rack_width - widest - spec.item_gap  # room for one added item
    n = int(rng.integers(spec.groups_range[0], spec.groups_range[1] + 1))
    n = min(n, len(labels) - 1)  # leave a foreign product available
    chosen = [labels[i] for i in rng.permutation(len(labels))[:n]]
    groups = [(lb, int(rng.integers(spec.quantity_range[0], spec.quantity_range[1] + 1))) for lb in chosen]
    while len(groups) > 1 and _layout(groups, products, spec)[1] > budget:
        groups.pop()
    return groups


def _perturb(rng, kind: str, groups: list[tuple[str, int]], products, removed: list[int]) -> tuple[list, dict]:
    """Apply one perturbation to the group list; ``removed`` collects dropped instance indices."""
    groups = list(groups)
    info: dict = {"kind": kind}
    if kind == "none":
        return groups, info
    if kind == "remove":
        multi = [i for i, (_, q) in enumerate(groups) if q >= 2]
        g = int(rng.choice(multi)) if multi else int(rng.integers(len(groups)))
        label, q = groups[g]
        k = int(rng.integers(q))
        removed.append(sum(qq for _, qq in groups[:g]) + k)
        info.update(group=g, label=label, item=k)
        return groups, info
    if kind == "swap":
        if len(groups) < 2:
            raise ValueError("swap needs at least two groups")
        g = int(rng.integers(len(groups) - 1))
        groups[g], groups[g + 1] = groups[g + 1], groups[g]
        info.update(group=g, labels=[groups[g + 1][0], groups[g][0]])
        return groups, info
    if kind == "foreign":
        present = {lb for lb, _ in groups}
        others = [lb for lb in products if lb not in present]
        if not others:
            raise ValueError("no foreign product left in the catalog")
        label = others[int(rng.integers(len(others)))]
        at = int(rng.integers(len(groups) + 1))
        groups.insert(at, (label, 1))
        info.update(position=at, label=label)
        return groups, info
    if kind == "shift":
        if len(groups) < 2:
            raise ValueError("shift needs at least two groups")
        multi = [i for i, (_, q) in enumerate(groups) if q >= 2]
        g = int(rng.choice(multi)) if multi else int(rng.integers(len(groups)))
        if groups[g][1] < 2:
            # give the donor a second item in the reference as well
            groups[g] = (groups[g][0], 2)
            info["donor_raised"] = True
        nbrs = [h for h in (g - 1, g + 1) if 0 <= h < len(groups)]
        h = nbrs[int(rng.integers(len(nbrs)))]
        info.update(donor=g, receiver=h, labels=[groups[g][0], groups[h][0]])
        return groups, info
    raise ValueError(f"unknown perturbation {kind!r}")


def generate_synthetic(
    seed: int,
    spec: SynthSpec = SynthSpec(),
    perturbation: str = "none",
    key: str | None = None,
    products: Mapping[str, SynthProduct] | None = None,
) -> SynthRack:
    """Render one rack, its candidate boxes and keypoints, and its ground truth.

    Raises:
        ValueError: the planogram does not fit the rack, or the perturbation
            cannot be applied.
    """
    if perturbation not in PERTURBATIONS:
        raise ValueError(f"unknown perturbation {perturbation!r}")
    products = products if products is not None else make_catalog(spec)
    rng = np.random.default_rng(seed)
    if spec.planogram:
        missing = {lb for lb, _ in spec.planogram} - set(products)
        if missing:
            raise ValueError(f"planogram uses unknown products {sorted(missing)}")
        ref_groups = [tuple(g) for g in spec.planogram]
    else:
        ref_groups = _draw_reference(rng, spec, products)

    removed: list[int] = []
    shelf_groups, info = _perturb(rng, perturbation, ref_groups, products, removed)
    if info.get("donor_raised"):
        g = info["donor"]
        ref_groups = list(ref_groups)
        ref_groups[g] = shelf_groups[g]
    if perturbation == "shift":
        g, h = info["donor"], info["receiver"]
        shelf_groups[g] = (shelf_groups[g][0], shelf_groups[g][1] - 1)
        shelf_groups[h] = (shelf_groups[h][0], shelf_groups[h][1] + 1)

    reference = PlanogramSeq.of(*ref_groups)
    for groups in (ref_groups, shelf_groups):
        if _layout(groups, products, spec)[1] > spec.rack_width:
            raise ValueError("planogram overflows the rack width")
    placed, _ = _layout(shelf_groups, products, spec)
    empty_slots = [placed[i] for i in removed]
    placed = [p for i, p in enumerate(placed) if i not in removed]

    baseline = spec.rack_height - spec.baseline_offset
    image = np.full((spec.rack_height, spec.rack_width, 3), 235, dtype=np.uint8)
    cv2.line(image, (0, baseline + 2), (spec.rack_width - 1, baseline + 2), (90, 90, 90), 3)

    truth: list[Detection] = []
    boxes: list[CandidateBox] = []
    by_label: dict[str, list[Instance]] = {}
    for inst in placed:
        m = products[inst.label].model
        x1, y1 = inst.x0, baseline - int(m.height_ref)
        x2, y2 = inst.x0 + int(m.width_ref), baseline
        cv2.rectangle(image, (x1, y1), (x2 - 1, y2 - 1), products[inst.label].color, -1)
        cv2.rectangle(image, (x1, y1), (x2 - 1, y2 - 1), (20, 20, 20), 1)
        truth.append(Detection.from_box(inst.label, (x1, y1, x2, y2)))
        by_label.setdefault(inst.label, []).append(inst)

    for det in truth:
        w, h = det.bottom_right[0] - det.top_left[0], det.bottom_right[1] - det.top_left[1]
        cs = float(rng.uniform(0.6, 0.95))
        boxes.append(CandidateBox(cs, det.center[0], det.center[1], w, h))
        if rng.random() < spec.jitter_probability:
            s = spec.jitter_shift
            boxes.append(
                CandidateBox(
                    cs * float(rng.uniform(0.3, 0.7)),
                    det.center[0] + float(rng.uniform(-s, s)) * w,
                    det.center[1] + float(rng.uniform(-s, s)) * h,
                    w * float(rng.uniform(1 - s, 1 + s)),
                    h * float(rng.uniform(1 - s, 1 + s)),
                )
            )
    for inst in empty_slots:
        m = products[inst.label].model
        boxes.append(
            CandidateBox(
                float(rng.uniform(0.3, 0.6)),
                inst.x0 + m.width_ref / 2,
                baseline - m.height_ref / 2,
                m.width_ref,
                m.height_ref,
            )
        )
    for _ in range(spec.junk_boxes):
        w = float(rng.uniform(*spec.width_range))
        h = float(rng.uniform(*spec.height_range))
        cx = float(rng.uniform(w / 2, spec.rack_width - w / 2))
        cy = float(rng.uniform(h / 2, spec.rack_height - h / 2))
        boxes.append(CandidateBox(float(rng.uniform(0.001, 0.02)), cx, cy, w, h))

    sigma = float(rng.uniform(*spec.noise_range))
    xy_parts: list[np.ndarray] = []
    desc_parts: list[np.ndarray] = []
    for label in sorted(by_label):
        insts = by_label[label]
        m = products[label].model
        for f in range(m.n_features):
            if rng.random() >= spec.visibility:
                continue
            homes = [int(rng.integers(len(insts)))]
            if len(insts) > 1 and rng.random() < spec.shared_fraction:
                homes.append(int((homes[0] + 1 + rng.integers(len(insts) - 1)) % len(insts)))
            for i in homes:
                inst = insts[i]
                top = baseline - m.height_ref
                xy_parts.append(np.array([[inst.x0 + m.features.xy[f, 0], top + m.features.xy[f, 1]]]))
                desc_parts.append(m.features.descriptors[f][None] + rng.normal(0.0, sigma, (1, spec.descriptor_dim)))
    if spec.clutter:
        xy_parts.append(
            np.column_stack(
                [rng.uniform(0, spec.rack_width, spec.clutter), rng.uniform(0, spec.rack_height, spec.clutter)]
            )
        )
        desc_parts.append(rng.normal(0.0, 1.0, (spec.clutter, spec.descriptor_dim)))
    if xy_parts:
        xy, desc = np.vstack(xy_parts), np.vstack(desc_parts)
        order = rng.permutation(len(xy))
        scene = FeatureSet(xy[order], desc[order])
    else:
        scene = FeatureSet.empty(spec.descriptor_dim)

    truth_t = tuple(truth)
    result = align_and_check(reference, obj_to_planogram(truth_t))
    return SynthRack(
        key if key is not None else f"rack-{seed}",
        image,
        reference,
        truth_t,
        result,
        info,
        tuple(boxes),
        scene,
    )


# -- datasets ----------------------------------------------------------------------------


def _png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return buf.getvalue()


def _dump(path: Path, data) -> None:
    path.write_text(json.dumps(data, sort_keys=True, separators=(",", ":")))


def write_dataset(
    out_dir: str | Path,
    seed: int,
    count: int,
    spec: SynthSpec = SynthSpec(),
    perturbations: Sequence[str] = ("none",),
) -> Path:
    """Write ``count`` racks and their oracle files to ``out_dir``.

    Rack ``i`` uses the perturbation ``perturbations[i % len(perturbations)]``
    and the seed sequence ``(seed, i)``. The output is byte-identical for the
    same arguments.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    products = make_catalog(spec)
    catalog = Catalog([p.model for p in products.values()])
    entries = []
    boxes: dict[str, list[CandidateBox]] = {}
    feats: dict[str, FeatureSet] = {}
    for i in range(count):
        kind = perturbations[i % len(perturbations)]
        rack_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        key = f"rack-{i:04d}"
        rack = generate_synthetic(rack_seed, spec, kind, key=key, products=products)
        rel = f"images/{key}.png"
        (out / rel).write_bytes(_png_bytes(rack.image))
        entries.append(rack.manifest_entry(rel))
        boxes[key] = list(rack.boxes)
        feats[key] = rack.features
    _dump(out / "catalog.json", catalog.to_dict())
    _dump(out / "oracle_boxes.json", OracleDetector.dump(boxes))
    _dump(out / "oracle_features.json", OracleFeatures.dump(spec.descriptor_dim, feats))
    _dump(
        out / "manifest.json",
        {"format": "planocomp-dataset", "seed": seed, "spec": spec.to_dict(), "racks": entries},
    )
    return out


@dataclass(frozen=True, eq=False)
class DatasetEntry:
    key: str
    image_path: Path
    reference: PlanogramSeq
    truth_detections: tuple[Detection, ...]
    truth: AlignmentResult
    perturbation: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Dataset:
    root: Path
    catalog: Catalog
    entries: tuple[DatasetEntry, ...]
    boxes_path: Path
    features_path: Path


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    entries = tuple(
        DatasetEntry(
            e["key"],
            root / e["image"],
            PlanogramSeq.from_list(e["reference"]),
            tuple(Detection.from_dict(d) for d in e["truth_detections"]),
            alignment_from_dict(e["truth"]),
            e.get("perturbation", {}),
        )
        for e in manifest["racks"]
    )
    return Dataset(
        root,
        Catalog.load(root / "catalog.json"),
        entries,
        root / "oracle_boxes.json",
        root / "oracle_features.json",
    )


# -- shelf images --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SyntheticShelf:
    """A full shelf image built by stacking racks, with oracle data keyed by its digest."""

    jpeg: bytes
    digest: str
    racks: tuple[SynthRack, ...]

    def oracle_boxes(self) -> dict:
        return OracleDetector.dump({f"{self.digest}:{i}": list(r.boxes) for i, r in enumerate(self.racks)})

    def oracle_features(self) -> dict:
        dim = self.racks[0].features.dim if self.racks else 0
        return OracleFeatures.dump(dim, {f"{self.digest}:{i}": r.features for i, r in enumerate(self.racks)})


def build_shelf(racks: Sequence[SynthRack], quality: int = 95) -> SyntheticShelf:
    """Stack equal-size racks top to bottom and encode the result as JPEG."""
    if not racks:
        raise ValueError("a shelf needs at least one rack")
    image = np.vstack([r.image for r in racks])
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="JPEG", quality=quality)
    data = buf.getvalue()
    return SyntheticShelf(data, hashlib.sha256(data).hexdigest(), tuple(racks))
