"""Configuration files for the pipeline, the evaluation harness and the upload service.

Files are YAML (JSON is accepted too, being a subset). Relative paths are
resolved against the directory of the file that names them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Literal, Mapping

import yaml

from planocomp.align import AlignParams
from planocomp.change import ChangeParams
from planocomp.detect import DetectParams
from planocomp.model import Catalog, PlanogramSeq
from planocomp.power import HarvestSource, NodeEnergyConfig
from planocomp.providers import (
    DetectorProvider,
    FeatureProvider,
    OnnxDetector,
    OracleDetector,
    OracleFeatures,
    Serialized,
    SiftFeatures,
)
from planocomp.search import SearchParams


class ConfigError(ValueError):
    pass


def _build(cls, data: Mapping | None, section: str):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"[{section}] unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}] {e}") from e


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value).expanduser()
    return p if p.is_absolute() else base / p


def read_mapping(path: str | Path) -> dict:
    text = Path(path).read_text()
    data = yaml.safe_load(text) if text.strip() else {}
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


@dataclass(frozen=True)
class ProviderConfig:
    """Which detector and feature extractor to use, and where their inputs live."""

    detector: Literal["oracle", "onnx"] = "oracle"
    features: Literal["oracle", "sift"] = "oracle"
    boxes: Path | None = None
    keypoints: Path | None = None
    onnx_model: Path | None = None
    sift_max_features: int = 0

    def __post_init__(self) -> None:
        if self.detector not in ("oracle", "onnx"):
            raise ValueError(f"unknown detector {self.detector!r}")
        if self.features not in ("oracle", "sift"):
            raise ValueError(f"unknown feature provider {self.features!r}")

    def build(self, oracle_boxes=None, oracle_features=None) -> tuple[DetectorProvider, FeatureProvider]:
        """Instantiate providers. Oracle sources given here override the configured paths."""
        if self.detector == "oracle":
            src = oracle_boxes if oracle_boxes is not None else self.boxes
            if src is None:
                raise ConfigError("[providers] oracle detector needs a boxes file")
            det: DetectorProvider = OracleDetector(src)
        else:
            if self.onnx_model is None:
                raise ConfigError("[providers] onnx detector needs onnx_model")
            det = Serialized(OnnxDetector(self.onnx_model))
        if self.features == "oracle":
            src = oracle_features if oracle_features is not None else self.keypoints
            if src is None:
                raise ConfigError("[providers] oracle features need a keypoints file")
            feat: FeatureProvider = OracleFeatures(src)
        else:
            feat = Serialized(SiftFeatures(self.sift_max_features))
        return det, feat


@dataclass(frozen=True)
class ServiceConfig:
    queue_size: int = 64
    workers: int = 2

    def __post_init__(self) -> None:
        if self.queue_size < 1 or self.workers < 1:
            raise ValueError("queue_size and workers must be at least 1")


@dataclass(frozen=True)
class SimulationConfig:
    """Scene feed for the node simulator: a seeded scene redrawn with ``change_probability`` per wake."""

    days: int = 30
    seed: int = 0
    change_probability: float = 1.0

    def __post_init__(self) -> None:
        if self.days < 0 or not 0 <= self.change_probability <= 1:
            raise ValueError("days must be nonnegative and change_probability in [0, 1]")


@dataclass(frozen=True)
class PipelineConfig:
    change: ChangeParams = ChangeParams()
    search: SearchParams = SearchParams()
    providers: ProviderConfig = ProviderConfig()
    node: NodeEnergyConfig = NodeEnergyConfig()
    harvest: tuple[HarvestSource, ...] = ()
    service: ServiceConfig = ServiceConfig()
    simulation: SimulationConfig = SimulationConfig()
    eval_workers: int = 1

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: str | Path = ".") -> PipelineConfig:
        base = Path(base_dir)
        allowed = {"change", "detect", "align", "search", "providers", "node", "harvest", "service", "eval", "simulation"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        search_kw = dict(data.get("search") or {})
        search_kw["detect"] = _build(DetectParams, data.get("detect"), "detect")
        search_kw["align"] = _build(AlignParams, data.get("align"), "align")
        prov = dict(data.get("providers") or {})
        for k in ("boxes", "keypoints", "onnx_model"):
            prov[k] = _resolve(base, prov.get(k))
        harvest = []
        for i, rec in enumerate(data.get("harvest") or ()):
            try:
                harvest.append(HarvestSource.from_dict(rec))
            except (TypeError, ValueError) as e:
                raise ConfigError(f"[harvest {i}] {e}") from e
        try:
            node = NodeEnergyConfig.from_dict(data.get("node") or {})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"[node] {e}") from e
        ev = dict(data.get("eval") or {})
        if set(ev) - {"workers"}:
            raise ConfigError(f"[eval] unknown keys {sorted(set(ev) - {'workers'})}")
        return cls(
            change=_build(ChangeParams, data.get("change"), "change"),
            search=_build(SearchParams, search_kw, "search"),
            providers=_build(ProviderConfig, prov, "providers"),
            node=node,
            harvest=tuple(harvest),
            service=_build(ServiceConfig, data.get("service"), "service"),
            simulation=_build(SimulationConfig, data.get("simulation"), "simulation"),
            eval_workers=int(ev.get("workers", 1)),
        )


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return PipelineConfig.from_dict(read_mapping(path), Path(path).parent)


# -- store layout ----------------------------------------------------------------------------


def _planogram(items) -> PlanogramSeq:
    """Accepts ``[label, quantity]`` pairs or ``{label, quantity}`` mappings."""
    groups = [it if isinstance(it, Mapping) else {"label": it[0], "quantity": it[1]} for it in items]
    return PlanogramSeq.from_list(groups)


@dataclass(frozen=True)
class DeviceConfig:
    """One camera: how its shelf image splits into racks, and each rack's reference."""

    device_id: str
    references: tuple[PlanogramSeq, ...]

    @property
    def rack_count(self) -> int:
        return len(self.references)

    def __post_init__(self) -> None:
        if not self.references:
            raise ValueError(f"device {self.device_id!r} needs at least one rack")


@dataclass(frozen=True, eq=False)
class StoreConfig:
    token: str
    catalog: Catalog
    devices: Mapping[str, DeviceConfig] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: str | Path = ".") -> StoreConfig:
        base = Path(base_dir)
        if not data.get("token"):
            raise ConfigError("[store] a token is required")
        if "catalog" not in data:
            raise ConfigError("[store] a catalog path is required")
        catalog = Catalog.load(_resolve(base, data["catalog"]))
        devices = {}
        for dev_id, rec in (data.get("devices") or {}).items():
            refs = tuple(_planogram(r) for r in rec.get("racks", ()))
            if "rack_count" in rec and rec["rack_count"] != len(refs):
                raise ConfigError(f"[store] device {dev_id!r}: rack_count differs from the number of references")
            missing = {g.label for r in refs for g in r} - set(catalog)
            if missing:
                raise ConfigError(f"[store] device {dev_id!r} references unknown products {sorted(missing)}")
            try:
                devices[str(dev_id)] = DeviceConfig(str(dev_id), refs)
            except ValueError as e:
                raise ConfigError(f"[store] {e}") from e
        return cls(str(data["token"]), catalog, devices)

    @classmethod
    def load(cls, path: str | Path) -> StoreConfig:
        return cls.from_dict(read_mapping(path), Path(path).parent)
