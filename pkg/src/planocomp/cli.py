"""Command line: ``planocomp eval run|synth|power`` and ``planocomp serve``."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from planocomp.config import ConfigError, PipelineConfig, StoreConfig, load_config, read_mapping
from planocomp.evaluation.runner import evaluate
from planocomp.evaluation.synth import PERTURBATIONS, SynthSpec, load_dataset, write_dataset
from planocomp.providers import ProviderError
from planocomp.power import battery_life, daily_consumption, harvest_offset, random_feed, simulate_node


def _config(path: str | None) -> PipelineConfig:
    try:
        return load_config(path)
    except ConfigError as e:
        raise click.ClickException(str(e)) from e


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def main(verbose: int) -> None:
    """Planogram compliance pipeline tools."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@main.group("eval")
def eval_group() -> None:
    """Evaluation harness."""


@eval_group.command("run")
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Report directory.")
@click.option("--workers", type=int, default=None, help="Override eval.workers from the config.")
def eval_run(dataset_dir: str, config_path: str | None, out: str, workers: int | None) -> None:
    """Run the pipeline over a dataset and write metric tables and per-rack traces."""
    cfg = _config(config_path)
    dataset = load_dataset(dataset_dir)
    prov = cfg.providers
    # oracle files shipped with the dataset unless the config names others
    det, feat = prov.build(prov.boxes or dataset.boxes_path, prov.keypoints or dataset.features_path)
    report = evaluate(dataset, cfg.search, det, feat, workers or cfg.eval_workers)
    report.write(out)
    click.echo(report.to_text(), nl=False)


@eval_group.command("synth")
@click.option("--seed", type=int, required=True)
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--count", type=int, default=None, help="Number of racks (default: spec 'count' or 20).")
@click.option(
    "--perturbations",
    default=None,
    help=f"Comma-separated cycle of {', '.join(PERTURBATIONS)} (default: spec or 'none').",
)
def eval_synth(seed: int, spec_path: str | None, out: str, count: int | None, perturbations: str | None) -> None:
    """Generate a synthetic dataset with ground truth and oracle provider files."""
    data = read_mapping(spec_path) if spec_path else {}
    n = count if count is not None else int(data.pop("count", 20))
    data.pop("count", None)
    kinds = data.pop("perturbations", None)
    if perturbations is not None:
        kinds = [k.strip() for k in perturbations.split(",") if k.strip()]
    kinds = tuple(kinds or ("none",))
    bad = set(kinds) - set(PERTURBATIONS)
    if bad:
        raise click.BadParameter(f"unknown perturbations {sorted(bad)}", param_hint="--perturbations")
    try:
        spec = SynthSpec.from_dict(data)
        path = write_dataset(out, seed, n, spec, kinds)
    except ValueError as e:
        raise click.ClickException(str(e)) from e
    click.echo(f"wrote {n} racks to {path}")


@eval_group.command("power")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--days", type=int, default=None, help="Override simulation.days.")
def eval_power(config_path: str | None, days: int | None) -> None:
    """Simulate a camera node and print one JSON record per day.

    A closing summary record compares the simulation with the closed-form
    estimate.
    """
    cfg = _config(config_path)
    sim = cfg.simulation
    n_days = sim.days if days is None else days
    trace = simulate_node(
        n_days,
        random_feed(sim.seed, sim.change_probability),
        cfg.node,
        cfg.change,
        cfg.harvest,
    )
    for rec in trace.days:
        click.echo(json.dumps({"type": "day", **rec.to_dict()}))
    life = battery_life(cfg.node, cfg.harvest)
    click.echo(
        json.dumps(
            {
                "type": "summary",
                "days_simulated": len(trace.days),
                "daily_consumption_mAh": daily_consumption(cfg.node),
                "daily_harvest_mAh": harvest_offset(cfg.harvest, cfg.node),
                "battery_life_months": None if life == float("inf") else life,
                "unbounded": life == float("inf"),
                "depleted_at_days": trace.depleted_at,
                "uploads": len(trace.uploads),
                "final_charge_mAh": float(trace.state.charge),
            }
        )
    )


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--storage-root", required=True, type=click.Path(file_okay=False))
@click.option("--store-config", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
def serve(host: str, port: int, storage_root: str, store_config: str, config_path: str | None) -> None:
    """Run the shelf-image upload service."""
    import uvicorn

    from planocomp.ingest.service import create_app

    cfg = _config(config_path)
    try:
        store = StoreConfig.load(store_config)
        app = create_app(Path(storage_root), store, cfg)
    except (ConfigError, ValueError, OSError, ProviderError) as e:
        raise click.ClickException(str(e)) from e
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
