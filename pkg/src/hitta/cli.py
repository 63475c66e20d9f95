"""Command-line entry points; `hitta --help` lists the subcommands.

The typical sequence: `gen-data` to build the synthetic benchmark,
`train-source` for the source checkpoint, then `run` (one method, one
stream), `matrix` (all methods, full tables), `report` and `overlays` to
inspect results, and `serve` for a live reviewer session.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import click
import numpy as np

from .backbone import ArchConfig, init_network
from .config import ALL_METHODS, RunConfig, canonical_json, load_run_config
from .datagen import DatasetConfig, SourceTrainConfig, SyntheticDataset, generate_dataset, train_source
from .harness import StreamReport, export_overlays, run_matrix, run_stream, write_tables


@click.group()
@click.option("--seed", type=int, default=None, help="Override every configured seed.")
@click.pass_context
def main(ctx: click.Context, seed: int | None) -> None:
    """Human-in-the-loop test-time adaptation for disc/cup segmentation."""
    ctx.obj = {"seed": seed}


def _seed_of(ctx: click.Context, fallback: int) -> int:
    override = (ctx.obj or {}).get("seed")
    return fallback if override is None else override


@main.command("gen-data")
@click.option("--root", default="data/synthetic", show_default=True, help="Output directory.")
@click.option("--image-size", default=128, show_default=True)
@click.option("--source-train", default=120, show_default=True)
@click.option("--source-val", default=30, show_default=True)
@click.option("--target-count", default=40, show_default=True)
@click.option("--target-train", default=0, show_default=True, help="Per-target train samples (intra-domain runs).")
@click.option("--data-seed", default=0, show_default=True)
@click.option("--overwrite", is_flag=True, help="Replace an existing dataset.")
@click.pass_context
def gen_data(ctx, root, image_size, source_train, source_val, target_count, target_train, data_seed, overwrite):
    """Generate the multi-domain synthetic benchmark."""
    cfg = DatasetConfig(
        root=root,
        image_size=image_size,
        seed=_seed_of(ctx, data_seed),
        source_train=source_train,
        source_val=source_val,
        target_count=target_count,
        target_train=target_train,
        overwrite=overwrite,
    )
    path = generate_dataset(cfg)
    dataset = SyntheticDataset(path)
    n = len(dataset.manifest["samples"])
    click.echo(f"wrote {n} samples across {len(dataset.domains)} domains under {path}")


@main.command("train-source")
@click.option("--data", default="data/synthetic", show_default=True)
@click.option("--out", default="runs/source/checkpoint.zip", show_default=True, help="Checkpoint path.")
@click.option("--epochs", default=40, show_default=True)
@click.option("--batch-size", default=8, show_default=True)
@click.option("--lr0", default=0.01, show_default=True)
@click.option("--base-width", default=16, show_default=True)
@click.option("--levels", default=4, show_default=True)
@click.option("--train-seed", default=0, show_default=True)
@click.pass_context
def train_source_cmd(ctx, data, out, epochs, batch_size, lr0, base_width, levels, train_seed):
    """Train the source-domain model and save the best-validation checkpoint."""
    seed = _seed_of(ctx, train_seed)
    net = init_network(ArchConfig(base_width=base_width, levels=levels), seed=seed)
    cfg = SourceTrainConfig(epochs=epochs, batch_size=batch_size, lr0=lr0, seed=seed)
    dataset = SyntheticDataset(data)
    _, report = train_source(net, dataset, cfg, np.random.default_rng(seed), checkpoint_path=out)
    click.echo(
        f"best val DSC {report['best_val_dsc']:.4f} at epoch {report['best_epoch']}; saved {out}"
    )


def _load_run(config_path: str | None, ctx, **overrides) -> RunConfig:
    run = load_run_config(config_path) if config_path else RunConfig()
    fields = {k: v for k, v in overrides.items() if v is not None}
    seed = (ctx.obj or {}).get("seed")
    if seed is not None:
        fields["seed"] = seed
    return dataclasses.replace(run, **fields) if fields else run


@main.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Run config file (YAML); defaults apply without one.")
@click.option("--method", default="hitta", show_default=True, type=click.Choice(ALL_METHODS))
@click.option("--data", default=None, help="Dataset root (overrides config).")
@click.option("--checkpoint", default=None, help="Source checkpoint (overrides config).")
@click.option("--limit", type=int, default=None, help="Cap samples per domain.")
@click.option("--out", default=None, help="Where to write the report (JSON).")
@click.pass_context
def run_cmd(ctx, config_path, method, data, checkpoint, limit, out):
    """Evaluate one method over the target stream with the oracle annotator."""
    run = _load_run(config_path, ctx, dataset_root=data, checkpoint=checkpoint, limit=limit)
    report = run_stream(method, run)
    agg = report.aggregate()["overall"]
    click.echo(
        f"{method}: n={agg['n']}  vs-R1 {agg['vs_r1'] * 100:.2f}  vs-R* {agg['vs_rstar'] * 100:.2f}"
    )
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(canonical_json(report.to_json()))
        click.echo(f"report written to {out}")


@main.command("matrix")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--data", default=None)
@click.option("--checkpoint", default=None)
@click.option("--out", default=None, help="Output directory (overrides config).")
@click.option("--limit", type=int, default=None)
@click.option("--methods", default=None, help="Comma-separated subset of methods.")
@click.pass_context
def matrix_cmd(ctx, config_path, data, checkpoint, out, limit, methods):
    """Run every configured method and write the comparison tables."""
    run = _load_run(
        config_path, ctx,
        dataset_root=data, checkpoint=checkpoint, out_dir=out, limit=limit,
        methods=methods.split(",") if methods else None,
    )
    bundle = run_matrix(run, log=click.echo)
    click.echo(f"tables written under {bundle['out_dir']}")


@main.command("report")
@click.argument("path", type=click.Path(exists=True))
def report_cmd(path):
    """Print the summary for a matrix directory or a single report JSON."""
    path = Path(path)
    if path.is_dir():
        summary = path / "summary.txt"
        if not summary.exists():
            reports = {
                p.stem.removeprefix("report_"): StreamReport.from_json(json.loads(p.read_text()))
                for p in sorted(path.glob("report_*.json"))
            }
            if not reports:
                raise click.ClickException(f"no reports under {path}")
            run = RunConfig(out_dir=str(path), methods=sorted(reports))
            write_tables(reports, run, path)
        click.echo(summary.read_text(), nl=False)
        return
    report = StreamReport.from_json(json.loads(path.read_text()))
    agg = report.aggregate()
    click.echo(f"method {report.method}  seed {report.seed}")
    for domain, cell in list(agg["per_domain"].items()) + [("overall", agg["overall"])]:
        click.echo(
            f"  {domain:<10} n={cell['n']:<4} vs-R1 {cell['vs_r1'] * 100:6.2f}"
            f"  vs-R* {cell['vs_rstar'] * 100:6.2f}"
        )


@main.command("overlays")
@click.option("--data", default="data/synthetic", show_default=True)
@click.option("--report", "report_path", type=click.Path(exists=True), required=True,
              help="A report JSON from `run` or a matrix directory.")
@click.option("--out", default="runs/overlays", show_default=True)
@click.option("--limit", type=int, default=None, help="Only the first N rows.")
def overlays_cmd(data, report_path, out, limit):
    """Render contour overlays (prediction vs both references) as PNG files."""
    dataset = SyntheticDataset(data)
    report = StreamReport.from_json(json.loads(Path(report_path).read_text()))
    written = export_overlays(dataset, report, out, limit=limit)
    click.echo(f"wrote {len(written)} overlays under {out}")


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True, envvar="HITTA_HOST")
@click.option("--port", default=8008, show_default=True, envvar="HITTA_PORT")
@click.option("--state-dir", default="runs/service", show_default=True, envvar="HITTA_STATE_DIR")
@click.option("--frontend", "frontend_dir", default=None, envvar="HITTA_FRONTEND",
              help="Serve this directory of static files at /.")
def serve_cmd(host, port, state_dir, frontend_dir):
    """Start the reviewer-facing HTTP service."""
    import uvicorn

    from .service import create_app

    app = create_app(state_dir)
    if frontend_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="frontend")
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
