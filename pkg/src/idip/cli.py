"""Command-line entry points: batch restores, scripted replays, benchmarks.

Commands:
  restore         one triplet, single phase, output image plus metrics
  session-replay  one triplet plus a stroke script, multi-phase run
  bench           a directory of triplets, metric table and records file
  fixtures        generate the synthetic triplet set
  serve           start the HTTP service

All commands are deterministic given --seed; `--deterministic` also
forces sequential benchmark execution.  The default network settings can
be overridden with --config or the IDIP_CONFIG environment variable.
"""

from __future__ import annotations

import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import click

from . import __version__
from .metrics import MetricReport, evaluate, fitted_window, format_table, write_records
from .network import NetworkConfig, load_config
from .replay import StrokeScript, load_stroke_script, replay
from .store import DatasetTriplet, find_triplets, load_image, load_mask, make_fixture_set, save_image


def _load_cli_config(path: Optional[str]) -> NetworkConfig:
    try:
        return load_config(path)
    except (OSError, ValueError, TypeError) as exc:
        raise click.ClickException(f"config: {exc}")


def _triplet_from_dir(path: Path) -> DatasetTriplet:
    corrupted = path / "corrupted.png"
    mask = path / "mask.png"
    truth = path / "truth.png"
    if not corrupted.exists() or not mask.exists():
        raise click.ClickException(f"{path} must contain corrupted.png and mask.png")
    return DatasetTriplet(
        id=path.name,
        corrupted=corrupted,
        mask=mask,
        truth=truth if truth.exists() else None,
    )


def _report_metrics(out_path: Path, restored, truth, image_id: str, window_k: int) -> None:
    if truth is None:
        click.echo("warning: truth.png missing; metrics skipped", err=True)
        return
    window = fitted_window(restored.shape[0], restored.shape[1])
    report = evaluate(restored, truth, image_id=image_id, window_k=window_k, ssim_window=window)
    records = out_path.with_suffix(".metrics.jsonl")
    write_records([report], records)
    click.echo(format_table([report], mean_row=False))
    click.echo(f"records written to {records}")


def _progress_printer(quiet: bool):
    if quiet:
        return None

    def on_iteration(phase: int, iteration: int, loss: float):
        if iteration == 1 or iteration % 100 == 0:
            click.echo(f"phase {phase} iteration {iteration}: loss {loss:.6f}", err=True)

    return on_iteration


@click.group()
@click.version_option(__version__, prog_name="idip")
def main():
    """Image restoration with an untrained convolutional prior."""


@main.command()
@click.argument("triplet", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--iterations", type=click.IntRange(min=1), default=None, help="Optimisation budget (default 600).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Output image path (default <triplet>/restored.png).")
@click.option("--metrics-window-k", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--deterministic", is_flag=True, default=False)
@click.option("--quiet", is_flag=True, default=False)
def restore(triplet: Path, iterations, seed, config_path, out, metrics_window_k, deterministic, quiet):
    """Restore one triplet directory with a single optimisation phase."""
    config = _load_cli_config(config_path)
    spec = _triplet_from_dir(triplet)
    image, mask, truth = spec.load()
    out = out or triplet / "restored.png"
    session = replay(
        image,
        mask.grid,
        phases=1,
        iterations=iterations,
        config=config,
        seed=seed,
        session_id=spec.id,
        callback=_progress_printer(quiet),
    )
    restored = session.composite_array(crop=True)
    save_image(restored, out)
    click.echo(f"restored image written to {out}")
    _report_metrics(out, restored, truth, spec.id, metrics_window_k)


@main.command("session-replay")
@click.argument("triplet", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--strokes", "strokes_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Stroke script JSON (default: no strokes).")
@click.option("--phases", type=click.IntRange(min=1), default=None, help="Phase count (default: script value or 2).")
@click.option("--iterations", type=click.IntRange(min=1), default=None, help="Iterations per phase.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Output image path (default <triplet>/replayed.png).")
@click.option("--metrics-window-k", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--deterministic", is_flag=True, default=False)
@click.option("--quiet", is_flag=True, default=False)
def session_replay(triplet: Path, strokes_path, phases, iterations, seed, config_path, out, metrics_window_k, deterministic, quiet):
    """Replay a scripted interactive session (paint between phases)."""
    config = _load_cli_config(config_path)
    spec = _triplet_from_dir(triplet)
    image, mask, truth = spec.load()
    out = out or triplet / "replayed.png"
    try:
        script = load_stroke_script(strokes_path) if strokes_path else StrokeScript()
        session = replay(
            image,
            mask.grid,
            script,
            phases=phases,
            iterations=iterations,
            config=config,
            seed=seed,
            session_id=spec.id,
            callback=_progress_printer(quiet),
        )
    except ValueError as exc:
        raise click.ClickException(str(exc))
    restored = session.composite_array(crop=True)
    save_image(restored, out)
    click.echo(f"replayed image written to {out} ({session.phase} phases)")
    _report_metrics(out, restored, truth, spec.id, metrics_window_k)


def _bench_one(args: tuple) -> Optional[dict]:
    """Process-pool body: restore one triplet, return a metric record dict."""
    (triplet_id, corrupted, mask_path, truth_path, out_dir, iterations, seed, config_dict, window_k) = args
    config = NetworkConfig.from_dict(config_dict)
    image = load_image(corrupted)
    mask = load_mask(mask_path)
    session = replay(
        image,
        mask.grid,
        phases=1,
        iterations=iterations,
        config=config,
        seed=seed,
        session_id=triplet_id,
    )
    restored = session.composite_array(crop=True)
    save_image(restored, Path(out_dir) / f"{triplet_id}.png")
    if truth_path is None:
        return None
    truth = load_image(truth_path)
    window = fitted_window(restored.shape[0], restored.shape[1])
    return evaluate(restored, truth, image_id=triplet_id, window_k=window_k, ssim_window=window).to_dict()


@main.command()
@click.argument("root", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--iterations", type=click.IntRange(min=1), default=None, help="Budget per triplet (default 600).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None, help="Output directory (default <root>/bench).")
@click.option("--metrics-window-k", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--workers", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--deterministic", is_flag=True, default=False, help="Force sequential execution.")
def bench(root: Path, iterations, seed, config_path, out, metrics_window_k, workers, deterministic):
    """Restore every triplet under ROOT and print a DSSIM/LMSE table."""
    config = _load_cli_config(config_path)
    triplets = find_triplets(root)
    if not triplets:
        raise click.ClickException(f"no triplets found under {root}")
    out = out or root / "bench"
    out.mkdir(parents=True, exist_ok=True)
    jobs = [
        (t.id, t.corrupted, t.mask, t.truth, str(out), iterations, seed, config.to_dict(), metrics_window_k)
        for t in triplets
    ]
    if deterministic or workers == 1 or len(jobs) == 1:
        results = [_bench_one(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_bench_one, jobs))
    skipped = [jobs[i][0] for i, r in enumerate(results) if r is None]
    reports = sorted((MetricReport(**r) for r in results if r is not None), key=lambda r: r.image_id)
    for triplet_id in skipped:
        click.echo(f"warning: {triplet_id} has no truth.png; metrics skipped", err=True)
    records = out / "records.jsonl"
    write_records(reports, records)
    if reports:
        click.echo(format_table(reports))
    click.echo(f"{len(reports)} records written to {records}")


@main.command()
@click.option("--root", type=click.Path(file_okay=False, path_type=Path), default=Path("fixtures"), show_default=True)
@click.option("--size", type=click.IntRange(min=8), default=64, show_default=True)
@click.option("--damage", type=click.FloatRange(min=0.01, max=0.99), default=0.25, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def fixtures(root: Path, size, damage, seed):
    """Generate the synthetic triplet set (gradient, texture, checker)."""
    triplets = make_fixture_set(root, size=size, damage_fraction=damage, seed=seed)
    for t in triplets:
        click.echo(f"{t.id}: {t.corrupted.parent}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8765, show_default=True)
@click.option("--state-dir", type=click.Path(file_okay=False, path_type=Path), default=None, help="Persist sessions here.")
@click.option("--ui", "ui_dir", type=click.Path(file_okay=False, path_type=Path), default=None, help="Serve a static UI build at /ui.")
@click.option("--workers", type=click.IntRange(min=1), default=2, show_default=True, help="Concurrent optimisation phases.")
def serve(host, port, state_dir, ui_dir, workers):
    """Start the HTTP restoration service."""
    import uvicorn

    from .service import create_app

    app = create_app(state_dir=state_dir, ui_dir=ui_dir, workers=workers)
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    sys.exit(main())
