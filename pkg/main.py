"""megasplat command line: synth, train, render, compress, decompress, eval, analyze."""

import asyncio
from pathlib import Path
from typing import Any, Optional

import click
import typer
from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table

from config import configure_logging
from models.training_state import IterationRecord
from tools.tools import (
    analyze_tool,
    compress_tool,
    decompress_tool,
    eval_tool,
    render_tool,
    synth_tool,
    train_tool,
)

app = typer.Typer(
    name="megasplat",
    help="Memory-efficient 4D Gaussian splatting on the CPU.",
    no_args_is_help=True,
    add_completion=False,
    pretty_exceptions_enable=False,
)
console = Console()

USAGE_EXIT_CODE = 2


def _one_line(message: str) -> str:
    return " ".join(str(message).split())


def _finish(result: dict[str, Any], title: str) -> None:
    """Print a successful result as a table, or exit with ``error[<prefix>]: <message>``."""
    if not result.get("success"):
        typer.echo(f"error[{result.get('prefix', 'error')}]: {_one_line(result.get('error', ''))}", err=True)
        raise typer.Exit(code=int(result.get("exit_code", 1)))

    table = Table(title=title, show_header=False)
    table.add_column("field", style="bold")
    table.add_column("value")
    for key, value in result.items():
        if key == "success" or isinstance(value, (dict, list)):
            continue
        table.add_row(key, f"{value:.6g}" if isinstance(value, float) else str(value))
    console.print(table)


@app.command()
def synth(
    out: Path = typer.Option(..., "--out", help="Dataset directory to create"),
    preset: str = typer.Option("orbit-3cam-8frames-64px", "--preset", help="<motion>-<n>cam-<m>frames-<r>px"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Random seed"),
    image_format: str = typer.Option("ppm", "--format", help="Frame encoding: ppm or png"),
) -> None:
    """Generate a synthetic dynamic scene with its ground-truth model."""
    _finish(asyncio.run(synth_tool(out, preset=preset, seed=seed, image_format=image_format)), "synth")


@app.command()
def train(
    data: Path = typer.Option(..., "--data", help="Dataset directory"),
    out: Path = typer.Option(..., "--out", help="Model output (.npz, or .meg4 for an archive)"),
    iters: int = typer.Option(3000, "--iters", help="Optimisation steps"),
    lambda_ssim: float = typer.Option(0.2, "--lambda", help="SSIM weight"),
    kappa: float = typer.Option(5e-4, "--kappa", help="Opacity entropy weight"),
    no_deform: bool = typer.Option(False, "--no-deform", help="Disable the deformation predictor"),
    no_entropy: bool = typer.Option(False, "--no-entropy", help="Disable the opacity entropy loss"),
    no_ac: bool = typer.Option(False, "--no-ac", help="DC colour only"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Random seed"),
    init_count: Optional[int] = typer.Option(None, "--init-count", help="Initial Gaussians"),
    log: Optional[Path] = typer.Option(None, "--log", help="Training log (JSON lines)"),
    quiet: bool = typer.Option(False, "--quiet", help="No progress bar"),
) -> None:
    """Train a model on a dataset."""
    with Progress(
        TextColumn("[bold]train"),
        BarColumn(),
        MofNCompleteColumn(),
        TextColumn("{task.fields[status]}"),
        TimeElapsedColumn(),
        console=console,
        disable=quiet,
    ) as progress:
        task = progress.add_task("train", total=iters, status="")

        def on_step(record: IterationRecord) -> None:
            progress.update(task, advance=1, status=f"l1={record.l1:.4f} n={record.count}")

        result = asyncio.run(
            train_tool(
                data,
                out,
                iterations=iters,
                lambda_ssim=lambda_ssim,
                kappa=kappa,
                use_deformation=not no_deform,
                use_entropy=not no_entropy,
                use_ac_color=not no_ac,
                seed=seed,
                init_count=init_count,
                log_path=log,
                progress=on_step,
            )
        )
    _finish(result, "train")


@app.command()
def render(
    model: Path = typer.Option(..., "--model", help="Model (.npz or .meg4)"),
    camera: int = typer.Option(0, "--camera", help="Camera index"),
    time: float = typer.Option(0.0, "--time", help="Normalized time in [0, 1]"),
    out: Path = typer.Option(..., "--out", help="Output image (.ppm or .png)"),
    data: Optional[Path] = typer.Option(None, "--data", help="Take the camera rig from this dataset instead of the model"),
) -> None:
    """Render one view of a model."""
    _finish(asyncio.run(render_tool(model, out, camera=camera, time=time, data_dir=data)), "render")


@app.command()
def compress(
    model: Path = typer.Option(..., "--model", help="Model to compress"),
    out: Path = typer.Option(..., "--out", help="Archive output (.meg4)"),
) -> None:
    """Write a model as an FP16 + delta + DEFLATE archive."""
    _finish(asyncio.run(compress_tool(model, out)), "compress")


@app.command()
def decompress(
    archive: Path = typer.Option(..., "--archive", help="Archive (.meg4)"),
    out: Path = typer.Option(..., "--out", help="Checkpoint output (.npz)"),
) -> None:
    """Expand an archive into a full-precision checkpoint."""
    _finish(asyncio.run(decompress_tool(archive, out)), "decompress")


@app.command("eval")
def evaluate(
    model: Path = typer.Option(..., "--model", help="Model to evaluate"),
    data: Path = typer.Option(..., "--data", help="Dataset directory"),
    out: Path = typer.Option(..., "--out", help="Report output (JSON)"),
    renders: Optional[Path] = typer.Option(None, "--renders", help="Also write the 8-bit renders here"),
) -> None:
    """PSNR, DSSIM1 and DSSIM2 of every dataset view."""
    _finish(asyncio.run(eval_tool(model, data, out, renders_dir=renders)), "eval")


@app.command()
def analyze(
    model: Path = typer.Option(..., "--model", help="Model to analyse"),
    times: int = typer.Option(..., "--times", help="Number of time samples"),
    out: Path = typer.Option(..., "--out", help="Participation ratio CSV"),
    data: Optional[Path] = typer.Option(None, "--data", help="Use this dataset's camera centres as viewpoints"),
    train_log: Optional[Path] = typer.Option(None, "--train-log", help="Training log for the count trajectory"),
    counts_out: Optional[Path] = typer.Option(None, "--counts-out", help="Gaussian-count CSV"),
    threshold: Optional[float] = typer.Option(None, "--threshold", help="Temporal opacity threshold"),
) -> None:
    """Participation ratio over time and Gaussian counts over training."""
    _finish(
        asyncio.run(
            analyze_tool(
                model,
                times,
                out,
                data_dir=data,
                train_log=train_log,
                counts_out=counts_out,
                threshold=threshold,
            )
        ),
        "analyze",
    )


def run(argv: Optional[list[str]] = None) -> int:
    """Run the CLI and return its exit code; usage errors become ``error[usage]`` lines."""
    configure_logging()
    try:
        result = app(args=argv, prog_name="megasplat", standalone_mode=False)
    except click.exceptions.ClickException as e:
        typer.echo(f"error[usage]: {_one_line(e.format_message())}", err=True)
        return USAGE_EXIT_CODE
    except click.exceptions.Abort:
        typer.echo("error[aborted]: interrupted", err=True)
        return 130
    return result if isinstance(result, int) else 0


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
