"""Command handlers behind the megasplat CLI.

Every handler returns a ``{"success": bool, ...}`` dict; failures carry the
error ``prefix`` and ``exit_code`` of the raised ``MegasplatError``.
"""

import asyncio
import csv
import io
import json
from pathlib import Path
from typing import Any, Callable, Optional

import aiofiles
import numpy as np
import structlog
from pydantic import ValidationError

from codec.archive import load_any, load_model, save_checkpoint, save_model, size_report
from config import get_config
from gaussians.cloud import PARAMS_PER_GAUSSIAN
from gaussians.color import param_count_per_gaussian
from models.dataset import SynthConfig
from models.metrics import FrameMetrics, MetricsReport
from models.settings import RasterSettings
from models.training_state import IterationRecord, TrainConfig
from render.camera import Camera
from render.pipeline import participation_ratio, render
from tools.dataset import load_dataset, load_manifest_only
from tools.metrics import dssim, psnr
from tools.synth import synthesize
from training.trainer import Trainer
from utils.async_utils import map_in_threads
from utils.errors import InvalidParameterError, MegasplatError
from utils.file_manager import FileManager
from utils.state_manager import StateManager

logger = structlog.get_logger(__name__)


def _failure(tool: str, error: Exception, **context: Any) -> dict[str, Any]:
    if isinstance(error, MegasplatError):
        prefix, exit_code = error.prefix, error.exit_code
    elif isinstance(error, ValidationError):
        prefix, exit_code = InvalidParameterError.prefix, InvalidParameterError.exit_code
    else:
        prefix, exit_code = MegasplatError.prefix, MegasplatError.exit_code
    logger.error(f"tool.{tool}.failed", error=str(error), prefix=prefix, **context)
    return {"success": False, "error": str(error), "prefix": prefix, "exit_code": exit_code}


def _save_any(model, out: Path) -> Path:
    """``.meg4`` paths get an archive, anything else a full-precision checkpoint."""
    if out.suffix == ".meg4":
        save_model(model, out)
    else:
        save_checkpoint(model, out)
    return out


async def synth_tool(
    out_dir: Path,
    preset: str = "orbit-3cam-8frames-64px",
    seed: Optional[int] = None,
    image_format: str = "ppm",
) -> dict[str, Any]:
    """Generate a synthetic dataset.

    Args:
        out_dir: Dataset directory to create
        preset: ``<motion>-<n>cam-<m>frames-<r>px``
        seed: Random seed (defaults to the configured seed)
        image_format: ``ppm`` or ``png``

    Returns:
        Dictionary with the frame and Gaussian counts
    """
    try:
        seed = get_config().seed if seed is None else seed
        logger.info("tool.synth", preset=preset, seed=seed, out=str(out_dir))

        cfg = SynthConfig(**{**SynthConfig.from_preset(preset, seed=seed).model_dump(), "image_format": image_format})
        scene = await synthesize(cfg, Path(out_dir))

        logger.info("tool.synth.success", frames=len(scene.frames))

        return {
            "success": True,
            "out_dir": str(out_dir),
            "preset": cfg.preset_name,
            "seed": seed,
            "frames": len(scene.frames),
            "gaussians": scene.model.count,
        }

    except Exception as e:
        return _failure("synth", e, out=str(out_dir))


async def train_tool(
    data_dir: Path,
    out: Path,
    iterations: int = 3000,
    lambda_ssim: float = 0.2,
    kappa: float = 5e-4,
    use_deformation: bool = True,
    use_entropy: bool = True,
    use_ac_color: bool = True,
    seed: Optional[int] = None,
    init_count: Optional[int] = None,
    log_path: Optional[Path] = None,
    progress: Optional[Callable[[IterationRecord], None]] = None,
) -> dict[str, Any]:
    """Train a model on a dataset and save it.

    Args:
        data_dir: Dataset directory
        out: Model output (``.npz`` checkpoint, or ``.meg4`` archive)
        iterations: Optimisation steps
        lambda_ssim: SSIM weight
        kappa: Opacity entropy weight
        use_deformation: Train the deformation predictor
        use_entropy: Apply the opacity entropy loss
        use_ac_color: Train the AC colour predictor
        seed: Random seed (defaults to the configured seed)
        init_count: Initial Gaussians (defaults to ``TrainConfig``)
        log_path: Training log path (defaults to ``<out>.log.jsonl``)
        progress: Called with each iteration's record

    Returns:
        Dictionary with the final count, losses and output paths
    """
    try:
        seed = get_config().seed if seed is None else seed
        logger.info("tool.train", data=str(data_dir), iterations=iterations, seed=seed)

        overrides: dict[str, Any] = {}
        if init_count is not None:
            overrides["init_count"] = init_count
        cfg = TrainConfig(
            iterations=iterations,
            lambda_ssim=lambda_ssim,
            kappa=kappa,
            use_deformation=use_deformation,
            use_entropy=use_entropy,
            use_ac_color=use_ac_color,
            seed=seed,
            **overrides,
        )
        dataset = await load_dataset(Path(data_dir))
        trainer = Trainer(dataset.training_data(), cfg)
        result = await asyncio.to_thread(trainer.train, progress)
        result.model.rig = list(dataset.manifest.cameras)

        out = _save_any(result.model, Path(out))
        log_path = Path(log_path) if log_path is not None else out.with_name(out.name + ".log.jsonl")
        await StateManager.save_train_log(log_path, result.log)
        final = result.log.records[-1] if result.log.records else None

        logger.info("tool.train.success", out=str(out), count=result.model.count)

        return {
            "success": True,
            "model": str(out),
            "train_log": str(log_path),
            "variant": cfg.variant,
            "iterations": iterations,
            "count": result.model.count,
            "final_l1": final.l1 if final else None,
            "prune_events": len(result.log.prune_events),
            "degenerate_quaternions": result.log.degenerate_quaternions,
        }

    except Exception as e:
        return _failure("train", e, data=str(data_dir))


async def render_tool(
    model_path: Path,
    out: Path,
    camera: int = 0,
    time: float = 0.0,
    data_dir: Optional[Path] = None,
) -> dict[str, Any]:
    """Render one view of a model.

    The camera comes from the rig saved with the model, or from ``data_dir``'s
    manifest when given.

    Returns:
        Dictionary with the image path
    """
    try:
        logger.info("tool.render", model=str(model_path), camera=camera, time=time)

        if not 0.0 <= time <= 1.0:
            raise InvalidParameterError(f"time must lie in [0, 1], got {time}")
        model = load_any(Path(model_path))
        rig = (await load_manifest_only(Path(data_dir))).cameras if data_dir is not None else model.rig
        if not rig:
            raise InvalidParameterError(f"{model_path} carries no camera rig; pass --data")
        if not 0 <= camera < len(rig):
            raise InvalidParameterError(f"camera {camera} out of range (rig has {len(rig)})")
        cam = Camera.from_spec(rig[camera], time)
        image = await asyncio.to_thread(render, model, cam, RasterSettings())
        saved = await FileManager.save_image(Path(out), image)

        logger.info("tool.render.success", path=str(saved))

        return {"success": True, "image": str(saved), "camera": camera, "time": time, "gaussians": model.count}

    except Exception as e:
        return _failure("render", e, model=str(model_path))


async def compress_tool(model_path: Path, out: Path) -> dict[str, Any]:
    """Write a model as a ``.meg4`` archive and report its storage breakdown.

    Returns:
        Dictionary with the size report summary and the 4DGS baseline ratio
    """
    try:
        logger.info("tool.compress", model=str(model_path), out=str(out))

        model = load_any(Path(model_path))
        data = await asyncio.to_thread(save_model, model, Path(out))
        report = size_report(data)
        summary = report.summary(baseline_params=param_count_per_gaussian("4dgs"))

        logger.info("tool.compress.success", bytes=report.total_bytes, count=report.count)

        return {
            "success": True,
            "archive": str(out),
            "params_per_gaussian": PARAMS_PER_GAUSSIAN,
            **summary,
        }

    except Exception as e:
        return _failure("compress", e, model=str(model_path))


async def decompress_tool(archive: Path, out: Path) -> dict[str, Any]:
    """Expand a ``.meg4`` archive into a full-precision checkpoint.

    Returns:
        Dictionary with the checkpoint path
    """
    try:
        logger.info("tool.decompress", archive=str(archive), out=str(out))

        model = load_model(Path(archive))
        await asyncio.to_thread(save_checkpoint, model, Path(out))

        logger.info("tool.decompress.success", count=model.count)

        return {"success": True, "model": str(out), "gaussians": model.count}

    except Exception as e:
        return _failure("decompress", e, archive=str(archive))


async def eval_tool(
    model_path: Path,
    data_dir: Path,
    out: Path,
    renders_dir: Optional[Path] = None,
) -> dict[str, Any]:
    """Render every dataset view and compare against the ground-truth frames.

    Renders are quantized to 8 bits before scoring, so writing them with
    ``renders_dir`` lets every number in the report be recomputed from files.

    Returns:
        Dictionary with the averaged metrics and the report path
    """
    try:
        logger.info("tool.eval", model=str(model_path), data=str(data_dir))

        model = load_any(Path(model_path))
        dataset = await load_dataset(Path(data_dir))
        settings = RasterSettings()
        cameras = [dataset.view_camera(view) for view in dataset.manifest.views]
        renders = await map_in_threads(
            get_config().eval_concurrency, lambda cam: render(model, cam, settings), cameras
        )

        frames = []
        for view, rendered, target in zip(dataset.manifest.views, renders, dataset.images):
            stored = FileManager.quantize(rendered) / 255.0
            if renders_dir is not None:
                await FileManager.save_image(Path(renders_dir) / view.image, stored)
            frames.append(
                FrameMetrics(
                    image=view.image,
                    camera_index=view.camera_index,
                    time=view.time,
                    psnr=psnr(stored, target),
                    dssim1=dssim(stored, target, variant=1),
                    dssim2=dssim(stored, target, variant=2),
                )
            )

        report = MetricsReport(
            model=str(model_path), dataset=str(data_dir), frames=frames, gaussian_count=model.count
        )
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        async with aiofiles.open(out, "w") as f:
            await f.write(json.dumps({**report.model_dump(mode="json"), "summary": report.summary()}, indent=2))

        logger.info("tool.eval.success", frames=len(frames), psnr=report.summary()["psnr"])

        return {"success": True, "report": str(out), **report.summary()}

    except Exception as e:
        return _failure("eval", e, model=str(model_path))


def _csv_text(header: list[str], rows: list[list[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


async def analyze_tool(
    model_path: Path,
    times: int,
    out: Path,
    data_dir: Optional[Path] = None,
    train_log: Optional[Path] = None,
    counts_out: Optional[Path] = None,
    threshold: Optional[float] = None,
) -> dict[str, Any]:
    """Participation ratio over time, optionally plus the Gaussian-count trajectory.

    Args:
        model_path: Model to analyse
        times: Number of evenly spaced time samples in [0, 1]
        out: CSV with ``time, participation_ratio, participation_ratio_static``
        data_dir: Dataset whose camera centres serve as viewpoints (origin if omitted)
        train_log: Training log to read the count trajectory from
        counts_out: CSV with ``iteration, count``; needs ``train_log``
        threshold: Temporal opacity threshold (defaults to the rasterizer's)

    Returns:
        Dictionary with the row counts and mean ratios
    """
    try:
        logger.info("tool.analyze", model=str(model_path), times=times)

        if times < 1:
            raise InvalidParameterError(f"need at least one time sample, got {times}")
        if counts_out is not None and train_log is None:
            raise InvalidParameterError("--counts-out needs --train-log")

        model = load_any(Path(model_path))
        viewpoints = None
        if data_dir is not None:
            manifest = await load_manifest_only(Path(data_dir))
            viewpoints = [Camera.from_spec(spec).center for spec in manifest.cameras]
        samples = np.linspace(0.0, 1.0, times) if times > 1 else np.zeros(1)

        deformed = await asyncio.to_thread(participation_ratio, model, samples, threshold, viewpoints, True)
        static = await asyncio.to_thread(participation_ratio, model, samples, threshold, viewpoints, False)
        rows = [[f"{t:.6f}", f"{a:.6f}", f"{b:.6f}"] for t, a, b in zip(samples, deformed, static)]

        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        async with aiofiles.open(out, "w") as f:
            await f.write(_csv_text(["time", "participation_ratio", "participation_ratio_static"], rows))

        result: dict[str, Any] = {
            "success": True,
            "csv": str(out),
            "rows": len(rows),
            "mean_participation_ratio": float(np.mean(deformed)),
            "mean_participation_ratio_static": float(np.mean(static)),
        }

        if counts_out is not None:
            log = await StateManager.load_train_log(Path(train_log))
            counts = [[iteration, count] for iteration, count in log.counts()]
            counts_out = Path(counts_out)
            counts_out.parent.mkdir(parents=True, exist_ok=True)
            async with aiofiles.open(counts_out, "w") as f:
                await f.write(_csv_text(["iteration", "count"], counts))
            result.update({"counts_csv": str(counts_out), "count_rows": len(counts)})

        logger.info("tool.analyze.success", rows=len(rows))

        return result

    except Exception as e:
        return _failure("analyze", e, model=str(model_path))
