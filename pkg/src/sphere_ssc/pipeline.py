"""End-to-end run: features -> anchors -> Gaussians -> fit -> fused prediction -> metrics."""

from __future__ import annotations

import contextlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import FitConfig, config_to_text
from .errors import InvalidInputError, SphereError, SphereIOError
from .fit import FitResult, Problem, fit
from .gaussians import VoxelGrid
from .io import SceneFile, read_scene, write_gaussians, write_metrics, write_scene, write_trajectory
from .losses import IGNORE_LABEL
from .metrics import MetricsReport, compute_metrics
from .scene import broadcast_tpv, fused_features, select_anchors, similarity_map, tpv_pool
from .synth import gen_features

log = logging.getLogger(__name__)

THREADS_ENV = "SPHERE_NUM_THREADS"


@contextlib.contextmanager
def stage(name):
    """Tag package errors escaping the block with the pipeline stage name."""
    try:
        yield
    except SphereError as exc:
        if exc.stage is None:
            exc.stage = name
        raise


@contextlib.contextmanager
def thread_limit(deterministic: bool = False):
    """Cap BLAS/OpenMP threads: 1 when deterministic, else ``$SPHERE_NUM_THREADS`` if set."""
    limit = 1 if deterministic else os.environ.get(THREADS_ENV)
    if limit is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=int(limit)):
        yield


def upsample_labels(labels, factor: int) -> np.ndarray:
    """Nearest-neighbour repetition of every voxel ``factor`` times per axis."""
    out = np.asarray(labels)
    for axis in range(3):
        out = np.repeat(out, factor, axis=axis)
    return out


def build_problem(labels, grid: VoxelGrid, n_classes: int, config: FitConfig, features=None) -> Problem:
    """Features (synthetic unless given), TPV planes, similarity and top-K anchors."""
    if config.grid_dims is not None and tuple(config.grid_dims) != grid.dims:
        raise InvalidInputError(f"config grid {config.grid_dims} does not match scene grid {grid.dims}")
    if features is None:
        with stage("gen_features"):
            features = gen_features(labels, n_classes, config.feature_channels, config.noise_sigma, config.seed)
    with stage("tpv_pool"):
        planes = tpv_pool(features)
    with stage("similarity_map"):
        sim = similarity_map(features, broadcast_tpv(planes), config.sim_mode)
    with stage("select_anchors"):
        anchors = select_anchors(sim, fused_features(features, planes), config.resolve_k(grid.dims))
    with stage("init_gaussians"):
        return Problem(
            grid,
            labels,
            features,
            planes,
            anchors,
            n_classes,
            degree=config.sh_degree,
            lam=config.orth_lambda,
            cutoff=config.cutoff,
            empty_bias=config.empty_bias,
            scale_range=(config.scale_min, config.scale_max),
        )


@dataclass
class PipelineResult:
    metrics: MetricsReport
    initial_metrics: MetricsReport
    gauss_metrics: MetricsReport
    initial_gauss_metrics: MetricsReport
    fit: FitResult
    problem: Problem
    outputs: dict = field(default_factory=dict)


def run_pipeline(scene, config: FitConfig, out_dir=None, deterministic: bool = True) -> PipelineResult:
    """Run the full model on a labelled scene (path or :class:`SceneFile`).

    When ``out_dir`` is given writes ``gaussians.sphg``, ``prediction.sphv``,
    ``metrics.txt``, ``metrics.json``, ``trajectory.tsv`` and ``config.txt``.
    """
    with stage("read_scene"):
        if not isinstance(scene, SceneFile):
            scene = read_scene(scene)
        if scene.kind != "labels":
            raise InvalidInputError(f"pipeline needs a labels scene, got {scene.kind}")
    labels = scene.payload
    n_classes = scene.n_semantic + 1
    valid = labels[labels != IGNORE_LABEL]
    if valid.size and valid.max() >= n_classes:
        raise InvalidInputError(f"scene has label {valid.max()} but declares {scene.n_semantic} classes", stage="read_scene")

    with thread_limit(deterministic):
        problem = build_problem(labels, scene.grid, n_classes, config)
        params = problem.init_params(np.random.default_rng(config.seed))
        with stage("fit"):
            result = fit(problem, config, params)
        with stage("compute_metrics"):
            _, _, preds0, _ = problem.evaluate(params)
            _, _, preds, _ = problem.evaluate(result.params)
            metrics = compute_metrics(preds["fused"], labels, n_classes)
            initial = compute_metrics(preds0["fused"], labels, n_classes)
            gauss = compute_metrics(preds["v_gauss"], labels, n_classes)
            gauss0 = compute_metrics(preds0["v_gauss"], labels, n_classes)

    out = PipelineResult(metrics, initial, gauss, gauss0, result, problem)
    if out_dir is not None:
        with stage("write_outputs"):
            out.outputs = _write_outputs(Path(out_dir), out, preds["fused"], scene, config)
    return out


def _write_outputs(out_dir: Path, res: PipelineResult, fused, scene: SceneFile, config: FitConfig) -> dict:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SphereIOError(f"cannot create {out_dir}: {exc}") from exc
    paths = {
        "gaussians": out_dir / "gaussians.sphg",
        "prediction": out_dir / "prediction.sphv",
        "metrics": out_dir / "metrics.txt",
        "metrics_json": out_dir / "metrics.json",
        "trajectory": out_dir / "trajectory.tsv",
        "config": out_dir / "config.txt",
    }
    gaussians, coeffs = res.problem.gaussians(res.fit.params)
    write_gaussians(paths["gaussians"], gaussians, coeffs)
    pred = np.argmax(fused, axis=-1).astype(np.uint8)
    grid = scene.grid
    if config.upsample > 1:
        pred = upsample_labels(pred, config.upsample)
        grid = VoxelGrid(pred.shape, grid.resolution / config.upsample, grid.origin)
    write_scene(paths["prediction"], SceneFile(grid, "labels", scene.n_semantic, pred))
    write_metrics(res.metrics, paths["metrics"], paths["metrics_json"])
    write_trajectory(paths["trajectory"], res.fit.records)
    try:
        paths["config"].write_text(config_to_text(config))
    except OSError as exc:
        raise SphereIOError(f"cannot write {paths['config']}: {exc}") from exc
    return paths


def gradient_check_problem(seed: int = 0, config: FitConfig | None = None):
    """Small noisy scene with perturbed parameters for finite-difference checks.

    Culling is disabled (infinite cutoff) so the loss is smooth in every
    parameter; all parameter groups are moved off their initial values.
    """
    config = config or FitConfig()
    rng = np.random.default_rng(seed)
    grid = VoxelGrid((8, 6, 4), 0.2)
    labels = rng.integers(0, 4, grid.dims).astype(np.uint8)
    labels[0, 0, 0] = IGNORE_LABEL
    cfg = config.replace(
        k=min(config.k or 6, 12),
        feature_channels=10,
        noise_sigma=0.3,
        cutoff=np.inf,
        grid_dims=None,
        seed=seed,
    )
    problem = build_problem(labels, grid, 4, cfg)
    params = problem.init_params(rng, head_std=0.5)
    params.data[:] += 0.2 * rng.standard_normal(len(params))
    return problem, params
