"""Acceptance criteria, one test each; every test also emits a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear in the terminal
summary) or ``python3 tests/test_acceptance.py``.
"""

import itertools
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from conftest import ACCEPTANCE_LINES, naive_splat, random_gaussians  # noqa: E402

from sphere_ssc.config import FULL_GRID, FitConfig, config_from_text, config_to_text  # noqa: E402
from sphere_ssc.fit import PARAM_GROUPS, check_gradient  # noqa: E402
from sphere_ssc.gaussians import VoxelGrid, splat  # noqa: E402
from sphere_ssc.harmonics import MAX_DEGREE, ShProjection, n_basis, orth_loss, orth_loss_grad, sh_basis_batch  # noqa: E402
from sphere_ssc.io import SceneFile  # noqa: E402
from sphere_ssc.losses import align_loss, lovasz_loss, lovasz_softmax_probs  # noqa: E402
from sphere_ssc.metrics import compute_metrics  # noqa: E402
from sphere_ssc.pipeline import gradient_check_problem, run_pipeline  # noqa: E402
from sphere_ssc.scene import select_anchors  # noqa: E402
from sphere_ssc.synth import gen_scene  # noqa: E402

# Gaussian-branch occupancy IoU on mini-street (seed 0, default config),
# recorded on the first implementation run: 0.0016 at iteration 0, 0.0145
# after 500 iterations. The fixture requires at least this gain.
GAUSS_OCC_IOU_MIN_GAIN = 0.01


def report(number, name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {name} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_splat_oracle():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        dims = tuple(int(d) for d in rng.integers(2, 9, 3))
        grid = VoxelGrid(dims, float(rng.uniform(0.1, 0.5)), tuple(rng.uniform(-1, 1, 3)))
        gs = random_gaussians(rng, int(rng.integers(1, 9)), grid, channels=int(rng.integers(1, 5)), scale=(0.05, 1.0))
        got = splat(gs, grid, cutoff=np.inf)
        worst = max(worst, float(np.abs(got - naive_splat(gs, grid, gs[0].n_channels)).max()))
    elapsed = time.perf_counter() - start
    report(1, "splat matches naive double loop", worst <= 1e-10 and elapsed < 5, f"max error {worst:.2e} <= 1e-10, {elapsed:.2f} s < 5 s")


def test_criterion_2_sh_orthonormality():
    start = time.perf_counter()
    x, w = np.polynomial.legendre.leggauss(2 * MAX_DEGREE + 2)
    n_phi = 4 * MAX_DEGREE + 4
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    ct, ph = np.meshgrid(x, phi, indexing="ij")
    st = np.sqrt(1 - ct**2)
    dirs = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1).reshape(-1, 3)
    weights = (w[:, None] * np.full(n_phi, 2 * np.pi / n_phi)).ravel()
    Y = sh_basis_batch(MAX_DEGREE, dirs)
    gram = (Y * weights[:, None]).T @ Y
    err = float(np.abs(gram - np.eye(n_basis(MAX_DEGREE))).max())
    elapsed = time.perf_counter() - start
    report(2, "SH Gram matrix up to L=4", err <= 1e-6 and elapsed < 10, f"max |G - I| {err:.2e} <= 1e-6, {elapsed:.2f} s < 10 s")


def test_criterion_3_gradient_check():
    start = time.perf_counter()
    problem, params = gradient_check_problem(seed=0)
    res = check_gradient(problem, params, n_coords=128, step=1e-5, seed=0)
    groups = {params.group_of(int(i)) for i in res.coords}
    elapsed = time.perf_counter() - start
    ok = res.max_rel_error < 1e-4 and len(res.coords) >= 64 and groups == set(PARAM_GROUPS) and elapsed < 60
    report(
        3,
        "finite-difference gradient check",
        ok,
        f"max rel error {res.max_rel_error:.2e} < 1e-4 over {len(res.coords)} coords in {len(groups)}/{len(PARAM_GROUPS)} groups, {elapsed:.2f} s < 60 s",
    )


def test_criterion_4_loss_identities():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((2, 2, 1, 3))
    anchors = np.array([[0, 0, 0], [1, 1, 0]])
    same = align_loss(a, a, anchors)
    p = np.log([0.5, 0.5]).reshape(1, 1, 1, 2)
    q = np.log([0.9, 0.1]).reshape(1, 1, 1, 2)
    pair = align_loss(p, q, np.zeros((1, 3), int))
    oracle = 0.5 * np.log(25 / 9) + 0.9 * np.log(1.8) + 0.1 * np.log(0.2)
    Q, _ = np.linalg.qr(rng.standard_normal((8, 4)))
    orth_zero = orth_loss(ShProjection(Q.T, degree=1))
    lam = 1e-6
    orth_two = orth_loss_grad(np.array([[1.0, 0.0], [1.0, 0.0]]), lam)[0]
    lov_err = 0.0
    for gt_bits in itertools.product((0, 1), repeat=4):
        gt = np.array(gt_bits)
        for pred_bits in itertools.product((0, 1), repeat=4):
            pr = np.array(pred_bits)
            jac = np.mean([1 - np.sum((gt == c) & (pr == c)) / np.sum((gt == c) | (pr == c)) for c in np.unique(gt)])
            lov_err = max(lov_err, abs(lovasz_softmax_probs(np.eye(2)[pr], gt) - jac))
            logits = (40.0 * (2 * np.eye(2)[pr] - 1)).reshape(2, 2, 1, 2)
            lov_err = max(lov_err, abs(lovasz_loss(logits, gt.reshape(2, 2, 1)) - jac))
    ok = same == 0 and abs(pair - oracle) <= 1e-4 and abs(oracle - 0.8789) < 1e-4 and orth_zero < 1e-15 and orth_two == 2 * lam and lov_err < 1e-12
    report(
        4,
        "loss identities",
        ok,
        f"align(a,a)={same}, align pair {pair:.6f} vs {oracle:.6f}, orth {orth_zero:.1e} / {orth_two:.1e}=2*lambda, Lovasz-Jaccard max diff {lov_err:.1e} over 256 grids",
    )


def _topk_oracle(sim, k):
    flat = sim.ravel()
    return np.array(sorted(range(flat.size), key=lambda i: (-flat[i], i))[:k])


def _count_oracle(pred, gt, n):
    tp, fp, fn = np.zeros(n, int), np.zeros(n, int), np.zeros(n, int)
    occ = [0, 0, 0]
    for p, t in zip(pred.ravel(), gt.ravel()):
        if t == 255:
            continue
        if p == t:
            tp[p] += 1
        else:
            fp[p] += 1
            fn[t] += 1
        occ[0] += p != 0 and t != 0
        occ[1] += p != 0 and t == 0
        occ[2] += p == 0 and t != 0
    return tp, fp, fn, occ


def test_criterion_5_topk_and_metrics():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    topk_ok = metrics_ok = 0
    for trial in range(100):
        dims = tuple(int(d) for d in rng.integers(1, 7, 3))
        sim = rng.integers(-2, 3, dims).astype(float) if trial % 2 else rng.standard_normal(dims)
        k = int(rng.integers(1, sim.size + 1))
        a = select_anchors(sim, np.zeros(dims + (1,)), k)
        topk_ok += np.array_equal(a.linear_indices(dims), _topk_oracle(sim, k))
    for _ in range(100):
        dims = tuple(int(d) for d in rng.integers(1, 6, 3))
        n = int(rng.integers(2, 6))
        gt = rng.integers(0, n, dims)
        gt[rng.random(dims) < 0.1] = 255
        pred = rng.integers(0, n, dims)
        rep = compute_metrics(pred, gt, n)
        tp, fp, fn, occ = _count_oracle(pred, gt, n)
        den = tp + fp + fn
        iou = np.where(den > 0, tp / np.maximum(den, 1), 0.0)
        seen = den[1:] > 0
        miou = iou[1:][seen].mean() if seen.any() else 0.0
        occ_iou = occ[0] / sum(occ) if sum(occ) else 0.0
        metrics_ok += (
            np.array_equal(rep.tp, tp) and np.array_equal(rep.fp, fp) and np.array_equal(rep.fn, fn)
            and abs(rep.miou - miou) < 1e-15 and [rep.occ_tp, rep.occ_fp, rep.occ_fn] == occ and abs(rep.occ_iou - occ_iou) < 1e-15
        )
    elapsed = time.perf_counter() - start
    report(
        5,
        "top-k and metrics oracles",
        topk_ok == 100 and metrics_ok == 100 and elapsed < 10,
        f"top-k {topk_ok}/100, metrics {metrics_ok}/100, {elapsed:.2f} s < 10 s",
    )


@pytest.mark.slow
def test_criterion_6_end_to_end_fit():
    labels, grid, n = gen_scene("mini-street", seed=0)
    cfg = FitConfig(iterations=500, k=64, sh_degree=2, noise_sigma=0.0, seed=0)
    start = time.perf_counter()
    res = run_pipeline(SceneFile(grid, "labels", n, labels), cfg, deterministic=True)
    elapsed = time.perf_counter() - start
    m0, m1 = res.initial_metrics.miou, res.metrics.miou
    g0, g1 = res.initial_gauss_metrics.occ_iou, res.gauss_metrics.occ_iou
    ok = m1 > m0 and g1 - g0 >= GAUSS_OCC_IOU_MIN_GAIN and elapsed < 300 and res.problem.k == 64
    report(
        6,
        "mini-street end-to-end fit",
        ok,
        f"fused mIoU {m0:.4f} -> {m1:.4f}, Gaussian occupancy IoU {g0:.4f} -> {g1:.4f} (gain {g1 - g0:.4f} >= {GAUSS_OCC_IOU_MIN_GAIN}), {elapsed:.1f} s < 300 s",
    )


def test_criterion_7_determinism(tmp_path):
    labels, grid, n = gen_scene("mini-street", seed=0)
    scene = SceneFile(grid, "labels", n, labels)
    cfg = FitConfig(iterations=10, k=64, seed=11, step_size=1e-2)
    run_pipeline(scene, cfg, tmp_path / "a", deterministic=True)
    run_pipeline(scene, cfg, tmp_path / "b", deterministic=True)
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = [f for f in files if (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()]
    report(7, "bitwise determinism", len(files) == 6 and same == files, f"{len(same)}/{len(files)} output files identical")


def test_criterion_8_hyperparameters():
    cfg = FitConfig()
    texts = [config_to_text(c) for c in (cfg, cfg.replace(k=17, cutoff=np.inf, origin=(0.1, 0.2, 0.3)))]
    round_trip = all(config_from_text(t) == config_from_text(config_to_text(config_from_text(t))) for t in texts)
    round_trip = round_trip and config_from_text(texts[0]) == cfg
    ok = cfg.resolve_k(FULL_GRID) == 1024 and cfg.orth_lambda == 1e-6 and cfg.step_size == 2e-4 and round_trip
    report(
        8,
        "hyperparameter defaults",
        ok,
        f"K={cfg.resolve_k(FULL_GRID)} on {FULL_GRID}, lambda={cfg.orth_lambda}, step={cfg.step_size}, config round trip {'lossless' if round_trip else 'lossy'}",
    )


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
