# Fitting the full two-branch model to the mini-street scene
#
# Takes about 20 s for 100 iterations on one core; pass a larger count as
# the first argument to go further (500 is what the tests use).

# %%
import sys
import tempfile
from pathlib import Path

from sphere_ssc import FitConfig, SceneFile, gen_scene, run_pipeline
from sphere_ssc.fit import check_gradient
from sphere_ssc.pipeline import gradient_check_problem

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 100

# %%
# The gradient is written by hand; check it against central differences first.
problem, params = gradient_check_problem(seed=0)
print("max relative error", check_gradient(problem, params, n_coords=64).max_rel_error)

# %%
labels, grid, n = gen_scene("mini-street", seed=0)
config = FitConfig(iterations=iterations, k=64, seed=0)
out = Path(tempfile.mkdtemp(prefix="mini-street-"))
res = run_pipeline(SceneFile(grid, "labels", n, labels), config, out)

for r in res.fit.records[:: max(1, iterations // 10)]:
    print(f"{r.iteration:4d}  loss {r.total:8.4f}  mIoU {r.miou:.4f}  occ {r.occ_iou:.4f}  gauss occ {r.gauss_occ_iou:.4f}")

# %%
print("fused mIoU", round(res.initial_metrics.miou, 4), "->", round(res.metrics.miou, 4))
print("artifacts in", out, sorted(p.name for p in out.iterdir()))
