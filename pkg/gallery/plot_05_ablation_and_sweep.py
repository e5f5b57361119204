"""
Switching gates on and off
==========================

The eight combinations of the schedule, the consecutive-hit budget and
the dual-band check, followed by a sweep of the base threshold.
"""

# %%
from ditcache import ModelConfig, PolicyConfig, init_model
from ditcache.experiments import ablation_grid, flag_label, threshold_sweep

weights = init_model(ModelConfig())
tab, reports = ablation_grid(weights, PolicyConfig(), noise_seed=0)
cols = tab.columns
for row in tab.rows:
    r = dict(zip(cols, row))
    label = flag_label((r["tads"], r["ceb"], r["fdc"]))
    print(f"{label:12s} hit={r['hit_rate']:.2f} speedup={r['speedup_proxy']:.2f} "
          f"ssim={r['ssim_vs_reference']:.4f} longest run={r['max_hit_run']}")

# %%
# With the budget and band checks off, a larger threshold can only add hits.
cfg = PolicyConfig(enable_ceb=False, enable_fdc=False)
sweep = threshold_sweep(weights, cfg, [0.0, 0.3, 0.6, 0.9, 1.2])
for tau, hit, speed, l2, psnr, ssim in sweep.rows:
    print(f"tau={tau:.1f} hit={hit:.2f} speedup={speed:.2f} l2={l2:.4f} ssim={ssim:.4f}")
