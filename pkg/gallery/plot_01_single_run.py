"""
Caching a toy denoising run
===========================

Run the seeded toy transformer once with full computation and once with
the cache controller, then compare the final samples and read the
per-step decisions.
"""

# %%
from ditcache import AdaptiveCacheController, ModelConfig, PolicyConfig, init_model
from ditcache.experiments import max_hit_run, run_policy

weights = init_model(ModelConfig())
print("weights checksum:", weights.checksum()[:16])

# %%
# The controller compares the first block's modulated input across steps.
# A ``H`` marks a step where the whole backbone was skipped.
ctl = AdaptiveCacheController(PolicyConfig())
report = run_policy(weights, ctl, noise_seed=0)
print("pattern :", "".join("H" if d.hit else "." for d in report.trace))
print("hit rate: %.2f  speedup proxy: %.2f" % (report.hit_rate, report.speedup_proxy))
print("longest hit run:", max_hit_run(report.trace))

# %%
# Error against the uncached run of the same noise seed.
print("L2   %.4f" % report.l2_vs_reference)
print("PSNR %.2f dB" % report.psnr_vs_reference)
print("SSIM %.4f" % report.ssim_vs_reference)

# %%
# Every miss names the first gate that failed.
for d in report.trace:
    tau = "-" if d.tau_eff is None else "%.3f" % d.tau_eff
    acc = "-" if d.A_after is None else "%.3f" % d.A_after
    print(f"t={d.t:2d} {d.verdict.value:4s} {d.reason.value:16s} tau_eff={tau} A={acc}")
