"""
Baselines side by side
======================

The same noise seed under every controller kind: no caching, the
accumulated-distance rule with all gates off, a fixed interval, the
first-block proxy and the full controller.
"""

# %%
from ditcache import AdaptiveCacheController, ModelConfig, PolicyConfig, init_model
from ditcache.experiments import run_policy
from ditcache.model import sampler_run
from ditcache.policy import baseline_policy

weights = init_model(ModelConfig())
reference = sampler_run(weights, noise_seed=0)

controllers = {
    "nocache": baseline_policy("nocache"),
    "uniform": baseline_policy("uniform"),
    "fixed(2)": baseline_policy("fixed", interval=2),
    "fbcache": baseline_policy("fbcache", weights=weights),
    "full": AdaptiveCacheController(PolicyConfig()),
}

# %%
print(f"{'policy':10s} {'hits':>5s} {'speedup':>8s} {'l2':>8s} {'ssim':>7s}")
for name, ctl in controllers.items():
    rep = run_policy(weights, ctl, noise_seed=0, reference=reference)
    print(f"{name:10s} {rep.hit_count:5d} {rep.speedup_proxy:8.2f} {rep.l2_vs_reference:8.4f} {rep.ssim_vs_reference:7.4f}")
