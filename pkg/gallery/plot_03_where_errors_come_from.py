"""
Where staleness hurts
=====================

Two probes of the toy model. First, reuse every block at a single
timestep and measure the damage to the final sample. Second, reuse
``k`` blocks at every step, either as one contiguous run or scattered.
"""

# %%
from ditcache import ModelConfig, init_model
from ditcache.experiments import cascade_study, temporal_sensitivity

weights = init_model(ModelConfig())

# %%
curve = temporal_sensitivity(weights, num_samples=3, seed=0)
for t, e in enumerate(curve.errors, start=1):
    print(f"t={t:2d} {e:.4f} " + "#" * int(200 * e))

# %%
# Contiguous against scattered block reuse at matched counts.
tab = cascade_study(weights, k_range=range(1, 7), trials=10, num_samples=3, seed=0)
for k, con, rnd, _ in tab.rows:
    print(f"k={k} consecutive={con:.4f} random={rnd:.4f} ratio={con / rnd:.3f}")
