"""
Checking the error bounds
=========================

Force ``c`` consecutive cached steps and compare the measured error with
the Lipschitz-product bound. Then compare single and dual-band gates on
synthetic correlated band changes.
"""

# %%
from ditcache import ModelConfig, init_model
from ditcache.experiments import error_growth_study, fdc_false_positive_study, snr_profile
from ditcache.model import lipschitz_estimate

weights = init_model(ModelConfig())
for ell in range(1, 7):
    print(f"block {ell}: Lipschitz estimate {lipschitz_estimate(weights, ell, probes=16):.4f}")

# %%
tab = error_growth_study(weights, c_values=(1, 2, 3, 4, 5))
for row in tab.rows:
    r = dict(zip(tab.columns, row))
    print(f"c={r['c']} error={r['max_error']:.5f} bound={r['bound']:.5f} holds={r['bound_holds']}")
print("log-log slope: %.3f" % tab.rows[0][tab.columns.index("growth_order")])

# %%
fp = fdc_false_positive_study([0.0, 0.25, 0.5, 0.75, 0.9], num_trials=10_000)
for rho, single, dual, reduction in fp.rows:
    print(f"rho={rho:.2f} single={single:.4f} dual={dual:.4f} reduction={reduction:.2f}")

# %%
# Signal-to-noise under a linear beta schedule decreases with t.
snr = snr_profile()
print("SNR at t=0, 500, 999:", snr[0], snr[500], snr[999])
