"""
Frequency bands of a hidden state
=================================

Lay the middle block's tokens out on their 8x8 grid, take a 2-D DCT per
channel and track how fast each radial band changes between steps.
"""

# %%
import numpy as np

from ditcache import ModelConfig, init_model
from ditcache.experiments import spectral_volatility_study
from ditcache.numerics import dct2d, idct2d, radial_band_partition

# %%
# The transform is orthonormal, so it preserves energy.
x = np.random.default_rng(0).standard_normal((8, 8))
print("energy   :", np.sum(x**2), np.sum(dct2d(x) ** 2))
print("roundtrip:", np.abs(idct2d(dct2d(x)) - x).max())

bands = radial_band_partition(8, 8)
print(bands.band_of)
print("coefficients per band:", bands.counts())

# %%
weights = init_model(ModelConfig())
tab = spectral_volatility_study(weights, num_bands=8, noise_seed=0)
for band, count, delta in tab.rows:
    print(f"band {band} ({count:2d} coeffs) delta={delta:.4f}")
