import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from ditcache.model import sampler_run
from ditcache.numerics import DegenerateReferenceError, Polynomial, ShapeError, rel_l1_change
from ditcache.policy import (
    AdaptiveCacheController,
    BaselineKind,
    CacheState,
    FirstBlockProxyController,
    FixedIntervalController,
    NoCacheController,
    PolicyConfig,
    Reason,
    Verdict,
    accumulate_distance,
    apply_cache,
    baseline_policy,
    ceb_allows,
    decide,
    effective_threshold,
    fdc_check,
    split_index,
    tads_scale,
    update_after_full,
)

SHAPE = (1, 4, 8)


def _ones():
    return np.ones(SHAPE)


def _banded(a, b, k=4):
    m = np.ones(SHAPE)
    m[..., :k] += a
    m[..., k:] += b
    return m


def _ready_state(m_prev=None, c=0, acc=0.0):
    return CacheState(
        residual=np.zeros(SHAPE),
        prev_modulated=_ones() if m_prev is None else m_prev,
        accumulated=acc,
        consecutive=c,
    )


# --- config ---------------------------------------------------------------


def test_defaults():
    c = PolicyConfig()
    assert (c.tau_base, c.s_min, c.s_max, c.c_max) == (0.6, 0.5, 1.5, 2)
    assert (c.split_ratio, c.gamma_low, c.gamma_high) == (0.5, 0.8, 1.5)
    assert c.poly.coeffs == (0.0, 1.0)


@pytest.mark.parametrize(
    "changes,msg",
    [
        (dict(s_min=1.2, s_max=1.0), "s_min < s_max"),
        (dict(tau_base=-0.1), "tau_base"),
        (dict(s_min=0.0), "s_min"),
        (dict(s_max=1.0, s_min=0.5), "s_max"),
        (dict(c_max=-1), "c_max"),
        (dict(split_ratio=1.0), "split_ratio"),
        (dict(gamma_low=1.2), "gamma_low"),
        (dict(gamma_high=0.9), "gamma_high"),
        (dict(num_steps=1), "num_steps"),
    ],
)
def test_config_validation(changes, msg):
    with pytest.raises(ValueError, match=msg):
        PolicyConfig(**changes)


# --- schedule / threshold / budget -----------------------------------------


def test_tads_examples():
    assert tads_scale(0, 20, 0.5, 1.5) == 0.5
    assert tads_scale(10, 20, 0.5, 1.5) == 1.5
    assert tads_scale(5, 20, 0.5, 1.5) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        tads_scale(20, 20, 0.5, 1.5)
    with pytest.raises(ValueError):
        tads_scale(0, 1, 0.5, 1.5)


@given(st.integers(2, 200), st.data())
def test_tads_bounds_and_peak(num_steps, data):
    t = data.draw(st.integers(0, num_steps - 1))
    s = tads_scale(t, num_steps, 0.5, 1.5)
    assert 0.5 - 1e-15 <= s <= 1.5 + 1e-15
    peak = max(range(num_steps), key=lambda u: tads_scale(u, num_steps, 0.5, 1.5))
    assert abs(peak - num_steps / 2) <= 0.5


def test_effective_threshold_examples():
    assert effective_threshold(0.6, 1.5) == pytest.approx(0.9, abs=1e-15)
    assert effective_threshold(0.6, 1.37, enable_tads=False) == 0.6
    assert effective_threshold(0.0, 1.5) == 0.0
    with pytest.raises(ValueError):
        effective_threshold(-1.0, 1.0)


def test_ceb_examples():
    assert ceb_allows(2, 2) is False
    assert ceb_allows(0, 2) is True
    assert ceb_allows(10**6, 2, enable_ceb=False) is True
    with pytest.raises(ValueError):
        ceb_allows(-1, 2)


# --- FDC ------------------------------------------------------------------


def test_fdc_identical_inputs():
    r = fdc_check(_ones(), _ones(), PolicyConfig(), 0.6)
    assert (r.delta_low, r.delta_high, r.pass_low, r.pass_high) == (0.0, 0.0, True, True)


def test_fdc_low_threshold_arithmetic():
    r = fdc_check(_banded(0.5, 0.0), _ones(), PolicyConfig(), 0.6)
    assert r.delta_low == pytest.approx(0.5, abs=1e-12)
    assert not r.pass_low and r.pass_high


def test_fdc_matches_channel_slices(rng):
    m_t, m_prev = rng.standard_normal((1, 64, 32)), rng.standard_normal((1, 64, 32))
    r = fdc_check(m_t, m_prev, PolicyConfig(), 0.6)
    assert r.delta_low == rel_l1_change(m_t[..., :16], m_prev[..., :16])
    assert r.delta_high == rel_l1_change(m_t[..., 16:], m_prev[..., 16:])


def test_fdc_split_floor_and_degenerate():
    assert split_index(32, 0.5) == 16
    assert split_index(10, 0.33) == 3
    prev = _ones()
    prev[..., :4] = 0
    with pytest.raises(DegenerateReferenceError):
        fdc_check(_ones(), prev, PolicyConfig(), 0.6)
    with pytest.raises(ShapeError):
        fdc_check(_ones(), _ones(), PolicyConfig(split_ratio=0.1), 0.6)


# --- accumulation ------------------------------------------------------------


def test_accumulate_examples():
    d, a = accumulate_distance(0.7, _ones(), _ones(), Polynomial())
    assert (d, a) == (0.0, 0.7)
    d, a = accumulate_distance(0.3, np.full(SHAPE, 1.2), _ones(), Polynomial())
    assert d == pytest.approx(0.2, abs=1e-15)
    assert a == pytest.approx(0.5, abs=1e-15)
    d, a = accumulate_distance(0.0, np.full(SHAPE, 1.2), _ones(), Polynomial((0.1, 2.0, -1.0)))
    assert a == pytest.approx(0.1 + 2 * d - d * d, abs=1e-15)
    assert a == pytest.approx(0.46, abs=1e-12)
    with pytest.raises(ValueError):
        accumulate_distance(0.0, _ones(), None, Polynomial())


# --- decide ---------------------------------------------------------------


def test_decide_examples():
    cfg = PolicyConfig()
    dec, _ = decide(0, _ready_state(), _ones(), cfg)
    assert dec.verdict is Verdict.MISS and dec.reason is Reason.ENDPOINT
    dec, _ = decide(19, _ready_state(), _ones(), cfg)
    assert dec.reason is Reason.ENDPOINT
    dec, _ = decide(3, CacheState(prev_modulated=_ones()), _ones(), cfg)
    assert dec.reason is Reason.NO_RESIDUAL
    dec, _ = decide(3, _ready_state(c=2), _ones(), cfg)
    assert dec.reason is Reason.CEB_EXHAUSTED
    dec, new = decide(3, _ready_state(c=1), _ones(), cfg)
    assert dec.hit and dec.reason is Reason.HIT
    assert new.consecutive == 2 and new.accumulated == 0.0


def test_decide_first_step_without_previous():
    dec, new = decide(0, CacheState(), _ones(), PolicyConfig())
    assert dec.d_t is None and dec.A_after == 0.0
    assert new.prev_modulated is not None


def test_decide_distance_and_fdc_reasons():
    cfg = PolicyConfig()  # t=5: s=1, tau_eff=0.6
    dec, _ = decide(5, _ready_state(), _banded(0.7, 0.7), cfg)
    assert dec.reason is Reason.DISTANCE_EXCEEDED
    dec, _ = decide(5, _ready_state(), _banded(0.9, 0.1), cfg)
    assert dec.A_after == pytest.approx(0.5)
    assert dec.reason is Reason.FDC_LOW_FAILED
    dec, _ = decide(5, _ready_state(), _banded(0.05, 0.95), cfg)
    assert dec.reason is Reason.FDC_HIGH_FAILED
    dec, _ = decide(5, _ready_state(), _banded(0.05, 0.95), cfg.with_flags(True, True, False))
    assert dec.hit and dec.delta_low is None


def test_decide_updates_prev_modulated_on_hit_and_miss():
    cfg = PolicyConfig()
    m = _banded(0.01, 0.01)
    for t, state in [(3, _ready_state()), (0, _ready_state())]:
        _, new = decide(t, state, m, cfg)
        assert new.prev_modulated is not None and np.array_equal(new.prev_modulated, m)


def test_decision_json_roundtrip():
    dec, _ = decide(5, _ready_state(), _banded(0.1, 0.1), PolicyConfig())
    rec = json.loads(dec.to_json())
    assert rec["verdict"] == "Hit" and rec["reason"] == "Hit" and rec["t"] == 5
    assert set(rec) == {"t", "verdict", "reason", "s_t", "tau_eff", "d_t", "A_after", "delta_low", "delta_high"}


# --- property tests -----------------------------------------------------------

configs = st.builds(
    PolicyConfig,
    tau_base=st.floats(0.0, 3.0),
    s_min=st.floats(0.05, 0.95),
    s_max=st.floats(1.05, 3.0),
    c_max=st.integers(0, 4),
    split_ratio=st.floats(0.15, 0.85),
    enable_tads=st.booleans(),
    enable_ceb=st.booleans(),
    enable_fdc=st.booleans(),
    num_steps=st.integers(2, 30),
)


def _rand_m(seed, shape=SHAPE):
    return np.random.default_rng(seed).standard_normal(shape) + 2.0


@given(configs, st.integers(0, 2**32 - 1), st.integers(0, 10), st.floats(0.0, 5.0))
def test_endpoints_never_hit(cfg, seed, c, acc):
    for t in (0, cfg.num_steps - 1):
        dec, _ = decide(t, _ready_state(_rand_m(seed), c=c, acc=acc), _rand_m(seed + 1), cfg)
        assert dec.verdict is Verdict.MISS and dec.reason is Reason.ENDPOINT


@settings(max_examples=50)
@given(configs, st.integers(0, 2**32 - 1), st.floats(0.0, 0.2))
def test_ceb_ceiling_on_traces(cfg, seed, noise):
    assume(cfg.enable_ceb)
    rng = np.random.default_rng(seed)
    state = CacheState()
    run = 0
    base = _rand_m(seed)
    for t in range(cfg.num_steps):
        m = base + noise * rng.standard_normal(SHAPE)
        dec, state = decide(t, state, m, cfg)
        if dec.hit:
            run += 1
            assert run <= cfg.c_max
        else:
            state = update_after_full(state, m, m + 1.0)
            run = 0


@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.integers(1, 18), st.integers(0, 2**32 - 1), st.floats(0.0, 2.0))
def test_monotone_gating(tau_a, tau_b, t, seed, acc):
    lo, hi = sorted((tau_a, tau_b))
    state = _ready_state(_rand_m(seed), acc=acc)
    m = _rand_m(seed + 1)
    base = PolicyConfig().with_flags(True, False, False)
    dec_lo, _ = decide(t, state, m, PolicyConfig(**{**base.__dict__, "tau_base": lo}))
    dec_hi, _ = decide(t, state, m, PolicyConfig(**{**base.__dict__, "tau_base": hi}))
    assert not (dec_lo.hit and not dec_hi.hit)


@given(st.integers(1, 18), st.integers(0, 2**32 - 1), st.floats(0.0, 1.0), st.floats(0.0, 0.6))
def test_fdc_conjunction(t, seed, acc, noise):
    cfg = PolicyConfig()
    prev = _rand_m(seed)
    m = prev + noise * np.random.default_rng(seed + 7).standard_normal(SHAPE)
    dec, _ = decide(t, _ready_state(prev, acc=acc), m, cfg)
    fdc = fdc_check(m, prev, cfg, dec.tau_eff)
    gates = (dec.A_after < dec.tau_eff, fdc.pass_low, fdc.pass_high)
    assert dec.hit == all(gates)
    if not dec.hit:
        first = gates.index(False)
        assert dec.reason is (Reason.DISTANCE_EXCEEDED, Reason.FDC_LOW_FAILED, Reason.FDC_HIGH_FAILED)[first]


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 5.0), st.integers(0, 5))
def test_reset_discipline(seed, acc, c):
    rng = np.random.default_rng(seed)
    h0, hl = rng.standard_normal(SHAPE), rng.standard_normal(SHAPE)
    s = update_after_full(_ready_state(acc=acc, c=c), h0, hl)
    assert (s.accumulated, s.consecutive) == (0.0, 0)
    assert _roundtrips(h0, s.residual, hl)


def _roundtrips(h0, residual, hl):
    # (hl - h0) + h0 can differ from hl by one rounding step
    tol = 2 * np.spacing(np.maximum(np.abs(h0), np.abs(hl)))
    return bool(np.all(np.abs(apply_cache(h0, residual) - hl) <= tol))


# --- residual helpers --------------------------------------------------------


def test_apply_cache_examples(rng):
    r = rng.standard_normal(SHAPE)
    assert np.array_equal(apply_cache(np.zeros(SHAPE), r), r)
    assert np.array_equal(apply_cache(r, np.zeros(SHAPE)), r)
    h = rng.standard_normal(SHAPE)
    assert np.array_equal(apply_cache(h, r), h + r)


def test_update_after_full_examples(rng, default_weights):
    h = rng.standard_normal(SHAPE)
    s = update_after_full(_ready_state(c=2, acc=1.0), h, h)
    assert not s.residual.any()
    run = sampler_run(default_weights, noise_seed=1)
    h0, hl = run.inputs[4], run.outputs[4]
    s = update_after_full(CacheState(), h0, hl)
    assert _roundtrips(h0, s.residual, hl)


# --- controllers / baselines ---------------------------------------------------


def test_nocache_baseline(default_weights):
    ctl = baseline_policy("nocache")
    assert isinstance(ctl, NoCacheController)
    res = sampler_run(default_weights, ctl)
    assert not any(res.hits)


def test_fixed_interval_zero_equals_nocache(default_weights):
    a = sampler_run(default_weights, baseline_policy(BaselineKind.FIXED_INTERVAL, interval=0))
    b = sampler_run(default_weights, NoCacheController())
    assert a.hits == b.hits and np.array_equal(a.final, b.final)


def test_fixed_interval_pattern(default_weights):
    res = sampler_run(default_weights, FixedIntervalController(2))
    pattern = "".join("H" if h else "." for h in res.hits)
    assert pattern == ".HH.HH.HH.HH.HH.HH.."
    with pytest.raises(ValueError):
        FixedIntervalController(-1)
    with pytest.raises(ValueError):
        baseline_policy("fixed", interval=-1)


def test_uniform_equals_flags_off(default_weights):
    cfg = PolicyConfig()
    uni = baseline_policy("uniform", cfg)
    ref = AdaptiveCacheController(cfg.with_flags(False, False, False))
    sampler_run(default_weights, uni)
    sampler_run(default_weights, ref)
    assert [d.to_json() for d in uni.trace] == [d.to_json() for d in ref.trace]


def test_first_block_proxy(default_weights):
    ctl = baseline_policy("fbcache", weights=default_weights, tau_fb=0.12)
    assert isinstance(ctl, FirstBlockProxyController)
    res = sampler_run(default_weights, ctl)
    assert not res.hits[0] and not res.hits[-1]
    for hit, evals in zip(res.hits, res.blocks_computed):
        assert evals == (1 if hit else 6)
    never = sampler_run(default_weights, FirstBlockProxyController(default_weights, 0.0))
    assert not any(never.hits)
    with pytest.raises(ValueError):
        baseline_policy("fbcache")
    with pytest.raises(ValueError):
        FirstBlockProxyController(default_weights, -1.0)


def test_spectral_controller_states(default_weights):
    ctl = AdaptiveCacheController(PolicyConfig())
    res = sampler_run(default_weights, ctl)
    assert len(ctl.trace) == len(ctl.states_after) == 20
    for dec, hit in zip(ctl.trace, res.hits):
        assert dec.hit == hit
    assert math.isclose(sum(res.hits) / 20, 0.6)
