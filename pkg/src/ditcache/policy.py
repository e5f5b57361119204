"""Cache-or-compute decision engine and baseline controllers.

The engine combines an accumulated, polynomial-rescaled distance between
successive modulated inputs with three optional gates:

* a cosine-bell timestep schedule on the threshold (``enable_tads``),
* a cap on consecutive cached steps (``enable_ceb``),
* separate relative-L1 checks on the two channel halves of the modulated
  input with asymmetric thresholds (``enable_fdc``).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .model import Compute, ModelWeights, Reuse, block_forward
from .numerics import Polynomial, ShapeError, poly_eval, rel_l1_change


@dataclass(frozen=True)
class PolicyConfig:
    tau_base: float = 0.6
    s_min: float = 0.5
    s_max: float = 1.5
    c_max: int = 2
    split_ratio: float = 0.5
    gamma_low: float = 0.8
    gamma_high: float = 1.5
    poly: Polynomial = field(default_factory=Polynomial)
    enable_tads: bool = True
    enable_ceb: bool = True
    enable_fdc: bool = True
    num_steps: int = 20

    def __post_init__(self):
        if not self.tau_base >= 0:
            raise ValueError(f"tau_base must be >= 0, got {self.tau_base}")
        if not self.s_min < self.s_max:
            raise ValueError(f"s_min < s_max violated: {self.s_min} >= {self.s_max}")
        if not 0 < self.s_min < 1:
            raise ValueError(f"s_min must lie in (0, 1), got {self.s_min}")
        if not self.s_max > 1:
            raise ValueError(f"s_max must be > 1, got {self.s_max}")
        if self.c_max < 0:
            raise ValueError(f"c_max must be >= 0, got {self.c_max}")
        if not 0 < self.split_ratio < 1:
            raise ValueError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if not 0 < self.gamma_low <= 1:
            raise ValueError(f"gamma_low must lie in (0, 1], got {self.gamma_low}")
        if not self.gamma_high >= 1:
            raise ValueError(f"gamma_high must be >= 1, got {self.gamma_high}")
        if self.num_steps < 2:
            raise ValueError(f"num_steps must be >= 2, got {self.num_steps}")

    def with_flags(self, tads: bool, ceb: bool, fdc: bool) -> "PolicyConfig":
        return replace(self, enable_tads=tads, enable_ceb=ceb, enable_fdc=fdc)


@dataclass
class CacheState:
    residual: Optional[np.ndarray] = None
    prev_modulated: Optional[np.ndarray] = None
    accumulated: float = 0.0
    consecutive: int = 0


class Verdict(str, enum.Enum):
    HIT = "Hit"
    MISS = "Miss"


class Reason(str, enum.Enum):
    ENDPOINT = "Endpoint"
    NO_RESIDUAL = "NoResidual"
    CEB_EXHAUSTED = "CebExhausted"
    DISTANCE_EXCEEDED = "DistanceExceeded"
    FDC_LOW_FAILED = "FdcLowFailed"
    FDC_HIGH_FAILED = "FdcHighFailed"
    HIT = "Hit"


@dataclass(frozen=True)
class StepDecision:
    t: int
    verdict: Verdict
    reason: Reason
    s_t: Optional[float] = None
    tau_eff: Optional[float] = None
    d_t: Optional[float] = None
    A_after: Optional[float] = None
    delta_low: Optional[float] = None
    delta_high: Optional[float] = None

    @property
    def hit(self) -> bool:
        return self.verdict is Verdict.HIT

    def to_json(self) -> str:
        rec = asdict(self)
        rec["verdict"] = self.verdict.value
        rec["reason"] = self.reason.value
        return json.dumps(rec, sort_keys=True)


def tads_scale(t: int, num_steps: int, s_min: float, s_max: float) -> float:
    if num_steps < 2:
        raise ValueError(f"num_steps must be >= 2, got {num_steps}")
    if not 0 <= t < num_steps:
        raise ValueError(f"timestep {t} outside [0, {num_steps})")
    return s_min + (s_max - s_min) * (1.0 - math.cos(2.0 * math.pi * t / num_steps)) / 2.0


def effective_threshold(tau_base: float, s_t: float, enable_tads: bool = True) -> float:
    if tau_base < 0:
        raise ValueError(f"tau_base must be >= 0, got {tau_base}")
    return tau_base * s_t if enable_tads else tau_base


def ceb_allows(c: int, c_max: int, enable_ceb: bool = True) -> bool:
    if c < 0 or c_max < 0:
        raise ValueError("counters must be non-negative")
    return (not enable_ceb) or c < c_max


@dataclass(frozen=True)
class FdcResult:
    delta_low: float
    delta_high: float
    pass_low: bool
    pass_high: bool


def split_index(hidden_dim: int, split_ratio: float) -> int:
    return int(math.floor(split_ratio * hidden_dim))


def fdc_check(m_t, m_prev, config: PolicyConfig, tau_eff: float) -> FdcResult:
    """Per-band relative L1 change on the two channel slices of the modulated input."""
    m_t = np.asarray(m_t, dtype=np.float64)
    m_prev = np.asarray(m_prev, dtype=np.float64)
    if m_t.shape != m_prev.shape:
        raise ShapeError(f"shape mismatch: {m_t.shape} vs {m_prev.shape}")
    k = split_index(m_t.shape[-1], config.split_ratio)
    if not 0 < k < m_t.shape[-1]:
        raise ShapeError(f"split ratio {config.split_ratio} leaves an empty band for D={m_t.shape[-1]}")
    delta_low = rel_l1_change(m_t[..., :k], m_prev[..., :k])
    delta_high = rel_l1_change(m_t[..., k:], m_prev[..., k:])
    return FdcResult(
        delta_low=delta_low,
        delta_high=delta_high,
        pass_low=delta_low <= tau_eff * config.gamma_low,
        pass_high=delta_high <= tau_eff * config.gamma_high,
    )


def accumulate_distance(a_prev: float, m_t, m_prev, poly: Polynomial) -> tuple[float, float]:
    if m_prev is None:
        raise ValueError("no previous modulated input to compare against")
    d = rel_l1_change(m_t, m_prev)
    return d, a_prev + poly_eval(poly, d)


def decide(t: int, state: CacheState, m_t, config: PolicyConfig) -> tuple[StepDecision, CacheState]:
    """One timestep of the cache decision.

    Gates are evaluated in a fixed order and the first failure names the
    reason: Endpoint, NoResidual, CebExhausted, DistanceExceeded,
    FdcLowFailed, FdcHighFailed. The returned state always carries ``m_t``
    as the next comparison reference; on a hit the counter is incremented
    and the accumulated distance retained. Resetting after a miss is the
    job of :func:`update_after_full`.
    """
    m_t = np.asarray(m_t, dtype=np.float64)
    d_t = None
    acc = state.accumulated
    if state.prev_modulated is not None:
        d_t, acc = accumulate_distance(acc, m_t, state.prev_modulated, config.poly)
    s_t = tads_scale(t, config.num_steps, config.s_min, config.s_max)
    tau_eff = effective_threshold(config.tau_base, s_t, config.enable_tads)

    def finish(reason, fdc=None):
        verdict = Verdict.HIT if reason is Reason.HIT else Verdict.MISS
        decision = StepDecision(
            t=t,
            verdict=verdict,
            reason=reason,
            s_t=s_t,
            tau_eff=tau_eff,
            d_t=d_t,
            A_after=acc,
            delta_low=None if fdc is None else fdc.delta_low,
            delta_high=None if fdc is None else fdc.delta_high,
        )
        new_state = CacheState(
            residual=state.residual,
            prev_modulated=m_t,
            accumulated=acc,
            consecutive=state.consecutive + (verdict is Verdict.HIT),
        )
        return decision, new_state

    if t == 0 or t == config.num_steps - 1:
        return finish(Reason.ENDPOINT)
    if state.residual is None or state.prev_modulated is None:
        return finish(Reason.NO_RESIDUAL)
    if not ceb_allows(state.consecutive, config.c_max, config.enable_ceb):
        return finish(Reason.CEB_EXHAUSTED)

    fdc = fdc_check(m_t, state.prev_modulated, config, tau_eff) if config.enable_fdc else None
    if not acc < tau_eff:
        return finish(Reason.DISTANCE_EXCEEDED, fdc)
    if fdc is not None and not fdc.pass_low:
        return finish(Reason.FDC_LOW_FAILED, fdc)
    if fdc is not None and not fdc.pass_high:
        return finish(Reason.FDC_HIGH_FAILED, fdc)
    return finish(Reason.HIT, fdc)


def apply_cache(h0, residual) -> np.ndarray:
    h0 = np.asarray(h0, dtype=np.float64)
    residual = np.asarray(residual, dtype=np.float64)
    if h0.shape != residual.shape:
        raise ShapeError(f"shape mismatch: {h0.shape} vs {residual.shape}")
    return h0 + residual


def update_after_full(state: CacheState, h0, h_out) -> CacheState:
    h0 = np.asarray(h0, dtype=np.float64)
    h_out = np.asarray(h_out, dtype=np.float64)
    if h0.shape != h_out.shape:
        raise ShapeError(f"shape mismatch: {h0.shape} vs {h_out.shape}")
    return CacheState(
        residual=h_out - h0,
        prev_modulated=state.prev_modulated,
        accumulated=0.0,
        consecutive=0,
    )


# --- controllers ---------------------------------------------------------


class AdaptiveCacheController:
    """Sampler controller driving :func:`decide` with residual reuse."""

    def __init__(self, config: PolicyConfig):
        self.config = config
        self.state = CacheState()
        self.trace: list[StepDecision] = []
        self.states_after: list[CacheState] = []

    def start(self, num_steps):
        if num_steps != self.config.num_steps:
            self.config = replace(self.config, num_steps=num_steps)
        self.state = CacheState()
        self.trace = []
        self.states_after = []

    def step(self, t, h0, emb, modulated):
        decision, self.state = decide(t, self.state, modulated, self.config)
        self.trace.append(decision)
        if decision.hit:
            self.states_after.append(self.state)
            return Reuse(apply_cache(h0, self.state.residual))
        return Compute()

    def computed(self, t, h0, h_out):
        self.state = update_after_full(self.state, h0, h_out)
        self.states_after.append(self.state)


class NoCacheController:
    def __init__(self):
        self.trace: list[StepDecision] = []

    def start(self, num_steps):
        self.trace = []
        self.num_steps = num_steps

    def step(self, t, h0, emb, modulated):
        reason = Reason.ENDPOINT if t in (0, self.num_steps - 1) else Reason.DISTANCE_EXCEEDED
        self.trace.append(StepDecision(t=t, verdict=Verdict.MISS, reason=reason))
        return Compute()

    def computed(self, t, h0, h_out):
        pass


class FixedIntervalController:
    """Cache ``k`` of every ``k + 1`` steps, reusing the last computed residual."""

    def __init__(self, k: int):
        if k < 0:
            raise ValueError(f"interval k must be >= 0, got {k}")
        self.k = k
        self.trace: list[StepDecision] = []

    def start(self, num_steps):
        self.num_steps = num_steps
        self.residual = None
        self.trace = []

    def step(self, t, h0, emb, modulated):
        if t in (0, self.num_steps - 1):
            reason = Reason.ENDPOINT
        elif self.residual is None:
            reason = Reason.NO_RESIDUAL
        elif t % (self.k + 1) == 0:
            reason = Reason.CEB_EXHAUSTED
        else:
            reason = Reason.HIT
        verdict = Verdict.HIT if reason is Reason.HIT else Verdict.MISS
        self.trace.append(StepDecision(t=t, verdict=verdict, reason=reason))
        if verdict is Verdict.HIT:
            return Reuse(apply_cache(h0, self.residual))
        return Compute()

    def computed(self, t, h0, h_out):
        self.residual = h_out - h0


class FirstBlockProxyController:
    """Evaluate block 1 every step; skip the rest of the stack when its residual is stable.

    The comparison reference is the first-block residual stored at the last
    full computation, as in first-block caching implementations.
    """

    def __init__(self, weights: ModelWeights, tau_fb: float = 0.12):
        if tau_fb < 0:
            raise ValueError(f"tau_fb must be >= 0, got {tau_fb}")
        self.weights = weights
        self.tau_fb = tau_fb
        self.trace: list[StepDecision] = []

    def start(self, num_steps):
        self.num_steps = num_steps
        self.anchor = None  # first-block residual at the last full compute
        self.rest_residual = None  # H_L - H_1 at the last full compute
        self.trace = []

    def step(self, t, h0, emb, modulated):
        h1 = block_forward(h0, 1, emb, self.weights)
        self._h1 = h1
        first_res = h1 - h0
        self._first_res = first_res
        d = None
        if t in (0, self.num_steps - 1):
            reason = Reason.ENDPOINT
        elif self.anchor is None:
            reason = Reason.NO_RESIDUAL
        else:
            d = rel_l1_change(first_res, self.anchor)
            reason = Reason.HIT if d <= self.tau_fb else Reason.DISTANCE_EXCEEDED
        verdict = Verdict.HIT if reason is Reason.HIT else Verdict.MISS
        self.trace.append(
            StepDecision(t=t, verdict=verdict, reason=reason, tau_eff=self.tau_fb, d_t=d)
        )
        if verdict is Verdict.HIT:
            return Reuse(h1 + self.rest_residual, blocks_computed=1)
        return Compute()

    def computed(self, t, h0, h_out):
        self.anchor = self._first_res
        self.rest_residual = h_out - self._h1


class BaselineKind(str, enum.Enum):
    NO_CACHE = "nocache"
    UNIFORM_THRESHOLD = "uniform"
    FIXED_INTERVAL = "fixed"
    FIRST_BLOCK_PROXY = "fbcache"


def baseline_policy(
    kind: BaselineKind | str,
    config: Optional[PolicyConfig] = None,
    interval: int = 1,
    tau_fb: float = 0.12,
    weights: Optional[ModelWeights] = None,
):
    """Build a controller for one of the comparison baselines.

    ``UniformThreshold`` is the decision engine with all three gates
    disabled, i.e. accumulated distance against the plain base threshold.
    """
    kind = BaselineKind(kind)
    if kind is BaselineKind.NO_CACHE:
        return NoCacheController()
    if kind is BaselineKind.UNIFORM_THRESHOLD:
        return AdaptiveCacheController((config or PolicyConfig()).with_flags(False, False, False))
    if kind is BaselineKind.FIXED_INTERVAL:
        if interval < 0:
            raise ValueError(f"interval k must be >= 0, got {interval}")
        return FixedIntervalController(interval)
    if weights is None:
        raise ValueError("the first-block proxy needs model weights")
    return FirstBlockProxyController(weights, tau_fb)
