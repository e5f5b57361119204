"""Studies run against the toy model, each returning a :class:`Table`.

Every study is a pure function of the model weights, the noise seeds and
its parameters, so rerunning yields identical tables (and identical CSV
bytes).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import (
    BlockDirective,
    Compute,
    ModelWeights,
    Reuse,
    SamplerResult,
    full_forward,
    lipschitz_estimate,
    sampler_run,
)
from .numerics import (
    band_volatility,
    l2_error,
    psnr_hidden,
    radial_band_partition,
    ssim_hidden,
)
from .policy import (
    PolicyConfig,
    AdaptiveCacheController,
    StepDecision,
    apply_cache,
    baseline_policy,
)

# Bump when any study's column set changes.
SCHEMA_VERSION = 1


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[list] = field(default_factory=list)

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def to_csv(self, comment: Optional[str] = None) -> str:
        buf = io.StringIO()
        if comment is not None:
            buf.write(f"# {comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


# --- run reports ---------------------------------------------------------


@dataclass
class RunReport:
    hit_count: int
    miss_count: int
    hit_rate: float
    total_block_evals: int
    blocks_skipped: int
    speedup_proxy: float
    l2_vs_reference: float
    psnr_vs_reference: float
    ssim_vs_reference: float
    trace: list[StepDecision]

    FIELDS = (
        "hit_count",
        "miss_count",
        "hit_rate",
        "total_block_evals",
        "blocks_skipped",
        "speedup_proxy",
        "l2_vs_reference",
        "psnr_vs_reference",
        "ssim_vs_reference",
    )

    def values(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


def make_report(result: SamplerResult, reference: SamplerResult, num_blocks: int, trace) -> RunReport:
    steps = len(result.hits)
    hits = sum(result.hits)
    evals = result.total_block_evals
    return RunReport(
        hit_count=hits,
        miss_count=steps - hits,
        hit_rate=hits / steps,
        total_block_evals=evals,
        blocks_skipped=steps * num_blocks - evals,
        speedup_proxy=steps * num_blocks / evals,
        l2_vs_reference=l2_error(result.final, reference.final),
        psnr_vs_reference=psnr_hidden(result.final, reference.final),
        ssim_vs_reference=ssim_hidden(result.final, reference.final),
        trace=list(trace),
    )


def run_policy(weights: ModelWeights, controller, noise_seed: int = 0, reference=None) -> RunReport:
    if reference is None:
        reference = sampler_run(weights, noise_seed=noise_seed)
    result = sampler_run(weights, controller, noise_seed=noise_seed)
    return make_report(result, reference, weights.config.num_blocks, getattr(controller, "trace", []))


def max_hit_run(trace: Iterable[StepDecision]) -> int:
    best = cur = 0
    for d in trace:
        cur = cur + 1 if d.hit else 0
        best = max(best, cur)
    return best


# --- scripted controllers ------------------------------------------------


class ScheduledOverrides:
    """Full computation with per-timestep block overrides from a fixed schedule."""

    def __init__(self, schedule):
        self.schedule = schedule  # t -> tuple of BlockDirective, or None

    def start(self, num_steps):
        pass

    def step(self, t, h0, emb, modulated):
        return Compute(self.schedule(t))

    def computed(self, t, h0, h_out):
        pass


def _mask_overrides(num_blocks: int, cached: Iterable[int]) -> tuple:
    cached = set(cached)
    return tuple(
        BlockDirective.REUSE if i in cached else BlockDirective.COMPUTE for i in range(num_blocks)
    )


# --- temporal sensitivity ------------------------------------------------


@dataclass
class SensitivityCurve:
    errors: np.ndarray  # E(t_i) for t_i = 1 .. T-1
    num_samples: int
    seeds: list[int]

    def table(self) -> Table:
        tab = Table("sensitivity", ["t", "error"])
        for i, e in enumerate(self.errors, start=1):
            tab.rows.append([i, float(e)])
        return tab


def temporal_sensitivity(weights: ModelWeights, num_samples: int = 5, seed: int = 0) -> SensitivityCurve:
    """Error of the final sample when only timestep t_i replays every block from t_{i-1}."""
    cfg = weights.config
    if cfg.num_steps < 3:
        raise ValueError("temporal sensitivity needs at least 3 timesteps")
    all_reuse = _mask_overrides(cfg.num_blocks, range(cfg.num_blocks))
    seeds = [seed + s for s in range(num_samples)]
    errors = np.zeros(cfg.num_steps - 1)
    for noise_seed in seeds:
        ref = sampler_run(weights, noise_seed=noise_seed)
        for ti in range(1, cfg.num_steps):
            ctl = ScheduledOverrides(lambda t, ti=ti: all_reuse if t == ti else None)
            res = sampler_run(weights, ctl, noise_seed=noise_seed)
            errors[ti - 1] += l2_error(res.final, ref.final)
    return SensitivityCurve(errors=errors / num_samples, num_samples=num_samples, seeds=seeds)


# --- block cascade -------------------------------------------------------


def cascade_study(
    weights: ModelWeights,
    k_range: Sequence[int],
    trials: int = 20,
    num_samples: int = 5,
    seed: int = 0,
) -> Table:
    """Consecutive vs. scattered block reuse at matched counts.

    Every timestep after the first replays the stale deltas of ``k`` blocks.
    Trial ``i`` uses noise sample ``i % num_samples``; the consecutive
    variant draws a random start index, the random variant a random subset.
    """
    cfg = weights.config
    L = cfg.num_blocks
    for k in k_range:
        if not 0 <= k <= L:
            raise ValueError(f"k={k} outside [0, {L}]")
    refs = {s: sampler_run(weights, noise_seed=seed + s) for s in range(num_samples)}
    rng = np.random.default_rng(seed)

    def error(blocks, sample):
        over = _mask_overrides(L, blocks)
        ctl = ScheduledOverrides(lambda t: over if t > 0 else None)
        res = sampler_run(weights, ctl, noise_seed=seed + sample)
        return l2_error(res.final, refs[sample].final)

    tab = Table("cascade", ["k", "e_consec", "e_random", "trials"])
    for k in k_range:
        e_con, e_rnd = [], []
        for i in range(trials):
            sample = i % num_samples
            start = int(rng.integers(0, L - k + 1))
            subset = rng.choice(L, size=k, replace=False)
            e_con.append(error(range(start, start + k), sample))
            e_rnd.append(error(subset.tolist(), sample))
        tab.rows.append([k, float(np.mean(e_con)), float(np.mean(e_rnd)), trials])
    return tab


# --- spectral volatility -------------------------------------------------


def spectral_volatility_study(
    weights: ModelWeights,
    block: Optional[int] = None,
    num_bands: int = 8,
    noise_seed: int = 0,
) -> Table:
    """Per-band temporal volatility of the hidden state after ``block`` (default: middle block)."""
    cfg = weights.config
    block = math.ceil(cfg.num_blocks / 2) if block is None else block
    if not 0 <= block <= cfg.num_blocks:
        raise ValueError(f"block {block} outside [0, {cfg.num_blocks}]")
    res = sampler_run(weights, noise_seed=noise_seed, record_blocks=True)
    trace = [states[block] for states in res.block_states]
    bands = radial_band_partition(cfg.grid_side, num_bands)
    delta = band_volatility(trace, bands)
    counts = bands.counts()
    tab = Table("spectral", ["band", "num_coeffs", "delta"])
    for b in range(num_bands):
        tab.rows.append([b, int(counts[b]), float(delta[b])])
    return tab


# --- ablation and threshold sweep ---------------------------------------

ABLATION_FLAGS = [
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (True, True, False),
    (True, False, True),
    (False, True, True),
    (True, True, True),
]


def ablation_grid(weights: ModelWeights, base: PolicyConfig, noise_seed: int = 0):
    """Eight runs differing only in the three enable flags.

    Returns ``(table, reports)`` where ``reports[i]`` belongs to
    ``ABLATION_FLAGS[i]``.
    """
    base = replace(base, num_steps=weights.config.num_steps)
    reference = sampler_run(weights, noise_seed=noise_seed)
    tab = Table("ablation", ["tads", "ceb", "fdc", *RunReport.FIELDS, "max_hit_run"])
    reports = []
    for flags in ABLATION_FLAGS:
        ctl = AdaptiveCacheController(base.with_flags(*flags))
        rep = run_policy(weights, ctl, noise_seed, reference)
        reports.append(rep)
        tab.rows.append([*flags, *rep.values(), max_hit_run(rep.trace)])
    return tab, reports


def threshold_sweep(
    weights: ModelWeights,
    config: PolicyConfig,
    tau_list: Sequence[float] = (0.3, 0.4, 0.5, 0.6, 0.8),
    noise_seed: int = 0,
) -> Table:
    reference = sampler_run(weights, noise_seed=noise_seed)
    tab = Table("sweep", ["tau", "hit_rate", "speedup_proxy", "l2", "psnr", "ssim"])
    for tau in tau_list:
        if tau < 0:
            raise ValueError(f"tau must be >= 0, got {tau}")
        cfg = replace(config, tau_base=float(tau), num_steps=weights.config.num_steps)
        rep = run_policy(weights, AdaptiveCacheController(cfg), noise_seed, reference)
        tab.rows.append(
            [
                float(tau),
                rep.hit_rate,
                rep.speedup_proxy,
                rep.l2_vs_reference,
                rep.psnr_vs_reference,
                rep.ssim_vs_reference,
            ]
        )
    return tab


# --- error growth under consecutive residual reuse ----------------------


class _ForcedCacheRun:
    """Compute everywhere except ``start+1 .. start+c``, which reuse R_start.

    At the last cached step the true backbone output is also evaluated on
    the same input so the staleness error can be measured.
    """

    def __init__(self, weights, start, c):
        self.weights = weights
        self.start_t = start
        self.c = c

    def start(self, num_steps):
        self.residual = None
        self.inputs = {}
        self.error = 0.0

    def step(self, t, h0, emb, modulated):
        self.inputs[t] = h0
        if self.start_t < t <= self.start_t + self.c:
            cached = apply_cache(h0, self.residual)
            if t == self.start_t + self.c:
                true = full_forward(h0, emb, self.weights).output
                self.error = float(np.linalg.norm(true - cached))
            return Reuse(cached)
        return Compute()

    def computed(self, t, h0, h_out):
        if t == self.start_t:
            self.residual = h_out - h0

    def max_input_step(self) -> float:
        if self.c == 0:
            return 0.0
        return max(
            float(np.linalg.norm(self.inputs[self.start_t + j] - self.inputs[self.start_t + j - 1]))
            for j in range(1, self.c + 1)
        )


def lipschitz_product(weights: ModelWeights, probes: int = 32, eps: float = 1e-3, seed: int = 0) -> float:
    return float(
        np.prod(
            [lipschitz_estimate(weights, b, probes, eps, seed) for b in range(1, weights.config.num_blocks + 1)]
        )
    )


def loglog_slope(cs: Sequence[float], errors: Sequence[float]) -> float:
    pts = [(math.log(c), math.log(e)) for c, e in zip(cs, errors) if c > 0 and e > 0]
    if len(pts) < 2:
        return 0.0
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


def error_growth_study(
    weights: ModelWeights,
    c_values: Sequence[int] = (1, 2, 3, 4, 5),
    start: Optional[int] = None,
    num_samples: int = 3,
    probes: int = 32,
    eps: float = 1e-3,
    seed: int = 0,
    max_probe_rounds: int = 3,
) -> Table:
    """Staleness error after ``c`` consecutive cached steps against a Lipschitz bound.

    The bound is ``c * prod(per-block Lipschitz estimates) * max_j ||H_{t+j,0} - H_{t+j-1,0}||``.
    If it is violated the probe count is quadrupled (up to ``max_probe_rounds``
    times); a violation that survives is reported in ``bound_holds``.
    """
    cfg = weights.config
    steps = cfg.num_steps
    c_top = max(c_values) if c_values else 0
    if start is None:
        start = max(1, (steps - 1 - c_top) // 2)
    for c in c_values:
        if c < 0 or start + c > steps - 2:
            raise ValueError(f"c={c} does not fit in the trajectory interior after t={start}")

    measured = []
    max_steps = []
    for c in c_values:
        errs, dhs = [], []
        for s in range(num_samples):
            ctl = _ForcedCacheRun(weights, start, c)
            sampler_run(weights, ctl, noise_seed=seed + s)
            errs.append(ctl.error)
            dhs.append(ctl.max_input_step())
        measured.append(max(errs))
        max_steps.append(max(dhs))

    lip = lipschitz_product(weights, probes, eps, seed)
    rounds = 0
    while rounds < max_probe_rounds and any(
        e > c * lip * dh for c, e, dh in zip(c_values, measured, max_steps)
    ):
        probes *= 4
        rounds += 1
        lip = max(lip, lipschitz_product(weights, probes, eps, seed + rounds))

    slope = loglog_slope(c_values, measured)
    tab = Table(
        "errgrowth",
        ["c", "max_error", "max_input_step", "lipschitz_product", "bound", "bound_holds", "growth_order", "probes"],
    )
    for c, e, dh in zip(c_values, measured, max_steps):
        bound = c * lip * dh
        tab.rows.append([c, e, dh, lip, bound, e <= bound, slope, probes])
    return tab


# --- FDC false positives ------------------------------------------------


def fdc_false_positive_study(
    rho_list: Sequence[float] = (0.0, 0.5, 0.9),
    num_trials: int = 10_000,
    tau: float = 0.6,
    gamma_low: float = 0.8,
    gamma_high: float = 1.5,
    split_ratio: float = 0.5,
    median: float = 0.6,
    spread: float = 0.5,
    volatility_ratio: float = 0.09 / 0.065,
    quality_factor: float = 1.2,
    seed: int = 0,
) -> Table:
    """Single global gate vs. dual asymmetric gates on correlated band changes.

    Band changes are log-normal with log-correlation ``rho``; the low band's
    median exceeds the high band's by ``volatility_ratio`` (geometric mean
    ``median``), modelling the more volatile low-frequency content. With
    ``volatility_ratio = 1`` and ``rho = 1`` the bands are identical. A trial is a false positive when the gate passes while
    ``max(delta_low, delta_high) > quality_factor * tau``. The global change
    is the size-weighted mean of the two bands.
    """
    if num_trials < 1:
        raise ValueError("need at least one trial")
    tab = Table("fdcfp", ["rho", "fp_single", "fp_dual", "reduction"])
    for i, rho in enumerate(rho_list):
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {rho}")
        rng = np.random.default_rng([seed, i])
        z1 = rng.standard_normal(num_trials)
        z2 = rho * z1 + math.sqrt(max(0.0, 1.0 - rho * rho)) * rng.standard_normal(num_trials)
        low = median * math.sqrt(volatility_ratio) * np.exp(spread * z1)
        high = median / math.sqrt(volatility_ratio) * np.exp(spread * z2)
        truth_bad = np.maximum(low, high) > quality_factor * tau
        single = (split_ratio * low + (1 - split_ratio) * high) <= tau
        dual = (low <= gamma_low * tau) & (high <= gamma_high * tau)
        fp_single = float(np.mean(single & truth_bad))
        fp_dual = float(np.mean(dual & truth_bad))
        reduction = 0.0 if fp_single == 0 else 1.0 - fp_dual / fp_single
        tab.rows.append([float(rho), fp_single, fp_dual, reduction])
    return tab


# --- noise schedule helper ----------------------------------------------


def snr_profile(num_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> np.ndarray:
    """alpha_t^2 / beta_t^2 under a linear beta schedule, alpha_t^2 = prod(1 - beta)."""
    betas = np.linspace(beta_start, beta_end, num_steps)
    alpha_sq = np.cumprod(1.0 - betas)
    return alpha_sq / betas**2


def flag_label(flags: tuple) -> str:
    names = [n for n, on in zip(("TADS", "CEB", "FDC"), flags) if on]
    return "+".join(names) or "base"


__all__ = [
    "ABLATION_FLAGS",
    "RunReport",
    "SCHEMA_VERSION",
    "SensitivityCurve",
    "Table",
    "ablation_grid",
    "baseline_policy",
    "cascade_study",
    "error_growth_study",
    "fdc_false_positive_study",
    "flag_label",
    "make_report",
    "max_hit_run",
    "run_policy",
    "snr_profile",
    "spectral_volatility_study",
    "temporal_sensitivity",
    "threshold_sweep",
]
