"""A seeded toy diffusion transformer and an Euler flow sampler.

Blocks are pre-norm residual attention + MLP with adaptive layer norm: every
norm is modulated by a (shift, scale) pair computed from the timestep
embedding. The first block's first norm doubles as the source of the
modulated input that cache policies compare across timesteps.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, Union

import numpy as np

LN_EPS = 1e-6


class ProtocolViolation(RuntimeError):
    """A controller asked for something the sampler cannot honour."""


@dataclass(frozen=True)
class ModelConfig:
    num_blocks: int = 6
    hidden_dim: int = 32
    token_count: int = 64
    num_heads: int = 4
    weight_scale: float = 0.2
    seed: int = 0
    num_steps: int = 20

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.num_heads < 1 or self.hidden_dim < self.num_heads:
            raise ValueError(
                f"need hidden_dim >= num_heads >= 1, got {self.hidden_dim}, {self.num_heads}"
            )
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"num_heads {self.num_heads} must divide hidden_dim {self.hidden_dim}")
        if self.hidden_dim < 2:
            raise ValueError("hidden_dim must be >= 2")
        side = math.isqrt(self.token_count)
        if self.token_count < 4 or side * side != self.token_count:
            raise ValueError(f"token_count must be a perfect square >= 4, got {self.token_count}")
        if self.weight_scale < 0 or not math.isfinite(self.weight_scale):
            raise ValueError(f"weight_scale must be finite and >= 0, got {self.weight_scale}")
        if self.seed < 0:
            raise ValueError(f"seed must be unsigned, got {self.seed}")
        if self.num_steps < 2:
            raise ValueError(f"num_steps must be >= 2, got {self.num_steps}")

    @property
    def grid_side(self) -> int:
        return math.isqrt(self.token_count)


@dataclass(frozen=True)
class BlockWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray  # D x 4D
    w2: np.ndarray  # 4D x D
    mod1: np.ndarray  # D x 2D -> (shift, scale) for the attention norm
    mod2: np.ndarray  # D x 2D -> (shift, scale) for the MLP norm


@dataclass(frozen=True)
class ModelWeights:
    config: ModelConfig
    blocks: tuple[BlockWeights, ...]
    embed: np.ndarray  # D x D, sinusoidal features -> embedding
    out_proj: np.ndarray  # D x D, final hidden state -> velocity

    @property
    def first_norm1(self) -> np.ndarray:
        return self.blocks[0].mod1

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in self._arrays():
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def _arrays(self):
        for b in self.blocks:
            yield from (b.wq, b.wk, b.wv, b.wo, b.w1, b.w2, b.mod1, b.mod2)
        yield self.embed
        yield self.out_proj


def init_model(config: ModelConfig) -> ModelWeights:
    """Draw weights deterministically from ``config.seed``.

    Attention and MLP weights have standard deviation ``weight_scale / sqrt(D)``;
    the modulation maps, embedding map and output projection are fixed-scale
    so that ``weight_scale = 0`` leaves an identity block stack.
    """
    d = config.hidden_dim
    rng = np.random.default_rng(config.seed)
    std = config.weight_scale / math.sqrt(d)

    def draw(shape, scale):
        return rng.standard_normal(shape) * scale

    blocks = []
    for _ in range(config.num_blocks):
        blocks.append(
            BlockWeights(
                wq=draw((d, d), std),
                wk=draw((d, d), std),
                wv=draw((d, d), std),
                wo=draw((d, d), std),
                w1=draw((d, 4 * d), std),
                w2=draw((4 * d, d), std),
                mod1=draw((d, 2 * d), 0.5 / math.sqrt(d)),
                mod2=draw((d, 2 * d), 0.5 / math.sqrt(d)),
            )
        )
    embed = draw((d, d), 1.0 / math.sqrt(d))
    out_proj = draw((d, d), 1.0 / math.sqrt(d))
    return ModelWeights(config=config, blocks=tuple(blocks), embed=embed, out_proj=out_proj)


def timestep_embedding(t: int, num_steps: int, weights: ModelWeights) -> np.ndarray:
    if not 0 <= t < num_steps:
        raise ValueError(f"timestep {t} outside [0, {num_steps})")
    d = weights.config.hidden_dim
    half = d // 2
    freqs = np.exp(-math.log(100.0) * np.arange(half) / half)
    phase = (t / num_steps) * 2 * math.pi * freqs
    feats = np.concatenate([np.sin(phase), np.cos(phase)])
    if feats.size < d:
        feats = np.concatenate([feats, [t / num_steps]])
    return feats @ weights.embed


def layer_norm(h: np.ndarray) -> np.ndarray:
    mu = h.mean(axis=-1, keepdims=True)
    var = h.var(axis=-1, keepdims=True)
    return (h - mu) / np.sqrt(var + LN_EPS)


def modulate(h: np.ndarray, emb: np.ndarray, mod: np.ndarray) -> np.ndarray:
    """LN(h) * (1 + scale) + shift with (shift, scale) = emb @ mod."""
    d = h.shape[-1]
    if mod.shape != (emb.shape[-1], 2 * d):
        raise ValueError(f"modulation map {mod.shape} incompatible with hidden dim {d}")
    ss = emb @ mod
    shift, scale = ss[:d], ss[d:]
    return layer_norm(h) * (1.0 + scale) + shift


def norm1_modulate(h: np.ndarray, emb: np.ndarray, weights: ModelWeights) -> np.ndarray:
    """Modulated input of the first block: the cache similarity signal."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 3 or h.shape[-1] != weights.config.hidden_dim:
        raise ValueError(f"hidden state shape {h.shape} does not match hidden_dim")
    return modulate(h, emb, weights.first_norm1)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def attention(x: np.ndarray, bw: BlockWeights, num_heads: int, return_probs: bool = False):
    b, n, d = x.shape
    dh = d // num_heads

    def split(w):
        return (x @ w).reshape(b, n, num_heads, dh).transpose(0, 2, 1, 3)

    q, k, v = split(bw.wq), split(bw.wk), split(bw.wv)
    probs = softmax(q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh))
    out = (probs @ v).transpose(0, 2, 1, 3).reshape(b, n, d) @ bw.wo
    if return_probs:
        return out, probs
    return out


def _check_block_index(block: int, weights: ModelWeights) -> None:
    if not 1 <= block <= weights.config.num_blocks:
        raise ValueError(f"block index {block} outside [1, {weights.config.num_blocks}]")


def block_forward(h: np.ndarray, block: int, emb: np.ndarray, weights: ModelWeights) -> np.ndarray:
    """Apply block ``block`` (1-based). Output minus input is the block delta."""
    _check_block_index(block, weights)
    bw = weights.blocks[block - 1]
    h = np.asarray(h, dtype=np.float64)
    h = h + attention(modulate(h, emb, bw.mod1), bw, weights.config.num_heads)
    return h + gelu(modulate(h, emb, bw.mod2) @ bw.w1) @ bw.w2


class BlockDirective(enum.Enum):
    COMPUTE = "compute"
    REUSE = "reuse"


@dataclass
class ForwardResult:
    output: np.ndarray
    deltas: list  # per-block delta applied at this timestep
    blocks_computed: int
    states: Optional[list] = None  # H_0 .. H_L when requested


def full_forward(
    h0: np.ndarray,
    emb: np.ndarray,
    weights: ModelWeights,
    overrides: Optional[Sequence[BlockDirective]] = None,
    prev_deltas: Optional[Sequence[Optional[np.ndarray]]] = None,
    keep_states: bool = False,
) -> ForwardResult:
    """Run the block stack, optionally replaying stale deltas for some blocks.

    A ``REUSE`` block adds its delta from ``prev_deltas`` instead of being
    evaluated; that stale delta is carried into the returned record so the
    next timestep sees the most recent computed value.
    """
    num_blocks = weights.config.num_blocks
    if overrides is None:
        overrides = [BlockDirective.COMPUTE] * num_blocks
    if len(overrides) != num_blocks:
        raise ValueError(f"expected {num_blocks} overrides, got {len(overrides)}")
    h = np.asarray(h0, dtype=np.float64)
    deltas = []
    states = [h] if keep_states else None
    computed = 0
    for i, directive in enumerate(overrides):
        if directive is BlockDirective.REUSE:
            stale = None if prev_deltas is None else prev_deltas[i]
            if stale is None:
                raise ProtocolViolation(f"block {i + 1} reused without a stored delta")
            delta = stale
        else:
            delta = block_forward(h, i + 1, emb, weights) - h
            computed += 1
        h = h + delta
        deltas.append(delta)
        if keep_states:
            states.append(h)
    return ForwardResult(output=h, deltas=deltas, blocks_computed=computed, states=states)


# --- controller protocol -------------------------------------------------


@dataclass(frozen=True)
class Compute:
    overrides: Optional[tuple] = None


@dataclass(frozen=True)
class Reuse:
    """Skip the backbone; ``output`` is the approximated H_{t,L}."""

    output: np.ndarray
    blocks_computed: int = 0


Directive = Union[Compute, Reuse]


class Controller(Protocol):
    def start(self, num_steps: int) -> None: ...

    def step(self, t: int, h0: np.ndarray, emb: np.ndarray, modulated: np.ndarray) -> Directive: ...

    def computed(self, t: int, h0: np.ndarray, h_out: np.ndarray) -> None: ...


class AlwaysCompute:
    """The reference controller: full computation at every timestep."""

    def start(self, num_steps):
        pass

    def step(self, t, h0, emb, modulated):
        return Compute()

    def computed(self, t, h0, h_out):
        pass


@dataclass
class SamplerResult:
    inputs: list  # H_{t,0} for every t
    outputs: list  # H_{t,L} actually used as velocity source
    final: np.ndarray
    hits: list  # True where the backbone was skipped
    blocks_computed: list
    block_states: Optional[list] = None  # per t: [H_{t,0} .. H_{t,L}] or None on reuse

    @property
    def total_block_evals(self) -> int:
        return int(sum(self.blocks_computed))


def initial_noise(config: ModelConfig, noise_seed: int, batch: int = 1) -> np.ndarray:
    rng = np.random.default_rng(noise_seed)
    return rng.standard_normal((batch, config.token_count, config.hidden_dim))


def sampler_run(
    weights: ModelWeights,
    controller: Optional[Controller] = None,
    noise_seed: int = 0,
    batch: int = 1,
    record_blocks: bool = False,
) -> SamplerResult:
    """Euler-integrate the velocity ``out_proj(H_{t,L})`` over T uniform steps."""
    config = weights.config
    controller = controller or AlwaysCompute()
    steps = config.num_steps
    dt = 1.0 / steps
    x = initial_noise(config, noise_seed, batch)
    controller.start(steps)
    prev_deltas = None
    inputs, outputs, hits, evals = [], [], [], []
    block_states = [] if record_blocks else None

    for t in range(steps):
        emb = timestep_embedding(t, steps, weights)
        h0 = x
        m = norm1_modulate(h0, emb, weights)
        directive = controller.step(t, h0, emb, m)
        if isinstance(directive, Reuse):
            if t == 0:
                raise ProtocolViolation("controller requested a cache hit at the first timestep")
            h_out = np.asarray(directive.output, dtype=np.float64)
            if h_out.shape != h0.shape:
                raise ProtocolViolation(f"cached output shape {h_out.shape} != {h0.shape}")
            hits.append(True)
            evals.append(directive.blocks_computed)
            if record_blocks:
                block_states.append(None)
        elif isinstance(directive, Compute):
            overrides = directive.overrides
            if overrides is not None and t == 0 and BlockDirective.REUSE in overrides:
                raise ProtocolViolation("block reuse requested at the first timestep")
            res = full_forward(h0, emb, weights, overrides, prev_deltas, keep_states=record_blocks)
            prev_deltas = res.deltas
            h_out = res.output
            controller.computed(t, h0, h_out)
            hits.append(False)
            evals.append(res.blocks_computed)
            if record_blocks:
                block_states.append(res.states)
        else:
            raise ProtocolViolation(f"unknown directive {directive!r}")
        inputs.append(h0)
        outputs.append(h_out)
        x = x + dt * (h_out @ weights.out_proj)

    return SamplerResult(
        inputs=inputs,
        outputs=outputs,
        final=x,
        hits=hits,
        blocks_computed=evals,
        block_states=block_states,
    )


def lipschitz_estimate(
    weights: ModelWeights,
    block: int,
    probes: int = 32,
    eps: float = 1e-3,
    seed: int = 0,
) -> float:
    """Largest observed ||Block(H + D) - Block(H)||_F / ||D||_F over random probes.

    Probes draw a random hidden state, a random timestep and a random
    direction scaled to Frobenius norm ``eps``. This is a lower bound on the
    true Lipschitz constant.
    """
    _check_block_index(block, weights)
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if probes < 1:
        raise ValueError(f"need at least one probe, got {probes}")
    cfg = weights.config
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(probes):
        t = int(rng.integers(cfg.num_steps))
        emb = timestep_embedding(t, cfg.num_steps, weights)
        h = rng.standard_normal((1, cfg.token_count, cfg.hidden_dim))
        direction = rng.standard_normal(h.shape)
        delta = direction * (eps / np.linalg.norm(direction))
        diff = block_forward(h + delta, block, emb, weights) - block_forward(h, block, emb, weights)
        best = max(best, float(np.linalg.norm(diff) / np.linalg.norm(delta)))
    return best
