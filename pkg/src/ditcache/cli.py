"""Command-line entry point: ``ditcache <subcommand> --config FILE --out DIR --seed N``.

The config file is INI-style (``[section]`` headers, ``key = value`` lines)
with sections ``model``, ``policy``, ``study`` and ``run``. Any key may be
overridden by an environment variable ``DITCACHE_<SECTION>_<KEY>``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import experiments as ex
from .model import ModelConfig, init_model
from .numerics import Polynomial
from .policy import AdaptiveCacheController, PolicyConfig, baseline_policy

log = logging.getLogger("ditcache")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

ENV_PREFIX = "DITCACHE_"
SUBCOMMANDS = ("run", "ablate", "sweep", "sensitivity", "cascade", "spectral", "errgrowth", "fdcfp")
POLICY_KINDS = ("spectral", "nocache", "uniform", "fixed", "fbcache")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StudyConfig:
    k_range: tuple = (1, 2, 3, 4, 5, 6)
    tau_list: tuple = (0.3, 0.4, 0.5, 0.6, 0.8)
    c_values: tuple = (1, 2, 3, 4, 5)
    rho_list: tuple = (0.0, 0.5, 0.9)
    num_samples: int = 5
    trials: int = 20
    num_bands: int = 8
    block: int = 0  # 0 selects the middle block
    fp_trials: int = 10_000
    lipschitz_probes: int = 32

    def __post_init__(self):
        for name in ("num_samples", "trials", "num_bands", "fp_trials", "lipschitz_probes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.block < 0:
            raise ValueError("block must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    policy_kind: str = "spectral"
    interval: int = 1
    tau_fb: float = 0.12
    study: StudyConfig = field(default_factory=StudyConfig)
    out: str = "results"
    seed: int = 0

    def canonical(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("out")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# key -> (parser, target) per section; target is the dataclass field name
def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple:
    return tuple(float(x) for x in s.strip().strip("[]").split(",") if x.strip())


def _ints(s: str) -> tuple:
    return tuple(int(x) for x in s.strip().strip("[]").split(",") if x.strip())


def _kind(s: str) -> str:
    s = s.strip().lower()
    if s not in POLICY_KINDS:
        raise ValueError(f"unknown policy kind {s!r}; expected one of {', '.join(POLICY_KINDS)}")
    return s


SCHEMA = {
    "model": {
        "num_blocks": int,
        "hidden_dim": int,
        "token_count": int,
        "num_heads": int,
        "weight_scale": float,
        "seed": int,
        "num_steps": int,
    },
    "policy": {
        "kind": _kind,
        "tau_base": float,
        "s_min": float,
        "s_max": float,
        "c_max": int,
        "split_ratio": float,
        "gamma_low": float,
        "gamma_high": float,
        "poly": _floats,
        "enable_tads": _bool,
        "enable_ceb": _bool,
        "enable_fdc": _bool,
        "interval": int,
        "tau_fb": float,
    },
    "study": {
        "k_range": _ints,
        "tau_list": _floats,
        "c_values": _ints,
        "rho_list": _floats,
        "num_samples": int,
        "trials": int,
        "num_bands": int,
        "block": int,
        "fp_trials": int,
        "lipschitz_probes": int,
    },
    "run": {"out": str, "seed": int},
}


def _read_raw(path: Optional[str]) -> dict:
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read_string(p.read_text(), source=str(p))
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    raw = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            raw.setdefault(section, {})[key] = value
    return raw


def _apply_env(raw: dict, environ) -> None:
    for name, value in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown override {name}")
        raw.setdefault(section, {})[key] = value


def _convert(raw: dict) -> dict:
    out = {}
    for section, items in raw.items():
        for key, value in items.items():
            try:
                out.setdefault(section, {})[key] = SCHEMA[section][key](value)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return out


def load_config(path: Optional[str], environ=None) -> RunConfig:
    """Read, override from the environment, apply defaults and validate."""
    raw = _read_raw(path)
    _apply_env(raw, os.environ if environ is None else environ)
    vals = _convert(raw)

    def build(section, cls, **extra):
        kwargs = {**vals.get(section, {}), **extra}
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {exc}") from exc

    model = build("model", ModelConfig)
    pol = dict(vals.get("policy", {}))
    kind = pol.pop("kind", "spectral")
    interval = pol.pop("interval", 1)
    tau_fb = pol.pop("tau_fb", 0.12)
    if interval < 0:
        raise ConfigError(f"[policy] interval must be >= 0, got {interval}")
    if tau_fb < 0:
        raise ConfigError(f"[policy] tau_fb must be >= 0, got {tau_fb}")
    if "poly" in pol:
        try:
            pol["poly"] = Polynomial(pol["poly"])
        except ValueError as exc:
            raise ConfigError(f"[policy] poly: {exc}") from exc
    try:
        policy = PolicyConfig(**pol, num_steps=model.num_steps)
    except ValueError as exc:
        raise ConfigError(f"[policy] {exc}") from exc
    study = build("study", StudyConfig)
    run = vals.get("run", {})
    seed = run.get("seed", 0)
    if seed < 0:
        raise ConfigError(f"[run] seed must be unsigned, got {seed}")
    return RunConfig(
        model=model,
        policy=policy,
        policy_kind=kind,
        interval=interval,
        tau_fb=tau_fb,
        study=study,
        out=run.get("out", "results"),
        seed=seed,
    )


# --- subcommands ---------------------------------------------------------


def _controller(cfg: RunConfig, weights):
    if cfg.policy_kind == "spectral":
        return AdaptiveCacheController(cfg.policy)
    return baseline_policy(
        cfg.policy_kind, cfg.policy, interval=cfg.interval, tau_fb=cfg.tau_fb, weights=weights
    )


def _cmd_run(cfg, weights):
    ctl = _controller(cfg, weights)
    rep = ex.run_policy(weights, ctl, noise_seed=cfg.seed)
    tab = ex.Table("run", ["policy", *ex.RunReport.FIELDS])
    tab.rows.append([cfg.policy_kind, *rep.values()])
    trace = "".join(d.to_json() + "\n" for d in rep.trace)
    return {"run.csv": tab, "trace.jsonl": trace}


def _cmd_ablate(cfg, weights):
    tab, _ = ex.ablation_grid(weights, cfg.policy, noise_seed=cfg.seed)
    return {"ablation.csv": tab}


def _cmd_sweep(cfg, weights):
    return {"sweep.csv": ex.threshold_sweep(weights, cfg.policy, cfg.study.tau_list, noise_seed=cfg.seed)}


def _cmd_sensitivity(cfg, weights):
    curve = ex.temporal_sensitivity(weights, cfg.study.num_samples, seed=cfg.seed)
    return {"sensitivity.csv": curve.table()}


def _cmd_cascade(cfg, weights):
    tab = ex.cascade_study(
        weights, cfg.study.k_range, cfg.study.trials, cfg.study.num_samples, seed=cfg.seed
    )
    return {"cascade.csv": tab}


def _cmd_spectral(cfg, weights):
    block = cfg.study.block or None
    tab = ex.spectral_volatility_study(weights, block, cfg.study.num_bands, noise_seed=cfg.seed)
    return {"spectral.csv": tab}


def _cmd_errgrowth(cfg, weights):
    tab = ex.error_growth_study(
        weights, cfg.study.c_values, probes=cfg.study.lipschitz_probes, seed=cfg.seed
    )
    return {"errgrowth.csv": tab}


def _cmd_fdcfp(cfg, weights):
    p = cfg.policy
    tab = ex.fdc_false_positive_study(
        cfg.study.rho_list,
        cfg.study.fp_trials,
        tau=p.tau_base,
        gamma_low=p.gamma_low,
        gamma_high=p.gamma_high,
        split_ratio=p.split_ratio,
        seed=cfg.seed,
    )
    return {"fdcfp.csv": tab}


COMMANDS = {
    "run": _cmd_run,
    "ablate": _cmd_ablate,
    "sweep": _cmd_sweep,
    "sensitivity": _cmd_sensitivity,
    "cascade": _cmd_cascade,
    "spectral": _cmd_spectral,
    "errgrowth": _cmd_errgrowth,
    "fdcfp": _cmd_fdcfp,
}


def run_subcommand(name: str, cfg: RunConfig) -> list[Path]:
    """Execute one study and write its outputs; returns the written paths."""
    if name not in COMMANDS:
        raise ConfigError(f"unknown subcommand {name!r}")
    weights = init_model(cfg.model)
    outputs = COMMANDS[name](cfg, weights)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    comment = f"config_hash={cfg.digest()} seed={cfg.seed} schema={ex.SCHEMA_VERSION}"
    written = []
    for fname, payload in outputs.items():
        text = payload.to_csv(comment) if isinstance(payload, ex.Table) else payload
        path = out_dir / fname
        path.write_text(text)
        written.append(path)
    return written


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ditcache", description=__doc__.split("\n")[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", default=None, help="INI-style config file (defaults if omitted)")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="global noise seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError(f"--seed must be unsigned, got {args.seed}")
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, out=args.out)
    except ConfigError as exc:
        print(f"ditcache: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        for path in run_subcommand(args.subcommand, cfg):
            log.info("wrote %s", path)
    except ConfigError as exc:
        print(f"ditcache: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure maps to the runtime exit code
        print(f"ditcache: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
