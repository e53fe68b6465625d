"""Monte-Carlo link simulation and operating-point search.

A trial draws random payloads for ka users, pushes their superposed
codewords through the sampled-Hadamard channel with unit-variance noise,
decodes, and scores the per-user error fraction: a payload transmitted by
several users counts for all of them once recovered.  Trials are fully
determined by explicit seeds, so estimates are reproducible bit-for-bit
regardless of worker count.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, NoBracket, NonFiniteState
from .pipeline import DecoderConfig, decode
from .sensing import build_operator, build_power, ebn0_to_power
from .tree import TreeCodeConfig, build_partition_table, encode, preset, \
    sample_generators
from .mapping import assemble, superpose

THREADS_ENV = "CCS_AMP_THREADS"


@dataclass
class TrialConfig:
    """Everything one trial needs; all randomness comes from the seeds."""

    tree: str | TreeCodeConfig = "paper16"
    n: int = 38400
    ka: int = 25
    ebn0_db: float = 2.05
    generator_seed: int = 1
    operator_seed: int = 2
    payload_seed: int = 3
    noise_seed: int = 4
    skip_dc_row: bool = True
    decoder: DecoderConfig = field(default_factory=DecoderConfig)


@dataclass
class TrialResult:
    ka: int
    missed: int
    collisions: int
    pupe_contrib: float
    wall_time: float
    error: str | None = None


# Re-deriving the code tables and operator for every trial of a sweep would
# dominate the runtime at full scale, so each process keeps the last few.
_CODE_CACHE: dict = {}
_OP_CACHE: dict = {}


def _tree_key(tree) -> str:
    if isinstance(tree, str):
        return tree
    return json.dumps(tree.to_json(), sort_keys=True)


def resolve_code(tree, generator_seed: int):
    """(config, generators, partition table) for a preset name or config."""
    key = (_tree_key(tree), generator_seed)
    if key not in _CODE_CACHE:
        config = preset(tree) if isinstance(tree, str) else tree
        gens = sample_generators(config, generator_seed)
        table = build_partition_table(config, gens)
        if len(_CODE_CACHE) > 8:
            _CODE_CACHE.clear()
        _CODE_CACHE[key] = (config, gens, table)
    return _CODE_CACHE[key]


def resolve_operator(n: int, m: int, seed: int, skip_dc_row: bool):
    key = (n, m, seed, skip_dc_row)
    if key not in _OP_CACHE:
        if len(_OP_CACHE) > 8:
            _OP_CACHE.clear()
        _OP_CACHE[key] = build_operator(n, m, seed, skip_dc_row)
    return _OP_CACHE[key]


def simulate_trial(cfg: TrialConfig) -> TrialResult:
    """Run one end-to-end trial and score it."""
    start = time.perf_counter()
    config, gens, table = resolve_code(cfg.tree, cfg.generator_seed)
    op = resolve_operator(cfg.n, config.total_size, cfg.operator_seed,
                          cfg.skip_dc_row)
    power = build_power(config, cfg.n,
                        ebn0_to_power(cfg.ebn0_db, config.payload_bits, cfg.n),
                        cfg.ka)

    payload_rng = np.random.default_rng(cfg.payload_seed)
    payloads = payload_rng.integers(0, 2, size=(cfg.ka, config.payload_bits),
                                    dtype=np.uint8)
    sent = [assemble(encode(p, config, gens), config) for p in payloads]
    s = superpose(sent, config.total_size)

    noise_rng = np.random.default_rng(cfg.noise_seed)
    y = op.forward(power.expand(config) * s) \
        + noise_rng.standard_normal(cfg.n)

    try:
        decoded = decode(y, op, power, config, gens, cfg.decoder, table)
    except NonFiniteState as exc:
        return TrialResult(ka=cfg.ka, missed=cfg.ka, collisions=0,
                           pupe_contrib=1.0,
                           wall_time=time.perf_counter() - start,
                           error=str(exc))

    recovered = {bits.tobytes() for bits in decoded.payloads}
    keys = [p.tobytes() for p in payloads]
    missed = sum(1 for k in keys if k not in recovered)
    collisions = cfg.ka - len(set(keys))
    return TrialResult(ka=cfg.ka, missed=missed, collisions=collisions,
                       pupe_contrib=missed / cfg.ka,
                       wall_time=time.perf_counter() - start)


@dataclass
class PupeEstimate:
    mean: float
    stderr: float
    trials: int
    failed: int
    contributions: list[float]


def aggregate_pupe(contributions) -> tuple[float, float]:
    """Sample mean and standard error of per-trial error fractions."""
    contributions = np.asarray(contributions, dtype=np.float64)
    if contributions.size == 0:
        return 0.0, 0.0
    mean = float(contributions.mean())
    if contributions.size < 2:
        return mean, 0.0
    stderr = float(contributions.std(ddof=1) / np.sqrt(contributions.size))
    return mean, stderr


def trial_seeds(master_seed: int, trials: int) -> list[tuple[int, int]]:
    """Per-trial (payload, noise) seeds derived from one master seed."""
    children = np.random.SeedSequence(master_seed).spawn(trials)
    return [tuple(int(x) for x in child.generate_state(2, dtype=np.uint64))
            for child in children]


def resolve_workers(workers: int | None, trials: int) -> int:
    cap = os.environ.get(THREADS_ENV)
    if workers is None:
        workers = int(cap) if cap else (os.cpu_count() or 1)
    elif cap:
        workers = min(workers, int(cap))
    return max(1, min(workers, trials))


def estimate_pupe(cfg: TrialConfig, trials: int, master_seed: int = 0,
                  workers: int | None = None) -> PupeEstimate:
    """Average per-user error fraction over independently seeded trials.

    Per-trial seeds derive from the master seed, so the estimate does not
    depend on worker count or scheduling; failed trials (non-finite decoder
    state) are counted and excluded from the average.
    """
    if trials < 1:
        raise ConfigError("need at least one trial")
    cfgs = [replace(cfg, payload_seed=ps, noise_seed=ns)
            for ps, ns in trial_seeds(master_seed, trials)]
    workers = resolve_workers(workers, trials)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(simulate_trial, cfgs, chunksize=1))
    else:
        results = [simulate_trial(c) for c in cfgs]

    ok = [r.pupe_contrib for r in results if r.error is None]
    failed = sum(1 for r in results if r.error is not None)
    mean, stderr = aggregate_pupe(ok)
    return PupeEstimate(mean=mean, stderr=stderr, trials=trials,
                        failed=failed, contributions=ok)


@dataclass
class SweepRow:
    ka: int
    mode: str
    ebn0_db: float
    pupe: float
    stderr: float
    trials: int
    bracket_lo: float
    bracket_hi: float
    wall_time: float


def min_ebn0_search(cfg: TrialConfig, lo: float, hi: float,
                    target_pe: float = 0.05, resolution: float = 0.05,
                    trials: int = 200, master_seed: int = 0,
                    workers: int | None = None) -> SweepRow:
    """Smallest Eb/N0 (to within ``resolution`` dB) meeting the target PUPE.

    Bisects inside [lo, hi]; requires the error to sit above the target at
    the low end and at or below it at the high end, otherwise NoBracket.
    The same master seed drives every probe, so the bisection sees a
    monotone, reproducible curve.
    """
    start = time.perf_counter()
    cache: dict[float, PupeEstimate] = {}

    def probe(db: float) -> PupeEstimate:
        if db not in cache:
            cache[db] = estimate_pupe(replace(cfg, ebn0_db=db), trials,
                                      master_seed, workers)
        return cache[db]

    lo, hi = float(lo), float(hi)
    if lo > hi:
        raise NoBracket(f"inverted interval [{lo}, {hi}]")
    low_est = probe(lo)
    if low_est.mean <= target_pe:
        # everything passes; the low end already meets the target
        return SweepRow(cfg.ka, cfg.decoder.mode, lo, low_est.mean,
                        low_est.stderr, trials, lo, hi,
                        time.perf_counter() - start)
    hi_est = probe(hi)
    if hi_est.mean > target_pe:
        raise NoBracket(
            f"PUPE {hi_est.mean:.4f} still above target {target_pe} at {hi} dB"
        )
    b_lo, b_hi = lo, hi
    while b_hi - b_lo > resolution:
        mid = 0.5 * (b_lo + b_hi)
        if probe(mid).mean <= target_pe:
            b_hi = mid
        else:
            b_lo = mid
    found = probe(b_hi)
    return SweepRow(cfg.ka, cfg.decoder.mode, b_hi, found.mean, found.stderr,
                    trials, b_lo, b_hi, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# Run configuration documents
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """One JSON document that pins a whole experiment."""

    trial: TrialConfig
    master_seed: int = 0
    trials: int = 100

    def to_json(self) -> dict:
        tree = self.trial.tree
        return {
            "tree": tree if isinstance(tree, str) else tree.to_json(),
            "generator_seed": self.trial.generator_seed,
            "operator": {
                "n": self.trial.n,
                "seed": self.trial.operator_seed,
                "skip_dc_row": self.trial.skip_dc_row,
                "ordering": "sylvester",
                "normalization": "unit-column",
            },
            "decoder": {
                "mode": self.trial.decoder.mode,
                "amp_iters": self.trial.decoder.amp_iters,
                "survivor_budget": self.trial.decoder.survivor_budget,
                "budget_ceiling": self.trial.decoder.budget_ceiling,
                "list_cap": self.trial.decoder.list_cap,
                "prior_damping": self.trial.decoder.prior_damping,
                "prior_stride": self.trial.decoder.prior_stride,
            },
            "channel": {"ka": self.trial.ka, "ebn0_db": self.trial.ebn0_db},
            "seeds": {"master": self.master_seed},
            "trials": self.trials,
        }


_TOP_KEYS = {"tree", "generator_seed", "operator", "decoder", "channel",
             "seeds", "trials"}


def run_config_from_json(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown run-config keys: {sorted(unknown)}")

    tree = doc.get("tree", "paper16")
    if isinstance(tree, dict):
        try:
            tree = TreeCodeConfig.from_json(tree)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad tree section: {exc}") from exc
    elif not isinstance(tree, str):
        raise ConfigError("tree must be a preset name or an object")

    operator = doc.get("operator", {})
    decoder = doc.get("decoder", {})
    channel = doc.get("channel", {})
    seeds = doc.get("seeds", {})
    for name, sub in (("operator", operator), ("decoder", decoder),
                      ("channel", channel), ("seeds", seeds)):
        if not isinstance(sub, dict):
            raise ConfigError(f"{name} must be an object")

    try:
        dec = DecoderConfig(
            mode=decoder.get("mode", "enhanced"),
            amp_iters=int(decoder.get("amp_iters", 25)),
            survivor_budget=int(decoder.get("survivor_budget", 64)),
            budget_ceiling=int(decoder.get("budget_ceiling", 1024)),
            list_cap=(None if decoder.get("list_cap") is None
                      else int(decoder["list_cap"])),
            prior_damping=float(decoder.get("prior_damping", 0.1)),
            prior_stride=int(decoder.get("prior_stride", 1)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad decoder section: {exc}") from exc

    try:
        trial = TrialConfig(
            tree=tree,
            n=int(operator.get("n", 38400)),
            ka=int(channel.get("ka", 25)),
            ebn0_db=float(channel.get("ebn0_db", 2.05)),
            generator_seed=int(doc.get("generator_seed", 1)),
            operator_seed=int(operator.get("seed", 2)),
            skip_dc_row=bool(operator.get("skip_dc_row", True)),
            decoder=dec,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad operator/channel section: {exc}") from exc

    return RunConfig(trial=trial,
                     master_seed=int(seeds.get("master", 0)),
                     trials=int(doc.get("trials", 100)))


def load_run_config(path: str) -> RunConfig:
    """Parse a run-config JSON file; ConfigError carries line/column info."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path} is not valid JSON: {exc.msg} at line {exc.lineno} "
            f"column {exc.colno}"
        ) from exc
    return run_config_from_json(doc)


def reference_curves() -> dict[str, list[tuple[int, float]]]:
    """Published minimum-Eb/N0 curves shipped for comparison tables."""
    from importlib import resources

    out: dict[str, list[tuple[int, float]]] = {}
    text = resources.files("ccsamp").joinpath("data/fig3_reference.csv") \
        .read_text(encoding="utf-8")
    for line in text.splitlines():
        if not line or line.startswith("#") or line.startswith("scheme"):
            continue
        scheme, ka, db = line.split(",")
        out.setdefault(scheme, []).append((int(ka), float(db)))
    return out
