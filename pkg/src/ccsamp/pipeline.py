"""End-to-end receiver: AMP, outer-code priors, and list extraction.

Two operating modes share the same AMP loop.  The plain mode keeps the
uninformative activity priors throughout; the enhanced mode refits the
per-section priors every iteration by folding the current effective
observation's likelihoods through the parity graph, convolving them with
FFTs and lifting the result back to entry space.  After the final
iteration the per-section likelihoods are ranked, stitched into
parity-consistent paths and returned as payloads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .amp import (
    PriorField,
    lift_priors,
    pme,
    run_amp,
    uniform_qtilde,
    uninformative_priors,
)
from .errors import EmptyResult, ZeroMass
from .mapping import top_k_sections
from .sensing import PowerAllocation, SensingOperator
from .tree import (
    GeneratorSet,
    PartitionTable,
    PathList,
    TreeCodeConfig,
    build_partition_table,
    fold_likelihoods,
    info_prior,
    parity_prior,
    payload_from_values,
    prune_and_stitch,
)

MODES = ("original", "enhanced")


@dataclass
class DecoderConfig:
    """Knobs of the receiver."""

    mode: str = "enhanced"
    amp_iters: int = 25
    survivor_budget: int = 128
    budget_ceiling: int = 1024
    list_cap: int | None = None      # defaults to ka at decode time
    prior_damping: float = 0.1
    prior_stride: int = 1
    prior_rounds: int = 2
    early_stop_rtol: float = 1e-6

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.prior_stride < 1:
            raise ValueError("prior_stride must be at least 1")
        if self.prior_rounds < 1:
            raise ValueError("prior_rounds must be at least 1")


@dataclass
class MessageList:
    """Ranked decoded payloads."""

    payloads: list[np.ndarray] = field(default_factory=list)
    weights: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.payloads)

    def payload_hexes(self) -> list[str]:
        out = []
        for bits in self.payloads:
            val = 0
            for b in bits:
                val = (val << 1) | int(b)
            out.append(f"{val:0{(bits.size + 3) // 4}x}")
        return out

    def to_json(self) -> list[dict]:
        return [{"payload_hex": h, "weight": float(w)}
                for h, w in zip(self.payload_hexes(), self.weights)]


def likelihoods_from_state(effective_section, tau: float, d: float) -> np.ndarray:
    """Per-value likelihood weights of one section of the effective observation.

    Ratio of the active to inactive Gaussian hypotheses,
    exp(d (2r - d) / (2 tau^2)), max-shifted before exponentiation and
    normalised to unit mass.
    """
    r = np.asarray(effective_section, dtype=np.float64)
    expo = d * (2.0 * r - d) / (2.0 * tau ** 2)
    expo -= expo.max()
    lik = np.exp(expo)
    return lik / lik.sum()


def section_likelihoods(effective_obs, tau: float, power: PowerAllocation,
                        config: TreeCodeConfig) -> dict[int, np.ndarray]:
    """Likelihood weights for every section of the effective observation."""
    out = {}
    for sec in range(1, config.num_sections + 1):
        seg = effective_obs[config.section_slice(sec)]
        out[sec] = likelihoods_from_state(seg, tau, float(power.amplitudes[sec - 1]))
    return out


def cap_redistribute(vec, cap: float) -> np.ndarray:
    """Limit each entry of a unit-mass belief vector to ``cap``.

    Mass clipped from entries above the cap is redistributed proportionally
    over the remaining entries, repeating until nothing exceeds the cap.  A
    section holds ka overlapping values, so no single value deserves more
    than 1/ka of the section's belief; capping before the parity folds keeps
    one loud entry from silencing the other ka-1 during the products.  When
    the excess cannot be absorbed (e.g. a point mass) the clipped vector is
    returned as is -- callers renormalise, so only the shape matters.
    """
    x = np.maximum(np.asarray(vec, dtype=np.float64), 0.0)
    total = x.sum()
    if total <= 0:
        raise ZeroMass("belief vector has no mass to cap")
    x = x / total
    while x.max() > cap * (1.0 + 1e-12):
        under = x < cap
        x = np.minimum(x, cap)
        deficit = 1.0 - x.sum()
        if deficit <= 0:
            break
        room = x[under].sum()
        if room <= 0:
            break
        x[under] *= 1.0 + deficit / room
    return x


def dynamic_priors(beliefs: dict[int, np.ndarray], config: TreeCodeConfig,
                   gens: GeneratorSet, table: PartitionTable, ka: int,
                   damping: float = 0.1, rounds: int = 1,
                   message_cap: float | None = None) -> PriorField:
    """Per-section value priors from the current beliefs via the parity graph.

    Parity sections receive the circular convolution of their folded source
    beliefs; info sections receive the normalised product of one
    back-propagated prior per parity they feed.  With ``rounds`` > 1 the
    exchange repeats, each source section blending the contributions of its
    other parities into the message it sends (extrinsic rule), which
    sharpens the priors when sections feed several parities.  An optional
    ``message_cap`` bounds each outgoing message entry before folding.  A
    section whose prior loses all mass falls back to uniform.  The result
    is damped toward uniform and lifted to activity priors.
    """
    parents = {j: [p for p in config.parity_sections
                   if j in config.parity_graph[p]]
               for j in range(1, config.num_sections + 1)}

    # parents whose remaining members overlap see correlated evidence, so
    # their contributions share one vote instead of compounding
    def parent_weights(sec: int) -> dict[int, float]:
        others = {p: set(config.parity_graph[p]) - {sec} for p in parents[sec]}
        return {p: 1.0 / sum(1 for p2 in parents[sec]
                             if p2 == p or (others[p] & others[p2]))
                for p in parents[sec]}

    def outgoing(src: int, parity: int, incoming: dict) -> np.ndarray:
        vec = beliefs[src]
        factors = [incoming[(p, src)] for p in parents[src]
                   if p != parity and (p, src) in incoming]
        if factors:
            vec = vec * np.prod(factors, axis=0)
            total = vec.sum()
            if total <= 0 or not np.isfinite(total):
                vec = beliefs[src]
            else:
                vec = vec / total
        if message_cap is not None:
            vec = cap_redistribute(vec, message_cap)
        return vec

    incoming: dict[tuple[int, int], np.ndarray] = {}
    folded: dict[tuple[int, int], np.ndarray] = {}
    for _ in range(max(1, rounds)):
        folded = {}
        for src, parity in config.edges():
            folded[(src, parity)] = fold_likelihoods(
                outgoing(src, parity, incoming),
                table.residues[(src, parity)], config.size(parity))
        incoming = {}
        for parity in config.parity_sections:
            members = config.parity_graph[parity]
            for sec in members:
                others = [folded[(j, parity)] for j in members if j != sec]
                try:
                    incoming[(parity, sec)] = info_prior(
                        beliefs[parity], others, table.residues[(sec, parity)])
                except ZeroMass:
                    continue

    qtilde: dict[int, np.ndarray] = {}
    for parity in config.parity_sections:
        members = config.parity_graph[parity]
        try:
            qtilde[parity] = parity_prior([folded[(j, parity)] for j in members])
        except ZeroMass:
            qtilde[parity] = np.full(config.size(parity), 1.0 / config.size(parity))

    for sec in config.info_sections:
        weights = parent_weights(sec)
        factors = [incoming[(p, sec)] ** weights[p] for p in parents[sec]
                   if (p, sec) in incoming]
        if not factors:
            qtilde[sec] = np.full(config.size(sec), 1.0 / config.size(sec))
            continue
        combined = factors[0] if len(factors) == 1 else np.prod(factors, axis=0)
        total = combined.sum()
        if total <= 0 or not np.isfinite(total):
            qtilde[sec] = np.full(config.size(sec), 1.0 / config.size(sec))
        else:
            qtilde[sec] = combined / total

    return lift_priors(qtilde, config, ka, damping)


def posterior_beliefs(effective_obs, tau: float, power: PowerAllocation,
                      config: TreeCodeConfig, base: PriorField
                      ) -> dict[int, np.ndarray]:
    """Per-section activity posteriors of the effective observation.

    Entrywise posterior mean under the uninformative base prior, normalised
    per section.  Unlike the bare likelihood ratio this saturates for strong
    entries, so a section with several active values spreads its mass over
    all of them instead of handing everything to the loudest -- the shape
    the parity folds need.
    """
    out = {}
    for sec in range(1, config.num_sections + 1):
        sl = config.section_slice(sec)
        post = pme(base.q[sl], effective_obs[sl], tau,
                   float(power.amplitudes[sec - 1]))
        total = post.sum()
        if total <= 0:
            raise ZeroMass(f"section {sec} posterior has no mass")
        out[sec] = post / total
    return out


def _make_provider(cfg: DecoderConfig, config, gens, table, power, ka):
    """Prior provider for run_amp plus a live view of the latest priors."""
    base = uninformative_priors(config, ka)
    state = {"last": base}
    if cfg.mode == "original":
        return (lambda t, r, tau: base), state

    def provider(t: int, effective_obs: np.ndarray, tau: float) -> PriorField:
        # the first iteration has no usable effective observation behind it
        if t >= 1 and (t - 1) % cfg.prior_stride == 0:
            beliefs = posterior_beliefs(effective_obs, tau, power, config, base)
            state["last"] = dynamic_priors(beliefs, config, gens, table, ka,
                                           cfg.prior_damping,
                                           rounds=cfg.prior_rounds,
                                           message_cap=1.0 / ka)
        return state["last"]

    return provider, state


def decode(y, op: SensingOperator, power: PowerAllocation,
           config: TreeCodeConfig, gens: GeneratorSet,
           cfg: DecoderConfig | None = None,
           table: PartitionTable | None = None) -> MessageList:
    """Recover a ranked list of payloads from one received vector.

    Runs AMP under the configured prior mode, ranks the final per-section
    likelihoods, stitches parity-consistent paths (doubling the survivor
    budget on an empty result, up to the ceiling) and returns at most
    ``list_cap`` payloads (the assumed user count by default).  An
    exhausted budget yields an empty list.
    """
    cfg = cfg or DecoderConfig()
    if table is None:
        table = build_partition_table(config, gens)
    ka = power.ka
    provider, prior_state = _make_provider(cfg, config, gens, table, power, ka)

    trace = run_amp(y, op, power, config, cfg.amp_iters, provider,
                    early_stop_rtol=cfg.early_stop_rtol)
    final = trace[-1]
    # rank by the posterior logit: same order as the denoised posterior --
    # under a uniform prior that is the plain likelihood order -- but immune
    # to the underflow ties the sigmoid produces; the posterior values
    # themselves serve as the multiplicative path weights
    scores = np.empty(config.total_size)
    d_flat = power.expand(config)
    with np.errstate(divide="ignore"):
        q = prior_state["last"].q
        logit = np.log(q) - np.log1p(-np.clip(q, None, 1.0 - 1e-300))
    r = final.effective_obs
    tau2 = 2.0 * final.tau ** 2
    scores = d_flat * (2.0 * r - d_flat) / tau2 + logit
    posterior = final.s_hat
    budget = cfg.survivor_budget
    stitched = None
    while True:
        lists = {}
        for sec in range(1, config.num_sections + 1):
            # parity lists only gate the joins, so they can afford to be
            # wider than the per-section join budget
            width = budget if sec in config.info_sections else 4 * budget
            k = min(width, config.size(sec))
            idx, _ = top_k_sections(scores, config, sec, k)
            offset = config.section_offsets[sec - 1]
            lists[sec] = PathList.from_section(sec, idx, posterior[offset + idx])
        try:
            stitched = prune_and_stitch(lists, config, gens, budget, table)
            break
        except EmptyResult:
            if budget >= cfg.budget_ceiling:
                return MessageList()
            budget = min(budget * 2, cfg.budget_ceiling)

    cap = cfg.list_cap if cfg.list_cap is not None else ka
    out = MessageList()
    for row, weight in zip(stitched.values[:cap], stitched.weights[:cap]):
        out.payloads.append(payload_from_values(row, config))
        out.weights.append(float(weight))
    return out
