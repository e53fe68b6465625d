"""Approximate message passing over the sectioned sparse superposition.

The residual recursion tracks y - A D s plus an Onsager correction whose
coefficient compares the expected received signal energy against the energy
of the current estimate; the state evolution proxy tau is the residual RMS
per channel use.  The denoiser is the posterior mean of each entry being
active (a two-point mixture under Gaussian noise), driven by per-entry
activity priors that an outer code may resupply every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import LengthMismatch, NonFiniteState
from .sensing import PowerAllocation, SensingOperator
from .tree import TreeCodeConfig

TAU_FLOOR = 1e-12


@dataclass
class PriorField:
    """Per-entry activity priors q plus the per-section value priors they
    were lifted from."""

    qtilde: dict[int, np.ndarray]   # section -> prior over its 2^v values
    q: np.ndarray                   # flat activity prior, one entry per index


@dataclass
class AmpState:
    """Snapshot of one iteration: estimate, residual, scale, and the
    effective observation the estimate was denoised from."""

    s_hat: np.ndarray
    residual: np.ndarray
    tau: float
    iteration: int
    effective_obs: np.ndarray | None = None


def lift_priors(qtilde: dict[int, np.ndarray], config: TreeCodeConfig,
                ka: int, damping: float = 0.0) -> PriorField:
    """Turn per-section value priors into per-entry activity priors.

    Each section prior is first damped toward uniform
    (``(1-damping) qt + damping / 2^v``), then lifted through
    ``q = 1 - (1 - qt)^ka``: the chance at least one of ka users lands on
    the entry.
    """
    damped = {}
    parts = []
    for sec in range(1, config.num_sections + 1):
        size = config.size(sec)
        qt = np.asarray(qtilde[sec], dtype=np.float64)
        if qt.size != size:
            raise LengthMismatch(f"prior for section {sec} has the wrong size")
        if damping:
            qt = (1.0 - damping) * qt + damping / size
        damped[sec] = qt
        qt_clipped = np.clip(qt, 0.0, 1.0)
        with np.errstate(divide="ignore"):
            # 1 - (1 - qt)^ka, kept accurate for tiny qt
            lifted = -np.expm1(ka * np.log1p(-qt_clipped))
        parts.append(np.where(qt_clipped >= 1.0, 1.0, lifted))
    return PriorField(qtilde=damped, q=np.concatenate(parts))


def uniform_qtilde(config: TreeCodeConfig) -> dict[int, np.ndarray]:
    return {sec: np.full(config.size(sec), 1.0 / config.size(sec))
            for sec in range(1, config.num_sections + 1)}


def uninformative_priors(config: TreeCodeConfig, ka: int) -> PriorField:
    """Activity priors with no outer-code knowledge: qt = 2^-v everywhere."""
    return lift_priors(uniform_qtilde(config), config, ka)


def pme(q, r, tau, d):
    """Posterior mean of a {0, d} entry observed as r under N(0, tau^2).

    Evaluated in logistic form on the exponent difference
    d(2r - d)/(2 tau^2) + log(q/(1-q)), which never overflows.  Broadcasts
    over array arguments; q=0 and q=1 return exactly 0 and 1.
    """
    q = np.asarray(q, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    tau = np.maximum(np.asarray(tau, dtype=np.float64), TAU_FLOOR)
    d = np.asarray(d, dtype=np.float64)

    zero = q <= 0.0
    one = q >= 1.0
    q_safe = np.where(zero | one, 0.5, q)
    a = d * (2.0 * r - d) / (2.0 * tau ** 2) + np.log(q_safe / (1.0 - q_safe))
    # stable logistic
    out = np.where(a >= 0, 1.0 / (1.0 + np.exp(-np.abs(a))),
                   np.exp(-np.abs(a)) / (1.0 + np.exp(-np.abs(a))))
    out = np.where(zero, 0.0, out)
    out = np.where(one, 1.0, out)
    if out.ndim == 0:
        return float(out)
    return out


def residual_step(y, op: SensingOperator, power: PowerAllocation,
                  config: TreeCodeConfig, s_hat,
                  prev_residual=None, prev_tau=None) -> np.ndarray:
    """One residual update.

    z = y - A D s + z_prev (E - ||D s||^2) / (n tau_prev^2), where
    E = ka sum(d^2) is the expected received signal energy over the whole
    codeword; dividing the energy gap by n expresses it per channel use.
    The correction term is zero on the first call (no previous residual).
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    s_hat = np.asarray(s_hat, dtype=np.float64).ravel()
    ds = power.expand(config) * s_hat
    z = y - op.forward(ds)
    if prev_residual is not None:
        gap = power.total_energy() - float(ds @ ds)
        tau2 = max(float(prev_tau), TAU_FLOOR) ** 2
        z = z + np.asarray(prev_residual, np.float64) * (gap / (op.n * tau2))
    if not np.isfinite(z).all():
        raise NonFiniteState("residual contains non-finite entries")
    return z


def tau_update(residual, n: int) -> float:
    """Residual RMS per channel use, floored away from zero."""
    residual = np.asarray(residual, dtype=np.float64)
    return max(float(np.sqrt(residual @ residual / n)), TAU_FLOOR)


def denoise(effective_obs, priors: PriorField, tau: float,
            power: PowerAllocation, config: TreeCodeConfig) -> np.ndarray:
    """Entrywise posterior-mean estimate of the section-sparse vector."""
    d_flat = power.expand(config)
    s = pme(priors.q, effective_obs, tau, d_flat)
    if not np.isfinite(s).all():
        raise NonFiniteState("denoised state contains non-finite entries")
    return s


PriorProvider = Callable[[int, np.ndarray, float], PriorField]


def run_amp(y, op: SensingOperator, power: PowerAllocation,
            config: TreeCodeConfig, iterations: int,
            prior_provider: PriorProvider,
            early_stop_rtol: float = 1e-6,
            keep_history: bool = False,
            diagnostics=None) -> list[AmpState]:
    """Run the full recursion from s = 0 and return the iteration trace.

    ``prior_provider(t, effective_obs, tau)`` supplies the activity priors
    for iteration t; a constant provider reproduces the plain scheme.  Stops
    early once tau moves by less than ``early_stop_rtol`` relatively.  With
    ``keep_history`` every state keeps its own arrays; otherwise only the
    final state carries them (taus are always recorded).  ``diagnostics``
    may be a writable text stream receiving one CSV line per iteration
    (iteration, tau, mean section entropy).
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    s = np.zeros(config.total_size, dtype=np.float64)
    z_prev = None
    tau_prev = None
    trace: list[AmpState] = []
    if diagnostics is not None:
        diagnostics.write("iteration,tau,section_entropy\n")

    for t in range(iterations):
        z = residual_step(y, op, power, config, s, z_prev, tau_prev)
        tau = tau_update(z, op.n)
        r = power.expand(config) * s + op.adjoint(z)
        priors = prior_provider(t, r, tau)
        s = denoise(r, priors, tau, power, config)

        state = AmpState(s_hat=s if keep_history else None,
                         residual=z if keep_history else None,
                         tau=tau, iteration=t,
                         effective_obs=r if keep_history else None)
        trace.append(state)
        if diagnostics is not None:
            diagnostics.write(f"{t},{tau!r},{_section_entropy(s, config)!r}\n")

        stop = (tau_prev is not None
                and abs(tau - tau_prev) < early_stop_rtol * tau_prev)
        z_prev, tau_prev = z, tau
        if stop:
            break

    trace[-1] = AmpState(s_hat=s, residual=z_prev, tau=tau_prev,
                         iteration=trace[-1].iteration, effective_obs=r)
    return trace


def _section_entropy(s: np.ndarray, config: TreeCodeConfig) -> float:
    ent = 0.0
    for sec in range(1, config.num_sections + 1):
        seg = s[config.section_slice(sec)]
        total = seg.sum()
        if total <= 0:
            continue
        p = seg / total
        nz = p[p > 0]
        ent -= float(nz @ np.log(nz))
    return ent / config.num_sections
