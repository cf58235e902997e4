"""Confidence-weighted loss family.

Every variant shares one algebraic shell

    value = kappa * (l - eps) + lam * (ln kappa)^2

where l is a raw per-sample loss, eps a threshold that moves with the loss
population, and kappa a confidence weight chosen in closed form so the shell
is minimized over kappa in (0, e].  Samples with loss above the threshold get
kappa < 1 (down-weighted, "not yet trustworthy"), samples below get kappa > 1
up to a hard cap of e.

Two schedules move the threshold:

* the skewness-adaptive variant re-centers each epoch at
  skewness * mean of the previous epoch's losses, so the emphasis flips as
  the loss population's shape changes;
* the sinusoidally cycled variant sweeps a factor F = sin^2(omega*t + phase)
  through [0, 1], gating out easy samples when F is high and relaxing to a
  plain centered loss when F returns to 0.

Logs are natural throughout.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum

from .numerics import W_DOMAIN_MIN, LossStats, lambert_w0, loss_stats

__all__ = [
    "KAPPA_CAP",
    "CAP_BETA",
    "CrucialConfig",
    "EpochState",
    "KappaFormula",
    "ModulatedLoss",
    "Variant",
    "advance_epoch_adp",
    "baseline_confidence_loss",
    "crucial_adp",
    "crucial_sin",
    "initial_epoch_state",
    "kappa_star",
    "loss_gradient_factor",
    "modulated_value",
    "write_loss_trace",
]

# The confidence weight is capped at e: beta = (l - eps)/lam at or below
# -2/e pins the constrained minimizer to the boundary kappa = e.
KAPPA_CAP = math.e
CAP_BETA = -2.0 * math.exp(-1.0)

# sin^2 factors closer than this to 0 or 1 take the exact limit branches.
_F_EPS = 1e-12


class Variant(str, Enum):
    """Which schedule moves the threshold."""

    BASELINE = "baseline"  # fixed, caller-supplied threshold
    ADP = "adp"            # skewness-adaptive, re-centered each epoch
    SIN = "sin"            # sinusoidally cycled gate + threshold


class KappaFormula(str, Enum):
    """Closed form used for the confidence weight.

    ARGMIN is exp(-W(beta/2)), the exact minimizer of the shell over
    kappa in (0, e].  HALF_W is the legacy rendering exp(-W(beta)/2); it is
    kept as a compatibility mode and clamps beta at the W domain edge -1/e
    (below which it is not evaluable) instead of capping at -2/e.
    """

    ARGMIN = "argmin"
    HALF_W = "half_w"


@dataclass(frozen=True)
class CrucialConfig:
    """Configuration for one wrapped-loss schedule.

    lam is the regularization weight on (ln kappa)^2; the cycled variant
    ignores it and derives a per-epoch lam = -ln F instead.  mu_fixed pins
    the population mean used by the cycled variant; None means "use the
    current epoch's mean loss".  threshold only applies to the baseline
    variant.  theorem_mode asserts the regime lam <= 0.01 in which the
    sampling-error bounds of the sampler module are derived.
    """

    variant: Variant
    lam: float = 0.01
    omega: float = math.pi / 4
    phase: float = 0.0
    mu_fixed: float | None = None
    threshold: float = 0.0
    kappa_formula: KappaFormula = KappaFormula.ARGMIN
    theorem_mode: bool = False
    accumulate_stats: bool = False

    def __post_init__(self) -> None:
        if not math.isfinite(self.lam) or self.lam <= 0.0:
            raise ValueError("CrucialConfig: lam must be finite and > 0")
        if self.variant is Variant.SIN and self.omega == 0.0:
            raise ValueError("CrucialConfig: omega must be nonzero for the cycled variant")
        if self.theorem_mode and self.lam > 0.01:
            raise ValueError("CrucialConfig: theorem_mode requires lam <= 0.01")
        if self.mu_fixed is not None and self.mu_fixed <= 0.0:
            raise ValueError("CrucialConfig: a fixed mu must be positive")


@dataclass(frozen=True)
class ModulatedLoss:
    """One sample's loss after confidence weighting.

    gate is the selection bound of the cycled variant (-inf for variants
    that never drop samples).  kappa == 0.0 appears only as an explicit
    zero-weight flag on samples whose value is pinned to 0.
    """

    input_loss: float
    kappa: float
    threshold: float
    gate: float
    value: float
    selected: bool


@dataclass(frozen=True)
class EpochState:
    """Adaptive-threshold state carried between epochs.

    prev_stats are the population moments of the previous epoch's raw
    losses (None before the first epoch); threshold is the eps used for
    every sample of epoch epoch_index.
    """

    epoch_index: int
    prev_stats: LossStats | None
    threshold: float


def kappa_star(loss: float, threshold: float, lam: float,
               formula: KappaFormula = KappaFormula.ARGMIN) -> float:
    """Closed-form confidence weight minimizing the shared loss shell.

    With beta = (loss - threshold) / lam, the ARGMIN form returns
    exp(-W(beta/2)), which solves d/dkappa [kappa*(l-eps) + lam*(ln kappa)^2]
    = 0; for beta <= -2/e the unconstrained stationary point exceeds the
    cap and the constrained minimizer sits at the boundary, so exactly e is
    returned.  kappa == 1.0 exactly when loss == threshold.  Result is
    always in (0, e].
    """
    if lam <= 0.0 or not math.isfinite(lam):
        raise ValueError("kappa_star: lam must be finite and > 0")
    beta = (loss - threshold) / lam
    if formula is KappaFormula.ARGMIN:
        if beta <= CAP_BETA:
            return KAPPA_CAP
        return math.exp(-lambert_w0(beta / 2.0))
    # Legacy half-W rendering, clamped at the W domain edge.
    return math.exp(-0.5 * lambert_w0(max(beta, W_DOMAIN_MIN)))


def modulated_value(loss: float, threshold: float, lam: float, kappa: float) -> float:
    """The family's shared shell: kappa*(loss - threshold) + lam*(ln kappa)^2."""
    if kappa <= 0.0:
        raise ValueError("modulated_value: kappa must be positive")
    log_k = math.log(kappa)
    return kappa * (loss - threshold) + lam * log_k * log_k


def initial_epoch_state() -> EpochState:
    """State for the first epoch: no previous population, threshold 0."""
    return EpochState(epoch_index=0, prev_stats=None, threshold=0.0)


def advance_epoch_adp(prev_losses, cfg: CrucialConfig, next_epoch_index: int = 1) -> EpochState:
    """Fold a finished epoch's raw losses into the next adaptive state.

    The next threshold is skewness * mean of the previous epoch's loss
    population; for a symmetric population it stays at 0, for a
    right-skewed one it moves up (down-weighting the still-hard tail), for
    a left-skewed one it moves below zero.  Degenerate all-equal losses
    have skewness 0 by convention, so the threshold collapses to 0.
    """
    stats = loss_stats(prev_losses)
    return EpochState(
        epoch_index=next_epoch_index,
        prev_stats=stats,
        threshold=stats.skewness * stats.mean,
    )


def crucial_adp(loss: float, state: EpochState, cfg: CrucialConfig) -> ModulatedLoss:
    """Skewness-adaptive wrapped loss for one sample.

    Modulates every sample (never hard-drops): kappa comes from the closed
    form against the epoch's adaptive threshold, and the value is the
    shared shell.
    """
    if cfg.variant is not Variant.ADP:
        raise ValueError("crucial_adp: config variant must be ADP")
    k = kappa_star(loss, state.threshold, cfg.lam, cfg.kappa_formula)
    value = modulated_value(loss, state.threshold, cfg.lam, k)
    return ModulatedLoss(
        input_loss=loss,
        kappa=k,
        threshold=state.threshold,
        gate=-math.inf,
        value=value,
        selected=True,
    )


def _sin_cycle_factor(epoch: int, omega: float, phase: float) -> float:
    """sin^2(omega*epoch + phase), reduced modulo the integer period if any.

    sin^2 has period pi/|omega| in the epoch index.  When that period is an
    integer (within 1e-9), the epoch is reduced modulo it first, so epochs t
    and t + period produce bit-identical factors instead of drifting apart
    through rounding in the angle multiply.
    """
    period = math.pi / abs(omega)
    nearest = round(period)
    if nearest >= 1 and abs(period - nearest) < 1e-9:
        epoch = epoch % nearest
    s = math.sin(omega * epoch + phase)
    return s * s


def crucial_sin(loss: float, epoch: int, mu_l: float, cfg: CrucialConfig) -> ModulatedLoss:
    """Sinusoidally cycled wrapped loss for one sample.

    The cycle factor F = sin^2(omega*epoch + phase) drives everything:

    * samples with loss below the gate F*mu_l/2 are dropped for this epoch
      (selected False, value 0, kappa 0);
    * otherwise the threshold is (F - 1)*mu_l and the regularization weight
      is lam_t = -ln F, so hard epochs (F near 1) gate aggressively while
      easy epochs relax;
    * at F == 0 the limit lam_t -> inf pins kappa to 1 and the value
      degenerates to the plain centered loss l - mu_l;
    * at F == 1 the limit lam_t -> 0 zeroes the value of every sample that
      survives the gate (kappa 0 is the explicit zero-weight flag, selected
      stays True).

    mu_l is the population mean loss under the configured policy and must
    be positive (an all-zero epoch has no usable scale).
    """
    if cfg.variant is not Variant.SIN:
        raise ValueError("crucial_sin: config variant must be SIN")
    if not math.isfinite(mu_l) or mu_l <= 0.0:
        raise ValueError("crucial_sin: mu_l must be finite and positive")
    f = _sin_cycle_factor(epoch, cfg.omega, cfg.phase)
    gate = 0.5 * f * mu_l
    if loss < gate:
        return ModulatedLoss(
            input_loss=loss,
            kappa=0.0,
            threshold=(f - 1.0) * mu_l,
            gate=gate,
            value=0.0,
            selected=False,
        )
    if f <= _F_EPS:
        # lam_t -> inf limit: unit weight, plain centered loss.
        return ModulatedLoss(
            input_loss=loss,
            kappa=1.0,
            threshold=mu_l,
            gate=gate,
            value=loss - mu_l,
            selected=True,
        )
    if f >= 1.0 - _F_EPS:
        # lam_t -> 0 limit: survivors contribute nothing this epoch.
        return ModulatedLoss(
            input_loss=loss,
            kappa=0.0,
            threshold=0.0,
            gate=gate,
            value=0.0,
            selected=True,
        )
    thr = (f - 1.0) * mu_l
    lam_t = -math.log(f)
    k = kappa_star(loss, thr, lam_t, cfg.kappa_formula)
    return ModulatedLoss(
        input_loss=loss,
        kappa=k,
        threshold=thr,
        gate=gate,
        value=modulated_value(loss, thr, lam_t, k),
        selected=True,
    )


def baseline_confidence_loss(loss: float, threshold: float, lam: float,
                             formula: KappaFormula = KappaFormula.ARGMIN) -> ModulatedLoss:
    """Confidence weighting against a fixed, caller-supplied threshold."""
    k = kappa_star(loss, threshold, lam, formula)
    return ModulatedLoss(
        input_loss=loss,
        kappa=k,
        threshold=threshold,
        gate=-math.inf,
        value=modulated_value(loss, threshold, lam, k),
        selected=True,
    )


def loss_gradient_factor(m: ModulatedLoss) -> float:
    """Multiplier for this sample's raw-loss gradient.

    At the closed-form kappa the envelope theorem gives
    d(value)/d(input_loss) = kappa, so trainers scale each sample's
    gradient by kappa; unselected samples contribute nothing.
    """
    return m.kappa if m.selected else 0.0


def write_loss_trace(path, rows) -> None:
    """Write per-sample trace rows to CSV.

    rows is an iterable of (epoch, sample_id, ModulatedLoss).  Columns are
    (epoch, sample_id, input_loss, kappa, threshold, value, selected);
    floats are written with repr so a reload round-trips bit-exactly.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "sample_id", "input_loss", "kappa", "threshold", "value", "selected"]
        )
        for epoch, sample_id, m in rows:
            writer.writerow(
                [epoch, sample_id, repr(m.input_loss), repr(m.kappa),
                 repr(m.threshold), repr(m.value), str(m.selected).lower()]
            )
