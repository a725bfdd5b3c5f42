"""Monte Carlo experiments, closed-form references and efficiency accounting."""

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import binom

from .adversary import AttackDescriptor, AttackKind, predicted_decoy_error
from .errors import ConsistencyError, RejectedInputError, UndefinedFormulaError
from .model import HOPS, ProtocolParams
from .protocol import run_protocol
from .streams import derive_trial_seed
from .version import __version__

logger = logging.getLogger(__name__)

NOISE_CEILING = 0.089
ATTACK_FLOOR = 0.25

CSV_COLUMNS = (
    "sweep_value",
    "trials",
    "detection_rate",
    "ci_low",
    "ci_high",
    "analytic",
    "mean_qber",
    "key_agreement_rate",
    "eta_paper",
    "eta_exact",
)

SWEEPABLE: Dict[str, type] = {
    "decoy_count": int,
    "m": int,
    "l": int,
    "check_sample_size": int,
    "channel_flip_prob": float,
    "qber_threshold": float,
}

SweepValue = Union[int, float]
ProgressCallback = Callable[[int, int], None]


class Convention(Enum):
    PAPER = "paper"
    EXACT = "exact"


@dataclass(frozen=True)
class EfficiencyReport:
    convention: Convention
    c: float
    q: int
    b: int

    @property
    def eta(self) -> float:
        return self.c / (self.q + self.b)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "convention": self.convention.value,
            "c": self.c,
            "q": self.q,
            "b": self.b,
            "eta": self.eta,
        }


RESEND_DECOY_ERROR: Dict[AttackKind, float] = {
    AttackKind.INTERCEPT_RESEND: 0.5,
    AttackKind.MEASURE_RESEND: 0.25,
}


def tolerated_errors(kn: int, threshold: float) -> int:
    """Most decoy errors out of ``kn`` that a hop accepts under ``threshold``."""
    if kn <= 0:
        return 0
    rates = np.arange(1, kn + 1) / kn
    return int(np.count_nonzero(rates <= threshold))


def hop_abort_probability(error_rate: float, kn: int, threshold: float = 0.0) -> float:
    """Probability that one hop's ``kn`` decoys push its error rate over ``threshold``.

    Args:
        error_rate: Chance that a single decoy fails its check.
        kn: Decoys checked on the hop.
        threshold: The abort threshold; a hop aborts when errors / kn exceeds it.

    Returns:
        P(Binomial(kn, error_rate) > tolerated errors).
    """
    if kn < 0:
        raise RejectedInputError(f"decoy count must be >= 0, got {kn}")
    tolerated = tolerated_errors(kn, threshold)
    if tolerated >= kn or error_rate <= 0.0:
        return 0.0
    return float(binom.sf(tolerated, kn, error_rate))


def analytic_detection(
    kind: AttackKind, kn: int, threshold: float = 0.0, hops: int = 1
) -> float:
    """Probability that a resend attack on ``hops`` hops makes the run abort.

    Each attacked hop carries ``kn`` decoys. With ``threshold`` 0 any
    mismatch aborts, and the result is 1 - (1/2)^(kn*hops) for
    intercept-resend and 1 - (3/4)^(kn*hops) for measure-resend.

    Raises:
        RejectedInputError: ``kn`` or ``hops`` is negative.
        UndefinedFormulaError: ``kind`` has no closed form.
    """
    if kn < 0:
        raise RejectedInputError(f"decoy count must be >= 0, got {kn}")
    if hops < 0:
        raise RejectedInputError(f"hops must be >= 0, got {hops}")
    if kind not in RESEND_DECOY_ERROR:
        raise UndefinedFormulaError(
            f"no closed-form detection probability for {kind.value}; use Monte Carlo"
        )
    passed = 1.0 - hop_abort_probability(RESEND_DECOY_ERROR[kind], kn, threshold)
    return 1.0 - passed**hops


def expected_union_size(n: int, l: int) -> float:  # noqa: E741
    """E|P_A u P_B u P_C| for three independent uniform l-subsets of n."""
    return n * (1.0 - (1.0 - l / n) ** 3)


def _index_bits(size: int) -> int:
    return math.ceil(math.log2(size)) if size > 1 else 0


def exact_qubits(params: ProtocolParams) -> int:
    """Photons sent on all nine hops of a completed run."""
    return 3 * (params.m + 2 * params.n) + 9 * params.decoy_count


def efficiency(params: ProtocolParams, convention: Convention) -> EfficiencyReport:
    """Cabello efficiency c / (q + b) under one of two counting conventions.

    PAPER counts one ring's payload legs (m + n + n qubits) and nothing else.
    EXACT counts every photon on every hop of all three rings, plus the
    classical bits of decoy announcements (position, basis, result), of the
    single-photon position announcements and of the final key check.
    """
    params.validate()
    n, m, l, kn = params.n, params.m, params.l, params.decoy_count
    c = 2 * n - expected_union_size(n, l)
    if convention is Convention.PAPER:
        return EfficiencyReport(convention, c, m + 2 * n, 0)

    hop_lengths = [m + kn, n + kn, n + kn]
    decoy_bits = 3 * sum(kn * (_index_bits(length) + 2) for length in hop_lengths)
    position_bits = 3 * l * _index_bits(n)
    key_length = round(c)
    sample = params.sample_size_for(key_length)
    check_bits = sample * (_index_bits(key_length) + 3)
    return EfficiencyReport(
        convention, c, exact_qubits(params), decoy_bits + position_bits + check_bits
    )


def binomial_interval(successes: int, trials: int, z: float) -> Tuple[float, float]:
    """Normal-approximation interval, clipped to [0, 1]."""
    if trials <= 0:
        return 0.0, 1.0
    p = successes / trials
    half = z * math.sqrt(p * (1.0 - p) / trials)
    if half == 0.0:
        half = z * math.sqrt(0.25 / trials)
    return max(0.0, p - half), min(1.0, p + half)


@dataclass(frozen=True)
class ExperimentPlan:
    base_params: ProtocolParams
    attack: Optional[AttackDescriptor] = None
    trials: int = 1000
    sweep_param: Optional[str] = None
    sweep_values: Tuple[SweepValue, ...] = ()
    confidence: float = 3.0

    def points(self) -> List[Tuple[Optional[SweepValue], ProtocolParams]]:
        if self.sweep_param is None:
            return [(None, self.base_params)]
        kind = SWEEPABLE[self.sweep_param]
        return [
            (value, replace(self.base_params, **{self.sweep_param: kind(value)}))
            for value in self.sweep_values
        ]

    def validate(self) -> "ExperimentPlan":
        if self.trials < 1:
            raise RejectedInputError(f"trials must be >= 1, got {self.trials}", field="trials")
        if self.confidence <= 0:
            raise RejectedInputError(
                f"confidence must be > 0, got {self.confidence}", field="confidence"
            )
        if self.sweep_param is not None:
            if self.sweep_param not in SWEEPABLE:
                raise RejectedInputError(
                    f"cannot sweep {self.sweep_param!r}; choose one of "
                    f"{', '.join(SWEEPABLE)}",
                    field="sweep_param",
                )
            if not self.sweep_values:
                raise RejectedInputError(
                    f"sweep over {self.sweep_param} has no values", field="sweep_values"
                )
        elif self.sweep_values:
            raise RejectedInputError(
                "sweep values given without a sweep parameter", field="sweep_param"
            )
        for value, params in self.points():
            try:
                params.validate()
            except RejectedInputError as exc:
                if self.sweep_param is None or exc.field != self.sweep_param:
                    raise
                raise RejectedInputError(
                    f"sweep value {value}: {exc}", field="sweep_values"
                ) from exc
        if self.attack is not None:
            self.attack.validate()
        return self


@dataclass(frozen=True)
class TrialSummary:
    """What one trial contributes to the aggregates."""

    aborted_at_check: bool
    detected: bool
    key_check_failed: bool
    keys_agree: bool
    key_length: Optional[int]
    hop_errors: Tuple[Optional[int], ...]
    hop_checked: Tuple[int, ...]
    photons_sent: int
    completed: bool
    positions_correct: Optional[bool]
    bits_beyond_chance: Optional[float]


def _run_trial(task: Tuple[ProtocolParams, Optional[AttackDescriptor]]) -> TrialSummary:
    params, attack = task
    record = run_protocol(params, attack)
    keys = list(record.derived_keys.values())
    errors = tuple(record.decoy_errors[h] for h in HOPS)
    checked = tuple(
        params.decoy_count if record.decoy_errors[h] is not None else 0 for h in HOPS
    )
    eve = record.eve
    return TrialSummary(
        aborted_at_check=record.aborted_at_check,
        detected=record.detected,
        key_check_failed=record.check_passed is False,
        keys_agree=record.keys_agree,
        key_length=len(keys[0]) if keys else None,
        hop_errors=errors,
        hop_checked=checked,
        photons_sent=sum(record.transmissions.values()),
        completed=record.check_passed is not None,
        positions_correct=eve.positions_correct if eve else None,
        bits_beyond_chance=eve.bits_correct_beyond_chance if eve else None,
    )


@dataclass
class PointResult:
    sweep_value: Optional[SweepValue]
    trials: int
    detection_rate: float
    ci_low: float
    ci_high: float
    analytic: Optional[float]
    detected_rate: float
    verify_failure_rate: float
    key_agreement_rate: float
    mean_key_length: Optional[float]
    mean_qber: Optional[float]
    hop_qber: Dict[str, Optional[float]]
    hop_checked: Dict[str, int]
    predicted_hop_qber: Optional[float]
    eta_paper: float
    eta_exact: float
    eve: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sweep_value": self.sweep_value,
            "trials": self.trials,
            "detection_rate": self.detection_rate,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "analytic": self.analytic,
            "detected_rate": self.detected_rate,
            "verify_failure_rate": self.verify_failure_rate,
            "key_agreement_rate": self.key_agreement_rate,
            "mean_key_length": self.mean_key_length,
            "mean_qber": self.mean_qber,
            "hop_qber": dict(self.hop_qber),
            "hop_checked": dict(self.hop_checked),
            "predicted_hop_qber": self.predicted_hop_qber,
            "eta_paper": self.eta_paper,
            "eta_exact": self.eta_exact,
            "eve": self.eve,
        }


@dataclass(frozen=True)
class HopFlag:
    sweep_value: Optional[SweepValue]
    hop: str
    mean: Optional[float]
    ci_low: float
    ci_high: float
    flag: str


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    points: List[PointResult] = field(default_factory=list)

    def metadata(self) -> Dict[str, Any]:
        return {
            "version": __version__,
            "master_seed": self.plan.base_params.seed,
            "trials": self.plan.trials,
            "sweep_param": self.plan.sweep_param,
            "sweep_values": list(self.plan.sweep_values),
            "confidence": self.plan.confidence,
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "metadata": self.metadata(),
            "base_params": self.plan.base_params.to_dict(),
            "attack": self.plan.attack.to_dict() if self.plan.attack else None,
            "points": [point.to_dict() for point in self.points],
            "qber_report": [
                {
                    "sweep_value": flag.sweep_value,
                    "hop": flag.hop,
                    "mean": flag.mean,
                    "ci_low": flag.ci_low,
                    "ci_high": flag.ci_high,
                    "flag": flag.flag,
                }
                for flag in qber_report(self)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for point in self.points:
            row = point.to_dict()
            writer.writerow([_csv_cell(row[column]) for column in CSV_COLUMNS])
        return buffer.getvalue()


def _csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def _analytic(attack: Optional[AttackDescriptor], params: ProtocolParams) -> Optional[float]:
    # Hops abort independently; channel flips compound the attack's decoy error.
    targets: Tuple[str, ...] = ()
    attack_rate = 0.0
    if attack is not None:
        if attack.kind not in RESEND_DECOY_ERROR or attack.resend_distribution is not None:
            return None
        targets = attack.target_hops
        attack_rate = RESEND_DECOY_ERROR[attack.kind]
    flip = params.channel_flip_prob
    passed = 1.0
    for hop in HOPS:
        base = attack_rate if hop in targets else 0.0
        rate = base + flip - 2.0 * base * flip
        passed *= 1.0 - hop_abort_probability(rate, params.decoy_count, params.qber_threshold)
    return 1.0 - passed


def _predicted_hop_qber(attack: Optional[AttackDescriptor]) -> Optional[float]:
    if attack is None:
        return None
    if attack.kind is AttackKind.INTERCEPT_RESEND and attack.resend_distribution is None:
        return 0.5
    if attack.kind is AttackKind.MEASURE_RESEND:
        return 0.25
    if attack.kind is AttackKind.ENTANGLE_MEASURE:
        return predicted_decoy_error(attack.unitary())
    return None


def _aggregate(
    value: Optional[SweepValue],
    params: ProtocolParams,
    plan: ExperimentPlan,
    trials: Sequence[TrialSummary],
) -> PointResult:
    count = len(trials)
    aborted = sum(t.aborted_at_check for t in trials)
    low, high = binomial_interval(aborted, count, plan.confidence)
    hop_errors = {h: 0 for h in HOPS}
    hop_checked = {h: 0 for h in HOPS}
    for trial in trials:
        for hop, errors, checked in zip(HOPS, trial.hop_errors, trial.hop_checked):
            if errors is not None:
                hop_errors[hop] += errors
                hop_checked[hop] += checked
        if trial.completed and trial.photons_sent != exact_qubits(params):
            raise ConsistencyError(
                f"trial sent {trial.photons_sent} photons, expected "
                f"{exact_qubits(params)}"
            )
    total_checked = sum(hop_checked.values())
    lengths = [t.key_length for t in trials if t.key_length is not None]

    eve = None
    guesses = [t.positions_correct for t in trials if t.positions_correct is not None]
    if guesses:
        advantage = [t.bits_beyond_chance for t in trials if t.bits_beyond_chance is not None]
        eve = {
            "positions_correct_rate": sum(guesses) / len(guesses),
            "mean_bits_correct_beyond_chance": sum(advantage) / len(advantage),
        }

    return PointResult(
        sweep_value=value,
        trials=count,
        detection_rate=aborted / count,
        ci_low=low,
        ci_high=high,
        analytic=_analytic(plan.attack, params),
        detected_rate=sum(t.detected for t in trials) / count,
        verify_failure_rate=sum(t.key_check_failed for t in trials) / count,
        key_agreement_rate=sum(t.keys_agree for t in trials) / count,
        mean_key_length=sum(lengths) / len(lengths) if lengths else None,
        mean_qber=sum(hop_errors.values()) / total_checked if total_checked else None,
        hop_qber={
            h: hop_errors[h] / hop_checked[h] if hop_checked[h] else None for h in HOPS
        },
        hop_checked=hop_checked,
        predicted_hop_qber=_predicted_hop_qber(plan.attack),
        eta_paper=efficiency(params, Convention.PAPER).eta,
        eta_exact=efficiency(params, Convention.EXACT).eta,
        eve=eve,
    )


class ExperimentRunner:
    """Runs an ExperimentPlan, optionally across worker processes.

    Trial seeds come from ``derive_trial_seed(master, sweep_index,
    trial_index)``, so the result does not depend on ``workers``.
    """

    def __init__(self, workers: int = 1, verbose: bool = False):
        if workers < 1:
            raise RejectedInputError(f"workers must be >= 1, got {workers}")
        self.workers = workers
        self.verbose = verbose

    def log(self, message: str) -> None:
        logger.log(logging.INFO if self.verbose else logging.DEBUG, message)

    def run(
        self, plan: ExperimentPlan, progress: Optional[ProgressCallback] = None
    ) -> ExperimentResult:
        plan.validate()
        points = plan.points()
        master = plan.base_params.seed
        tasks = [
            (replace(params, seed=derive_trial_seed(master, index, trial)), plan.attack)
            for index, (_, params) in enumerate(points)
            for trial in range(plan.trials)
        ]
        self.log(
            f"Running {len(points)} sweep point(s) x {plan.trials} trial(s) "
            f"on {self.workers} worker(s)"
        )
        summaries = self._execute(tasks, progress)

        result = ExperimentResult(plan)
        for index, (value, params) in enumerate(points):
            chunk = summaries[index * plan.trials : (index + 1) * plan.trials]
            result.points.append(_aggregate(value, params, plan, chunk))
            self.log(
                f"Point {value}: detection rate {result.points[-1].detection_rate:.4f}"
            )
        return result

    def _execute(
        self,
        tasks: List[Tuple[ProtocolParams, Optional[AttackDescriptor]]],
        progress: Optional[ProgressCallback],
    ) -> List[TrialSummary]:
        total = len(tasks)
        summaries: List[TrialSummary] = []
        if self.workers == 1 or total < 2:
            iterator = map(_run_trial, tasks)
            for summary in iterator:
                summaries.append(summary)
                if progress:
                    progress(len(summaries), total)
            return summaries
        chunksize = max(1, total // (self.workers * 8))
        with ProcessPoolExecutor(max_workers=self.workers) as executor:
            for summary in executor.map(_run_trial, tasks, chunksize=chunksize):
                summaries.append(summary)
                if progress:
                    progress(len(summaries), total)
        return summaries


def run_experiment(
    plan: ExperimentPlan,
    workers: int = 1,
    progress: Optional[ProgressCallback] = None,
) -> ExperimentResult:
    """Run every trial of ``plan`` and aggregate each sweep point.

    Args:
        plan: Base parameters, attack, trial count and optional sweep.
        workers: Worker processes; the result does not depend on it.
        progress: Called with (finished, total) after every trial.

    Returns:
        One PointResult per sweep value, in sweep order.

    Raises:
        RejectedInputError: If the plan or ``workers`` is invalid.
    """
    return ExperimentRunner(workers=workers).run(plan, progress)


def classify_rate(mean: float) -> str:
    """Place a mean decoy error rate against the noise band and the attack floor."""
    if mean <= NOISE_CEILING:
        return "noise-band"
    if mean >= ATTACK_FLOOR:
        return "attack-range"
    return "in-between"


def qber_report(result: ExperimentResult) -> List[HopFlag]:
    """Flag each checked hop by its mean error rate.

    The interval is reported next to the flag and does not affect it.
    """
    flags = []
    z = result.plan.confidence
    for point in result.points:
        for hop in HOPS:
            checked = point.hop_checked[hop]
            mean = point.hop_qber[hop]
            if mean is None:
                continue
            low, high = binomial_interval(round(mean * checked), checked, z)
            if mean == 0.0:
                low = 0.0
            flags.append(
                HopFlag(point.sweep_value, hop, mean, low, high, classify_rate(mean))
            )
    return flags


def render_qber_table(flags: Sequence[HopFlag]) -> str:
    lines = [f"{'sweep':>10}  {'hop':<4}{'qber':>8}{'ci_low':>8}{'ci_high':>8}  flag"]
    for flag in flags:
        value = "-" if flag.sweep_value is None else str(flag.sweep_value)
        mean = "-" if flag.mean is None else f"{flag.mean:.4f}"
        lines.append(
            f"{value:>10}  {flag.hop:<4}{mean:>8}"
            f"{flag.ci_low:>8.4f}{flag.ci_high:>8.4f}  {flag.flag}"
        )
    return "\n".join(lines)


