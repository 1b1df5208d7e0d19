"""Sampling-budget controllers: SC, AC, ESC, DSC, and the probe-routed policy.

Every controller consumes one problem from a sampler and emits a
SamplingTrace. Controllers never share state: one instance of the loop per
problem, with the sampler supplying that problem's answer stream. The final
answer is always the majority answer over the trace's inference samples,
with ties broken by earliest first occurrence.

The probe-routed policy (actsc) takes a precomputed P(hard): below the
routing threshold it draws a single sample; otherwise it tops up samples in
dynamic windows. Each iteration asks for ``max(1, w - m)`` more samples,
where ``m`` is the count of the most frequent answer among the last ``w``
samples, and stops once the global frequency of the leading answer reaches
the confidence threshold or the budget is exhausted. The literal top-up
rule can request zero samples while confidence is still below the
threshold, which would loop forever; the floor of 1 guarantees progress.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .errors import ConfigError
from .samplers import AnswerSample, Sampler


class Policy(str, Enum):
    SC = "sc"
    AC = "ac"
    ESC = "esc"
    DSC = "dsc"
    ACTSC = "actsc"


class Route(str, Enum):
    EASY = "easy"
    HARD = "hard"
    NA = "n/a"


class StopReason(str, Enum):
    FIXED_BUDGET = "fixed_budget"
    AGREEMENT = "agreement"
    WINDOW_UNANIMOUS = "window_unanimous"
    CONFIDENCE = "confidence"
    BUDGET_EXHAUSTED = "budget_exhausted"
    SINGLE_SAMPLE = "single_sample"


class ConfScope(str, Enum):
    GLOBAL = "global"   # Count(a*, S)/|S| over all samples (algorithmic reading)
    WINDOW = "window"   # frequency of the window's leading answer within the window


@dataclass(frozen=True)
class PolicyConfig:
    k_max: int = 40
    ac_threshold: float = 0.95
    ac_min_samples: int = 2
    esc_window: int = 5
    dsc_presamples: int = 3
    dsc_threshold: float = 0.95
    actsc_window: int = 5
    actsc_gamma: float = 0.50
    tau: float | None = None
    conf_scope: ConfScope = ConfScope.GLOBAL

    def __post_init__(self):
        if self.k_max < 1:
            raise ConfigError(f"k_max must be >= 1, got {self.k_max}")
        for name, v in (("ac_threshold", self.ac_threshold), ("dsc_threshold", self.dsc_threshold)):
            if not (0.0 < v <= 1.0):
                raise ConfigError(f"{name} must lie in (0, 1], got {v}")
        if self.esc_window < 1 or self.actsc_window < 1:
            raise ConfigError("window sizes must be >= 1")
        if not (0.0 < self.actsc_gamma <= 1.0):
            raise ConfigError(f"actsc_gamma must lie in (0, 1], got {self.actsc_gamma}")
        if self.ac_min_samples < 1:
            raise ConfigError("ac_min_samples must be >= 1")
        if self.dsc_presamples < 1:
            raise ConfigError("dsc_presamples must be >= 1")
        if self.tau is not None and not (0.0 < self.tau < 1.0):
            raise ConfigError(f"tau must lie strictly in (0, 1), got {self.tau}")


@dataclass(frozen=True)
class RoutingDecision:
    """Outcome of comparing the probe score against the routing threshold."""

    p_hard: float
    tau: float
    route: Route

    def __post_init__(self):
        expected = Route.EASY if self.p_hard < self.tau else Route.HARD
        if self.route != expected:
            raise ConfigError(
                f"inconsistent routing: p_hard={self.p_hard}, tau={self.tau}, route={self.route.value}"
            )


def decide_route(p_hard: float, tau: float) -> RoutingDecision:
    """Easy strictly below the threshold, hard at or above it."""
    if not (0.0 < p_hard < 1.0):
        raise ConfigError(f"probe_p_hard must lie strictly in (0, 1), got {p_hard}")
    route = Route.EASY if p_hard < tau else Route.HARD
    return RoutingDecision(p_hard=p_hard, tau=tau, route=route)


@dataclass(frozen=True)
class SamplingTrace:
    problem_id: str
    policy: Policy
    route: Route
    p_hard: float | None
    samples: list[AnswerSample]
    prepare_samples: list[AnswerSample]
    final_answer: str
    stop_reason: StopReason
    confidence_at_stop: float
    n_need_history: list[int] = field(default_factory=list)

    @property
    def inference_tokens(self) -> int:
        return sum(s.total_tokens for s in self.samples)

    @property
    def prepare_tokens(self) -> int:
        return sum(s.total_tokens for s in self.prepare_samples)

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "policy": self.policy.value,
            "route": self.route.value,
            "p_hard": self.p_hard,
            "samples": [
                {"answer": s.answer, "input_tokens": s.input_tokens, "output_tokens": s.output_tokens}
                for s in self.samples
            ],
            "prepare_samples": [
                {"answer": s.answer, "input_tokens": s.input_tokens, "output_tokens": s.output_tokens}
                for s in self.prepare_samples
            ],
            "final_answer": self.final_answer,
            "stop_reason": self.stop_reason.value,
            "confidence_at_stop": self.confidence_at_stop,
            "n_need_history": list(self.n_need_history),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SamplingTrace":
        return cls(
            problem_id=obj["problem_id"],
            policy=Policy(obj["policy"]),
            route=Route(obj["route"]),
            p_hard=obj.get("p_hard"),
            samples=[AnswerSample(s["answer"], s["input_tokens"], s["output_tokens"]) for s in obj["samples"]],
            prepare_samples=[
                AnswerSample(s["answer"], s["input_tokens"], s["output_tokens"])
                for s in obj.get("prepare_samples", [])
            ],
            final_answer=obj["final_answer"],
            stop_reason=StopReason(obj["stop_reason"]),
            confidence_at_stop=obj["confidence_at_stop"],
            n_need_history=list(obj.get("n_need_history", [])),
        )


def majority_vote(answers: Sequence[str]) -> tuple[str, int]:
    """Most frequent answer; ties broken by earliest first occurrence."""
    if not answers:
        raise ConfigError("majority_vote needs at least one answer")
    counts: dict[str, int] = {}
    for a in answers:
        counts[a] = counts.get(a, 0) + 1
    winner = max(counts, key=counts.get)  # max keeps the earliest-inserted on ties
    return winner, counts[winner]


def _answers(samples: Sequence[AnswerSample]) -> list[str]:
    return [s.answer for s in samples]


def run_sc(sampler: Sampler, problem_id: str, config: PolicyConfig) -> SamplingTrace:
    """Fixed-budget voting: always k_max samples."""
    samples = sampler.draw(problem_id, config.k_max)
    winner, count = majority_vote(_answers(samples))
    return SamplingTrace(
        problem_id=problem_id,
        policy=Policy.SC,
        route=Route.NA,
        p_hard=None,
        samples=samples,
        prepare_samples=[],
        final_answer=winner,
        stop_reason=StopReason.FIXED_BUDGET,
        confidence_at_stop=count / len(samples),
    )


def _adaptive_loop(
    sampler: Sampler,
    problem_id: str,
    threshold: float,
    min_samples: int,
    k_max: int,
) -> tuple[list[AnswerSample], StopReason]:
    """Draw one sample at a time until the agreement ratio strictly exceeds the threshold."""
    samples: list[AnswerSample] = []
    while len(samples) < k_max:
        samples.extend(sampler.draw(problem_id, 1))
        n = len(samples)
        if n >= min_samples:
            _, count = majority_vote(_answers(samples))
            if count / n > threshold:
                return samples, StopReason.AGREEMENT
    return samples, StopReason.BUDGET_EXHAUSTED


def run_ac(sampler: Sampler, problem_id: str, config: PolicyConfig) -> SamplingTrace:
    """Sequential sampling with an agreement-ratio stop."""
    samples, stop_reason = _adaptive_loop(
        sampler, problem_id, config.ac_threshold, config.ac_min_samples, config.k_max
    )
    winner, count = majority_vote(_answers(samples))
    return SamplingTrace(
        problem_id=problem_id,
        policy=Policy.AC,
        route=Route.NA,
        p_hard=None,
        samples=samples,
        prepare_samples=[],
        final_answer=winner,
        stop_reason=stop_reason,
        confidence_at_stop=count / len(samples),
    )


def run_esc(sampler: Sampler, problem_id: str, config: PolicyConfig) -> SamplingTrace:
    """Window sampling that stops on the first unanimous full window.

    The total is a multiple of the window size unless the budget truncates
    the last window; a truncated window cannot trigger the unanimous stop.
    The final answer is the majority over all samples drawn.
    """
    samples: list[AnswerSample] = []
    while True:
        take = min(config.esc_window, config.k_max - len(samples))
        batch = sampler.draw(problem_id, take)
        samples.extend(batch)
        batch_answers = _answers(batch)
        if take == config.esc_window and len(set(batch_answers)) == 1:
            stop_reason = StopReason.WINDOW_UNANIMOUS
            break
        if len(samples) >= config.k_max:
            stop_reason = StopReason.BUDGET_EXHAUSTED
            break
    winner, count = majority_vote(_answers(samples))
    return SamplingTrace(
        problem_id=problem_id,
        policy=Policy.ESC,
        route=Route.NA,
        p_hard=None,
        samples=samples,
        prepare_samples=[],
        final_answer=winner,
        stop_reason=stop_reason,
        confidence_at_stop=count / len(samples),
    )


def run_dsc(sampler: Sampler, problem_id: str, config: PolicyConfig) -> SamplingTrace:
    """Pre-sample to judge difficulty, then a single sample or adaptive sampling.

    The prepare draws are recorded separately and their token cost is
    attributed to the prepare phase; a unanimous prepare set routes the
    problem easy (one inference sample), anything else routes hard.
    """
    prepare = sampler.draw(problem_id, config.dsc_presamples)
    if len(set(_answers(prepare))) == 1:
        samples = sampler.draw(problem_id, 1)
        winner, count = majority_vote(_answers(samples))
        route, stop_reason = Route.EASY, StopReason.SINGLE_SAMPLE
    else:
        samples, stop_reason = _adaptive_loop(
            sampler, problem_id, config.dsc_threshold, config.ac_min_samples, config.k_max
        )
        winner, count = majority_vote(_answers(samples))
        route = Route.HARD
    return SamplingTrace(
        problem_id=problem_id,
        policy=Policy.DSC,
        route=route,
        p_hard=None,
        samples=samples,
        prepare_samples=prepare,
        final_answer=winner,
        stop_reason=stop_reason,
        confidence_at_stop=count / len(samples),
    )


def run_actsc(
    sampler: Sampler,
    problem_id: str,
    probe_p_hard: float,
    config: PolicyConfig,
) -> SamplingTrace:
    """Probe-routed sampling: single sample when easy, dynamic windows when hard."""
    if config.tau is None:
        raise ConfigError("actsc requires a routing threshold (tau)")
    decision = decide_route(probe_p_hard, config.tau)

    if decision.route == Route.EASY:
        samples = sampler.draw(problem_id, 1)
        return SamplingTrace(
            problem_id=problem_id,
            policy=Policy.ACTSC,
            route=Route.EASY,
            p_hard=probe_p_hard,
            samples=samples,
            prepare_samples=[],
            final_answer=samples[0].answer,
            stop_reason=StopReason.SINGLE_SAMPLE,
            confidence_at_stop=1.0,
        )

    w = config.actsc_window
    samples: list[AnswerSample] = []
    n_need_history: list[int] = []
    while True:
        window = _answers(samples[-w:]) if samples else []
        window_max = majority_vote(window)[1] if window else 0
        n_need = max(1, w - window_max)
        n_need = min(n_need, config.k_max - len(samples))
        n_need_history.append(n_need)
        samples.extend(sampler.draw(problem_id, n_need))
        winner, count = majority_vote(_answers(samples))
        if config.conf_scope == ConfScope.GLOBAL:
            confidence = count / len(samples)
        else:
            w_answers = _answers(samples[-w:])
            confidence = majority_vote(w_answers)[1] / len(w_answers)
        if confidence >= config.actsc_gamma:
            stop_reason = StopReason.CONFIDENCE
            break
        if len(samples) >= config.k_max:
            stop_reason = StopReason.BUDGET_EXHAUSTED
            break
    return SamplingTrace(
        problem_id=problem_id,
        policy=Policy.ACTSC,
        route=Route.HARD,
        p_hard=probe_p_hard,
        samples=samples,
        prepare_samples=[],
        final_answer=winner,
        stop_reason=stop_reason,
        confidence_at_stop=confidence,
        n_need_history=n_need_history,
    )


def run_policy(
    policy: Policy,
    sampler: Sampler,
    problem_id: str,
    config: PolicyConfig,
    p_hard: float | None = None,
) -> SamplingTrace:
    if policy == Policy.SC:
        return run_sc(sampler, problem_id, config)
    if policy == Policy.AC:
        return run_ac(sampler, problem_id, config)
    if policy == Policy.ESC:
        return run_esc(sampler, problem_id, config)
    if policy == Policy.DSC:
        return run_dsc(sampler, problem_id, config)
    if policy == Policy.ACTSC:
        if p_hard is None:
            raise ConfigError("actsc requires a per-problem p_hard from the probe")
        return run_actsc(sampler, problem_id, p_hard, config)
    raise ConfigError(f"unknown policy {policy!r}")
