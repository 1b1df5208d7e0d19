"""End-to-end benchmark runs, metric aggregation, and report rendering.

A benchmark run executes each requested policy over the same problem set.
With the sim or replay backends every policy gets a fresh sampler built
from the same seed/pool, so all policies consume identical per-problem
answer streams and differences are attributable to the stopping rule alone
(the live backend cannot be paired and is the caller's concern).

Reported token costs are kept as exact integer sums alongside the
thousands-scaled display values; sample-count reductions versus the
fixed-budget reference are rendered at one decimal with half-up rounding.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Callable, Sequence

from .activation_store import ActivationRecord
from .controllers import Policy, PolicyConfig, SamplingTrace, run_policy
from .errors import ActscError, ConfigError
from .probe import ProbeModel, predict_logit, predict_p_hard
from .samplers import Sampler


def percent_reduction(policy_avg: float, sc_avg: float) -> float:
    """Relative change in average samples versus the fixed-budget reference, in percent."""
    if sc_avg == 0:
        raise ConfigError("reference average of 0 samples makes the reduction undefined")
    return (policy_avg - sc_avg) / sc_avg * 100.0


def round_half_up(value: float, decimals: int) -> Decimal:
    """Decimal rounding with ties away from zero, e.g. -78.25 -> -78.3."""
    q = Decimal(1).scaleb(-decimals)
    return Decimal(repr(float(value))).quantize(q, rounding=ROUND_HALF_UP)


def format_percent(value: float) -> str:
    """One-decimal percent string matching the report's printed reductions."""
    return f"{round_half_up(value, 1)}%"


def _fmt2(value: float) -> str:
    return str(round_half_up(value, 2))


def _fmt1(value: float) -> str:
    return str(round_half_up(value, 1))


@dataclass(frozen=True)
class ProblemSummary:
    problem_id: str
    n_samples: int
    n_prepare_samples: int
    route: str
    stop_reason: str
    final_answer: str
    gold_answer: str | None
    correct: bool
    p_hard: float | None

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "n_samples": self.n_samples,
            "n_prepare_samples": self.n_prepare_samples,
            "route": self.route,
            "stop_reason": self.stop_reason,
            "final_answer": self.final_answer,
            "gold_answer": self.gold_answer,
            "correct": self.correct,
            "p_hard": self.p_hard,
        }


@dataclass(frozen=True)
class RunReport:
    policy: Policy
    dataset: str
    n_problems: int
    avg_samples: float
    prepare_tokens: int
    inference_tokens: int
    accuracy_pct: float
    pct_reduction_vs_sc: float | None
    per_problem: tuple[ProblemSummary, ...]

    @property
    def prepare_tokens_k(self) -> float:
        return self.prepare_tokens / 1000.0

    @property
    def inference_tokens_k(self) -> float:
        return self.inference_tokens / 1000.0

    def to_dict(self) -> dict:
        return {
            "policy": self.policy.value,
            "dataset": self.dataset,
            "n_problems": self.n_problems,
            "avg_samples": self.avg_samples,
            "prepare_tokens": self.prepare_tokens,
            "inference_tokens": self.inference_tokens,
            "prepare_tokens_k": self.prepare_tokens_k,
            "inference_tokens_k": self.inference_tokens_k,
            "accuracy_pct": self.accuracy_pct,
            "pct_reduction_vs_sc": self.pct_reduction_vs_sc,
            "per_problem": [p.to_dict() for p in self.per_problem],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RunReport":
        return cls(
            policy=Policy(obj["policy"]),
            dataset=obj["dataset"],
            n_problems=obj["n_problems"],
            avg_samples=obj["avg_samples"],
            prepare_tokens=obj["prepare_tokens"],
            inference_tokens=obj["inference_tokens"],
            accuracy_pct=obj["accuracy_pct"],
            pct_reduction_vs_sc=obj["pct_reduction_vs_sc"],
            per_problem=tuple(
                ProblemSummary(
                    problem_id=p["problem_id"],
                    n_samples=p["n_samples"],
                    n_prepare_samples=p["n_prepare_samples"],
                    route=p["route"],
                    stop_reason=p["stop_reason"],
                    final_answer=p["final_answer"],
                    gold_answer=p["gold_answer"],
                    correct=p["correct"],
                    p_hard=p["p_hard"],
                )
                for p in obj["per_problem"]
            ),
        )


def aggregate_metrics(
    traces: Sequence[SamplingTrace],
    gold_answers: dict[str, str],
    dataset: str = "",
    sc_avg_samples: float | None = None,
) -> RunReport:
    """Fold per-problem traces into one report row.

    Correctness is exact string match of the trace's final answer against
    the gold answer; a problem without a gold answer counts as incorrect.
    Token sums are exact integers; avg_samples counts inference samples
    only (prepare draws are accounted in the prepare token column).
    """
    if not traces:
        raise ConfigError("aggregate_metrics needs at least one trace")
    policies = {t.policy for t in traces}
    if len(policies) != 1:
        raise ConfigError(f"traces mix policies {sorted(p.value for p in policies)}")
    policy = traces[0].policy
    n = len(traces)
    total_samples = sum(len(t.samples) for t in traces)
    prepare_tokens = sum(t.prepare_tokens for t in traces)
    inference_tokens = sum(t.inference_tokens for t in traces)
    summaries = []
    n_correct = 0
    for t in traces:
        gold = gold_answers.get(t.problem_id)
        correct = gold is not None and t.final_answer == gold
        n_correct += int(correct)
        summaries.append(
            ProblemSummary(
                problem_id=t.problem_id,
                n_samples=len(t.samples),
                n_prepare_samples=len(t.prepare_samples),
                route=t.route.value,
                stop_reason=t.stop_reason.value,
                final_answer=t.final_answer,
                gold_answer=gold,
                correct=correct,
                p_hard=t.p_hard,
            )
        )
    avg_samples = total_samples / n
    reduction = None
    if sc_avg_samples is not None and policy != Policy.SC:
        reduction = percent_reduction(avg_samples, sc_avg_samples)
    return RunReport(
        policy=policy,
        dataset=dataset,
        n_problems=n,
        avg_samples=avg_samples,
        prepare_tokens=prepare_tokens,
        inference_tokens=inference_tokens,
        accuracy_pct=100.0 * n_correct / n,
        pct_reduction_vs_sc=reduction,
        per_problem=tuple(summaries),
    )


def run_benchmark(
    problem_ids: Sequence[str],
    gold_answers: dict[str, str],
    sampler_factory: Callable[[], Sampler],
    policies: Sequence[Policy],
    config: PolicyConfig,
    p_hard: dict[str, float] | None = None,
    dataset: str = "",
    sc_reference_avg: float | None = None,
    max_workers: int = 1,
) -> dict[Policy, tuple[RunReport, list[SamplingTrace]]]:
    """Run each policy over the problem set with a fresh sampler per policy.

    When the fixed-budget policy is part of the run its average seeds the
    reduction column of the other reports (an explicit sc_reference_avg
    overrides). Problems may be dispatched to a thread pool; traces come
    back sorted by problem_id so results are independent of scheduling.
    """
    if not problem_ids:
        raise ConfigError("run_benchmark needs at least one problem")
    if len(set(problem_ids)) != len(problem_ids):
        raise ConfigError("duplicate problem_ids in benchmark input")
    if Policy.ACTSC in policies:
        if config.tau is None:
            raise ConfigError("actsc requires tau (calibrate or pass an override)")
        if p_hard is None:
            raise ConfigError("actsc requires per-problem p_hard values from the probe")
        missing = [pid for pid in problem_ids if pid not in p_hard]
        if missing:
            raise ConfigError(f"no p_hard for problems: {missing[:5]}")

    traces_by_policy: dict[Policy, list[SamplingTrace]] = {}
    for policy in policies:
        sampler = sampler_factory()

        def one(pid: str, _policy=policy, _sampler=sampler) -> SamplingTrace:
            try:
                return run_policy(
                    _policy, _sampler, pid, config,
                    p_hard=p_hard.get(pid) if p_hard else None,
                )
            except ActscError as exc:
                raise type(exc)(f"problem '{pid}': {exc}") from exc

        try:
            if max_workers > 1:
                with ThreadPoolExecutor(max_workers=max_workers) as pool:
                    traces = list(pool.map(one, problem_ids))
            else:
                traces = [one(pid) for pid in problem_ids]
        finally:
            close = getattr(sampler, "close", None)
            if close is not None:
                close()
        traces.sort(key=lambda t: t.problem_id)
        traces_by_policy[policy] = traces

    sc_avg = sc_reference_avg
    if sc_avg is None and Policy.SC in traces_by_policy:
        sc_traces = traces_by_policy[Policy.SC]
        sc_avg = sum(len(t.samples) for t in sc_traces) / len(sc_traces)

    results: dict[Policy, tuple[RunReport, list[SamplingTrace]]] = {}
    for policy, traces in traces_by_policy.items():
        report = aggregate_metrics(traces, gold_answers, dataset=dataset, sc_avg_samples=sc_avg)
        results[policy] = (report, traces)
    return results


def write_traces(traces: Sequence[SamplingTrace], path: str | Path) -> None:
    """Persist traces as JSONL in problem-id order with canonical key order."""
    ordered = sorted(traces, key=lambda t: t.problem_id)
    with open(path, "w", encoding="utf-8") as fh:
        for t in ordered:
            fh.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")


def read_traces(path: str | Path) -> list[SamplingTrace]:
    traces = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                traces.append(SamplingTrace.from_dict(json.loads(line)))
    return traces


def _sample_cell(report: RunReport) -> str:
    cell = _fmt2(report.avg_samples)
    if report.pct_reduction_vs_sc is not None:
        cell += f" ({format_percent(report.pct_reduction_vs_sc)})"
    return cell


def _tokens_cell(report: RunReport) -> str:
    prepare = _fmt1(report.prepare_tokens_k) if report.prepare_tokens > 0 else "--"
    return f"{prepare} / {_fmt1(report.inference_tokens_k)}"


def render_report(reports: Sequence[RunReport], format: str = "text_table") -> str:
    """Render one comparison document: a text table, JSON, or CSV."""
    if format == "json":
        return json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=1) + "\n"
    if format == "csv":
        rows = [["policy", "dataset", "n_problems", "avg_samples", "prepare_tokens_k",
                 "inference_tokens_k", "accuracy_pct", "pct_reduction_vs_sc"]]
        for r in reports:
            rows.append([
                r.policy.value, r.dataset, str(r.n_problems), _fmt2(r.avg_samples),
                _fmt1(r.prepare_tokens_k) if r.prepare_tokens > 0 else "--",
                _fmt1(r.inference_tokens_k), _fmt2(r.accuracy_pct),
                format_percent(r.pct_reduction_vs_sc) if r.pct_reduction_vs_sc is not None else "",
            ])
        return "\n".join(",".join(row) for row in rows) + "\n"
    if format != "text_table":
        raise ConfigError(f"unknown report format '{format}'")

    headers = ["Method", "Sample↓", "Prepare / Inference↓", "Acc↑"]
    rows = [[r.policy.value.upper(), _sample_cell(r), _tokens_cell(r), _fmt2(r.accuracy_pct)]
            for r in reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(headers)]
    lines = []
    dataset = reports[0].dataset if reports else ""
    if dataset:
        lines.append(f"dataset: {dataset}  (n={reports[0].n_problems})")
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)))
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines) + "\n"


def reports_from_json(document: str) -> list[RunReport]:
    return [RunReport.from_dict(obj) for obj in json.loads(document)]


def export_probe_logits(
    model: ProbeModel,
    records: Sequence[ActivationRecord],
    out_path: str | Path,
) -> None:
    """CSV of per-problem probe outputs for external distribution plots.

    Columns: problem_id, difficulty (empty when unlabeled), pre-sigmoid
    logit, and P(hard).
    """
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["problem_id", "difficulty", "logit", "p_hard"])
        for rec in records:
            logit = predict_logit(model, rec.activations)
            p = predict_p_hard(model, rec.activations)
            writer.writerow([
                rec.problem_id,
                "" if rec.difficulty is None else rec.difficulty,
                repr(logit),
                repr(p),
            ])
