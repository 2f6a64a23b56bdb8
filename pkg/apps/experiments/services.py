# apps/experiments/services.py
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd
from django.db import DatabaseError, transaction

from apps.balancing.strategies import BENCHMARK_METHODS
from apps.crowd.mobility import dump_trace
from apps.experiments.engine import RunConfig, run_experiment, simulate
from apps.experiments.metrics import CSV_COLUMNS, MetricsTrace
from apps.experiments.models import ExperimentRun, IterationMetric
from apps.experiments.serializers import ExperimentSpec, RunPlan

logger = logging.getLogger(__name__)

BALANCED_SHARE = 0.70


@dataclass
class MethodSummary:
    method: str
    # None when the trace has no iterations.
    final_total_energy: Optional[float]
    final_variation_distance: Optional[float]
    # First iteration with at least BALANCED_SHARE of the crowd balanced.
    balanced_at: Optional[int]
    prediction_accuracy: Optional[float] = None

    def line(self) -> str:
        reached = f"iteration {self.balanced_at}" if self.balanced_at is not None else "never"
        if self.final_total_energy is None:
            return f"{self.method:<11} no iterations"
        return (
            f"{self.method:<11} final energy {self.final_total_energy:10.3f} | "
            f"variation {self.final_variation_distance:.4f} | "
            f">={BALANCED_SHARE:.0%} balanced: {reached}"
        )


@dataclass
class EmitResult:
    label: str
    output: Path
    sidecar: Path
    rows: int
    summaries: List[MethodSummary]


def summarize(trace: MetricsTrace, users: int, prediction_accuracy: Optional[float] = None) -> MethodSummary:
    last = trace.records[-1] if trace.records else None
    balanced_at = None
    if users:
        for record in trace.records:
            if record.balanced_count / users >= BALANCED_SHARE:
                balanced_at = int(record.iteration)
                break
    return MethodSummary(
        method=trace.method,
        final_total_energy=last.total_energy if last else None,
        final_variation_distance=last.variation_distance if last else None,
        balanced_at=balanced_at,
        prediction_accuracy=prediction_accuracy,
    )


def sidecar_path(output: Path) -> Path:
    return output.with_name(f"{output.stem}.config.json")


def write_csv(traces: Sequence[MetricsTrace], output: Path) -> int:
    """One row per (method, iteration), header once, '.' decimals, '\\n' line ends."""
    frames = [t.to_frame() for t in traces]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=CSV_COLUMNS)
    output.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(output, index=False, lineterminator="\n", encoding="utf-8", columns=CSV_COLUMNS)
    return len(frame)


def _record_run(spec: ExperimentSpec, plan: RunPlan, trace: MetricsTrace, summary: MethodSummary):
    """Store the aggregated trace; a failed write never breaks the run."""
    try:
        with transaction.atomic():
            run = ExperimentRun.objects.create(
                label=spec.label,
                method=plan.method,
                reps=spec.reps,
                seed=plan.params.seed,
                params=spec.resolved,
                output_path=str(spec.output),
                final_total_energy=summary.final_total_energy,
                final_variation_distance=summary.final_variation_distance,
                final_balanced_count=trace.records[-1].balanced_count if trace.records else None,
                prediction_accuracy=summary.prediction_accuracy,
            )
            IterationMetric.objects.bulk_create([
                IterationMetric(
                    run=run,
                    iteration=int(r.iteration),
                    total_energy=r.total_energy,
                    variation_distance=r.variation_distance,
                    meetings=r.meetings,
                    balanced_count=r.balanced_count,
                    exec_time_us=r.exec_time_us,
                )
                for r in trace.records
            ])
    except DatabaseError as exc:
        logger.warning("Could not record %s/%s: %s", spec.label, plan.method, exc)


def run_and_emit(spec: ExperimentSpec) -> EmitResult:
    """Run every plan, write the CSV and its config sidecar."""
    traces, summaries = [], []
    for plan in spec.plans:
        config = RunConfig(params=plan.params, strategy=plan.method, social_graph_path=spec.social_graph)
        logger.info("%s: running %s x%d (m=%d, beta=%.2f)",
                    spec.label, plan.method, spec.reps, plan.params.m, plan.params.beta)
        outcome = run_experiment(config, spec.reps, jobs=spec.jobs)
        outcome.trace.method = plan.method
        summary = summarize(outcome.trace, plan.params.m, outcome.prediction_accuracy)
        traces.append(outcome.trace)
        summaries.append(summary)
        if spec.record:
            _record_run(spec, plan, outcome.trace, summary)

    rows = write_csv(traces, spec.output)
    sidecar = sidecar_path(spec.output)
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(spec.resolved, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")

    if spec.trace:
        first = spec.plans[0]
        result = simulate(RunConfig(params=first.params, strategy=first.method,
                                    social_graph_path=spec.social_graph))
        dump_trace(spec.trace, result.histories)

    return EmitResult(spec.label, spec.output, sidecar, rows, summaries)


def sweep_specs(spec: ExperimentSpec, name: str, values: Sequence) -> List[ExperimentSpec]:
    """One spec per value of `name` ("beta" or "m"), each with its own CSV next to spec.output."""
    short = {"beta": "b", "m": "m"}[name]
    out = []
    for value in values:
        label = f"{spec.output.stem}_{short}{value}"
        output = spec.output.with_name(f"{label}{spec.output.suffix or '.csv'}")
        out.append(spec.with_overrides(label, output, **{name: value}))
    return out


def suite_specs(spec: ExperimentSpec, out_dir: Path) -> List[ExperimentSpec]:
    """The five benchmark comparisons plus the two social ablations."""
    out_dir = Path(out_dir)
    specs = []
    for beta, m in ((0.2, 100), (0.2, 125), (0.2, 150), (0.3, 100), (0.4, 100)):
        label = f"comparison_b{beta}_m{m}"
        specs.append(spec.with_overrides(label, out_dir / f"{label}.csv",
                                         methods=list(BENCHMARK_METHODS), beta=beta, m=m))
    specs.append(spec.with_overrides(
        "ablation_social_context", out_dir / "ablation_social_context.csv",
        methods=["mosaba-mob", "mosaba-sc"], beta=0.2, m=100, w_l=0.5, w_s=0.0, w_e=0.5,
    ))
    specs.append(spec.with_overrides(
        "ablation_social_relations", out_dir / "ablation_social_relations.csv",
        methods=["mosaba-sc", "mosaba"], beta=0.2, m=100,
    ))
    return specs


def paper_suite(spec: ExperimentSpec, out_dir: Path) -> List[EmitResult]:
    """Every comparison and ablation of the suite, run one after the other."""
    return [run_and_emit(s) for s in suite_specs(spec, out_dir)]
