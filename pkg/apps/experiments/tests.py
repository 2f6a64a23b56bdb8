import json
import os
import tempfile
from dataclasses import replace
from io import StringIO
from pathlib import Path
from unittest import mock

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.db import DatabaseError
from django.test import SimpleTestCase, TestCase, tag

from apps.balancing.strategies import BENCHMARK_METHODS, STRATEGY_TAGS
from apps.common.rng import RunStreams, effective_seed
from apps.crowd.state import CrowdState, DimensionError, SimParams
from apps.experiments.engine import RunConfig, init_crowd, run_experiment, run_simulation, simulate
from apps.experiments.metrics import (
    CSV_COLUMNS,
    IterationRecord,
    MetricsTrace,
    aggregate,
    crowd_variation,
)
from apps.experiments.models import ExperimentRun, IterationMetric
from apps.experiments.serializers import SEED_ENV, ConfigError, parse_config
from apps.experiments.services import (
    EmitResult,
    paper_suite,
    run_and_emit,
    sidecar_path,
    suite_specs,
    summarize,
    sweep_specs,
)

SMALL = SimParams(m=16, n=3, iterations=6, seed=5)
SMALL_FLAGS = {"users": 12, "locations": 3, "iterations": 4, "reps": 2}


class CleanEnvMixin:
    def setUp(self):
        super().setUp()
        patcher = mock.patch.dict(os.environ)
        patcher.start()
        self.addCleanup(patcher.stop)
        os.environ.pop(SEED_ENV, None)
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = Path(tmp.name)


class SeedTests(SimpleTestCase):
    def test_effective_seed(self):
        self.assertEqual(effective_seed(42, 0), 42)
        self.assertEqual(effective_seed(42, 3), 45)

    def test_streams_are_independent_and_reproducible(self):
        a, b = RunStreams.from_seed(7), RunStreams.from_seed(7)
        self.assertEqual(a.init.random(), b.init.random())
        self.assertEqual(a.graph_seed(), b.graph_seed())
        c = RunStreams.from_seed(7)
        self.assertNotEqual(c.init.random(), c.movement.random())


class MetricsTests(SimpleTestCase):
    def _trace(self, energies):
        return MetricsTrace(
            method="mosaba",
            records=[IterationRecord(i + 1, e, 0.1 * e, 2, i, 10.0) for i, e in enumerate(energies)],
        )

    def test_crowd_variation(self):
        self.assertEqual(crowd_variation(CrowdState.build([30.0, 30.0], [0, 0])), 0.0)
        self.assertEqual(crowd_variation(CrowdState.build([0.0, 0.0], [0, 0])), 0.0)
        self.assertAlmostEqual(crowd_variation(CrowdState.build([100.0, 0.0], [0, 0])), 1.0)

    def test_aggregate_means(self):
        mean = aggregate([self._trace([10.0, 20.0]), self._trace([30.0, 40.0])])
        self.assertEqual(mean.rep_count, 2)
        np.testing.assert_allclose(mean.column("total_energy"), [20.0, 30.0])
        np.testing.assert_allclose(mean.column("iteration"), [1.0, 2.0])

    def test_aggregate_rejects_ragged(self):
        with self.assertRaises(DimensionError):
            aggregate([self._trace([1.0]), self._trace([1.0, 2.0])])
        with self.assertRaises(DimensionError):
            aggregate([])

    def test_frame_layout(self):
        frame = self._trace([10.0, 20.0]).to_frame()
        self.assertEqual(list(frame.columns), CSV_COLUMNS)
        self.assertEqual(frame["iteration"].tolist(), [1, 2])

    def test_summarize(self):
        trace = MetricsTrace(records=[
            IterationRecord(1, 90.0, 0.4, 3, 2, 5.0),
            IterationRecord(2, 85.0, 0.2, 3, 8, 5.0),
            IterationRecord(3, 84.0, 0.1, 1, 9, 5.0),
        ])
        summary = summarize(trace, users=10)
        self.assertEqual(summary.balanced_at, 2)
        self.assertEqual(summary.final_total_energy, 84.0)
        self.assertIn("iteration 2", summary.line())

    def test_summarize_empty_trace(self):
        summary = summarize(MetricsTrace(method="pgo"), users=10)
        self.assertIsNone(summary.final_total_energy)
        self.assertIsNone(summary.final_variation_distance)
        self.assertIsNone(summary.balanced_at)
        self.assertIn("no iterations", summary.line())


class EngineTests(SimpleTestCase):
    def test_runs_are_deterministic(self):
        config = RunConfig(params=SMALL, strategy="mosaba")
        first, second = simulate(config), simulate(config)
        np.testing.assert_array_equal(first.trace.column("total_energy"), second.trace.column("total_energy"))
        self.assertEqual(first.pairings, second.pairings)

    def test_movement_does_not_depend_on_strategy(self):
        runs = [simulate(RunConfig(params=SMALL, strategy=t)) for t in ("mosaba", "pgo")]
        self.assertEqual(
            [h.locations for h in runs[0].histories],
            [h.locations for h in runs[1].histories],
        )

    def test_energy_lost_equals_beta_times_transmitted(self):
        for strategy in STRATEGY_TAGS:
            config = RunConfig(params=SMALL, strategy=strategy)
            crowd, _, _ = init_crowd(RunStreams.from_seed(config.seed), SMALL)
            previous = crowd.energies.sum()
            for record in run_simulation(config).records:
                self.assertAlmostEqual(previous - record.total_energy, SMALL.beta * record.transmitted, delta=1e-9)
                previous = record.total_energy

    def test_monotone_energy_and_balance(self):
        trace = run_simulation(RunConfig(params=SMALL, strategy="mosaba"))
        energy = trace.column("total_energy")
        balanced = trace.column("balanced_count")
        self.assertTrue(np.all(np.diff(energy) <= 1e-9))
        self.assertTrue(np.all(np.diff(balanced) >= 0))
        self.assertEqual(len(trace), SMALL.iterations)

    def test_lossless_transfers_keep_energy(self):
        params = SimParams(m=16, n=2, iterations=4, beta=0.0, seed=1)
        trace = simulate(RunConfig(params=params, strategy="mosaba"))
        crowd, _, _ = init_crowd(RunStreams.from_seed(params.seed), params)
        np.testing.assert_allclose(trace.trace.column("total_energy"), crowd.energies.sum())

    def test_prediction_accuracy_only_for_mobility_aware(self):
        aware = simulate(RunConfig(params=SMALL, strategy="mosaba"))
        blind = simulate(RunConfig(params=SMALL, strategy="pgo"))
        self.assertTrue(0.0 <= aware.prediction_accuracy <= 1.0)
        self.assertIsNone(blind.prediction_accuracy)

    def test_run_experiment(self):
        result = run_experiment(RunConfig(params=SMALL, strategy="mobiweb"), reps=3)
        self.assertEqual(result.trace.rep_count, 3)
        self.assertEqual(len(result.trace), SMALL.iterations)
        with self.assertRaises(ValueError):
            run_experiment(RunConfig(params=SMALL), reps=0)

    def test_empty_crowd(self):
        params = SimParams(m=0, n=2, iterations=2)
        trace = run_simulation(RunConfig(params=params, strategy="mosaba"))
        self.assertEqual(trace.column("total_energy").tolist(), [0.0, 0.0])

    @tag("slow")
    def test_balancing_narrows_the_distribution(self):
        params = SimParams(m=60, n=3, iterations=15, seed=11)
        for strategy in BENCHMARK_METHODS:
            result = run_experiment(RunConfig(params=params, strategy=strategy), reps=3)
            crowd, _, _ = init_crowd(RunStreams.from_seed(params.seed), params)
            self.assertLess(result.trace.column("variation_distance")[-1], crowd_variation(crowd), msg=strategy)


@tag("slow")
class AcceptanceTrendTests(SimpleTestCase):
    """Seed-averaged trends at the default scale (m=100, beta=0.2, T=30)."""
    REPS = 50
    # MoSaBa, MobiWEB and P_GO end within seed noise of each other.
    REL_TOL = 0.005

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.defaults = SimParams(m=100, n=5, iterations=30, seed=42)
        cls.traces = {
            method: run_experiment(RunConfig(params=cls.defaults, strategy=method), reps=cls.REPS).trace
            for method in BENCHMARK_METHODS + ("mosaba-sc",)
        }

    def _final_energy(self, trace):
        return trace.records[-1].total_energy

    def _balanced_share(self, trace, iteration, users=100):
        return trace.records[iteration - 1].balanced_count / users

    def _at_least(self, higher, lower, msg=None):
        self.assertGreaterEqual(higher, lower * (1.0 - self.REL_TOL), msg=msg)

    def test_total_energy_ordering(self):
        energy = {m: self._final_energy(t) for m, t in self.traces.items()}
        self._at_least(energy["mosaba"], energy["mobiweb"], msg=energy)
        self._at_least(energy["mobiweb"], energy["pgo"], msg=energy)
        self.assertLess(energy["pft"], min(energy["mosaba"], energy["mobiweb"], energy["pgo"]), msg=energy)

    def test_convergence(self):
        self.assertGreaterEqual(self._balanced_share(self.traces["mosaba"], 6), 0.70)
        for method in ("mosaba", "mobiweb"):
            self.assertGreaterEqual(self._balanced_share(self.traces[method], 4), 0.50, msg=method)

    def test_social_relations_keep_more_energy_than_context_only(self):
        self._at_least(self._final_energy(self.traces["mosaba"]), self._final_energy(self.traces["mosaba-sc"]))

    def test_social_context_keeps_more_energy_than_mobility_only(self):
        params = replace(self.defaults, w_l=0.5, w_s=0.0, w_e=0.5)
        context = run_experiment(RunConfig(params=params, strategy="mosaba-sc"), reps=self.REPS).trace
        mobility = run_experiment(RunConfig(params=params, strategy="mosaba-mob"), reps=self.REPS).trace
        self._at_least(self._final_energy(context), self._final_energy(mobility))

    def test_balanced_share_holds_at_larger_crowds(self):
        shares = {100: self._balanced_share(self.traces["mosaba"], 30)}
        for m in (125, 150):
            params = replace(self.defaults, m=m)
            trace = run_experiment(RunConfig(params=params, strategy="mosaba"), reps=self.REPS).trace
            shares[m] = self._balanced_share(trace, 30, users=m)
        self.assertLessEqual(abs(shares[150] - shares[100]), 0.10, msg=shares)

    def test_selection_time_grows_with_crowd_size(self):
        def first_iteration_us(m, seed):
            config = RunConfig(params=SimParams(m=m, n=5, iterations=1, seed=seed), strategy="mosaba")
            return min(simulate(config).trace.records[0].exec_time_us for _ in range(5))

        ratios = [first_iteration_us(150, seed) / first_iteration_us(75, seed) for seed in range(7)]
        ratio = float(np.median(ratios))
        self.assertGreaterEqual(ratio, 1.5, msg=ratios)
        self.assertLessEqual(ratio, 16.0, msg=ratios)


class ConfigTests(CleanEnvMixin, SimpleTestCase):
    def test_defaults(self):
        spec = parse_config()
        self.assertEqual(spec.params.m, 100)
        self.assertEqual(spec.params.beta, 0.2)
        self.assertEqual([p.method for p in spec.plans], list(BENCHMARK_METHODS))
        self.assertEqual(spec.reps, 50)

    def test_file_then_flags_then_env(self):
        path = self.tmp / "cfg.json"
        path.write_text(json.dumps({"users": 7, "seed": 3, "methods": "pgo"}))
        spec = parse_config(path)
        self.assertEqual((spec.params.m, spec.params.seed), (7, 3))
        self.assertEqual([p.method for p in spec.plans], ["pgo"])

        spec = parse_config(path, {"users": 9, "beta": 0.3, "seed": None})
        self.assertEqual((spec.params.m, spec.params.beta, spec.params.seed), (9, 0.3, 3))

        os.environ[SEED_ENV] = "77"
        self.assertEqual(parse_config(path, {"seed": 4}).params.seed, 77)

    def test_repeated_methods_collapse(self):
        spec = parse_config(flags={"methods": ["pgo", "mosaba", "pgo"]})
        self.assertEqual([p.method for p in spec.plans], ["pgo", "mosaba"])

    def test_invalid_values(self):
        cases = [
            ({"beta": 1.0}, "beta"),
            ({"alpha": 0.0}, "alpha"),
            ({"methods": ["nope"]}, "methods"),
            ({"reps": 0}, "reps"),
            ({"w_l": 1.5}, "w_l"),
        ]
        for flags, field_name in cases:
            with self.assertRaises(ConfigError, msg=flags) as ctx:
                parse_config(flags=flags)
            self.assertEqual(ctx.exception.field, field_name)

    def test_bad_files(self):
        unknown = self.tmp / "unknown.json"
        unknown.write_text(json.dumps({"colour": "red"}))
        with self.assertRaises(ConfigError) as ctx:
            parse_config(unknown)
        self.assertEqual(ctx.exception.field, "colour")

        broken = self.tmp / "broken.json"
        broken.write_text("{users: 1")
        with self.assertRaises(ConfigError):
            parse_config(broken)

    def test_sweeps(self):
        spec = parse_config(flags={"output": str(self.tmp / "run.csv")})
        specs = sweep_specs(spec, "beta", [0.2, 0.3])
        self.assertEqual([s.output.name for s in specs], ["run_b0.2.csv", "run_b0.3.csv"])
        self.assertEqual([s.params.beta for s in specs], [0.2, 0.3])
        users = sweep_specs(spec, "m", [125])
        self.assertEqual(users[0].params.m, 125)
        self.assertEqual(users[0].resolved["users"], 125)

    def test_suite_layout(self):
        spec = parse_config()
        specs = suite_specs(spec, self.tmp)
        self.assertEqual(len(specs), 7)
        comparisons = [s for s in specs if s.label.startswith("comparison_")]
        self.assertEqual(
            sorted((s.params.beta, s.params.m) for s in comparisons),
            [(0.2, 100), (0.2, 125), (0.2, 150), (0.3, 100), (0.4, 100)],
        )
        for s in comparisons:
            self.assertEqual([p.method for p in s.plans], list(BENCHMARK_METHODS))
        context = next(s for s in specs if s.label == "ablation_social_context")
        self.assertEqual((context.params.w_l, context.params.w_s, context.params.w_e), (0.5, 0.0, 0.5))
        self.assertEqual([p.method for p in context.plans], ["mosaba-mob", "mosaba-sc"])


class CommandTests(CleanEnvMixin, TestCase):
    def _call(self, *args):
        out = StringIO()
        flags = []
        for name, value in SMALL_FLAGS.items():
            flags += [f"--{name}", str(value)]
        call_command("crowdcharge", *flags, *args, stdout=out)
        return out.getvalue()

    def test_writes_csv_and_sidecar(self):
        output = self.tmp / "out.csv"
        stdout = self._call("--method", "mosaba", "pgo", "--output", str(output), "--no-record")
        frame = pd.read_csv(output)
        self.assertEqual(list(frame.columns), CSV_COLUMNS)
        self.assertEqual(len(frame), 2 * SMALL_FLAGS["iterations"])
        self.assertEqual(list(frame["method"].unique()), ["mosaba", "pgo"])
        self.assertTrue((frame["rep_count"] == 2).all())
        self.assertEqual(frame["iteration"].tolist()[:4], [1, 2, 3, 4])
        self.assertIn("Done.", stdout)

        resolved = json.loads(sidecar_path(output).read_text())
        self.assertEqual(resolved["users"], 12)
        self.assertFalse(ExperimentRun.objects.exists())

    def test_same_seed_same_numbers(self):
        frames = []
        for name in ("a.csv", "b.csv"):
            self._call("--method", "mosaba-sc", "--output", str(self.tmp / name), "--seed", "8", "--no-record")
            frames.append(pd.read_csv(self.tmp / name).drop(columns="exec_time_us"))
        pd.testing.assert_frame_equal(frames[0], frames[1])

    def test_records_runs(self):
        self._call("--method", "mosaba", "pft", "--output", str(self.tmp / "rec.csv"))
        self.assertEqual(ExperimentRun.objects.count(), 2)
        run = ExperimentRun.objects.get(method="pft")
        self.assertEqual(run.iterations.count(), SMALL_FLAGS["iterations"])
        self.assertEqual(run.label, "rec")

    def test_database_failure_does_not_stop_the_run(self):
        spec = parse_config(flags=dict(SMALL_FLAGS, methods=["pgo"], output=str(self.tmp / "db.csv")))
        with mock.patch.object(ExperimentRun.objects, "create", side_effect=DatabaseError("locked")):
            with self.assertLogs("apps.experiments.services", level="WARNING"):
                result = run_and_emit(spec)
        self.assertTrue(result.output.exists())
        self.assertFalse(IterationMetric.objects.exists())

    def test_sweep_writes_one_file_per_value(self):
        output = self.tmp / "sweep.csv"
        self._call("--method", "pgo", "--output", str(output), "--sweep-beta", "0.2", "0.4", "--no-record")
        self.assertTrue((self.tmp / "sweep_b0.2.csv").exists())
        self.assertTrue((self.tmp / "sweep_b0.4.csv").exists())

    def test_trace_dump(self):
        trace = self.tmp / "trace.csv"
        self._call("--method", "mosaba", "--output", str(self.tmp / "t.csv"), "--trace", str(trace), "--no-record")
        frame = pd.read_csv(trace)
        self.assertEqual(len(frame), SMALL_FLAGS["users"] * SMALL_FLAGS["iterations"])

    def test_config_errors_exit_1(self):
        for args in (["--beta", "1.0"], ["--method", "nope"], ["--sweep-beta", "1.5"]):
            with self.assertRaises(CommandError, msg=args) as ctx:
                self._call(*args, "--output", str(self.tmp / "x.csv"), "--no-record")
            self.assertEqual(ctx.exception.returncode, 1)

    def test_io_errors_exit_2(self):
        blocker = self.tmp / "blocker"
        blocker.write_text("")
        with self.assertRaises(CommandError) as ctx:
            self._call("--method", "pgo", "--output", str(blocker / "out.csv"), "--no-record")
        self.assertEqual(ctx.exception.returncode, 2)

        with self.assertRaises(CommandError) as ctx:
            self._call("--config", str(self.tmp / "missing.json"))
        self.assertEqual(ctx.exception.returncode, 2)

    def _fake_emit(self, spec):
        return EmitResult(spec.label, spec.output, sidecar_path(spec.output), 0, [])

    def test_paper_suite_runs_every_group(self):
        target = "apps.experiments.management.commands.crowdcharge.run_and_emit"
        for flag in ("--paper-suite", "--suite"):
            with mock.patch(target, side_effect=self._fake_emit) as emit:
                self._call(flag, "--output", str(self.tmp / "suite" / "run.csv"), "--no-record")
            labels = [c.args[0].label for c in emit.call_args_list]
            self.assertEqual(len(labels), 7, msg=flag)
            self.assertIn("ablation_social_context", labels)
            self.assertTrue(all(c.args[0].output.parent == self.tmp / "suite" for c in emit.call_args_list))

    def test_paper_suite_service(self):
        spec = parse_config(flags=SMALL_FLAGS, record=False)
        with mock.patch("apps.experiments.services.run_and_emit", side_effect=self._fake_emit) as emit:
            results = paper_suite(spec, self.tmp)
        self.assertEqual(emit.call_count, 7)
        self.assertEqual([r.label for r in results], [s.label for s in suite_specs(spec, self.tmp)])

    def test_zero_iterations_writes_header_only(self):
        output = self.tmp / "empty.csv"
        spec = parse_config(flags=dict(SMALL_FLAGS, methods=["mosaba"])).with_overrides("empty", output, iterations=0)
        result = run_and_emit(spec)
        self.assertEqual(result.rows, 0)
        self.assertIsNone(result.summaries[0].final_total_energy)
        self.assertEqual(output.read_text().strip(), ",".join(CSV_COLUMNS))
        run = ExperimentRun.objects.get(label="empty")
        self.assertIsNone(run.final_total_energy)
        self.assertIsNone(run.final_balanced_count)
        self.assertFalse(run.iterations.exists())
