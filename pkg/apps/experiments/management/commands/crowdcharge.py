# apps/experiments/management/commands/crowdcharge.py
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from apps.balancing.strategies import STRATEGY_TAGS
from apps.crowd.state import CrowdError
from apps.experiments.serializers import ConfigError, parse_config
from apps.experiments.services import run_and_emit, suite_specs, sweep_specs

EXIT_CONFIG = 1
EXIT_IO = 2


class Command(BaseCommand):
    help = (
        "Simulate peer-to-peer wireless crowd charging and write per-iteration metrics as CSV. "
        "Runs the selected methods with --reps seeded repetitions, a beta/users sweep, "
        "or the full --paper-suite."
    )

    def add_arguments(self, parser):
        parser.add_argument("--config", help="JSON file of settings; flags override it.")
        parser.add_argument("--method", nargs="+", dest="methods",
                            help=f"Strategies to run, among: {', '.join(STRATEGY_TAGS)}.")
        parser.add_argument("--users", type=int, help="Number of users m.")
        parser.add_argument("--locations", type=int, help="Number of locations n.")
        parser.add_argument("--beta", type=float, help="Transfer loss factor in [0, 1).")
        parser.add_argument("--alpha", type=float, help="Charge rate, energy units per minute.")
        parser.add_argument("--iterations", type=int, help="Iterations T per run.")
        parser.add_argument("--delta-t", type=float, dest="delta_t", help="Iteration length in minutes.")
        parser.add_argument("--reps", type=int, help="Seeded repetitions averaged per method.")
        parser.add_argument("--seed", type=int, help="Base seed (CROWDCHARGE_SEED overrides it).")
        parser.add_argument("--k", type=int, help="Markov predictor order.")
        parser.add_argument("--wl", type=float, dest="w_l", help="Location attachment weight.")
        parser.add_argument("--ws", type=float, dest="w_s", help="Social attachment weight.")
        parser.add_argument("--we", type=float, dest="w_e", help="Energy gap weight.")
        parser.add_argument("--t-min", type=float, dest="t_min", help="Minimum contact, minutes.")
        parser.add_argument("--eps-balance", type=float, dest="eps_balance",
                            help="Distance to the target counted as balanced.")
        parser.add_argument("--social-p", type=float, dest="social_p", help="Friendship probability.")
        parser.add_argument("--social-graph", dest="social_graph", help="Edge list file ('i j' per line).")
        parser.add_argument("--output", help="CSV path (sidecar .config.json is written next to it).")
        parser.add_argument("--trace", help="Also dump the mobility trace of repetition 0 to this CSV.")
        parser.add_argument("--jobs", type=int, help="Worker processes for repetitions.")
        parser.add_argument("--sweep-beta", nargs="+", type=float, dest="sweep_beta",
                            help="One output per loss factor, e.g. 0.2 0.3 0.4.")
        parser.add_argument("--sweep-users", nargs="+", type=int, dest="sweep_users",
                            help="One output per crowd size, e.g. 100 125 150.")
        parser.add_argument("--paper-suite", "--suite", action="store_true", dest="suite",
                            help="Run every comparison and ablation into --output's directory.")
        parser.add_argument("--no-record", action="store_true", dest="no_record",
                            help="Do not store runs in the database.")

    def handle(self, *args, **options):
        flag_names = (
            "methods", "users", "locations", "beta", "alpha", "iterations", "delta_t", "reps", "seed",
            "k", "w_l", "w_s", "w_e", "t_min", "eps_balance", "social_p", "social_graph", "output",
            "trace", "jobs",
        )
        flags = {name: options.get(name) for name in flag_names}
        try:
            spec = parse_config(options.get("config"), flags, record=not options["no_record"])
        except ConfigError as exc:
            raise CommandError(f"Invalid configuration ({exc.field}): {exc.message}", returncode=EXIT_CONFIG)
        except OSError as exc:
            raise CommandError(f"Cannot read configuration: {exc}", returncode=EXIT_IO)

        try:
            specs = self._expand(spec, options)
        except CrowdError as exc:
            raise CommandError(f"Invalid configuration: {exc}", returncode=EXIT_CONFIG)

        self.stdout.write(f"Running {len(specs)} experiment(s), {spec.reps} repetition(s) each...")
        for current in specs:
            try:
                result = run_and_emit(current)
            except OSError as exc:
                raise CommandError(f"Cannot write results: {exc}", returncode=EXIT_IO)
            except (CrowdError, ValueError) as exc:
                raise CommandError(f"Invalid configuration: {exc}", returncode=EXIT_CONFIG)

            self.stdout.write(f"[{result.label}] {result.rows} row(s) -> {result.output}")
            for summary in result.summaries:
                self.stdout.write("  " + summary.line())

        self.stdout.write(self.style.SUCCESS("Done."))

    def _expand(self, spec, options):
        if options["suite"]:
            if options.get("output"):
                out_dir = Path(options["output"]).parent
            else:
                out_dir = Path(settings.CROWDCHARGE["suite_dir"])
            return suite_specs(spec, out_dir)
        if options.get("sweep_beta"):
            return sweep_specs(spec, "beta", options["sweep_beta"])
        if options.get("sweep_users"):
            return sweep_specs(spec, "m", options["sweep_users"])
        return [spec]
