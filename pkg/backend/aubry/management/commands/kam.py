"""
Management command running one toolkit experiment from a JSON config.

The validated RunSummary is printed on stdout as JSON; diagnostics go to
the ``aubry`` logger on stderr. The process exit code is 0 when every
criterion passes, 1 on a failed check, 2 on configuration errors and 3
when a solver did not converge.
"""

import json
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import ValidationError

from aubry.artifacts import ArtifactWriter
from aubry.exceptions import EXIT_CONFIGURATION, EXIT_OK, ToolkitError
from aubry.experiments import run_experiment
from aubry.serializers import SUBCOMMANDS, THEOREMS, parse_config

logger = logging.getLogger("aubry")


class Command(BaseCommand):
    help = "Run a weak KAM / Aubry-Mather experiment described by a JSON config"

    def add_arguments(self, parser):
        parser.add_argument("subcommand", choices=SUBCOMMANDS, help="Experiment to run")
        parser.add_argument("config", help="Path to the experiment config (JSON)")
        parser.add_argument(
            "--theorem",
            choices=THEOREMS,
            help="Statement to verify (required with the verify subcommand)",
        )
        parser.add_argument(
            "--output",
            help="Artifact directory (default: config output, else TOOLKIT OUTPUT_DIR/<experiment>)",
        )

    def handle(self, *args, **options):
        subcommand = options["subcommand"]
        if subcommand == "verify" and not options.get("theorem"):
            raise CommandError("verify needs --theorem", returncode=EXIT_CONFIGURATION)

        config = self.load_config(options["config"])
        writer = ArtifactWriter(self.output_dir(config, options.get("output")))

        try:
            summary = run_experiment(subcommand, config, writer, options.get("theorem"))
        except ToolkitError as exc:
            logger.error("%s failed: %s", subcommand, exc)
            raise CommandError(str(exc), returncode=exc.exit_code)

        self.stdout.write(json.dumps(summary, indent=2, sort_keys=True))
        if summary["exit_code"] != EXIT_OK:
            failed = [item["name"] for item in summary["criteria"] if not item["passed"]]
            raise CommandError(
                f"{subcommand} finished with exit code {summary['exit_code']}; failed: {', '.join(failed) or 'none'}",
                returncode=summary["exit_code"],
            )
        self.stderr.write(self.style.SUCCESS(f"{subcommand}: all {len(summary['criteria'])} criteria passed"))

    def load_config(self, path):
        """Read and validate the config; nothing is written when this fails."""
        try:
            document = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CommandError(f"Cannot read config {path}: {exc}", returncode=EXIT_CONFIGURATION)
        try:
            return parse_config(document)
        except ValidationError as exc:
            raise CommandError(f"Invalid config {path}: {json.dumps(exc.detail)}", returncode=EXIT_CONFIGURATION)
        except ToolkitError as exc:
            raise CommandError(f"Invalid config {path}: {exc}", returncode=EXIT_CONFIGURATION)

    def output_dir(self, config, override):
        if override:
            return Path(override)
        if config.get("output"):
            return Path(config["output"])
        return Path(settings.TOOLKIT["OUTPUT_DIR"]) / config["experiment"]
