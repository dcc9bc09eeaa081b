# This file is part of ts_triadlab.
#
# Developed for the Vera Rubin Observatory Telescope and Site Systems.
# This product includes software developed by the LSST Project
# (https://www.lsst.org).
# See the COPYRIGHT file at the top-level directory of this distribution
# for details of code ownership.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program. If not, see <https://www.gnu.org/licenses/>.

__all__ = ["TriadLab", "run_triadlab"]

import argparse
import asyncio
import json
import logging
import pathlib
import sys
import typing

import numpy as np
import yaml

from .enums import ApproximatorFamily, ErrorCode, Verdict, Weighting
from .mdp import Policy, make_baird, make_tvr
from .runner import (
    ExperimentConfig,
    SweepGrid,
    default_output_dir,
    default_parallelism,
    run_experiment,
    run_sweep_async,
    run_tvr,
    summarize_sweep,
)
from .spectral import build_operator, classify_stability, counterexample_catalogue
from .svg import line_chart, plot_summary
from .utils import dumps_json

"""Exit code of the ``tvr`` command for each verdict."""
VERDICT_CODES = {
    Verdict.CONVERGENT: ErrorCode.SUCCESS,
    Verdict.DIVERGENT: ErrorCode.DIVERGENT,
    Verdict.MARGINAL: ErrorCode.MARGINAL,
}


class UsageError(Exception):
    """Invalid command line."""


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> typing.NoReturn:
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _read_config(path: str | pathlib.Path) -> dict[str, typing.Any]:
    """Read a JSON (or YAML) configuration file holding a mapping."""
    with open(path) as f:
        config = yaml.safe_load(f)
    if not isinstance(config, dict):
        raise ValueError(f"{path} does not hold a mapping")
    return config


class TriadLab:
    """The ``run_triadlab`` command.

    Each subcommand is implemented by a ``do_<name>`` coroutine returning
    an `ErrorCode`.

    Parameters
    ----------
    log : `logging.Logger`, optional
        Logger. If None a new one is created.
    """

    def __init__(self, log: logging.Logger | None = None) -> None:
        self.log = log or logging.getLogger(type(self).__name__)

    @classmethod
    def make_parser(cls) -> argparse.ArgumentParser:
        parser = _ArgumentParser(
            prog="run_triadlab",
            description="Study divergence of TD learning with function "
            "approximation, bootstrapping and off-policy replay.",
        )
        parser.add_argument(
            "--log-level",
            default="INFO",
            choices=["DEBUG", "INFO", "WARNING", "ERROR"],
            help="logging level; default INFO",
        )
        subparsers = parser.add_subparsers(dest="command", required=True)

        tvr = subparsers.add_parser(
            "tvr", help="expected updates on the two-state example"
        )
        tvr.add_argument("--gamma", type=float, default=0.99, help="discount")
        tvr.add_argument(
            "--weighting",
            default=Weighting.S1_ONLY.value,
            choices=[weighting.value for weighting in Weighting],
            help="state weighting of the expected update",
        )
        tvr.add_argument(
            "--family",
            default=ApproximatorFamily.LINEAR.value,
            choices=[
                ApproximatorFamily.LINEAR.value,
                ApproximatorFamily.FACTORED_AFFINE.value,
            ],
            help="value function family",
        )
        tvr.add_argument("--step", type=float, default=0.01, help="SGD step size")
        tvr.add_argument("--updates", type=int, default=5000, help="update count")
        tvr.add_argument("--w0", type=float, default=1.0, help="initial w")
        tvr.add_argument("--u0", type=float, default=0.0, help="initial u")
        tvr.add_argument(
            "--sync-period",
            type=int,
            default=None,
            help="target copy period; default bootstraps on current values",
        )
        tvr.add_argument("--output-dir", type=pathlib.Path, default=None)

        spectral = subparsers.add_parser(
            "spectral", help="stability verdicts of expected linear TD"
        )
        spectral.add_argument(
            "--catalogue",
            action="store_true",
            help="classify every built-in counterexample",
        )
        spectral.add_argument("--problem", choices=["tvr", "baird"], default="tvr")
        spectral.add_argument(
            "--weighting",
            default=Weighting.S1_ONLY.value,
            choices=[weighting.value for weighting in Weighting],
        )
        spectral.add_argument("--gamma", type=float, default=0.99)
        spectral.add_argument("--step", type=float, default=0.01)
        spectral.add_argument(
            "--output", type=pathlib.Path, default=None, help="JSON file"
        )

        run = subparsers.add_parser("run", help="train one configuration")
        run.add_argument("config", type=pathlib.Path, help="experiment JSON file")
        run.add_argument("--output-dir", type=pathlib.Path, default=None)

        sweep = subparsers.add_parser("sweep", help="run a configuration grid")
        sweep.add_argument("config", type=pathlib.Path, help="sweep JSON file")
        sweep.add_argument("--output-dir", type=pathlib.Path, default=None)
        sweep.add_argument("--parallelism", type=int, default=None)

        summarize = subparsers.add_parser(
            "summarize", help="summarize a sweep directory"
        )
        summarize.add_argument("directory", type=pathlib.Path)

        plot = subparsers.add_parser("plot", help="chart a sweep summary")
        plot.add_argument(
            "summary", type=pathlib.Path, help="summary.json or its directory"
        )
        plot.add_argument("--output-dir", type=pathlib.Path, default=None)
        return parser

    @classmethod
    async def amain(cls, argv: typing.Sequence[str] | None = None) -> ErrorCode:
        """Parse the command line and run a subcommand.

        Returns
        -------
        code : `ErrorCode`
            Process exit code.
        """
        try:
            args = cls.make_parser().parse_args(argv)
        except UsageError as e:
            print(f"run_triadlab: error: {e}", file=sys.stderr)
            return ErrorCode.VALIDATION_ERROR
        logging.basicConfig(
            level=args.log_level,
            format="%(asctime)s %(name)s %(levelname)s: %(message)s",
        )
        command = cls()
        method = getattr(command, f"do_{args.command}")
        try:
            return await method(args)
        except (ValueError, OSError, yaml.YAMLError) as e:
            command.log.error(f"{args.command} failed: {e}")
            return ErrorCode.VALIDATION_ERROR
        except Exception:
            command.log.exception(f"{args.command} failed")
            return ErrorCode.RUNTIME_FAILURE

    async def do_tvr(self, args: argparse.Namespace) -> ErrorCode:
        """Write the trace CSV and value plot; exit code tells the verdict."""
        output_dir = args.output_dir or default_output_dir()
        mdp, features = make_tvr(args.gamma)
        operator = build_operator(
            mdp, Policy.uniform(mdp.n_states, mdp.n_actions), args.weighting, features
        )
        report = classify_stability(operator, args.step)
        trace = run_tvr(
            args.gamma,
            args.weighting,
            args.family,
            args.step,
            args.updates,
            w0=args.w0,
            u0=args.u0,
            sync_period=args.sync_period,
            log=self.log,
        )
        output_dir.mkdir(parents=True, exist_ok=True)
        stem = f"tvr-{args.family}-{args.weighting}-gamma{args.gamma}"
        trace.to_csv(output_dir / f"{stem}.csv")
        (output_dir / f"{stem}.svg").write_text(
            line_chart(
                {
                    "|v(s1)|": (trace.update, np.abs(trace.v1)),
                    "|v(s2)|": (trace.update, np.abs(trace.v2)),
                },
                f"{args.family}, {args.weighting} weighting, gamma={args.gamma}",
                "update",
                "|v|",
                log_y=True,
            )
        )
        self.log.info(
            f"Linear expected update is {report.verdict.value}: {report.diagnostic}; "
            f"final v = ({trace.v1[-1]:.6g}, {trace.v2[-1]:.6g}); "
            f"wrote {output_dir / stem}.csv"
        )
        return VERDICT_CODES[report.verdict]

    async def do_spectral(self, args: argparse.Namespace) -> ErrorCode:
        """Print or write verdicts as JSON."""
        if args.catalogue:
            results = [
                dict(
                    name=entry.name,
                    **classify_stability(
                        build_operator(
                            entry.mdp, entry.policy, entry.weighting, entry.features
                        ),
                        args.step,
                    ).to_dict(),
                )
                for entry in counterexample_catalogue()
            ]
        else:
            make = make_tvr if args.problem == "tvr" else make_baird
            mdp, features = make(args.gamma)
            operator = build_operator(
                mdp,
                Policy.uniform(mdp.n_states, mdp.n_actions),
                args.weighting,
                features,
            )
            results = [
                dict(
                    name=f"{args.problem}-{args.weighting}-gamma{args.gamma}",
                    **classify_stability(operator, args.step).to_dict(),
                )
            ]
        text = dumps_json(results)
        if args.output is None:
            sys.stdout.write(text)
        else:
            args.output.write_text(text)
        return ErrorCode.SUCCESS

    async def do_run(self, args: argparse.Namespace) -> ErrorCode:
        config = ExperimentConfig.from_dict(_read_config(args.config))
        output_dir = args.output_dir or default_output_dir()
        metrics = await asyncio.to_thread(run_experiment, config, log=self.log)
        output_dir.mkdir(parents=True, exist_ok=True)
        path = output_dir / f"{config.run_id}.csv"
        metrics.to_csv(path)
        self.log.info(f"Wrote {path}")
        return ErrorCode.SUCCESS

    async def do_sweep(self, args: argparse.Namespace) -> ErrorCode:
        grid = SweepGrid.from_dict(_read_config(args.config))
        output_dir = args.output_dir or default_output_dir()
        parallelism = args.parallelism or default_parallelism()
        await run_sweep_async(grid, output_dir, parallelism, log=self.log)
        return ErrorCode.SUCCESS

    async def do_summarize(self, args: argparse.Namespace) -> ErrorCode:
        summary = summarize_sweep(args.directory, log=self.log)
        self.log.info(
            f"Summarized {summary['n_runs']} runs into "
            f"{args.directory / 'summary.json'}"
        )
        return ErrorCode.SUCCESS

    async def do_plot(self, args: argparse.Namespace) -> ErrorCode:
        path = args.summary
        if path.is_dir():
            path = path / "summary.json"
        summary = json.loads(path.read_text())
        paths = plot_summary(summary, args.output_dir or path.parent)
        self.log.info(f"Wrote {', '.join(str(path) for path in paths)}")
        return ErrorCode.SUCCESS


def run_triadlab() -> None:
    """Run the ``run_triadlab`` command line."""
    sys.exit(int(asyncio.run(TriadLab.amain())))
