"""
Geoward Main Entry Point

Builds the argument parser and dispatches subcommands to ``cli`` handlers.
"""

import argparse
import sys
from typing import List, Optional

from . import __version__
from . import cli
from .config import config
from .core.exceptions import GeowardError
from .core.logging_setup import setup_logging


def _add_data(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--data",
        required=True,
        help="Dataset: idx:IMAGES,LABELS[,pool=N] | synth:classes=3,dim=2,per_class=100,separation=6,seed=0 | csv:PATH",
    )
    parser.add_argument("--eval-data", help="Held-out dataset for accuracies (same forms as --data)")


def _add_checkpoint(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", required=True, help="Checkpoint manifest written by 'geoward train'")


def _add_out(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", required=True, help="Output directory")


def _add_metric_batch(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--metric-batch", type=int, help="Examples per metric evaluation (default: GEOWARD_METRIC_BATCH)")


def _add_recovery(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--beta", type=float, help="Fixed trade-off weight")
    parser.add_argument("--beta-sweep", help="Comma-separated beta values; default sweep scales with lambda_1")
    parser.add_argument("--cap", type=float, default=0.01, help="Bound on theta^T theta per step (default: 0.01)")
    parser.add_argument("--tol", type=float, default=1e-6, help="Hyperplane tolerance on max |w_i| (default: 1e-6)")
    parser.add_argument("--max-steps", type=int, default=2000, help="Step budget per beta (default: 2000)")
    parser.add_argument("--min-alignment", type=float, default=0.75, help="Required progress per step as a fraction of sqrt(cap)")
    parser.add_argument("--solver", choices=["auto", "dense", "lowrank"], default="auto", help="Metric factorisation")
    parser.add_argument("--checkpoint-every", type=int, help="Also write every k-th intermediate network")
    parser.add_argument("--naive-steps", type=int, default=21, help="Points on the paired naive path")
    parser.add_argument("--trace-samples", type=int, help="Trace at most this many recovery points, evenly spaced in t")
    _add_metric_batch(parser)


def create_parser() -> argparse.ArgumentParser:
    """Create command line argument parser."""
    parser = argparse.ArgumentParser(
        prog="geoward",
        description="Geoward - weight-space geometry of network damage and geodesic recovery",
    )
    parser.add_argument("--version", action="version", version=f"geoward {__version__}")
    parser.add_argument("--threads", type=int, help="Worker threads (default: GEOWARD_THREADS or CPU count)")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR (default: GEOWARD_LOG_LEVEL)")
    parser.add_argument("--gaussian-convention", choices=["variance", "printed"], help="Gaussian perturbation scaling")

    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="Train an MLP and write a checkpoint")
    _add_data(train)
    train.add_argument("--arch", required=True, help="Layer sizes, e.g. 2-16-3")
    train.add_argument("--activation", choices=["tanh", "relu", "linear"], default="tanh")
    train.add_argument("--output-mode", choices=["softmax", "identity"], default="softmax")
    train.add_argument("--epochs", type=int, default=200)
    train.add_argument("--batch-size", type=int, default=32)
    train.add_argument("--lr", type=float, default=0.1)
    train.add_argument("--loss", choices=["cross_entropy", "mse"], default="cross_entropy")
    train.add_argument("--seed", type=int, default=0)
    _add_out(train)
    train.set_defaults(handler=cli.cmd_train)

    spectrum = commands.add_parser("spectrum", help="Metric spectrum, rho and lambda_1")
    _add_checkpoint(spectrum)
    _add_data(spectrum)
    _add_metric_batch(spectrum)
    spectrum.add_argument("--seed", type=int, default=0, help="Seed for the metric batch sample")
    spectrum.add_argument("--threshold", type=float, help="Vulnerable eigenvalue threshold (default: 1e-3)")
    spectrum.add_argument("--sigma", type=float, nargs="*", help="Also report Gaussian expectations at these sigmas")
    spectrum.add_argument("--export-metric", action="store_true", help="Write the upper triangle of g to metric.bin")
    _add_out(spectrum)
    spectrum.set_defaults(handler=cli.cmd_spectrum)

    perturb = commands.add_parser("perturb", help="Random vs adversarial weight perturbations")
    _add_checkpoint(perturb)
    _add_data(perturb)
    _add_metric_batch(perturb)
    perturb.add_argument(
        "--mode",
        choices=["random", "adversarial", "both"],
        default="random",
        help="adversarial row k mixes the top k+1 eigendirections; both = v_1 plus random trials",
    )
    perturb.add_argument("--sigma", type=float, default=1.0)
    perturb.add_argument("--trials", type=int, default=100)
    perturb.add_argument("--seed", type=int, default=0)
    _add_out(perturb)
    perturb.set_defaults(handler=cli.cmd_perturb)

    damage = commands.add_parser("damage-path", help="Trace a naive or stepwise damage path")
    _add_checkpoint(damage)
    _add_data(damage)
    _add_metric_batch(damage)
    damage.add_argument("--plan", required=True, help="Plan JSON file or layer:nodes shorthand, e.g. 1:0-7")
    damage.add_argument("--steps", type=int, default=21)
    damage.add_argument("--mode", choices=["linear", "stepwise"], default="linear")
    damage.add_argument("--seed", type=int, default=0)
    damage.add_argument("--checkpoint-every", type=int, help="Also write every k-th path point as a checkpoint")
    _add_out(damage)
    damage.set_defaults(handler=cli.cmd_damage_path)

    rec = commands.add_parser("recover", help="Geodesic recovery onto a damage hyperplane")
    _add_checkpoint(rec)
    _add_data(rec)
    rec.add_argument("--plan", required=True, help="Plan JSON file or layer:nodes shorthand")
    rec.add_argument("--with-naive", action="store_true", help="Also trace the naive path for comparison")
    _add_recovery(rec)
    _add_out(rec)
    rec.set_defaults(handler=cli.cmd_recover)

    reconf = commands.add_parser("reconfigure", help="Move between two damage configurations")
    _add_checkpoint(reconf)
    _add_data(reconf)
    reconf.add_argument("--old-plan", required=True)
    reconf.add_argument("--new-plan", required=True)
    _add_recovery(reconf)
    _add_out(reconf)
    reconf.set_defaults(handler=cli.cmd_reconfigure)

    compare = commands.add_parser("compare", help="Geodesic vs fine-tune vs naive recovery")
    _add_checkpoint(compare)
    _add_data(compare)
    compare.add_argument("--plan", required=True)
    compare.add_argument("--ft-epochs-per-step", type=int, default=1)
    compare.add_argument("--ft-lr", type=float, default=0.1)
    compare.add_argument("--ft-batch-size", type=int, default=32)
    compare.add_argument("--ft-seed", type=int, default=0)
    _add_recovery(compare)
    _add_out(compare)
    compare.set_defaults(handler=cli.cmd_compare)

    sweep = commands.add_parser("sweep", help="Accuracy versus fraction of deleted hidden units")
    _add_checkpoint(sweep)
    _add_data(sweep)
    sweep.add_argument("--layer", type=int, default=1)
    sweep.add_argument("--seed", type=int, default=0)
    _add_out(sweep)
    sweep.set_defaults(handler=cli.cmd_sweep)

    schemas = commands.add_parser("schemas", help="Write JSON schemas of every JSON output")
    _add_out(schemas)
    schemas.set_defaults(handler=cli.cmd_schemas)

    rerun = commands.add_parser("rerun", help="Re-run a command from its manifest")
    rerun.add_argument("manifest", help="manifest.json or the directory holding it")
    rerun.add_argument("--out", help="Write to another directory instead of the recorded one")

    check = commands.add_parser("config-check", help="Show resolved configuration and exit")
    check.set_defaults(handler=cli.cmd_config_check)

    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run the command, and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    args = create_parser().parse_args(argv)
    args.argv = argv

    try:
        config.apply_overrides(
            threads=args.threads,
            log_level=args.log_level,
            gaussian_convention=args.gaussian_convention,
        )
    except GeowardError as e:
        cli.print_error(str(e))
        return e.exit_code
    setup_logging(config.log_level)

    if args.command == "rerun":
        try:
            manifest = cli.read_manifest(args.manifest)
            recorded = manifest.settings
            config.apply_overrides(
                threads=recorded.get("threads"),
                vulnerable_threshold=recorded.get("vulnerable_threshold"),
                gaussian_convention=recorded.get("gaussian_convention"),
                metric_batch=recorded.get("metric_batch"),
            )
            return run(cli.rerun_argv(manifest, args.out))
        except GeowardError as e:
            cli.print_error(str(e))
            return e.exit_code

    return cli.execute(args)


def main() -> None:
    """Main entry point for geoward."""
    sys.exit(run())


if __name__ == "__main__":
    main()
