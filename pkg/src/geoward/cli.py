"""
Geoward CLI Commands

One handler per subcommand. Handlers read their inputs from files, write
CSV/JSON outputs plus a ``manifest.json`` into ``--out``, and return the
paths they wrote. ``execute`` maps geoward errors to exit codes:
0 success, 2 invalid input, 3 numerical failure, 4 non-convergence.
"""

import argparse
import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from . import __version__
from .analysis.damage import (
    adversarial_from_factor,
    deletion_sweep,
    functional_distance,
    plan_from_shorthand,
    random_ball_perturbation,
    worst_sign_accuracy,
)
from .analysis.geodesic import (
    RecoveryConfig,
    RecoveryResult,
    compare_recovery,
    reconfigure,
    recover,
    round_robin_batch,
)
from .analysis.metric import (
    assemble_metric,
    gaussian_expectation,
    gaussian_upper_bound,
    metric_factor,
    quadratic_form_matfree,
    spectrum,
    spectrum_summary,
)
from .analysis.paths import naive_linear_path, stepwise_deletion_path, trace_path
from .config import config
from .core.exceptions import GeowardError, InvalidInputError, NonConvergenceError
from .core.logging_setup import get_logging_info
from .formats.damage_plan import DamagePlan
from .formats.reports import RunManifest, json_schemas
from .model.dataset import Dataset, fingerprint, load_csv, load_idx, subsample, synth_gaussians
from .model.network import NetworkSpec
from .model.training import TrainConfig, evaluate, train
from .tools.checkpoint import load_checkpoint, save_checkpoint
from .tools.exporters import (
    write_json,
    write_metric_blob,
    write_perturbation_report,
    write_rows,
    write_spectrum,
    write_sweep,
    write_trace,
    write_training_log,
)
from .utils.cli_progress import status

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
BRANCH_HEADER = [
    "beta", "steps", "total_energy", "path_length", "final_accuracy", "mean_accuracy", "work_epochs", "converged", "winner",
]
GAUSSIAN_HEADER = ["sigma", "convention", "expectation", "upper_bound"]

console = Console(stderr=True)


# ==================== INPUTS ====================

def _options(text: str) -> Dict[str, str]:
    options = {}
    for part in text.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise InvalidInputError(f"Expected key=value in data spec, got '{part}'")
        key, value = part.split("=", 1)
        options[key.strip()] = value.strip()
    return options


def load_data(text: str) -> Dataset:
    """
    Resolve a ``--data`` value.

    Forms:
        ``idx:IMAGES,LABELS[,pool=2]`` MNIST-format IDX files
        ``synth:classes=3,dim=2,per_class=100,separation=6,seed=0`` Gaussian classes
        ``csv:PATH`` dataset CSV as written by ``export_csv``

    Raises:
        InvalidInputError: For an unknown scheme or bad options
    """
    scheme, _, rest = text.partition(":")
    if scheme == "idx":
        parts = [p.strip() for p in rest.split(",")]
        if len(parts) < 2:
            raise InvalidInputError("idx data needs 'idx:IMAGES,LABELS[,pool=N]'")
        pool = int(_options(",".join(parts[2:])).get("pool", "1"))
        return load_idx(parts[0], parts[1], pool=pool)
    if scheme == "synth":
        options = _options(rest)
        try:
            return synth_gaussians(
                classes=int(options.get("classes", "3")),
                dim=int(options.get("dim", "2")),
                per_class=int(options.get("per_class", "100")),
                separation=float(options.get("separation", "6")),
                seed=int(options.get("seed", "0")),
            )
        except ValueError as e:
            raise InvalidInputError(f"Bad synth option in '{text}': {e}")
    if scheme == "csv":
        return load_csv(rest)
    raise InvalidInputError(f"Unknown data scheme '{scheme}'; use idx:, synth: or csv:")


def _data_files(text: Optional[str]) -> List[str]:
    if not text:
        return []
    scheme, _, rest = text.partition(":")
    if scheme == "idx":
        return [p.strip() for p in rest.split(",")[:2]]
    if scheme == "csv":
        return [rest]
    return []


def load_plan(spec: NetworkSpec, text: str) -> DamagePlan:
    """A plan JSON file path, or ``layer:nodes`` shorthand such as ``1:0-7``."""
    if Path(text).suffix == ".json" or Path(text).exists():
        plan = DamagePlan.load(text)
    else:
        plan = plan_from_shorthand(spec, text)
    plan.check_bounds(spec.n_params)
    return plan


def _metric_batch(d: Dataset, size: Optional[int], seed: int) -> Dataset:
    size = size if size is not None else config.metric_batch
    if size >= len(d):
        return d
    return subsample(d, size, seed)


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return f"sha256:{digest.hexdigest()}"


def _input_files(args: argparse.Namespace) -> List[str]:
    files = []
    for attr in ("checkpoint", "plan", "old_plan", "new_plan"):
        value = getattr(args, attr, None)
        if value and Path(value).is_file():
            files.append(value)
            if attr == "checkpoint":
                blob = Path(value).with_suffix(".weights")
                if blob.is_file():
                    files.append(str(blob))
    files.extend(_data_files(getattr(args, "data", None)))
    files.extend(_data_files(getattr(args, "eval_data", None)))
    return files


def write_manifest(args: argparse.Namespace, out: Path, extra: Optional[Dict[str, Any]] = None) -> Path:
    """Record everything needed to re-run this command into ``out``."""
    parameters = {k: v for k, v in vars(args).items() if k not in ("handler", "argv")}
    parameters.update(extra or {})
    manifest = RunManifest(
        command=args.command,
        argv=list(getattr(args, "argv", [])),
        parameters=parameters,
        seeds={k: int(v) for k, v in parameters.items() if "seed" in k and isinstance(v, int)},
        input_hashes={f: _sha256(f) for f in _input_files(args) if Path(f).is_file()},
        settings=config.describe(),
        tool_version=__version__,
        timestamp=datetime.now(timezone.utc),
    )
    return write_json(out / MANIFEST_NAME, manifest)


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _eval_set(args: argparse.Namespace, train_set: Dataset) -> Dataset:
    return load_data(args.eval_data) if getattr(args, "eval_data", None) else train_set


def _recovery_config(args: argparse.Namespace) -> RecoveryConfig:
    sweep = None
    if getattr(args, "beta_sweep", None):
        try:
            sweep = tuple(float(b) for b in args.beta_sweep.split(","))
        except ValueError:
            raise InvalidInputError(f"--beta-sweep must be comma-separated numbers, got '{args.beta_sweep}'")
    return RecoveryConfig(
        beta=args.beta,
        beta_sweep=sweep,
        step_norm_sq_cap=args.cap,
        hyperplane_tol=args.tol,
        max_steps=args.max_steps,
        metric_batch=args.metric_batch,
        min_alignment=args.min_alignment,
        solver=args.solver,
        trace_samples=getattr(args, "trace_samples", None),
    )


def _write_intermediates(out: Path, spec: NetworkSpec, result_trace, every: Optional[int]) -> List[Path]:
    if not every:
        return []
    written = []
    for k, sample in enumerate(result_trace.samples):
        if k % every == 0 or k == len(result_trace) - 1:
            path = out / "intermediates" / f"step_{k:05d}.json"
            save_checkpoint(path, spec, sample.w)
            written.append(path)
    return written


# ==================== COMMANDS ====================

def cmd_train(args: argparse.Namespace) -> List[Path]:
    out = _out_dir(args)
    d = load_data(args.data)
    spec = NetworkSpec.from_arch(args.arch, activation=args.activation, output_mode=args.output_mode)
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed, loss=args.loss
    )
    with status(f"Training {spec.arch()} for {cfg.epochs} epochs..."):
        w, log = train(spec, d, cfg)
    written = [out / "checkpoint.json"]
    save_checkpoint(written[0], spec, w, dataset_fingerprint=fingerprint(d))
    written.append(write_training_log(out / "training_log.csv", log))
    if args.eval_data:
        loss, accuracy = evaluate(spec, w, load_data(args.eval_data))
        logger.info(f"Held-out accuracy {accuracy:.4f} (loss {loss:.4f})")
    written.append(write_manifest(args, out, {"n_params": spec.n_params}))
    return written


def cmd_spectrum(args: argparse.Namespace) -> List[Path]:
    out = _out_dir(args)
    spec, w = load_checkpoint(args.checkpoint)
    batch = _metric_batch(load_data(args.data), args.metric_batch, args.seed)
    with status(f"Assembling {spec.n_params}x{spec.n_params} metric..."):
        gt = assemble_metric(spec, w, batch)
        s = spectrum(gt, args.threshold)
    summary = spectrum_summary(s)
    written = [write_spectrum(out / "spectrum.csv", s), write_json(out / "spectrum_summary.json", summary)]
    if args.export_metric:
        written.append(write_metric_blob(out / "metric.bin", gt))
    if args.sigma:
        rows = [
            (sigma, config.gaussian_convention, gaussian_expectation(gt, sigma), gaussian_upper_bound(s, sigma))
            for sigma in args.sigma
        ]
        written.append(write_rows(out / "gaussian.csv", GAUSSIAN_HEADER, rows))
    logger.info(f"rho={summary.rho:.4f} lambda_1={summary.lambda_1:.4e} over {len(batch)} examples")
    written.append(write_manifest(args, out, {"batch_ids": [int(i) for i in gt.batch_ids]}))
    return written


def cmd_perturb(args: argparse.Namespace) -> List[Path]:
    out = _out_dir(args)
    spec, w = load_checkpoint(args.checkpoint)
    d = load_data(args.data)
    eval_set = _eval_set(args, d)
    batch = _metric_batch(d, args.metric_batch, args.seed)
    rows = []
    trials = list(range(args.trials))
    if args.mode in ("adversarial", "both") and trials:
        # adversarial row k mixes the top k+1 eigendirections; "both" keeps only v_1
        factor = metric_factor(spec, w, batch)
        for trial in (trials[:1] if args.mode == "both" else trials):
            p = adversarial_from_factor(factor, args.sigma, top_k=trial + 1)
            rows.append(_perturbation_row(spec, w, p, batch, eval_set, trial, "adversarial", args.sigma))
    if args.mode in ("random", "both"):
        for trial in trials:
            p = random_ball_perturbation(spec.n_params, args.sigma, seed=args.seed + trial)
            rows.append(_perturbation_row(spec, w, p, batch, eval_set, trial, "random", args.sigma))
    written = [write_perturbation_report(out / "perturbations.csv", rows)]
    written.append(write_manifest(args, out))
    return written


def _perturbation_row(spec, w, p, batch, eval_set, trial, mode, sigma) -> Tuple:
    accuracy, sign = worst_sign_accuracy(spec, w, p, eval_set)
    return (
        trial,
        mode,
        float(sigma),
        p.norm,
        functional_distance(spec, w, p.du, batch),
        quadratic_form_matfree(spec, w, batch, p.du),
        accuracy,
        sign,
    )


def cmd_damage_path(args: argparse.Namespace) -> List[Path]:
    out = _out_dir(args)
    spec, w = load_checkpoint(args.checkpoint)
    d = load_data(args.data)
    eval_set = _eval_set(args, d)
    plan = load_plan(spec, args.plan)
    batch = _metric_batch(d, args.metric_batch, args.seed)
    if args.mode == "linear":
        path, kind = naive_linear_path(w, plan, args.steps), "naive_linear"
    else:
        path, kind = stepwise_deletion_path(w, plan), "stepwise_deletion"
    with status(f"Tracing {kind} path over {len(path)} points..."):
        trace = trace_path(spec, batch, eval_set, path, kind=kind)
    written = write_trace(out / "trace.csv", trace, plan=plan, seeds={"seed": args.seed})
    plan.save(out / "plan.json")
    written.append(out / "plan.json")
    written.extend(_write_intermediates(out, spec, trace, args.checkpoint_every))
    written.append(write_manifest(args, out, {"plan_indices": len(plan), "plan_description": plan.description}))
    return written


def _write_recovery(
    out: Path, args: argparse.Namespace, spec: NetworkSpec, result: RecoveryResult, plan: DamagePlan
) -> List[Path]:
    written = write_trace(out / "geodesic.csv", result.trace, plan=plan)
    winner = next((b for b in result.branches if b.winner), result.summary(winner=True))
    written.append(write_json(out / "recovery_summary.json", winner))
    branches = result.branches or [winner]
    written.append(
        write_rows(
            out / "recovery_branches.csv",
            BRANCH_HEADER,
            (
                (b.beta, b.steps, b.total_energy, b.path_length, b.final_accuracy, b.mean_accuracy, b.work_epochs, b.converged, b.winner)
                for b in branches
            ),
        )
    )
    if result.converged:
        save_checkpoint(out / "recovered.json", spec, result.trace.final.w)
        written.append(out / "recovered.json")
    written.extend(_write_intermediates(out, spec, result.trace, args.checkpoint_every))
    return written


def _run_recovery(args: argparse.Namespace, run: Callable[[], RecoveryResult], out: Path, spec, plan) -> List[Path]:
    try:
        with status("Geodesic recovery running..."):
            result = run()
    except NonConvergenceError as e:
        if isinstance(e.partial, RecoveryResult):
            _write_recovery(out, args, spec, e.partial, plan)
        write_manifest(args, out, {"converged": False})
        raise
    written = _write_recovery(out, args, spec, result, plan)
    return written


def cmd_recover(args: argparse.Namespace) -> List[Path]:
    out = _out_dir(args)
    spec, w = load_checkpoint(args.checkpoint)
    d = load_data(args.data)
    eval_set = _eval_set(args, d)
    plan = load_plan(spec, args.plan)
    plan.save(out / "plan.json")
    cfg = _recovery_config(args)
    written = _run_recovery(args, lambda: recover(spec, w, plan, d, cfg, eval_set=eval_set), out, spec, plan)
    if args.with_naive and not plan.is_empty:
        batch = round_robin_batch(d, 0, cfg.batch_size)
        naive = trace_path(spec, batch, eval_set, naive_linear_path(w, plan, args.naive_steps), kind="naive_linear")
        written.extend(write_trace(out / "naive.csv", naive, plan=plan))
    written.append(write_manifest(args, out, {"plan_indices": len(plan)}))
    return written


def cmd_reconfigure(args: argparse.Namespace) -> List[Path]:
    out = _out_dir(args)
    spec, w = load_checkpoint(args.checkpoint)
    d = load_data(args.data)
    eval_set = _eval_set(args, d)
    old_plan = load_plan(spec, args.old_plan)
    new_plan = load_plan(spec, args.new_plan)
    new_plan.save(out / "plan.json")
    cfg = _recovery_config(args)
    written = _run_recovery(
        args, lambda: reconfigure(spec, w, old_plan, new_plan, d, cfg, eval_set=eval_set), out, spec, new_plan
    )
    written.append(write_manifest(args, out, {"old_plan_indices": len(old_plan), "new_plan_indices": len(new_plan)}))
    return written


def cmd_compare(args: argparse.Namespace) -> List[Path]:
    out = _out_dir(args)
    spec, w = load_checkpoint(args.checkpoint)
    d = load_data(args.data)
    eval_set = _eval_set(args, d)
    plan = load_plan(spec, args.plan)
    cfg = _recovery_config(args)
    ft_cfg = TrainConfig(epochs=1, batch_size=args.ft_batch_size, learning_rate=args.ft_lr, seed=args.ft_seed)
    with status("Comparing geodesic, fine-tune and naive recovery..."):
        comparison = compare_recovery(
            spec, w, plan, d, cfg, ft_cfg, epochs_per_step=args.ft_epochs_per_step,
            eval_set=eval_set, naive_steps=args.naive_steps,
        )
    written = [write_json(out / "comparison_report.json", comparison.report)]
    written.extend(write_trace(out / "geodesic.csv", comparison.geodesic.trace, plan=plan))
    written.extend(write_trace(out / "fine_tune.csv", comparison.fine_tune, plan=plan, seeds={"ft_seed": args.ft_seed}))
    written.extend(write_trace(out / "naive.csv", comparison.naive, plan=plan))
    written.extend(_write_intermediates(out, spec, comparison.geodesic.trace, args.checkpoint_every))
    written.append(write_manifest(args, out, {"plan_indices": len(plan)}))
    return written


def cmd_sweep(args: argparse.Namespace) -> List[Path]:
    out = _out_dir(args)
    spec, w = load_checkpoint(args.checkpoint)
    eval_set = _eval_set(args, load_data(args.data))
    points = deletion_sweep(spec, w, args.layer, eval_set, seed=args.seed)
    written = [write_sweep(out / "sweep.csv", points)]
    written.append(write_manifest(args, out))
    return written


def cmd_schemas(args: argparse.Namespace) -> List[Path]:
    out = _out_dir(args)
    written = []
    for name, schema in json_schemas().items():
        path = out / f"{name}.schema.json"
        path.write_text(json.dumps(schema, indent=2, sort_keys=True), encoding="utf-8")
        written.append(path)
    return written


def cmd_config_check(args: argparse.Namespace) -> List[Path]:
    table = Table(title="geoward configuration")
    table.add_column("setting")
    table.add_column("value")
    for key, value in config.describe().items():
        table.add_row(key, str(value))
    table.add_row("logging", str(get_logging_info()))
    Console().print(table)
    if not config.validate():
        raise InvalidInputError("Configuration has errors")
    return []


def read_manifest(path: str) -> RunManifest:
    manifest_path = Path(path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    if not manifest_path.exists():
        raise InvalidInputError(f"Manifest not found: {manifest_path}")
    try:
        return RunManifest.model_validate(json.loads(manifest_path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError) as e:
        raise InvalidInputError(f"Not a run manifest: {manifest_path} ({e})")


def rerun_argv(manifest: RunManifest, out: Optional[str] = None) -> List[str]:
    """The recorded argv, optionally redirected to another ``--out``."""
    argv = list(manifest.argv)
    if out is not None:
        if "--out" not in argv:
            raise InvalidInputError(f"Recorded '{manifest.command}' command has no --out to redirect")
        argv[argv.index("--out") + 1] = out
    return argv


# ==================== DISPATCH ====================

def execute(args: argparse.Namespace) -> int:
    """Run the selected handler and map failures to exit codes."""
    try:
        written = args.handler(args)
    except GeowardError as e:
        print_error(str(e))
        return e.exit_code
    except ValidationError as e:
        print_error(f"invalid parameters: {e}")
        return InvalidInputError.exit_code
    except OSError as e:
        print_error(str(e))
        return InvalidInputError.exit_code
    for path in written:
        logger.info(f"Wrote {path}")
    return 0


def print_error(message: str) -> None:
    console.print(f"[red]error:[/red] {message}", highlight=False)

