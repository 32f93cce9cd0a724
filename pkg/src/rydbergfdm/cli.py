"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 runtime error. Configuration precedence is
``--seed`` > ``--set`` > experiment profile > ``--config`` file > built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

import numpy as np

from . import seeding
from .codec import Frame, encode_bits, field_from_label
from .config import RunConfig, load_config
from .dataset import (
    Record,
    add_white_noise,
    export_csv,
    generate_dataset,
    read_dataset,
    split,
    write_dataset,
)
from .errors import ConfigError, RydbergFDMError
from .evaluation import (
    bench_inference,
    dl_vs_fit_curve,
    evaluate_network,
    exact_match_accuracy,
    noise_grid,
    write_json,
    write_table,
)
from .experiments import PROFILES, RunManifest, profile_config, run_experiment
from .fitting import fit_many, write_fit_results
from .network.checkpoint import load_checkpoint, save_checkpoint
from .network.model import gradient_check
from .network.training import cross_validate, fit_model
from .physics import Spectrum, probe_spectrum, simulate_spectrum
from .version import __version__

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

_COMMON = {"command", "config", "set", "seed", "jobs", "verbose", "quiet"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _manifest_path(out: str) -> Path:
    out = Path(out)
    return out / "manifest.json" if not out.suffix else out.with_suffix(".manifest.json")


def _sibling(out: str, suffix: str) -> Path:
    out = Path(out)
    return out.with_name(f"{out.stem}{suffix}")


def _dataset_codec(header: dict[str, Any], config: RunConfig):
    spec = header.get("spec")
    if spec is None:
        return config.codec
    return type(config.codec).model_validate(spec["codec"])


# ---------------------------------------------------------------------------
# Commands. Each takes (arguments, config, manifest, jobs) and fills the manifest.


def _cmd_sim(a: dict[str, Any], config: RunConfig, manifest: RunManifest, jobs: int):
    if a["eit"]:
        span = 2.0 * config.atom.gamma_e
        grid = np.linspace(-span, span, 401)
        values = probe_spectrum(config.atom, config.transmission, grid)
        rows = [[f"{d:.9g}", f"{v:.9g}"] for d, v in zip(grid, values)]
        manifest.add_output(write_table(a["out"], ["delta_p", "transmission"], rows, manifest.run_id))
        return
    if not a["bits"]:
        raise ConfigError("sim needs --bits (or --eit)")
    label = encode_bits(Frame.parse(a["bits"]), config.codec)
    drive = field_from_label(label, config.codec)
    spectrum = simulate_spectrum(
        drive, config.atom, config.transmission, config.sampling.n, config.sampling.dt, label=label
    )
    spectrum = add_white_noise(spectrum, a["sigma"], seeding.stream(config.seed, "sim"))
    rows = [[f"{t:.9g}", f"{v:.9g}"] for t, v in zip(spectrum.times, spectrum.samples)]
    manifest.add_output(write_table(a["out"], ["t", "transmission"], rows, manifest.run_id))
    manifest.summary = {"bits": a["bits"], "samples": len(spectrum)}


def _cmd_gen_data(a, config, manifest, jobs):
    spec = config.dataset_spec()
    records = generate_dataset(spec, jobs=jobs)
    manifest.add_output(write_dataset(records, a["out"], spec, manifest.run_id))
    if a["csv"]:
        manifest.add_output(export_csv(records, a["csv"], manifest.run_id))
    manifest.summary = {"records": len(records)}


def _cmd_train(a, config, manifest, jobs):
    records = read_dataset(a["data"]).records
    folds = split(records, config.split, config.seed)
    manifest.add_output(write_dataset(folds.test, _sibling(a["out"], "_test.ryds"), run_id=manifest.run_id))
    if a["fold"] is None:
        cv = cross_validate(folds, config.train, config.network, jobs=jobs)
        models, best = cv.models, cv.best
    else:
        train, val = folds.train_val(a["fold"])
        best = fit_model(train, val, config.train, config.network, fold=a["fold"])
        models = [best]
    for model in models:
        manifest.add_output(model.curves.to_csv(_sibling(a["out"], f"_loss_fold{model.fold}.csv"), manifest.run_id))
    manifest.add_output(save_checkpoint(best.network, a["out"], config.seed, manifest.run_id, config.train))
    manifest.summary = {"best_fold": best.fold, "val_mse": best.best_val_mse}


def _cmd_eval(a, config, manifest, jobs):
    network = load_checkpoint(a["model"]).network
    data = read_dataset(a["data"])
    codec = _dataset_codec(data.header, config)
    accuracy, matrix = evaluate_network(network, data.records, codec.threshold, codec.class_bits)
    manifest.add_output(matrix.to_csv(_sibling(a["out"], "_confusion.csv"), manifest.run_id))
    summary: dict[str, Any] = {"accuracy": accuracy, "records": len(data.records)}
    if a["gradcheck"]:
        probe = data.records[: max(2, min(4, len(data.records)))]
        x = np.stack([r.spectrum.samples for r in probe])
        y = np.stack([r.label.bits for r in probe]).astype(np.float64)
        summary["gradcheck"] = gradient_check(
            network, x, y, max_entries=4, rng=seeding.stream(config.seed, "gradcheck")
        )
    manifest.add_output(write_json(a["out"], summary, manifest.run_id))
    manifest.summary = summary


def _cmd_fit_baseline(a, config, manifest, jobs):
    data = read_dataset(a["data"])
    codec = _dataset_codec(data.header, config)
    limit = a["limit"] if a["limit"] is not None else config.eval.fit_spectra
    records: list[Record] = data.records[:limit]
    fit_cfg = config.fit.model_copy(update={"tabulated": a["tabulated"] or config.fit.tabulated})
    fits = fit_many(
        [r.spectrum for r in records],
        codec,
        config.atom,
        config.transmission,
        fit_cfg,
        restarts=a["restarts"],
        jobs=jobs,
    )
    truths = [r.label.frame for r in records]
    manifest.add_output(write_fit_results(fits, truths, a["out"], manifest.run_id))
    manifest.summary = {
        "spectra": len(records),
        "accuracy": exact_match_accuracy([f.result.bits for f in fits], truths) if records else None,
    }


def _cmd_sweep_noise(a, config, manifest, jobs):
    out = Path(a["out"])
    if a["kind"] == "grid":
        train_sigmas = a["train_sigmas"] or config.eval.sigmas
        test_sigmas = a["test_sigmas"] or config.eval.sigmas
        grid = noise_grid(train_sigmas, test_sigmas, config, jobs=jobs)
        manifest.add_output(grid.to_csv(out / "noise_grid.csv", manifest.run_id))
        manifest.summary = {"accuracy": grid.accuracy.tolist()}
    else:
        if not a["model"]:
            raise ConfigError("sweep-noise --kind dl-vs-fit needs --model")
        network = load_checkpoint(a["model"]).network
        curve = dl_vs_fit_curve(a["test_sigmas"] or config.eval.sigmas, network, config, jobs=jobs)
        manifest.add_output(curve.to_csv(out / "dl_vs_fit.csv", manifest.run_id))
        manifest.summary = {"points": len(curve.points)}


def _cmd_bench(a, config, manifest, jobs):
    network = load_checkpoint(a["model"]).network
    if a["data"]:
        spectra: list[Spectrum] = [r.spectrum for r in read_dataset(a["data"]).records]
    else:
        spec = config.dataset_spec().model_copy(update={"n_samples_per_class": 1})
        spectra = [r.spectrum for r in generate_dataset(spec)]
    count = config.eval.bench_spectra
    spectra = [spectra[i % len(spectra)] for i in range(max(count, 20))]
    report = bench_inference(network, spectra, config)
    manifest.add_output(report.to_json(a["out"], manifest.run_id))
    manifest.summary = {"dl_median_ms": report.dl_median_ms, "fit_median_ms": report.fit_median_ms, "ratio": report.ratio}


def _cmd_experiment(a, config, manifest, jobs):
    manifest.summary = run_experiment(a["profile"], config, a["out"], manifest, jobs=jobs)


COMMANDS: dict[str, Callable[[dict[str, Any], RunConfig, RunManifest, int], None]] = {
    "sim": _cmd_sim,
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "fit-baseline": _cmd_fit_baseline,
    "sweep-noise": _cmd_sweep_noise,
    "bench": _cmd_bench,
    "experiment": _cmd_experiment,
}


def execute(command: str, arguments: dict[str, Any], config: RunConfig, jobs: int = 1) -> RunManifest:
    """Run one command and write its manifest next to its outputs."""
    manifest = RunManifest.start(command, arguments, config)
    logger.info("Run %s: %s", manifest.run_id, command)
    COMMANDS[command](arguments, config, manifest, jobs)
    manifest.write(_manifest_path(arguments["out"]))
    return manifest


# ---------------------------------------------------------------------------
# Parsing


def _sigma_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: '{text}'") from exc


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key-value config file (.cfg)")
    common.add_argument(
        "--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value"
    )
    common.add_argument("--seed", type=int, help="seed for every random stream")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--quiet", action="store_true")

    parser = _Parser(prog="rydbergfdm", description="Rydberg-atom FDM receiver laboratory")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("sim", parents=[common], help="simulate one probe-transmission spectrum")
    p.add_argument("--bits", help="message bits, e.g. 101")
    p.add_argument("--sigma", type=float, default=0.0, help="white noise added to the spectrum")
    p.add_argument("--eit", action="store_true", help="write transmission against probe detuning instead")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a labelled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="also export as CSV")

    p = sub.add_parser("train", parents=[common], help="train the decoder with cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint manifest path (.json)")
    p.add_argument("--fold", type=int, help="train a single fold instead of all")

    p = sub.add_parser("eval", parents=[common], help="accuracy and confusion of a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="JSON summary path")
    p.add_argument("--gradcheck", action="store_true", help="also compare gradients to finite differences")

    p = sub.add_parser("fit-baseline", parents=[common], help="decode by master-equation fitting")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--limit", type=int, help="fit only the first N spectra")
    p.add_argument("--restarts", action="store_true", help="best of all-0 and all-pi starts")
    p.add_argument("--tabulated", action="store_true", help="evaluate through a tabulated curve")

    p = sub.add_parser("sweep-noise", parents=[common], help="accuracy against noise")
    p.add_argument("--kind", choices=("grid", "dl-vs-fit"), default="grid")
    p.add_argument("--model", help="checkpoint for dl-vs-fit")
    p.add_argument("--train-sigmas", type=_sigma_list)
    p.add_argument("--test-sigmas", type=_sigma_list)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("bench", parents=[common], help="inference timing: network against fit")
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    p.add_argument("--out", required=True, help="JSON report path")

    p = sub.add_parser("experiment", parents=[common], help="run a named end-to-end profile")
    p.add_argument("profile", nargs="?", choices=sorted(PROFILES))
    p.add_argument("--manifest", help="repeat the run recorded in a manifest")
    p.add_argument("--out", help="output directory")
    return parser


def _resolve_config(args: argparse.Namespace, profile: str | None = None) -> RunConfig:
    config = load_config(args.config)
    if profile is not None:
        config = profile_config(profile, config)
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got '{item}'")
        overrides[key.strip()] = value
    if overrides:
        config = config.apply_overrides(overrides)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _configure_logging(verbose: int, quiet: bool):
    level = logging.ERROR if quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(verbose, 2)]
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _dispatch(args: argparse.Namespace) -> RunManifest:
    arguments = {k: v for k, v in vars(args).items() if k not in _COMMON}
    if args.command == "experiment" and arguments.get("manifest"):
        previous = RunManifest.read(arguments["manifest"])
        rerun_args = dict(previous.arguments)
        if arguments.get("out"):
            rerun_args["out"] = arguments["out"]
        return execute(previous.command, rerun_args, previous.run_config(), args.jobs)
    if args.command == "experiment":
        if not arguments.get("profile") or not arguments.get("out"):
            raise UsageError("experiment needs a profile and --out (or --manifest)")
        arguments.pop("manifest")
        return execute("experiment", arguments, _resolve_config(args, arguments["profile"]), args.jobs)
    return execute(args.command, arguments, _resolve_config(args), args.jobs)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"rydbergfdm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    _configure_logging(args.verbose, args.quiet)
    try:
        manifest = _dispatch(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rydbergfdm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RydbergFDMError, OSError, ValueError) as exc:
        logger.debug("Run failed", exc_info=True)
        print(f"rydbergfdm: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"run_id": manifest.run_id, **manifest.summary}, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
