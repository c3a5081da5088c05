"""Command-line entry point: ``molcnp <command> --config run.yaml --set key=value``.

Every command writes into ``<output_dir>/<command>/<config-hash>/`` a
``manifest.json`` plus its reports and checkpoints.  Exit codes: 0 success,
2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from molcnp import __version__, baselines, chem, cnp, kernels
from molcnp import config as cfgmod
from molcnp import data
from molcnp import experiments as ex
from molcnp.errors import (
    CacheError,
    ConfigError,
    ConstantTruth,
    DataError,
    EmptyContext,
    EmptyTrainingSet,
    InsufficientObservations,
    KTooLarge,
    MissingCheckpoint,
    NonFiniteLoss,
    NonPositiveVariance,
    PoolExhausted,
    SmilesError,
    UnknownFunction,
)

log = logging.getLogger("molcnp")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

TRAIN_LOG_COLUMNS = ("epoch", "split", "metric", "value")
COMMANDS = ("fingerprint", "train", "calibrate", "fewshot", "generalize", "bo", "synth")


# ---------------------------------------------------------------------------
# Shared plumbing


def run_dir(config: dict, command: str) -> Path:
    path = Path(config["output_dir"]) / command / cfgmod.config_hash(config, command)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(directory: Path, command: str, config: dict, outputs: Sequence[str], timestamp: bool = False, extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "config_hash": cfgmod.config_hash(config, command),
        "seed": config.get("seed"),
        "config": config,
        "outputs": sorted(outputs),
        "versions": {
            "molcnp": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "kernel_backend": kernels.BACKEND,
        },
    }
    if timestamp:
        manifest["created"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    manifest.update(extra or {})
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _config_value(build, what: str):
    try:
        return build()
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid {what} settings: {exc}") from None


def model_config(config: dict, nbits: int) -> cnp.CnpConfig:
    m = config["model"]
    return _config_value(
        lambda: cnp.CnpConfig(
            nbits=nbits,
            repr_dim=int(m["repr_dim"]),
            encoder_hidden=tuple(int(h) for h in m["encoder_hidden"]),
            decoder_hidden=tuple(int(h) for h in m["decoder_hidden"]),
            variance_floor=float(m["variance_floor"]),
        ),
        "model",
    )


def train_config(config: dict) -> cnp.TrainConfig:
    t = config["train"]
    return _config_value(
        lambda: cnp.TrainConfig(
            context_range=tuple(int(v) for v in t["context_range"]),
            target_range=tuple(int(v) for v in t["target_range"]),
            lr=float(t["lr"]),
        ),
        "train",
    )


def baseline_settings(config: dict) -> ex.BaselineSettings:
    b = config["baselines"]

    def build():
        rf, net = b["rf"], b["nn"]
        return ex.BaselineSettings(
            knn_k=int(b["knn_k"]),
            knn_metric=str(b["knn_metric"]),
            forest=baselines.ForestConfig(int(rf["n_estimators"]), float(rf["max_features"]), int(rf["min_samples_leaf"])),
            network=baselines.NnConfig(
                hidden=tuple(int(h) for h in net["hidden"]),
                epochs=int(net["epochs"]),
                lr=float(net["lr"]),
                pretrain_epochs=int(net["pretrain_epochs"]),
                finetune_epochs=int(net["finetune_epochs"]),
                finetune_lr_factor=float(net["finetune_lr_factor"]),
            ),
        )

    return _config_value(build, "baselines")


def default_cache_path(config: dict) -> Path:
    d = config["data"]
    if d["fingerprint_cache"]:
        return Path(d["fingerprint_cache"])
    return Path(str(d["path"]) + ".ecfp")


def _data_path(config: dict) -> Path:
    path = config["data"]["path"]
    if not path:
        raise ConfigError("data.path is not set")
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file {path} does not exist")
    return path


def load_table(config: dict) -> data.TaskTable:
    """Task table with fingerprints from, in order: a fingerprint column,
    an existing cache file, or fresh computation from SMILES."""
    d = config["data"]
    path = _data_path(config)
    radius, nbits = int(d["radius"]), int(d["nbits"])
    table = data.load_task_table(path, radius, nbits, compute_fingerprints=False)
    if table.fingerprints is not None:
        if table.nbits != nbits:
            raise ConfigError(f"{path}: fingerprint column has {table.nbits} bits but data.nbits is {nbits}")
        return table
    cache = default_cache_path(config)
    if cache.is_file():
        header, ids, bits = chem.read_fingerprint_cache(cache)
        if (header["radius"], header["nbits"], header["hash"]) != (radius, nbits, chem.HASH_ID):
            raise CacheError(f"{cache}: cache was built with different settings; rerun 'molcnp fingerprint'")
        index = {m: i for i, m in enumerate(ids)}
        missing = [m for m in table.molecule_ids if m not in index]
        if missing:
            raise CacheError(f"{cache}: no fingerprint for molecule {missing[0]!r}; rerun 'molcnp fingerprint'")
        table.fingerprints = bits[[index[m] for m in table.molecule_ids]]
        return table
    log.info("computing fingerprints for %d molecules", table.n_molecules)
    return data.load_task_table(path, radius, nbits)


def _id_list(value, what: str) -> list[str] | None:
    if value is None:
        return None
    if isinstance(value, str):
        path = Path(value)
        if not path.is_file():
            raise DataError(f"{what}: id list file {path} does not exist")
        return data.read_id_list(path)
    if isinstance(value, list):
        return [str(v) for v in value]
    raise ConfigError(f"split.{what} must be a list of ids or a file path")


def resolve_split(config: dict, table: data.TaskTable, seed: int) -> data.SplitSpec:
    s = config["split"]
    if s["dir"]:
        directory = Path(s["dir"])
        if not directory.is_dir():
            raise DataError(f"split directory {directory} does not exist")
        return data.read_split_files(directory).validate(table)
    split_config = data.SplitConfig(
        dtrain=_id_list(s["dtrain"], "dtrain"),
        dtest=_id_list(s["dtest"], "dtest"),
        ftrain=_id_list(s["ftrain"], "ftrain"),
        ftest=_id_list(s["ftest"], "ftest"),
        n_dtrain=int(s["n_dtrain"]),
        n_dtest=int(s["n_dtest"]),
        dtrain_pool=_id_list(s["dtrain_pool"], "dtrain_pool"),
        dtest_pool=_id_list(s["dtest_pool"], "dtest_pool"),
    )
    return data.make_splits(table, split_config, np.random.default_rng([seed, 0]))


def checkpoint_name(epoch: int) -> str:
    return f"epoch_{epoch:06d}.npz"


def find_checkpoint(config: dict, section: str) -> Path:
    explicit = config[section]["checkpoint"]
    if explicit:
        path = Path(explicit)
    else:
        epoch = int(config[section]["checkpoint_epoch"])
        train_dir = Path(config["output_dir"]) / "train" / cfgmod.config_hash(config, "train")
        path = train_dir / "checkpoints" / checkpoint_name(epoch)
    if not path.is_file():
        raise MissingCheckpoint(f"checkpoint {path} not found; run 'molcnp train' with the same config first")
    return path


def load_checkpoint(path: Path, nbits: int) -> cnp.CnpModel:
    try:
        model = cnp.load_model(path)
    except (OSError, ValueError, KeyError) as exc:
        raise MissingCheckpoint(f"cannot read checkpoint {path}: {exc}") from None
    if model.nbits != nbits:
        raise ConfigError(f"checkpoint {path} expects {model.nbits}-bit fingerprints, data has {nbits}")
    return model


def _emit_reports(records, directory: Path) -> list[str]:
    ex.emit_report(records, directory / "report.csv")
    ex.emit_report(records, directory / "report.json")
    return ["report.csv", "report.json"]


# ---------------------------------------------------------------------------
# Commands


def cmd_fingerprint(config: dict, args) -> int:
    d = config["data"]
    path = _data_path(config)
    radius, nbits = int(d["radius"]), int(d["nbits"])
    cache = default_cache_path(config)
    table = data.load_task_table(path, radius, nbits, compute_fingerprints=False)
    if cache.is_file() and not args.force:
        header, ids, _ = chem.read_fingerprint_cache(cache)
        fresh = (header["radius"], header["nbits"], header["hash"]) == (radius, nbits, chem.HASH_ID)
        if fresh and ids == table.molecule_ids and cache.stat().st_mtime >= path.stat().st_mtime:
            log.info("fingerprint cache %s is up to date", cache)
            return EXIT_OK
    bits = np.zeros((table.n_molecules, nbits), dtype=np.uint8)
    for i, smi in enumerate(table.smiles):
        try:
            bits[i] = chem.smiles_fingerprint(smi, radius, nbits).bits
        except SmilesError as exc:
            raise type(exc)(f"molecule {table.molecule_ids[i]!r}: {exc.message}", exc.offset) from None
    cache.parent.mkdir(parents=True, exist_ok=True)
    chem.write_fingerprint_cache(cache, table.molecule_ids, bits, radius, nbits)
    log.info("wrote %d fingerprints to %s", table.n_molecules, cache)
    directory = run_dir(config, "fingerprint")
    write_manifest(directory, "fingerprint", config, [], args.timestamp, {"cache": str(cache)})
    return EXIT_OK


def cmd_synth(config: dict, args) -> int:
    seed = cfgmod.require_seed(config)
    s = config["synth"]
    table = _config_value(
        lambda: data.synthetic_task_family(
            seed=seed,
            n_functions=int(s["n_functions"]),
            n_molecules=int(s["n_molecules"]),
            nbits=int(s["nbits"]),
            noise_sd=float(s["noise_sd"]),
            latent_dim=int(s["latent_dim"]),
            weight_correlation=float(s["weight_correlation"]),
            qed_score_correlation=float(s["qed_score_correlation"]),
        ),
        "synth",
    )
    directory = run_dir(config, "synth")
    out = Path(s["output"]) if s["output"] else directory / "tasks.tsv"
    out.parent.mkdir(parents=True, exist_ok=True)
    data.save_task_table(table, out)
    log.info("wrote %d molecules x %d functions to %s", table.n_molecules, len(table.function_ids), out)
    write_manifest(directory, "synth", config, [] if s["output"] else ["tasks.tsv"], args.timestamp, {"table": str(out)})
    return EXIT_OK


def cmd_train(config: dict, args) -> int:
    seed = cfgmod.require_seed(config)
    table = load_table(config)
    split = resolve_split(config, table, seed)
    mconf, tconf = model_config(config, table.nbits), train_config(config)
    epochs = int(config["train"]["epochs"])
    if epochs < 0:
        raise ConfigError("train.epochs must be non-negative")
    schedule = {int(e) for e in config["train"]["checkpoints"] if 0 < int(e) <= epochs}
    schedule.add(epochs)
    log_every = max(1, int(config["train"]["log_every"]))

    directory = run_dir(config, "train")
    data.write_split_files(split, directory / "splits")
    tasks = ex.training_tasks(table, split.ftrain, split.dtrain)
    model = ex.new_cnp(mconf, tasks, seed)
    outputs = ["splits/dtrain.txt", "splits/dtest.txt", "splits/ftrain.txt", "splits/ftest.txt", "train_log.csv"]
    ckpt_meta = {"seed": seed, "config_hash": cfgmod.config_hash(config, "train")}

    with (directory / "train_log.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAIN_LOG_COLUMNS)

        def on_epoch(epoch: int, m: cnp.CnpModel, loss: float):
            writer.writerow([epoch, "ftrain-dtrain", "loss", repr(loss)])
            if epoch % log_every == 0:
                log.info("epoch %d loss %.6f", epoch, loss)
            if epoch in schedule:
                cnp.save_model(m, directory / "checkpoints" / checkpoint_name(epoch), dict(ckpt_meta, epoch=epoch))
                outputs.append(f"checkpoints/{checkpoint_name(epoch)}")

        if epochs == 0:
            cnp.save_model(model, directory / "checkpoints" / checkpoint_name(0), dict(ckpt_meta, epoch=0))
            outputs.append(f"checkpoints/{checkpoint_name(0)}")
        try:
            cnp.train(model, tasks, epochs, tconf, np.random.default_rng([seed, 2]), [on_epoch])
        finally:
            fh.flush()
    write_manifest(directory, "train", config, outputs, args.timestamp)
    log.info("training outputs in %s", directory)
    return EXIT_OK


def cmd_calibrate(config: dict, args) -> int:
    seed = cfgmod.require_seed(config)
    table = load_table(config)
    split = resolve_split(config, table, seed)
    c = config["calibrate"]
    checkpoints = sorted({int(e) for e in c["checkpoints"]})
    if not checkpoints or checkpoints[0] < 0:
        raise ConfigError("calibrate.checkpoints must be a non-empty list of non-negative epochs")
    log_every = max(1, int(config["train"]["log_every"]))

    def progress(epoch: int, loss: float):
        if epoch % log_every == 0:
            log.info("epoch %d loss %.6f", epoch, loss)

    result = ex.run_calibration(
        table, split, model_config(config, table.nbits), train_config(config), checkpoints, seed, int(c["eval_context"]), progress=progress
    )
    directory = run_dir(config, "calibrate")
    outputs = _emit_reports(result.records, directory)
    cnp.save_model(result.model, directory / "checkpoints" / checkpoint_name(checkpoints[-1]), {"seed": seed, "epoch": checkpoints[-1]})
    outputs.append(f"checkpoints/{checkpoint_name(checkpoints[-1])}")
    if c["svg"]:
        for metric in ("r2", "avg_log_prob"):
            lines = {q: ex.series(result.records, tag=f"calibration:{q}", function_id=ex.ALL_FUNCTIONS, metric=metric) for q in (f"{a}-{b}" for a, b in ex.QUADRANTS)}
            ex.write_svg(lines, directory / f"calibration_{metric}.svg", f"{metric} over training epochs")
            outputs.append(f"calibration_{metric}.svg")
    write_manifest(directory, "calibrate", config, outputs, args.timestamp)
    log.info("calibration outputs in %s", directory)
    return EXIT_OK


def cmd_fewshot(config: dict, args) -> int:
    seed = cfgmod.require_seed(config)
    table = load_table(config)
    split = resolve_split(config, table, seed)
    f = config["fewshot"]
    models = [str(m) for m in f["models"]]
    unknown = [m for m in models if m not in ex.FEWSHOT_MODELS]
    if unknown:
        raise ConfigError(f"unknown few-shot models {unknown}; choose from {list(ex.FEWSHOT_MODELS)}")
    model = load_checkpoint(find_checkpoint(config, "fewshot"), table.nbits) if "cnp" in models else None
    records = ex.run_fewshot(
        table,
        split,
        model,
        [int(m) for m in f["context_sizes"]],
        models,
        int(f["n_repeats"]),
        seed,
        baseline_settings(config),
        f["functions"],
    )
    directory = run_dir(config, "fewshot")
    outputs = _emit_reports(records, directory)
    if f["svg"]:
        lines = {}
        for name in models:
            x, y = ex.series(records, tag="fewshot", function_id=ex.ALL_FUNCTIONS, model=name, metric="r2")
            if len(x):
                lines[name] = (np.log10(x), y)
        if lines:
            ex.write_svg(lines, directory / "fewshot_r2.svg", "test r2 vs log10 observed points")
            outputs.append("fewshot_r2.svg")
    write_manifest(directory, "fewshot", config, outputs, args.timestamp)
    log.info("few-shot outputs in %s", directory)
    return EXIT_OK


def cmd_generalize(config: dict, args) -> int:
    seed = cfgmod.require_seed(config)
    table = load_table(config)
    split = resolve_split(config, table, seed)
    g = config["generalize"]
    result = ex.run_generalization(
        table,
        split,
        model_config(config, table.nbits),
        train_config(config),
        int(g["epochs"]),
        [str(fid) for fid in g["functions"]],
        seed,
        int(g["eval_context"]),
        int(g["n_resamples"]),
    )
    directory = run_dir(config, "generalize")
    outputs = _emit_reports(result.records, directory)
    result.write(directory / "table.tsv")
    result.write(directory / "table.json")
    outputs += ["table.tsv", "table.json"]
    write_manifest(directory, "generalize", config, outputs, args.timestamp)
    for row in result.to_rows():
        log.info("%s", " | ".join(row))
    return EXIT_OK


def cmd_bo(config: dict, args) -> int:
    seed = cfgmod.require_seed(config)
    table = load_table(config)
    b = config["bo"]
    strategies = [str(s) for s in b["strategies"]]
    seeds = [int(s) for s in b["seeds"]]
    acquisitions = [
        _config_value(lambda s=s: ex.AcquisitionConfig(s, float(b["beta"]), int(b["n_init"]), int(b["n_iterations"])), "bo")
        for s in strategies
    ]
    pool = _id_list(b["pool"], "bo.pool") if b["pool"] is not None else None
    model = None
    if any(s != "random" for s in strategies):
        model = load_checkpoint(find_checkpoint(config, "bo"), table.nbits)
    fid = str(b["function"])
    steps = []
    for acq in acquisitions:
        log.info("bo strategy %s over %d seeds", acq.strategy, len(seeds))
        steps += ex.run_bo(table, fid, acq, model, seeds, pool)
    directory = run_dir(config, "bo")
    ex.write_bo_trace(steps, directory / "bo_trace.csv")
    outputs = ["bo_trace.csv"] + _emit_reports(ex.bo_records(steps, fid), directory)
    obs = table.observations(fid, pool)
    pool_min = float(obs.y.min())
    summary = {}
    for (strategy, s), trace in sorted(ex.split_traces(steps).items()):
        summary.setdefault(strategy, []).append(ex.draws_to_minimum(trace, pool_min))
    if b["svg"]:
        lines = {}
        for strategy in strategies:
            traces = [t for (name, _), t in ex.split_traces(steps).items() if name == strategy]
            curve = np.mean([[st.best_so_far for st in t] for t in traces], axis=0)
            lines[strategy] = (np.arange(1, len(curve) + 1), curve)
        ex.write_svg(lines, directory / "bo_best_so_far.svg", f"best score so far on {fid}")
        outputs.append("bo_best_so_far.svg")
    write_manifest(directory, "bo", config, outputs, args.timestamp, {"draws_to_minimum": summary, "pool_minimum": pool_min})
    for strategy, draws in summary.items():
        log.info("%s: draws to pool minimum %s", strategy, draws)
    return EXIT_OK


HANDLERS = {
    "fingerprint": cmd_fingerprint,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "fewshot": cmd_fewshot,
    "generalize": cmd_generalize,
    "bo": cmd_bo,
    "synth": cmd_synth,
}

HELP = {
    "fingerprint": "compute or refresh the fingerprint cache",
    "train": "train a CNP and write checkpoints and a training log",
    "calibrate": "track r2 and log-likelihood over training on all four quadrants",
    "fewshot": "compare the CNP with baselines as the number of observed points grows",
    "generalize": "train on plain and QED-modified scores and test on both",
    "bo": "Bayesian optimization over a molecule pool",
    "synth": "write a synthetic task table",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="molcnp", description="Conditional neural processes for molecular property functions.")
    parser.add_argument("--version", action="version", version=f"molcnp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("-c", "--config", help="YAML configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config value, e.g. train.epochs=10")
        p.add_argument("--out", help="output root directory (overrides output_dir)")
        p.add_argument("--timestamp", action="store_true", help="record the creation time in the manifest")
        p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
        p.add_argument("-q", "--quiet", action="store_true", help="warnings only")
        if name == "fingerprint":
            p.add_argument("--force", action="store_true", help="rebuild even if the cache is up to date")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(message)s", force=True)
    try:
        config = cfgmod.load_config(args.config, args.overrides)
        if args.out:
            config["output_dir"] = args.out
        return HANDLERS[args.command](config, args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (NonFiniteLoss, NonPositiveVariance, FloatingPointError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (
        DataError,
        SmilesError,
        MissingCheckpoint,
        UnknownFunction,
        PoolExhausted,
        InsufficientObservations,
        ConstantTruth,
        EmptyContext,
        EmptyTrainingSet,
        KTooLarge,
    ) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except OSError as exc:
        log.error("i/o error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
