"""Command-line entry point: ``ranqa <subcommand>``.

Exit codes: 0 success, 1 validation failure, 2 I/O or format error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

from . import stats
from .dataset import ImageFormatError, ManifestDataset, generate_corpus, load_image, write_corpus
from .nets import Discriminator, Evaluator, FeatureNet, NetworkConfig, Restorator, score_image
from .tensor import ConsistencyError, ShapeError, StateError, load_checkpoint
from .tensor.checkpoint import CheckpointFormatError
from .training import (
    Models,
    SplitSpec,
    TrainConfig,
    eval_benchmark,
    gor_experiment,
    repeated_splits_ttest,
    run_pipeline,
    split_by_reference,
)

log = logging.getLogger("ranqa")

PATH_KEYS = {"manifest": ""}
SECTIONS = {"network": NetworkConfig, "train": TrainConfig}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# run config

def _fields(cls):
    return [f for f in dataclasses.fields(cls)]


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse(field: dataclasses.Field, default, text: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.split(",") if v.strip())
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise CliError(f"bad value {text!r} for {field.name}", 1) from None
    return text


def config_keys() -> list[tuple[str, str, object]]:
    """(section, key, default) for every run-config key."""
    out = []
    for section, cls in SECTIONS.items():
        proto = cls()
        out += [(section, f.name, getattr(proto, f.name)) for f in _fields(cls)]
    out += [("paths", k, v) for k, v in PATH_KEYS.items()]
    return out


def read_config(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", 2) from None
    except configparser.Error as exc:
        raise CliError(f"malformed config {path}: {exc}", 2) from None
    known = {}
    for section, key, _ in config_keys():
        known.setdefault(section, set()).add(key)
    raw: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in known:
            raise CliError(f"unknown config section [{section}]", 1)
        for key, value in parser[section].items():
            if key not in known[section]:
                raise CliError(f"unknown config key {section}.{key}", 1)
            raw.setdefault(section, {})[key] = value
    return raw


def write_config(path, cfg: NetworkConfig, tcfg: TrainConfig, paths: dict[str, str]) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["network"] = {k: _format(v) for k, v in cfg.to_dict().items()}
    parser["train"] = {k: _format(v) for k, v in tcfg.to_dict().items()}
    parser["paths"] = {k: str(v) for k, v in paths.items()}
    with open(path, "w") as fh:
        parser.write(fh)


def build_configs(raw: dict[str, dict[str, str]], overrides: dict[str, object]):
    """Defaults < config file < command-line flags."""
    values: dict[str, dict[str, object]] = {}
    for section, cls in SECTIONS.items():
        proto = cls()
        vals = {}
        for f in _fields(cls):
            default = getattr(proto, f.name)
            if f.name in raw.get(section, {}):
                vals[f.name] = _parse(f, default, raw[section][f.name])
            if overrides.get(f.name) is not None:
                vals[f.name] = _parse(f, default, str(overrides[f.name]))
        values[section] = vals
    paths = dict(PATH_KEYS)
    paths.update(raw.get("paths", {}))
    for k in PATH_KEYS:
        if overrides.get(k) is not None:
            paths[k] = str(overrides[k])
    try:
        cfg = NetworkConfig(**values["network"])
        tcfg = TrainConfig(**values["train"])
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}", 1) from None
    return cfg, tcfg, paths


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for section, key, default in config_keys():
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, metavar="V",
                       help=f"[{section}] {key} (default: {_format(default) or 'unset'})")


# ---------------------------------------------------------------------------
# checkpoints

def load_models(ckpt_dir, need=("restorator",)) -> tuple[NetworkConfig, Models]:
    ckpt = Path(ckpt_dir)
    cfg_path = ckpt / "config.ini"
    if not cfg_path.exists():
        raise CliError(f"{cfg_path} not found", 2)
    cfg, _, _ = build_configs(read_config(cfg_path), {})
    stores = {}
    for name in ("restorator", "discriminator", "evaluator", "featnet"):
        path = ckpt / f"{name}.ckpt"
        if path.exists():
            stores[name] = load_checkpoint(path)
        elif name in need:
            raise StateError(f"missing {name} checkpoint in {ckpt}")
    models = Models(
        Restorator(cfg, stores["restorator"]) if "restorator" in stores else Restorator(cfg),
        Discriminator(cfg, stores["discriminator"]) if "discriminator" in stores else None,
        Evaluator(cfg, stores["evaluator"]) if "evaluator" in stores else None,
        FeatureNet.from_config(cfg, stores.get("featnet")),
    )
    return cfg, models


# ---------------------------------------------------------------------------
# subcommands

def _emit(obj) -> None:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return str(v)
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        return v

    print(json.dumps(clean(obj), indent=2, sort_keys=True))


def cmd_synth(args) -> int:
    corpus = generate_corpus(args.n, args.size, args.seed)
    manifest = write_corpus(corpus, args.out)
    _emit({"manifest": str(manifest), "pristine": len(corpus.pristine), "distorted": len(corpus.rows)})
    return 0


PHASES = {"1": (1,), "2": (2,), "3": (3,), "4": (4,), "all": (1, 2, 3, 4)}


def cmd_train(args) -> int:
    raw = read_config(args.config) if args.config else {}
    cfg, tcfg, paths = build_configs(raw, vars(args))
    if not paths["manifest"]:
        raise CliError("no manifest given (--manifest or [paths] manifest)", 1)
    dataset = ManifestDataset.from_manifest(paths["manifest"])
    out = Path(args.out)
    phases = PHASES[args.phase]
    models = None
    if phases[0] > 1:
        need = {2: ("restorator",), 3: ("restorator", "discriminator"), 4: ("restorator", "evaluator")}
        if not (out / "config.ini").exists():
            raise StateError(f"phase {phases[0]} needs earlier checkpoints in {out}")
        saved_cfg, models = load_models(out, need[phases[0]])
        if saved_cfg != cfg:
            raise CliError("network config differs from the one the checkpoints were trained with", 1)
    out.mkdir(parents=True, exist_ok=True)
    models, results = run_pipeline(cfg, tcfg, dataset, out, phases, models)
    write_config(out / "config.ini", cfg, tcfg, paths)
    summary = {"out": str(out), "phases": list(phases),
               "splits": {k: len(v) for k, v in results["splits"].items()}}
    for name in ("phase1", "phase2", "phase3", "phase4"):
        if name in results and results[name].curve:
            summary[f"{name}_final_loss"] = results[name].curve[-1][1]
    if "phase4" in results and results["phase4"].counters["val_curve"]:
        summary["best_val_srocc"] = max(v for _, v in results["phase4"].counters["val_curve"])
    _emit(summary)
    return 0


def cmd_score(args) -> int:
    cfg, models = load_models(args.ckpt, ("restorator", "evaluator"))
    img = load_image(args.image)
    report = score_image(models.evaluator, models.restorator, img, args.aggregate, image_id=str(args.image))
    _emit(report.to_dict())
    return 0


def cmd_gor(args) -> int:
    cfg, models = load_models(args.ckpt, ("restorator",))
    files = sorted((Path(args.corpus) / "pristine").glob("*.ppm"))
    if not files:
        raise CliError(f"no pristine images under {args.corpus}/pristine", 2)
    pristine = [load_image(f) for f in files]
    report = gor_experiment(models.restorator, pristine, cfg.patch_size, seed=args.seed)
    report.write_csv(args.out)
    _emit({"csv": str(args.out), "rows": len(report.rows),
           "verdicts": {f"{fam}/{m}": v for (fam, m), v in report.verdicts.items()}})
    return 0


def cmd_eval(args) -> int:
    dataset = ManifestDataset.from_manifest(args.manifest)
    splits = split_by_reference(dataset.rows, SplitSpec(seed=args.split_seed))
    indices = list(range(len(dataset))) if args.split == "all" else splits[args.split]
    if any(dataset.rows[i].score is None for i in indices):
        raise CliError("manifest rows in the evaluated split need scores", 1)
    if args.inject_targets:
        result = eval_benchmark(None, None, dataset, indices, predict=lambda i: dataset.rows[i].score)
    else:
        _, models = load_models(args.ckpt, ("restorator", "evaluator"))
        result = eval_benchmark(models.evaluator, models.restorator, dataset, indices, args.aggregate)
    result["split"] = args.split
    result["split_seed"] = args.split_seed
    if args.append:
        path = Path(args.append)
        new = not path.exists()
        with open(path, "a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(["split_seed", "srocc", "plcc", "n"])
            w.writerow([args.split_seed, repr(result["srocc"]), repr(result["plcc"]), result["n"]])
    _emit(result)
    return 0


def read_results(path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", 2) from None
    try:
        return [{"srocc": float(r["srocc"]), "plcc": float(r["plcc"])} for r in rows]
    except (KeyError, TypeError, ValueError):
        raise CliError(f"{path} needs numeric srocc and plcc columns", 2) from None


def cmd_ttest(args) -> int:
    _emit(repeated_splits_ttest(read_results(args.a), read_results(args.b)))
    return 0


def cmd_gradcheck(args) -> int:
    from .netcheck import network_suite
    from .tensor.gradcheck import op_suite

    results = op_suite(range(args.seeds)) + network_suite(range(args.seeds))
    failed = [r for r in results if not r.ok]
    for r in results:
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.name:20s} seed={r.seed} err={r.error:.2e} tol={r.tol:.0e}")
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ranqa", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    keys = "\n".join(f"  [{s}] {k} = {_format(v)}" for s, k, v in config_keys())
    p = sub.add_parser("train", help="run training phases",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog=f"config keys and defaults:\n{keys}")
    p.add_argument("--config")
    p.add_argument("--phase", choices=list(PHASES), default="all")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--aggregate", choices=["weighted", "mean"])
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("gor", help="restoration-gain experiment")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gor)

    p = sub.add_parser("eval", help="SROCC/PLCC on a manifest split")
    p.add_argument("--ckpt")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    p.add_argument("--aggregate", choices=["weighted", "mean"])
    p.add_argument("--append", help="append the result to a per-split CSV for ttest")
    p.add_argument("--inject-targets", action="store_true",
                   help="test hook: use the manifest scores as predictions")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ttest", help="two-sided t-test over per-split result CSVs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_ttest)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "eval" and not args.inject_targets and not args.ckpt:
        print("error: eval needs --ckpt unless --inject-targets is given", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ImageFormatError, CheckpointFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ShapeError, StateError, ConsistencyError, stats.UndefinedStatisticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
