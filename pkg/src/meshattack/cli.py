"""Command-line pipeline: gen-data, train-victim, query, train-imitator, attack, evaluate, gradcheck.

Every subcommand accepts ``--config FILE``, an INI file whose section named after
the subcommand supplies defaults (explicit flags still win).  Each run writes its
fully resolved configuration as ``config.ini`` into its output directory.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import _accel
from .attack import AttackConfig, attack_many, config_dict, write_attack_log
from .classifiers import (TrainConfig, load_imitator, load_victim, query_all, read_predictions, save_imitator,
                          train_face_victim, train_imitator, train_victim, write_predictions)
from .errors import ConfigError, DimensionMismatch, MeshAttackError
from .evaluation import evaluate, export_heatmap, heatmap
from .gradcheck import random_sweep
from .mesh import atomic_write_text, load_mesh, save_mesh
from .shapes import FAMILIES, load_dataset, make_dataset, save_dataset

log = logging.getLogger("meshattack")


def _write_config(outdir, command, args) -> None:
    cp = configparser.ConfigParser()
    cp[command] = {k: _ini_value(v) for k, v in sorted(vars(args).items())
                   if k not in ("func", "config", "command", "verbose")}
    cp["run"] = {"numba": str(_accel.numba_enabled()).lower()}
    buf = io.StringIO()
    cp.write(buf)
    atomic_write_text(Path(outdir) / "config.ini", buf.getvalue())


def _ini_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return "" if v is None else str(v)


def _int_list(text):
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _str_list(text):
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


def _optional_int(text):
    return None if text in (None, "", "None") else int(text)


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off", ""):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


# ---------------------------------------------------------------- commands


def cmd_gen_data(args):
    ds = make_dataset(args.families, args.per_class, args.train_fraction, args.seed, args.resolution, args.jitter)
    save_dataset(ds, args.out)
    _write_config(args.out, "gen-data", args)
    print(f"wrote {len(ds.train)} train / {len(ds.test)} test meshes to {args.out}")


def _train_config(args, loss):
    return TrainConfig(epochs=args.epochs, walks_per_mesh_per_epoch=args.walks_per_mesh, walk_length=args.walk_length,
                       learning_rate=args.learning_rate, batch_size=args.batch_size, seed=args.seed, loss=loss,
                       lift=args.lift, hidden=args.hidden, layers=args.layers, features=args.features,
                       query_walks=args.query_walks, augment_noise=getattr(args, "augment_noise", 0.0))


def cmd_train_victim(args):
    ds = load_dataset(args.data)
    if args.kind == "walk":
        victim = train_victim(ds, _train_config(args, "ce"), name=args.name or "walk",
                              check_convergence=args.check_convergence)
    elif args.kind == "face":
        epochs = args.face_epochs
        victim = train_face_victim(ds, epochs=epochs, seed=args.seed, name=args.name or "face")
    else:
        raise ConfigError(f"unknown victim kind {args.kind!r}")
    victim.save(args.out)
    _write_config(args.out, "train-victim", args)
    print(f"{victim.name} victim train accuracy {victim.train_accuracy:.3f} -> {args.out}")


def cmd_query(args):
    ds = load_dataset(args.data)
    victim = load_victim(args.victim)
    items = ds.split(args.split)
    ids = [it.source_id for it in items]
    vectors = query_all(victim, [it.mesh for it in items], ids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(out / "predictions.csv", ids, vectors)
    _write_config(out, "query", args)
    print(f"{len(ids)} prediction vectors -> {out / 'predictions.csv'}")


def cmd_train_imitator(args):
    ds = load_dataset(args.data)
    ids, vectors = read_predictions(Path(args.predictions) / "predictions.csv"
                                    if Path(args.predictions).is_dir() else args.predictions)
    table = dict(zip(ids, vectors))
    missing = [it.source_id for it in ds.train if it.source_id not in table]
    if missing:
        raise DimensionMismatch(f"no prediction vector for {len(missing)} train meshes (e.g. {missing[0]})")
    targets = np.array([table[it.source_id] for it in ds.train])
    params, tlog = train_imitator(ds, targets, _train_config(args, "kld"), check_convergence=args.check_convergence)
    save_imitator(params, args.out, class_names=",".join(ds.class_names), victim=args.victim_name,
                  train_seed=args.seed, initial_kld=repr(tlog.initial_loss), final_kld=repr(tlog.final_loss))
    _write_config(args.out, "train-imitator", args)
    print(f"imitator KLD {tlog.initial_loss:.4f} -> {tlog.final_loss:.4f} -> {args.out}")


def cmd_attack(args):
    ds = load_dataset(args.data)
    imitator, _ = load_imitator(args.imitator)
    items = ds.split(args.split)
    if args.limit is not None:
        items = items[:args.limit]
    cfg = AttackConfig(alpha=args.alpha, max_iterations=args.max_iterations, walk_length=args.walk_length,
                       stop_k=args.stop_k, seed=args.seed, target=args.target_class)
    cfg.validate()
    targets = None if cfg.target is None else [cfg.target] * len(items)
    results = attack_many(items, imitator, cfg, jobs=args.jobs, targets=targets)
    out = Path(args.out)
    rows = []
    for it, res in zip(items, results):
        save_mesh(res.attacked_mesh, out / "meshes" / f"{it.source_id}.off")
        write_attack_log(out / "logs" / f"{it.source_id}.ndjson", res, it.source_id)
        rows.append([it.source_id, it.label, int(res.success), res.iterations_used, res.updates,
                     res.predicted_class])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source_id", "label", "imitator_success", "iterations", "updates", "imitator_pred"])
    w.writerows(rows)
    atomic_write_text(out / "results.csv", buf.getvalue())
    atomic_write_text(out / "attack_config.json", json.dumps(config_dict(cfg), indent=1, sort_keys=True))
    _write_config(out, "attack", args)
    rate = np.mean([r.success for r in results]) if results else float("nan")
    print(f"attacked {len(results)} meshes, imitator fooled on {100 * rate:.1f}% -> {out}")


def _read_attack_results(path):
    with open(path, newline="") as fh:
        return {r["source_id"]: r for r in csv.DictReader(fh)}


class _Res:
    def __init__(self, row):
        self.success = row["imitator_success"] == "1"
        self.iterations_used = int(row["iterations"])


def cmd_evaluate(args):
    ds = load_dataset(args.data)
    victim = load_victim(args.victim)
    items = ds.split(args.split)
    attacked_dir = Path(args.attacked) if args.attacked else None
    results = None
    if attacked_dir is not None:
        table = _read_attack_results(attacked_dir / "results.csv")
        items = [it for it in items if it.source_id in table]
        adv = [load_mesh(attacked_dir / "meshes" / f"{it.source_id}.off") for it in items]
        results = [_Res(table[it.source_id]) for it in items]
    else:
        adv = [it.mesh for it in items]
    report = evaluate(victim, items, adv, results)
    out = Path(args.out)
    atomic_write_text(out / "report.csv", report.to_csv())
    atomic_write_text(out / "report.txt", report.table())
    if args.heatmaps:
        for it, mesh in zip(items, adv):
            export_heatmap(mesh, heatmap(it.mesh, mesh), out / "heatmaps" / f"{it.source_id}.ply")
    _write_config(out, "evaluate", args)
    print(report.table(), end="")


def cmd_gradcheck(args):
    results = random_sweep(args.configs, seed=args.seed, n_samples=args.samples)
    lines = []
    for cfg, kind, rep in results:
        lines.append(f"{kind} {json.dumps(cfg, sort_keys=True)} {rep}")
    ok = all(rep.passed for _, _, rep in results)
    text = "\n".join(lines) + f"\n{'PASS' if ok else 'FAIL'}: {len(results)} checks\n"
    if args.out:
        atomic_write_text(Path(args.out) / "gradcheck.txt", text)
        _write_config(args.out, "gradcheck", args)
    print(text, end="")
    return 0 if ok else 1


# ---------------------------------------------------------------- parser


def _add_train_flags(p, epochs_default=100):
    p.add_argument("--epochs", type=int, default=epochs_default)
    p.add_argument("--walks-per-mesh", type=int, default=4, help="walks per training mesh per epoch")
    p.add_argument("--walk-length", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lift", type=_int_list, default=(32, 64), help="comma-separated lift widths")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--features", choices=("xyz", "dxdydz"), default="xyz")
    p.add_argument("--query-walks", type=int, default=8, help="walks averaged per victim query")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--check-convergence", type=_bool, nargs="?", const=True, default=True,
                   help="fail when training does not converge (disable for smoke runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshattack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI file; section [%s] supplies defaults" % name)
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "generate the synthetic shape dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--families", type=_str_list, default=FAMILIES)
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--resolution", type=int, default=2)
    p.add_argument("--jitter", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)

    p = add("train-victim", cmd_train_victim, "train a victim classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("walk", "face"), default="walk")
    p.add_argument("--name", default=None)
    p.add_argument("--face-epochs", type=int, default=300)
    p.add_argument("--augment-noise", type=float, default=0.0, help="Gaussian coordinate noise during training")
    _add_train_flags(p)

    p = add("query", cmd_query, "query a victim for prediction vectors")
    p.add_argument("--data", required=True)
    p.add_argument("--victim", required=True)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--out", required=True)

    p = add("train-imitator", cmd_train_imitator, "distil queried prediction vectors into a walk network")
    p.add_argument("--data", required=True)
    p.add_argument("--predictions", required=True, help="query output directory or predictions.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--victim-name", default="")
    _add_train_flags(p)

    p = add("attack", cmd_attack, "attack meshes through an imitator")
    p.add_argument("--data", required=True)
    p.add_argument("--imitator", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--max-iterations", type=int, default=1000)
    p.add_argument("--walk-length", type=int, default=200)
    p.add_argument("--stop-k", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-class", type=_optional_int, default=None)
    p.add_argument("--limit", type=_optional_int, default=None, help="attack only the first N meshes")
    p.add_argument("--jobs", type=int, default=1)

    p = add("evaluate", cmd_evaluate, "victim accuracy, L2 and heat maps")
    p.add_argument("--data", required=True)
    p.add_argument("--victim", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--attacked", default=None, help="attack output directory (omit for the clean meshes)")
    p.add_argument("--out", required=True)
    p.add_argument("--heatmaps", type=_bool, nargs="?", const=True, default=True)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of the walk network")
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--samples", type=_optional_int, default=None, help="entries per check (default all)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    return parser


def _apply_config_file(parser, argv):
    """Re-parse with defaults taken from the INI section of the chosen subcommand."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if not a.startswith("-")), None)
    if not known.config or command is None:
        return parser.parse_args(argv)
    args = argparse.Namespace(config=known.config, command=command)
    cp = configparser.ConfigParser()
    try:
        with open(args.config) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if not cp.has_section(args.command):
        return parser.parse_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    if args.command not in choices:
        return parser.parse_args(argv)
    subparser = choices[args.command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in cp[args.command].items():
        dest = key.replace("-", "_")
        if dest not in actions or dest in ("config", "help"):
            raise ConfigError(f"unknown key {key!r} in section [{args.command}]")
        conv = actions[dest].type or str
        try:
            defaults[dest] = conv(raw) if raw != "" or conv is _optional_int else None
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        actions[dest].required = False
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        code = args.func(args)
        return int(code or 0)
    except (MeshAttackError, OSError, KeyError, ValueError) as exc:
        print(f"meshattack {getattr(exc, '__class__').__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
