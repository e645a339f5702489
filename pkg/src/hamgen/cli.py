"""``hamgen`` command line: synth, train, generate, eval.

Each subcommand reads an optional TOML file (``--config``) whose keys match
its flags; explicit flags win over the file and ``--set key=value`` reaches
problem or training fields that have no dedicated flag. Unknown keys are
usage errors. The effective configuration is written next to every output.

Exit codes: 0 success, 2 usage, 3 numeric failure, 4 I/O.
"""
import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .data import load_dataset, save_dataset
from .evaluation import evaluate, write_scatter
from .fileio import FormatError, atomic_write, dump_json
from .models import GAN_VARIANTS, VARIANTS, build_model, generate, load_model
from .nn import make_rng
from .synth import (
    LtiConfig, MinThreatConfig, ShootingConfig, ShootingError, ZermeloConfig, build_dataset,
    build_paired, config_to_dict,
)
from .train import TrainConfig, TrainingDiverged, train

log = logging.getLogger("hamgen")

EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 2, 3, 4
PROBLEMS = {"zermelo": ZermeloConfig, "minthreat": MinThreatConfig, "lti": LtiConfig}
MAX_FAILURE_RATE = 0.2


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- config handling


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _parse_sets(items):
    out = {}
    for item in items or ():
        key, sep, val = item.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"--set expects key=value, got {item!r}")
        node = out
        *parents, leaf = key.strip().split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = _parse_value(val.strip())
    return out


def _read_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as err:
        raise UsageError(f"{path}: {err}") from err


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out.get(k, {}), v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _settings(args, flag_names, defaults):
    """File < --set < explicit flags; returns (command settings, extra fields)."""
    cfg = _merge(_read_config(args.config), _parse_sets(args.set))
    for name in flag_names:
        val = getattr(args, name)
        if val is not None:
            cfg[name] = val
    own = {k: cfg.pop(k, d) for k, d in defaults.items()}
    return own, cfg


def _dataclass_from(cls, fields, what):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(fields) - known)
    if unknown:
        raise UsageError(f"unknown {what} key(s): {', '.join(unknown)}")
    fields = dict(fields)
    if cls in (ZermeloConfig, MinThreatConfig) and "shooting" in fields:
        sh = fields["shooting"]
        bad = sorted(set(sh) - {f.name for f in dataclasses.fields(ShootingConfig)})
        if bad:
            raise UsageError(f"unknown shooting key(s): {', '.join(bad)}")
        fields["shooting"] = ShootingConfig(**sh)
    for k, v in fields.items():
        if isinstance(v, list):
            fields[k] = tuple(v)
    try:
        return cls(**fields)
    except (TypeError, ValueError) as err:
        raise UsageError(f"invalid {what} config: {err}") from err


def _config_hash(d):
    return hashlib.sha256(dump_json(d)).hexdigest()


def _echo(path, payload):
    atomic_write(path, dump_json(payload))
    log.info("effective config: %s", json.dumps(payload.get("config", payload), sort_keys=True))


# ---------------------------------------------------------------- subcommands


def cmd_synth(args):
    own, rest = _settings(args, ["problem", "count", "seed", "jobs", "paired", "lam_model"],
                          {"problem": None, "count": None, "seed": 0, "jobs": 1,
                           "paired": False, "lam_model": 1.0})
    if own["problem"] not in PROBLEMS:
        raise UsageError(f"--problem must be one of {', '.join(PROBLEMS)}")
    if own["count"] is None or int(own["count"]) < 1:
        raise UsageError("--count must be a positive integer")
    pcfg = _dataclass_from(PROBLEMS[own["problem"]], rest, own["problem"])
    count, seed, jobs = int(own["count"]), int(own["seed"]), int(own["jobs"])
    if own["paired"]:
        if own["problem"] == "zermelo":
            raise UsageError("--paired applies to minthreat and lti problems")
        obs, model = build_paired(pcfg, count, seed, float(own["lam_model"]), jobs=jobs)
    else:
        obs, model = build_dataset(pcfg, count, seed, jobs=jobs), None
    save_dataset(obs, args.out)
    outputs = [args.out]
    if model is not None:
        mpath = args.model_out or _sibling(args.out, "model")
        save_dataset(model, mpath)
        outputs.append(mpath)
    effective = {"problem": own["problem"], "count": count, "seed": seed,
                 "paired": bool(own["paired"]), "lam_model": float(own["lam_model"]),
                 "config": config_to_dict(pcfg)}
    stats = obs.meta.get("stats", {})
    manifest = {"command": "synth", "seed": seed, "config_hash": _config_hash(effective),
                "outputs": outputs, "stats": stats, **effective}
    _echo(args.out + ".manifest.json", manifest)
    print(json.dumps({"outputs": outputs, "stats": stats}, sort_keys=True))
    attempts = stats.get("attempts", count)
    rate = stats.get("failures", 0) / attempts if attempts else 0.0
    if rate > MAX_FAILURE_RATE:
        log.error("solver failure rate %.1f%% exceeds %.0f%%", 100 * rate, 100 * MAX_FAILURE_RATE)
        return EXIT_NUMERIC
    return 0


def _sibling(path, tag):
    root, ext = os.path.splitext(path)
    return f"{root}.{tag}{ext or '.ds'}"


def cmd_train(args):
    own, rest = _settings(args, ["variant", "data", "model_data", "epochs", "batch_size", "seed",
                                 "alpha1", "alpha2", "loss_kind"],
                          {"variant": None, "data": None, "model_data": None})
    if own["variant"] not in VARIANTS:
        raise UsageError(f"--variant must be one of {', '.join(VARIANTS)}")
    if own["data"] is None:
        raise UsageError("--data is required")
    if own["variant"] == "split_vae" and own["model_data"] is None:
        raise UsageError("split_vae needs --model-data with the model (noiseless) trajectories")
    if args.lr is not None:
        rest["lr"] = {k: args.lr for k in (("gen", "disc") if own["variant"] in GAN_VARIANTS
                                           else ("enc", "dec"))}
    cfg = _dataclass_from(TrainConfig, {**rest, "variant": own["variant"]}, "train")
    data = load_dataset(own["data"])
    model_data = load_dataset(own["model_data"]) if own["model_data"] else None
    V = data.meta.get("V", 1.0)
    model = build_model(cfg.variant, data.layout, V, make_rng(cfg.seed, "init"), **cfg.model_kwargs())
    os.makedirs(args.out, exist_ok=True)
    effective = {"config": cfg.to_dict(), "data": own["data"], "model_data": own["model_data"], "V": V}
    _echo(os.path.join(args.out, "config.json"),
          {"command": "train", "config_hash": _config_hash(effective), **effective})
    report = train(model, data, cfg, args.out, model_data)
    final = report.history[-1] if report.history else {}
    print(json.dumps({"checkpoint": report.checkpoint, "epochs": len(report.history),
                      "final": final, "wall_time": report.wall_time}, sort_keys=True))
    return 0


def cmd_generate(args):
    own, rest = _settings(args, ["checkpoint", "count", "seed"], {"checkpoint": None, "count": None, "seed": 0})
    if rest:
        raise UsageError(f"unknown generate key(s): {', '.join(sorted(rest))}")
    if own["checkpoint"] is None or own["count"] is None or int(own["count"]) < 1:
        raise UsageError("--checkpoint and a positive --count are required")
    model, header, _ = load_model(own["checkpoint"])
    if args.expect_kind and args.expect_kind != model.layout.kind:
        log.warning("checkpoint was trained on %s data, not %s", model.layout.kind, args.expect_kind)
    train_meta = header.get("meta", {})
    ds = generate(model, int(own["count"]), make_rng(int(own["seed"]), "generate"),
                  {"checkpoint": own["checkpoint"], "seed": int(own["seed"]),
                   "train_config": train_meta.get("train_config")})
    save_dataset(ds, args.out)
    print(json.dumps({"output": args.out, "count": len(ds), "n_x": ds.layout.n_x}))
    return 0


def cmd_eval(args):
    ref = load_dataset(args.reference)
    cands = {}
    for item in args.candidate:
        label, sep, path = item.partition("=")
        label, path = (label, path) if sep else (os.path.basename(item), item)
        cands[label] = load_dataset(path)
    for label, ds in cands.items():
        if ds.layout.n_x != ref.layout.n_x or ds.kind != ref.kind:
            raise UsageError(json.dumps({"error": "layout mismatch", "candidate": label,
                                         "n_x": ds.layout.n_x, "reference_n_x": ref.layout.n_x}))
    V = args.V if args.V is not None else ref.meta.get("V", 1.0)
    report = {"reference": evaluate(ref, V, ref, literal=args.literal).to_dict(), "candidates": {}}
    for label, ds in cands.items():
        report["candidates"][label] = evaluate(ds, V, ref, lam=args.lam, literal=args.literal).to_dict()
    report["config"] = {"V": V, "lam": args.lam, "literal": args.literal, "reference": args.reference}
    atomic_write(args.out, dump_json(report))
    if args.scatter:
        write_scatter(args.scatter, {"reference": ref, **cands})
    brief = {k: v["summary"].get("delta1", v["summary"].get("ndrr", {})).get("mean")
             for k, v in report["candidates"].items()}
    print(json.dumps({"output": args.out, "mean_primary_index": brief}, sort_keys=True))
    return 0


# ---------------------------------------------------------------- entry point


def build_parser():
    p = argparse.ArgumentParser(prog="hamgen", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML file with defaults for this command")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
        sp.add_argument("--seed", type=int)

    s = sub.add_parser("synth", help="synthesize a trajectory dataset")
    common(s)
    s.add_argument("--problem", choices=sorted(PROBLEMS))
    s.add_argument("--count", type=int)
    s.add_argument("--jobs", type=int, help="worker processes (results do not depend on it)")
    s.add_argument("--paired", action="store_true", default=None,
                   help="also write model trajectories on the same fields")
    s.add_argument("--lam-model", dest="lam_model", type=float)
    s.add_argument("--model-out", dest="model_out")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a generative model")
    common(t)
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--data")
    t.add_argument("--model-data", dest="model_data")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", type=float, help="learning rate for every network")
    t.add_argument("--alpha1", type=float)
    t.add_argument("--alpha2", type=float)
    t.add_argument("--loss", dest="loss_kind", choices=("mse", "bce"))
    t.add_argument("--out", required=True, help="run directory")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="sample a trained model")
    common(g)
    g.add_argument("--checkpoint")
    g.add_argument("--count", type=int)
    g.add_argument("--expect-kind", dest="expect_kind", choices=sorted(PROBLEMS))
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("eval", help="score candidate datasets against a reference")
    e.add_argument("--reference", required=True)
    e.add_argument("--candidate", action="append", default=[], metavar="[LABEL=]PATH")
    e.add_argument("--V", type=float, help="vehicle speed (default: the reference's)")
    e.add_argument("--lam", type=float, help="running-cost weight for generated min-threat data")
    e.add_argument("--literal", action="store_true", help="quotient form of the heading residual")
    e.add_argument("--scatter", help="write PC scatter CSV here")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    level = os.environ.get("HAMGEN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"hamgen {args.command}: {err}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as err:
        print(f"hamgen {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_IO
    except OSError as err:
        print(f"hamgen {args.command}: {err}", file=sys.stderr)
        return EXIT_IO
    except (ShootingError, TrainingDiverged, FloatingPointError, np.linalg.LinAlgError) as err:
        print(f"hamgen {args.command}: numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"hamgen {args.command}: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
