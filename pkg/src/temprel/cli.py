"""Command-line entry point.

Subcommands: prior-train, train, eval, predict, uncertainty, activity.
Runs are driven by a flat INI-style config file with sections [model],
[train], [data] and [prior]; ``--set section.key=value`` overrides win.
Every run writes a ``run_manifest.txt`` echoing the fully resolved
configuration so a run can be reproduced from its output directory alone.

Exit codes: 0 ok, 2 input error, 3 runtime/training failure, 4 config error.
"""

import argparse
import configparser
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__, analysis, encoder, harness, prior
from .exceptions import (
    ConfigurationError,
    DataFormatError,
    InvalidInputError,
    TrainingError,
)
from .harness import RunConfig
from .numerics import SeededRng
from .scorers import RelationSet

_CONFIG_SCHEMA = {
    "model": {
        "scorer": str,
        "d_r": int,
        "d_z": int,
        "dropout": float,
        "bayesian": bool,
    },
    "train": {
        "epochs": int,
        "batch_size": int,
        "learning_rate": float,
        "encoder_learning_rate": float,
        "anneal_start": float,
        "anneal_end": float,
        "mc_samples": int,
        "seed": int,
    },
    "data": {
        "relations": str,
        "no_relation": str,
        "train": str,
        "dev": str,
        "test": str,
        "embeddings": str,
        "convention": str,
    },
    "prior": {"mode": str, "path": str},
}


def _parse_bool(value):
    v = value.strip().lower()
    if v in ("true", "yes", "1"):
        return True
    if v in ("false", "no", "0"):
        return False
    raise ConfigurationError(f"not a boolean: {value!r}")


def load_config(path, overrides=()):
    """Read the config file, apply overrides, return a flat resolved dict."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise InvalidInputError(f"config file not found: {path}")
    resolved = {}
    for section, keys in _CONFIG_SCHEMA.items():
        if not parser.has_section(section):
            continue
        for key, value in parser.items(section):
            if key not in keys:
                raise ConfigurationError(f"unknown config key {section}.{key}")
            resolved[f"{section}.{key}"] = value
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override must be key=value: {item!r}")
        dotted, value = item.split("=", 1)
        section, _, key = dotted.partition(".")
        if section not in _CONFIG_SCHEMA or key not in _CONFIG_SCHEMA[section]:
            raise ConfigurationError(f"override references unknown key {dotted!r}")
        resolved[dotted] = value
    return resolved


def _typed(resolved, dotted, default=None):
    section, _, key = dotted.partition(".")
    kind = _CONFIG_SCHEMA[section][key]
    if dotted not in resolved:
        return default
    raw = resolved[dotted]
    if kind is bool:
        return _parse_bool(raw)
    try:
        return kind(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {dotted}: {raw!r}") from None


def run_config_from(resolved):
    relations = tuple(
        name.strip()
        for name in _typed(resolved, "data.relations", "Before,After,Equal,Vague").split(",")
        if name.strip()
    )
    no_relation = _typed(resolved, "data.no_relation", None)
    if no_relation in ("", "none", "None"):
        no_relation = None
    defaults = RunConfig()
    return RunConfig(
        relations=relations,
        no_relation=no_relation,
        scorer=_typed(resolved, "model.scorer", defaults.scorer),
        d_r=_typed(resolved, "model.d_r", defaults.d_r),
        d_z=_typed(resolved, "model.d_z", defaults.d_z),
        dropout=_typed(resolved, "model.dropout", defaults.dropout),
        bayesian=_typed(resolved, "model.bayesian", defaults.bayesian),
        epochs=_typed(resolved, "train.epochs", defaults.epochs),
        batch_size=_typed(resolved, "train.batch_size", defaults.batch_size),
        learning_rate=_typed(resolved, "train.learning_rate", defaults.learning_rate),
        encoder_learning_rate=_typed(
            resolved, "train.encoder_learning_rate", defaults.encoder_learning_rate
        ),
        anneal_start=_typed(resolved, "train.anneal_start", defaults.anneal_start),
        anneal_end=_typed(resolved, "train.anneal_end", defaults.anneal_end),
        mc_samples=_typed(resolved, "train.mc_samples", defaults.mc_samples),
        seed=_typed(resolved, "train.seed", defaults.seed),
        convention=_typed(resolved, "data.convention", defaults.convention),
    )


def write_manifest(out_dir, resolved, extra=None):
    lines = [
        f"temprel_version={__version__}",
        f"python_version={sys.version.split()[0]}",
        f"numpy_version={np.__version__}",
        f"torch_version={torch.__version__}",
    ]
    for key in sorted(resolved):
        lines.append(f"{key}={resolved[key]}")
    for key in sorted(extra or {}):
        lines.append(f"{key}={extra[key]}")
    (Path(out_dir) / "run_manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_split(resolved, which, relset):
    path = _typed(resolved, f"data.{which}", None)
    if path is None:
        return None
    return harness.parse_dataset(path, relset, name=which)


def _provider_from(resolved):
    path = _typed(resolved, "data.embeddings", None)
    if path is None:
        raise ConfigurationError("data.embeddings is required")
    return encoder.load_precomputed(path)


def _prior_from(resolved, config, override=None):
    mode = override or _typed(resolved, "prior.mode", "standard")
    if mode == "standard":
        return prior.standard_prior(config.relset, config.d_z)
    if mode == "file":
        path = _typed(resolved, "prior.path", None)
        if path is None:
            raise ConfigurationError("prior.mode=file requires prior.path")
        spec = prior.load_prior(path)
        if spec.dim != config.d_z:
            raise ConfigurationError(
                f"prior dimension {spec.dim} != configured d_z {config.d_z}"
            )
        return spec
    # An explicit file path may be passed straight through --prior.
    p = Path(mode)
    if p.exists():
        return prior.load_prior(p)
    raise ConfigurationError(f"unknown prior mode {mode!r}")


def _write_metrics(out_dir, stem, report):
    out = Path(out_dir)
    (out / f"{stem}.txt").write_text(report.table() + "\n", encoding="utf-8")
    (out / f"{stem}.kv").write_text("\n".join(report.key_values()) + "\n", encoding="utf-8")


def _apply_common_overrides(resolved, args):
    if getattr(args, "seed", None) is not None:
        resolved["train.seed"] = str(args.seed)
    if getattr(args, "scorer", None) is not None:
        resolved["model.scorer"] = args.scorer
    if getattr(args, "prior", None) is not None:
        if args.prior == "standard":
            resolved["prior.mode"] = "standard"
        else:
            resolved["prior.mode"] = "file"
            resolved["prior.path"] = args.prior


def cmd_prior_train(args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    graph = prior.load_graph(args.triples, args.features)
    if args.sim_threshold is not None:
        graph = prior.augment_similarity_edges(graph, args.sim_threshold)
    rng = SeededRng(args.seed).derive("prior-train")
    config = prior.LinkPredictionConfig(
        embedding_dim=args.embedding_dim, epochs=args.epochs, seed=args.seed
    )
    try:
        result = prior.train_link_prediction(graph, config, rng)
    except InvalidInputError:
        raise
    except Exception as exc:  # noqa: BLE001 - surfaced as a training failure
        raise TrainingError(f"link prediction training failed: {exc}") from exc
    relations = tuple(name.strip() for name in args.relations.split(",") if name.strip())
    relset = RelationSet(relations)
    mapping = {}
    for item in args.map or ():
        if "=" not in item:
            raise ConfigurationError(f"--map must be Relation=KGRelation: {item!r}")
        name, kg_name = item.split("=", 1)
        mapping[name] = kg_name
    spec = prior.assemble_prior(result.relation_embeddings, mapping, relset, args.d_z)
    prior.save_prior(out_dir / "prior.txt", spec)
    resolved = {
        "prior_train.triples": args.triples,
        "prior_train.features": args.features,
        "prior_train.relations": args.relations,
        "prior_train.d_z": args.d_z,
        "prior_train.seed": args.seed,
        "prior_train.sim_threshold": args.sim_threshold,
        "prior_train.epochs": args.epochs,
        "prior_train.embedding_dim": args.embedding_dim,
        "prior_train.map": ";".join(args.map or ()),
    }
    write_manifest(out_dir, {k: str(v) for k, v in resolved.items()})
    print(f"prior written to {out_dir / 'prior.txt'}")
    return 0


def cmd_train(args):
    resolved = load_config(args.config, args.set or ())
    _apply_common_overrides(resolved, args)
    config = run_config_from(resolved)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    provider = _provider_from(resolved)
    relset = config.relset
    train_split = _load_split(resolved, "train", relset)
    dev_split = _load_split(resolved, "dev", relset)
    if train_split is None:
        raise ConfigurationError("data.train is required for training")
    harness.join_embeddings(train_split, provider)
    if dev_split is not None:
        harness.join_embeddings(dev_split, provider)
    prior_spec = _prior_from(resolved, config)
    ckpt, history = harness.train(config, train_split, dev_split, provider, prior_spec)
    harness.save_checkpoint(out_dir / "checkpoint.pt", ckpt)
    with open(out_dir / "history.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,lambda,dev_f1,dev_micro_f1\n")
        for rec in history:
            fh.write(
                f"{rec['epoch']},{rec['loss']:.6f},{rec['lambda']:.6f},"
                f"{rec.get('dev_f1', float('nan')):.4f},"
                f"{rec.get('dev_micro_f1', float('nan')):.4f}\n"
            )
    if dev_split is not None and config.epochs > 0:
        model, _ = harness.restore_model(ckpt, provider)
        report = harness.evaluate(model, dev_split, config.convention, provider=provider)
        _write_metrics(out_dir, "metrics_dev", report)
    write_manifest(out_dir, resolved, {"command": "train"})
    print(f"checkpoint written to {out_dir / 'checkpoint.pt'}")
    return 0


def _restore_for_eval(args, resolved=None):
    ckpt = harness.load_checkpoint(args.checkpoint)
    provider = None
    if getattr(args, "embeddings", None):
        provider = encoder.load_precomputed(args.embeddings)
    model, provider = harness.restore_model(ckpt, provider)
    return ckpt, model, provider


def cmd_eval(args):
    ckpt, model, provider = _restore_for_eval(args)
    relset = model.relset
    split = harness.parse_dataset(args.dataset, relset, name="eval")
    harness.join_embeddings(split, provider)
    report = harness.evaluate(model, split, args.convention, provider=provider)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_metrics(out_dir, "metrics", report)
    write_manifest(
        out_dir,
        {"eval.checkpoint": args.checkpoint, "eval.dataset": args.dataset,
         "eval.convention": args.convention},
        {"command": "eval"},
    )
    print(report.table())
    return 0


def cmd_predict(args):
    ckpt, model, provider = _restore_for_eval(args)
    relset = model.relset
    split = harness.parse_dataset(args.dataset, relset, name="predict")
    harness.join_embeddings(split, provider)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = SeededRng(args.seed).derive("predict") if args.mc_samples else None
    with open(out_dir / "predictions.csv", "w", encoding="utf-8") as fh:
        fh.write("id,predicted," + ",".join(f"p_{n}" for n in relset.names) + "\n")
        for inst in split:
            probs = harness.predict_proba(model, provider, inst, args.mc_samples, rng)
            label = relset.names[int(np.argmax(probs))]
            fh.write(f"{inst.instance_id},{label}," + ",".join(f"{p:.6f}" for p in probs) + "\n")
    write_manifest(
        out_dir,
        {"predict.checkpoint": args.checkpoint, "predict.dataset": args.dataset,
         "predict.mc_samples": str(args.mc_samples), "predict.seed": str(args.seed)},
        {"command": "predict"},
    )
    print(f"predictions written to {out_dir / 'predictions.csv'}")
    return 0


def cmd_uncertainty(args):
    ckpt, model, provider = _restore_for_eval(args)
    relset = model.relset
    split = harness.parse_dataset(args.dataset, relset, name="uncertainty")
    harness.join_embeddings(split, provider)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = SeededRng(args.seed).derive("uncertainty")
    rows = analysis.uncertainty_table(model, provider, split, args.n, rng)
    analysis.write_uncertainty_csv(out_dir / "uncertainty.csv", rows)
    if args.drop_class is not None:
        simplex_rows = []
        simplex_rng = SeededRng(args.seed).derive("simplex")
        for inst in split:
            preds = analysis.mc_predict(model, provider, inst, args.n, simplex_rng)
            _, srows = analysis.simplex_export(preds, relset, args.drop_class)
            simplex_rows.append((inst.instance_id, srows))
        analysis.write_simplex_csv(out_dir / "simplex.csv", simplex_rows)
        analysis.write_simplex_svg(out_dir / "simplex.svg", simplex_rows)
    write_manifest(
        out_dir,
        {"uncertainty.checkpoint": args.checkpoint, "uncertainty.dataset": args.dataset,
         "uncertainty.n": str(args.n), "uncertainty.seed": str(args.seed),
         "uncertainty.drop_class": str(args.drop_class)},
        {"command": "uncertainty"},
    )
    print(f"uncertainty written to {out_dir / 'uncertainty.csv'}")
    return 0


def cmd_activity(args):
    ckpt, model, provider = _restore_for_eval(args)
    relset = model.relset
    split = harness.parse_dataset(args.dataset, relset, name="activity")
    harness.join_embeddings(split, provider)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = analysis.activity_scores(model, provider, split)
    analysis.write_activity_csv(out_dir / "activity.csv", report)
    write_manifest(
        out_dir,
        {"activity.checkpoint": args.checkpoint, "activity.dataset": args.dataset},
        {"command": "activity"},
    )
    print(
        f"activity min/median/max: {report.minimum:.6g}/{report.median:.6g}/{report.maximum:.6g}"
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="temprel",
        description="event temporal relation extraction with variational translational scorers",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prior-train", help="train the KG link-prediction prior")
    p.add_argument("--triples", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--relations", required=True, help="comma-separated dataset relations")
    p.add_argument("--map", action="append", help="Relation=KGRelation (repeatable)")
    p.add_argument("--d-z", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sim-threshold", type=float, default=None)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--embedding-dim", type=int, default=16)
    p.set_defaults(func=cmd_prior_train)

    p = sub.add_parser("train", help="train a relation model")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scorer", choices=("transe", "mure", "murp", "atth"), default=None)
    p.add_argument("--prior", default=None, help="'standard' or a prior file path")
    p.set_defaults(func=cmd_train)

    def eval_like(name, help_text):
        q = sub.add_parser(name, help=help_text)
        q.add_argument("--checkpoint", required=True)
        q.add_argument("--dataset", required=True)
        q.add_argument("--out", required=True)
        q.add_argument("--embeddings", default=None)
        return q

    p = eval_like("eval", "evaluate a checkpoint on a dataset")
    p.add_argument("--convention", choices=("matres", "micro"), default="matres")
    p.set_defaults(func=cmd_eval)

    p = eval_like("predict", "write per-instance labels and probabilities")
    p.add_argument("--mc-samples", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = eval_like("uncertainty", "Monte Carlo uncertainty and simplex export")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drop-class", default=None)
    p.set_defaults(func=cmd_uncertainty)

    p = eval_like("activity", "per-dimension latent activity")
    p.set_defaults(func=cmd_activity)
    return parser


def main(argv=None):
    torch.set_num_threads(1)  # keeps runs bit-reproducible on one machine
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInputError, DataFormatError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 4
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - uniform runtime exit code
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
