"""Command-line interface: synth, train, eval, diagnose, sweep.

Runs are driven by a JSON config with exactly one data source ("data"
paths or an inline "synthetic" spec) plus "train", "matching" and "eval"
sections; a handful of flags override config fields. The seed resolves as
flag > config > DMREC_SEED env var > 0. Exit codes: 0 success, 2 for
usage/config/data problems, 3 for numeric failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from .data import (
    SyntheticSpec,
    build_table,
    load_embeddings,
    load_interactions,
    save_mapping,
    split_ratio,
    synth_generate,
    write_embeddings_emb1,
)
from .errors import ConfigError, DataError, InvalidShapeError, NumericError
from .evaluation import distribution_activity, evaluate_model, sparsity_report
from .matching import MatchingConfig, validate_matching
from .model import ModelDims
from .numerics import spawn_rngs
from .training import (
    TrainConfig,
    fit,
    load_checkpoint,
    save_checkpoint,
    validate_train,
    write_history,
)

SEED_ENV = "DMREC_SEED"

# spawn indices of the per-purpose rng streams under one master seed; fit()
# consumes children 0 and 1 internally
SYNTH_STREAM = 2
SPLIT_STREAM = 3


def _float_repr(x):
    return repr(float(x))


def _build_section(cls, payload, name):
    known = {f.name for f in fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown {name} config keys: {sorted(unknown)}")
    return cls(**payload)


class RunConfig:
    """Parsed config file plus which fields were explicitly set."""

    def __init__(self, raw):
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(raw) - {"data", "synthetic", "train", "matching", "eval"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        if ("data" in raw) == ("synthetic" in raw):
            raise ConfigError("config needs exactly one of 'data' or 'synthetic'")
        self.data = raw.get("data")
        if self.data is not None:
            allowed = {"interactions", "user_embeddings", "item_embeddings", "min_rating"}
            bad = set(self.data) - allowed
            if bad:
                raise ConfigError(f"unknown data config keys: {sorted(bad)}")
            if "interactions" not in self.data:
                raise ConfigError("data config needs an 'interactions' path")
            self.data.setdefault("min_rating", 3)
        self.synthetic = None
        if "synthetic" in raw:
            self.synthetic = _build_section(SyntheticSpec, raw["synthetic"], "synthetic")
        self.seed_given = "seed" in raw.get("train", {})
        self.train = _build_section(TrainConfig, raw.get("train", {}), "train")
        self.matching = _build_section(MatchingConfig, raw.get("matching", {}), "matching")
        eval_section = raw.get("eval", {})
        bad = set(eval_section) - {"cutoffs", "group_edges"}
        if bad:
            raise ConfigError(f"unknown eval config keys: {sorted(bad)}")
        self.cutoffs = tuple(eval_section.get("cutoffs", (10, 20)))
        self.group_edges = eval_section.get("group_edges")

    def resolved(self):
        out = {"train": asdict(self.train), "matching": asdict(self.matching),
               "eval": {"cutoffs": list(self.cutoffs), "group_edges": self.group_edges}}
        if self.data is not None:
            out["data"] = self.data
        else:
            out["synthetic"] = asdict(self.synthetic)
        return out


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    except TypeError:
        raise ConfigError("a --config file is required") from None
    return RunConfig(raw)


def apply_overrides(cfg, args):
    if getattr(args, "strategy", None) is not None:
        cfg.matching.strategy = args.strategy
    if getattr(args, "beta", None) is not None:
        cfg.matching.beta = args.beta
    if getattr(args, "alpha", None) is not None:
        cfg.matching.alpha = args.alpha
    if getattr(args, "ablation", None) is not None:
        cfg.matching.ablation = args.ablation
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
        cfg.seed_given = True
    if not cfg.seed_given:
        env = os.environ.get(SEED_ENV)
        if env is not None:
            try:
                cfg.train.seed = int(env)
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    validate_train(cfg.train)
    validate_matching(cfg.matching)
    return cfg


def prepare_data(cfg):
    """Build the split dataset and (optionally) the embedding table."""
    streams = spawn_rngs(cfg.train.seed, 4)
    if cfg.synthetic is not None:
        matrix, table = synth_generate(cfg.synthetic, streams[SYNTH_STREAM])
    else:
        matrix = load_interactions(cfg.data["interactions"], cfg.data.get("min_rating"))
        table = None
        upath = cfg.data.get("user_embeddings")
        ipath = cfg.data.get("item_embeddings")
        if (upath is None) != (ipath is None):
            raise ConfigError("user_embeddings and item_embeddings must come together")
        if upath is not None:
            user_emb = load_embeddings(upath, expected_rows=matrix.n_users)
            item_emb = load_embeddings(ipath, expected_rows=matrix.n_items)
            table = build_table(matrix, user_emb, item_emb)
    return split_ratio(matrix, rng=streams[SPLIT_STREAM]), table


def cmd_synth(args):
    spec = SyntheticSpec(users=args.users, items=args.items, clusters=args.clusters,
                         p_in=args.p_in, p_out=args.p_out,
                         embedding_dim=args.embedding_dim, noise=args.noise,
                         informative=args.informative == "true")
    seed = args.seed if args.seed is not None else int(os.environ.get(SEED_ENV, "0"))
    rng = spawn_rngs(seed, 4)[SYNTH_STREAM]
    matrix, table = synth_generate(spec, rng)
    os.makedirs(args.out, exist_ok=True)
    tsv = os.path.join(args.out, "interactions.tsv")
    item_order, seen = [], set()
    with open(tsv, "w", encoding="utf-8", newline="\n") as fh:
        for u in range(matrix.n_users):
            for item in matrix.train[u]:
                if int(item) not in seen:
                    seen.add(int(item))
                    item_order.append(int(item))
                fh.write(f"{matrix.user_ids[u]}\t{matrix.item_ids[item]}\n")
    # loading indexes ids by first appearance; emit item embedding rows in
    # that order (dropping never-interacted items) so the round trip aligns
    write_embeddings_emb1(os.path.join(args.out, "users.emb1"), table.user_matrix)
    write_embeddings_emb1(os.path.join(args.out, "items.emb1"),
                          table.item_matrix[np.array(item_order, dtype=np.int64)])
    manifest = {"spec": asdict(spec), "seed": seed}
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    count = int(sum(len(t) for t in matrix.train))
    print(f"synth: {matrix.n_users} users, {matrix.n_items} items, "
          f"{count} interactions -> {args.out}")
    return 0


def cmd_train(args):
    cfg = apply_overrides(load_config(args.config), args)
    matrix, table = prepare_data(cfg)
    os.makedirs(args.out, exist_ok=True)
    try:
        result = fit(matrix, table, cfg.train, cfg.matching, threads=args.threads)
    except NumericError as exc:
        path = os.path.join(args.out, "diagnostics.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"error": str(exc), "config": cfg.resolved()},
                      fh, sort_keys=True, indent=2)
            fh.write("\n")
        raise NumericError(f"{exc} (diagnostics written to {path})") from None
    save_checkpoint(os.path.join(args.out, "checkpoint.dmc"), result.checkpoint)
    write_history(os.path.join(args.out, "history.csv"), result.history)
    save_mapping(os.path.join(args.out, "mapping.json"), matrix)
    with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.resolved(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"train: best val recall@20 {_float_repr(result.checkpoint.best_metric)} "
          f"at epoch {result.checkpoint.best_epoch} "
          f"({len(result.history)} epochs) -> {args.out}")
    return 0


def _load_for_eval(args):
    cfg = apply_overrides(load_config(args.config), args)
    ckpt = load_checkpoint(args.checkpoint)
    matrix, _ = prepare_data(cfg)
    dims = ModelDims(**ckpt.dims)
    if dims.n_items != matrix.n_items:
        raise InvalidShapeError(
            f"checkpoint was trained on {dims.n_items} items, dataset has {matrix.n_items}")
    return cfg, ckpt, matrix, dims


def cmd_eval(args):
    cfg, ckpt, matrix, dims = _load_for_eval(args)
    report = evaluate_model(ckpt.values, dims, matrix, split=args.split,
                            cutoffs=cfg.cutoffs, threads=args.threads)
    payload = {"split": report.split, "user_count": int(len(report.user_indices)),
               "means": report.means}
    for name, value in sorted(report.means.items()):
        print(f"{args.split} {name}: {_float_repr(value)}")
    if args.groups:
        groups = sparsity_report(report, matrix, cfg.group_edges)
        payload["groups"] = groups
        for g in groups:
            print(f"group ({g['low']}, {g['high']}]: count {g['count']} "
                  f"proportion {g['proportion']:.4f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
    if args.per_user:
        names = report.metric_names()
        with open(args.per_user, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("user_index," + ",".join(names) + "\n")
            for i, u in enumerate(report.user_indices):
                vals = ",".join(_float_repr(report.per_user[m][i]) for m in names)
                fh.write(f"{int(u)},{vals}\n")
    return 0


def cmd_diagnose(args):
    cfg, ckpt, matrix, dims = _load_for_eval(args)
    activity = distribution_activity(ckpt.values, dims, matrix)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("dim,log_activity\n")
        for k, value in enumerate(activity):
            fh.write(f"{k},{_float_repr(value)}\n")
    print(f"diagnose: median log activity {_float_repr(np.median(activity))} "
          f"over {dims.latent} dims -> {args.out}")
    return 0


def cmd_sweep(args):
    cfg = apply_overrides(load_config(args.config), args)
    if cfg.matching.strategy == "none":
        raise ConfigError("sweep needs a matching strategy (godm, cpdm or mddm)")
    try:
        grid = [float(b) for b in args.beta_grid.split(",") if b.strip() != ""]
    except ValueError:
        raise ConfigError(f"bad --beta-grid {args.beta_grid!r}") from None
    if not grid:
        raise ConfigError("empty --beta-grid")
    seeds = [cfg.train.seed]
    if args.seeds is not None:
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
        except ValueError:
            raise ConfigError(f"bad --seeds {args.seeds!r}") from None
    rows = []
    for beta in sorted(grid):
        for seed in seeds:
            cfg.train.seed = seed
            cfg.matching.beta = beta
            validate_matching(cfg.matching)
            matrix, table = prepare_data(cfg)
            result = fit(matrix, table, cfg.train, cfg.matching, threads=args.threads)
            dims = ModelDims(**result.checkpoint.dims)
            test = evaluate_model(result.checkpoint.values, dims, matrix,
                                  split="test", cutoffs=(20,), threads=args.threads)
            rows.append((beta, result.checkpoint.best_metric, test.means["recall@20"]))
            print(f"sweep: beta {_float_repr(beta)} seed {seed} "
                  f"val {_float_repr(rows[-1][1])} test {_float_repr(rows[-1][2])}")
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("beta,val_recall@20,test_recall@20\n")
        for beta, val, test in rows:
            fh.write(f"{_float_repr(beta)},{_float_repr(val)},{_float_repr(test)}\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="distrec",
        description="generative recommender with latent distribution matching")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a clustered synthetic corpus")
    synth.add_argument("--users", type=int, default=400)
    synth.add_argument("--items", type=int, default=200)
    synth.add_argument("--clusters", type=int, default=5)
    synth.add_argument("--p-in", dest="p_in", type=float, default=0.08)
    synth.add_argument("--p-out", dest="p_out", type=float, default=0.005)
    synth.add_argument("--embedding-dim", type=int, default=32)
    synth.add_argument("--noise", type=float, default=0.1)
    synth.add_argument("--informative", choices=["true", "false"], default="true",
                       help="false swaps cluster one-hots for matched-norm noise")
    synth.add_argument("--seed", type=int, default=None)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth)

    def add_run_flags(p, with_matching=True):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
        if with_matching:
            p.add_argument("--strategy", choices=["none", "godm", "cpdm", "mddm"])
            p.add_argument("--beta", type=float, default=None)
            p.add_argument("--alpha", type=float, default=None)
            p.add_argument("--ablation", choices=["off", "no_pmn", "add", "no_mixing"])

    train = sub.add_parser("train", help="fit a model and write checkpoint artifacts")
    add_run_flags(train)
    train.add_argument("--out", required=True)
    train.set_defaults(func=cmd_train)

    evalp = sub.add_parser("eval", help="evaluate a checkpoint by full ranking")
    add_run_flags(evalp)
    evalp.add_argument("--checkpoint", required=True)
    evalp.add_argument("--split", choices=["val", "test"], default="test")
    evalp.add_argument("--groups", action="store_true",
                       help="add the training-degree sparsity group table")
    evalp.add_argument("--per-user", dest="per_user", default=None,
                       help="write per-user metric rows to this CSV")
    evalp.add_argument("--out", default=None, help="write the report JSON here")
    evalp.set_defaults(func=cmd_eval)

    diag = sub.add_parser("diagnose", help="write per-dimension latent log-activity")
    add_run_flags(diag)
    diag.add_argument("--checkpoint", required=True)
    diag.add_argument("--out", required=True)
    diag.set_defaults(func=cmd_diagnose)

    sweep = sub.add_parser("sweep", help="train across a beta grid, one row per run")
    add_run_flags(sweep)
    sweep.add_argument("--beta-grid", dest="beta_grid", required=True,
                       help="comma-separated beta values")
    sweep.add_argument("--seeds", default=None, help="comma-separated seeds (optional)")
    sweep.add_argument("--out", required=True)
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, InvalidShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
