"""Command-line entry point.

Exit codes: 0 success, 2 configuration error (nothing written), 1 runtime or
numeric error. Each artifact-producing command writes ``manifest.json``
(status "running") before it starts and rewrites it as "complete" at the end.
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path

from semiproto import __version__
from semiproto.baselines import FEATURES, METHODS, run_baseline
from semiproto.config import RunConfig, apply_overrides, load_config
from semiproto.episodes import check_feasible, gen_synthetic, make_split, save_dataset, synthetic_spec_from_dict
from semiproto.errors import ConfigurationError, ContractError, DatasetFormatError, NumericError
from semiproto.model import params_from_arrays
from semiproto.numerics import load_checkpoint, save_checkpoint
from semiproto.refinement import Variant
from semiproto import results as res
from semiproto import train as tr

log = logging.getLogger("semiproto")

DEFAULT_SWEEP = (0, 1, 2, 5, 10, 25)
MASK_COLUMNS = ("split_seed", "episode_id", "item_id", "class_id", "mask", "assignment", "is_distractor")


# ----------------------------------------------------------------- arguments


def build_parser():
    parser = argparse.ArgumentParser(prog="semiproto", description="Semi-supervised prototypical networks.")
    parser.add_argument("--version", action="version", version=f"semiproto {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, config=True, run=False, out_help="output run directory"):
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("--config", required=not run, help="RunConfig JSON document")
        if run:
            p.add_argument("--run", required=True, help="directory of a finished train run")
        p.add_argument("--override", nargs="+", action="extend", default=[], metavar="KEY=VALUE",
                       help="dotted-key config overrides")
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None, help="evaluation threads")
        return p

    add("gen-data", "generate a synthetic FSLDS1 dataset", out_help="dataset file")
    add("split", "write the labeled/unlabeled split of a dataset", out_help="split JSON file")
    add("train", "episodic training, one model per split seed")
    add("eval", "evaluate a trained run", run=True)
    add("ssi-eval", "semi-supervised inference with a supervised run", run=True)
    sweep = add("sweep-m", "accuracy as a function of the unlabeled-set size", run=True)
    sweep.add_argument("--m-list", type=int, nargs="+", default=list(DEFAULT_SWEEP))
    base = add("baseline", "1-NN / logistic regression baselines")
    base.add_argument("--method", choices=METHODS, required=True)
    base.add_argument("--features", choices=FEATURES, required=True)
    mask = add("mask-hist", "mask values joined with distractor flags", run=True)
    mask.add_argument("--episodes", type=int, default=100)
    exp = sub.add_parser("export", help="consolidate results of every run below a directory")
    exp.add_argument("--runs", required=True)
    exp.add_argument("--out", required=True, help="consolidated CSV file")
    return parser


# ------------------------------------------------------------------- helpers


def _config(args, base_doc=None):
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigurationError(f"config file {path} does not exist", key="config")
        config = load_config(path, args.override)
    else:
        config = RunConfig.from_dict(apply_overrides(base_doc, args.override))
    if args.workers is not None:
        config = config.replace(workers=args.workers)
    if config.dataset is not None and not Path(config.dataset).is_file():
        raise ConfigurationError(f"dataset file {config.dataset} does not exist", key="dataset")
    return config


def _load_run(args):
    run_dir = Path(args.run)
    if not (run_dir / res.MANIFEST).is_file():
        raise ConfigurationError(f"{run_dir} is not a run directory", key="run")
    manifest = res.read_manifest(run_dir)
    if manifest.get("command") != "train" or manifest.get("status") != "complete":
        raise ConfigurationError(f"{run_dir} is not a completed train run", key="run")
    return run_dir, manifest


def _load_states(run_dir, config, dataset, seeds):
    emb_cfg = tr.embedding_config(config, dataset)
    states = {}
    for s in seeds:
        stem = run_dir / "checkpoints" / f"split_{s}"
        if not stem.with_suffix(".json").is_file():
            raise ConfigurationError(f"no checkpoint for split seed {s} in {run_dir}", key="split_seeds")
        arrays, extra = load_checkpoint(stem)
        try:
            model = params_from_arrays(emb_cfg, arrays, extra.get("init_seed", 0))
        except KeyError as err:
            raise ConfigurationError(f"checkpoint does not match the embedding config: {err}", key="embedding")
        states[s] = tr.TrainState(model, None, extra.get("updates", 0), s, Variant(extra["train_variant"]),
                                  extra.get("best_val", float("nan")), extra.get("best_step", -1))
    return states


def _prepare(config, dataset, m_list=None, h=None):
    splits = {s: tr.split_for(config, dataset, s) for s in config.split_seeds}
    for split in splits.values():
        for m in m_list if m_list is not None else config.m_test_list:
            check_feasible(dataset, split, "test", config.N, config.K, m,
                           config.H_test if h is None else h, config.q_per_class)
    return splits


def _begin(out, command, config, extra=""):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    run_id = res.run_id_for(command, config.config_hash(), extra)
    res.write_manifest(out, res.manifest_doc(run_id, command, config, "running"))
    return out, run_id, time.time()


def _finish(out, run_id, command, config, start, **extra):
    res.write_manifest(out, res.manifest_doc(run_id, command, config, "complete", time.time() - start, **extra))


def _result_rows(run_id, results):
    return [row for r in results for row in r.rows(run_id)]


def _print_results(results):
    for r in results:
        print(f"{r.variant:<28} M_test={r.M_test:<3} H={r.H:<3} accuracy {r.mean:.4f} ± {r.stderr:.4f}")


# ------------------------------------------------------------------ commands


def cmd_gen_data(args):
    config = _config(args)
    if config.synthetic is None:
        raise ConfigurationError("gen-data needs a 'synthetic' section", key="synthetic")
    doc = dict(config.synthetic)
    if args.seed is not None:
        doc["seed"] = args.seed
    spec = synthetic_spec_from_dict(doc)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(gen_synthetic(spec), out)
    print(f"wrote {out}")


def cmd_split(args):
    config = _config(args)
    dataset = tr.load_data(config)
    seed = config.split_seeds[0] if args.seed is None else args.seed
    split = make_split(dataset, config.labeled_ratio, seed, min_labeled=tr.min_labeled(config))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    res.atomic_write(out, json.dumps(split.to_json(), sort_keys=True) + "\n")
    print(f"wrote {out}")


def cmd_train(args):
    config = _config(args)
    if args.seed is not None:
        config = config.replace(model_seed=args.seed)
    dataset = tr.load_data(config)
    splits = {s: tr.split_for(config, dataset, s) for s in config.split_seeds}
    for split in splits.values():
        tr.validate(config, dataset, split)
    out, run_id, start = _begin(args.out, "train", config)
    ckpt = out / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    states = {}
    for s in config.split_seeds:
        state = tr.train_one(config, dataset, splits[s], s)
        states[s] = state
        save_checkpoint(
            state.model.named(), ckpt / f"split_{s}",
            extra={"split_seed": s, "train_variant": state.train_variant.value, "updates": state.updates,
                   "best_val": state.best_val, "best_step": state.best_step,
                   "init_seed": state.model.embedding.init_seed},
        )
        log.info("split %s trained: best val %.4f at %d", s, state.best_val, state.best_step)
    results = [tr.evaluate(states, config, M_test=m, dataset=dataset, splits=splits) for m in config.m_test_list]
    res.write_results(out / res.RESULTS, _result_rows(run_id, results))
    _finish(out, run_id, "train", config, start)
    _print_results(results)


def _eval_like(args, command, extra_check=None, m_list=None):
    run_dir, manifest = _load_run(args)
    config = _config(args, manifest["config"])
    dataset = tr.load_data(config)
    m_list = config.m_test_list if m_list is None else m_list
    splits = _prepare(config, dataset, m_list)
    states = _load_states(run_dir, config, dataset, config.split_seeds)
    if extra_check:
        extra_check(states)
    out, run_id, start = _begin(args.out, command, config, f"{manifest['run_id']}|{m_list}")
    return config, dataset, splits, states, out, run_id, start, manifest, m_list


def cmd_eval(args):
    config, dataset, splits, states, out, run_id, start, manifest, m_list = _eval_like(args, "eval")
    results = [tr.evaluate(states, config, M_test=m, dataset=dataset, splits=splits) for m in m_list]
    res.write_results(out / res.RESULTS, _result_rows(run_id, results))
    _finish(out, run_id, "eval", config, start, source_run=manifest["run_id"])
    _print_results(results)


def _require_supervised(states):
    for s, state in states.items():
        if state.train_variant is not Variant.NONE:
            raise ConfigurationError(
                f"ssi-eval needs a run trained without refinement; split {s} used {state.train_variant.value}",
                key="run",
            )


def cmd_ssi_eval(args):
    config, dataset, splits, states, out, run_id, start, manifest, m_list = _eval_like(
        args, "ssi-eval", _require_supervised
    )
    results = [tr.semi_supervised_inference(states, config, M_test=m, dataset=dataset, splits=splits) for m in m_list]
    res.write_results(out / res.RESULTS, _result_rows(run_id, results))
    _finish(out, run_id, "ssi-eval", config, start, source_run=manifest["run_id"])
    _print_results(results)


def cmd_sweep_m(args):
    config, dataset, splits, states, out, run_id, start, manifest, m_list = _eval_like(
        args, "sweep-m", m_list=list(args.m_list)
    )
    results = [r for _, r in tr.sweep_unlabeled(states, config, m_list, dataset=dataset, splits=splits)]
    res.write_results(out / res.RESULTS, _result_rows(run_id, results))
    _finish(out, run_id, "sweep-m", config, start, source_run=manifest["run_id"], m_list=m_list)
    _print_results(results)


def cmd_baseline(args):
    config = _config(args)
    dataset = tr.load_data(config)
    splits = _prepare(config, dataset, [0], 0)
    out, run_id, start = _begin(args.out, "baseline", config, f"{args.method}|{args.features}")
    result = run_baseline(args.method, args.features, config, dataset, splits)
    meta = {k: v for k, v in result.metadata.items() if k != "wall_time"}
    res.write_results(out / res.RESULTS, result.rows(run_id))
    _finish(out, run_id, "baseline", config, start, method=args.method, features=args.features, baseline=meta)
    _print_results([result])


def _require_masked(states):
    for s, state in states.items():
        if state.train_variant is not Variant.MASKED_SOFT_KMEANS:
            raise ConfigurationError(
                f"mask-hist needs a MASKED_SOFT_KMEANS run; split {s} used {state.train_variant.value}", key="run"
            )


def cmd_mask_hist(args):
    if args.episodes < 1:
        raise ConfigurationError("--episodes must be >= 1", key="episodes")
    config, dataset, splits, states, out, run_id, start, manifest, m_list = _eval_like(
        args, "mask-hist", _require_masked, m_list=None
    )
    rows, summary = tr.mask_histogram(states, config, args.episodes, dataset=dataset, splits=splits)
    lines = [",".join(MASK_COLUMNS)]
    lines += [",".join(res.format_value(r[c]) for c in MASK_COLUMNS) for r in rows]
    res.atomic_write(out / "masks.csv", "\n".join(lines) + "\n")
    res.atomic_write(out / "mask_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _finish(out, run_id, "mask-hist", config, start, source_run=manifest["run_id"], episodes=args.episodes)
    for key, value in summary.items():
        print(f"{key}: {value}")


def cmd_export(args):
    root = Path(args.runs)
    if not root.is_dir():
        raise ConfigurationError(f"{root} is not a directory", key="runs")
    rows = res.export(root)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    res.write_results(out, rows)
    print(f"wrote {len(rows)} rows to {out}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "ssi-eval": cmd_ssi_eval,
    "sweep-m": cmd_sweep_m,
    "baseline": cmd_baseline,
    "mask-hist": cmd_mask_hist,
    "export": cmd_export,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigurationError as err:
        key = f" [{err.key}]" if getattr(err, "key", None) else ""
        print(f"configuration error{key}: {err}", file=sys.stderr)
        return 2
    except (NumericError, ContractError, DatasetFormatError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
