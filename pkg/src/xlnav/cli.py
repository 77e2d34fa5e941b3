"""Command-line entry point: dataset generation, training, evaluation,
experiment protocols, and episode introspection.

Every command writes its artifacts plus a single ``manifest.json``
recording the command, the fully resolved configuration, the seeds, the
input/output paths, a sha256 per emitted file, and the wall-clock time.
Reruns with identical flags reproduce every CSV/JSON/checkpoint
byte-identically (the manifest differs only in wall-clock).

Errors print one machine-parsable line ``xlnav-error: <code>: <detail>``
to stderr and exit nonzero.
"""

import argparse
import hashlib
import json
import os
import shutil
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

from . import lang as L
from . import metrics as M
from . import trainer as T
from . import world as W


class CliError(Exception):
    def __init__(self, code, detail):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail


# ------------------------------------------------------------- plumbing

def _prepare_out(path, force):
    out = Path(path)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise CliError("output-dir-not-empty",
                           f"{out} exists and is not empty; pass --force "
                           "to overwrite")
        for child in out.iterdir():
            if child.is_dir():
                shutil.rmtree(child)
            else:
                child.unlink()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out, command, config, seeds, inputs, started):
    hashes = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            hashes[str(p.relative_to(out))] = _sha256(p)
    manifest = {
        "command": command,
        "config": config,
        "seeds": list(seeds),
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": hashes,
        "wall_clock_s": round(time.time() - started, 3),
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(text)


def _parse_seeds(text):
    try:
        return tuple(int(s) for s in text.split(","))
    except ValueError:
        raise CliError("bad-seeds", f"cannot parse seed list: {text!r}")


def _load_train_config(args):
    overrides = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as f:
                overrides = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError("bad-config", f"{args.config}: {exc}")
        valid = {f.name for f in fields(T.TrainConfig)}
        unknown = set(overrides) - valid
        if unknown:
            raise CliError(
                "bad-config",
                f"unknown keys {sorted(unknown)}; valid keys are "
                f"{sorted(valid)}")
        if "seeds" in overrides:
            overrides["seeds"] = tuple(overrides["seeds"])
    if getattr(args, "regime", None):
        overrides["regime"] = args.regime
    if getattr(args, "seeds", None):
        overrides["seeds"] = _parse_seeds(args.seeds)
    try:
        return T.TrainConfig(**overrides)
    except ValueError as exc:
        raise CliError("bad-config", str(exc))


def _check_regime(regime):
    if regime not in T.REGIMES:
        raise CliError(
            "unknown-regime",
            f"{regime!r}; valid regimes are {', '.join(T.REGIMES)}")


def _threads():
    raw = os.environ.get("XLNAV_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError("bad-env", f"XLNAV_THREADS={raw!r} is not an int")
    return max(1, n)


# ------------------------------------------------- dataset (de)serializing

def _instruction_to_obj(ins):
    return {"language": ins.language, "tokens": ins.tokens,
            "text": ins.text, "provenance": ins.provenance,
            "origin_index": ins.origin_index, "unk_count": ins.unk_count}


def _instruction_from_obj(obj):
    return L.Instruction(**obj)


def _record_to_obj(rec):
    return {"path_id": rec.path_id, "world_id": rec.world_id,
            "heading": rec.heading, "path": rec.path,
            "instructions": {
                lang: [_instruction_to_obj(i) for i in instrs]
                for lang, instrs in rec.instructions.items()}}


def _record_from_obj(obj):
    return L.Record(
        path_id=obj["path_id"], world_id=obj["world_id"],
        heading=obj["heading"], path=obj["path"],
        instructions={lang: [_instruction_from_obj(i) for i in instrs]
                      for lang, instrs in obj["instructions"].items()})


def save_dataset(out, dataset, min_freq):
    for wid, world in dataset.worlds.items():
        _write(out / "worlds" / f"world_{wid:03d}.json",
               W.world_to_json(world))
    for split, records in dataset.splits.items():
        body = json.dumps([_record_to_obj(r) for r in records], indent=1)
        _write(out / "splits" / f"{split}.json", body + "\n")
    meta = {"epsilon": dataset.epsilon, "seed": dataset.seed,
            "mt_fingerprint": dataset.mt_fingerprint,
            "min_freq": min_freq}
    _write(out / "dataset.json", json.dumps(meta, indent=1,
                                            sort_keys=True) + "\n")


def load_dataset(data_dir):
    """Rebuild a Dataset from a gen-data output directory.

    The vocabulary is reconstructed deterministically from the stored
    train split (same corpus, same ordering as generation); the lexicon
    is a generation-time artifact and is not needed downstream.
    """
    root = Path(data_dir)
    meta_path = root / "dataset.json"
    if not meta_path.exists():
        raise CliError("bad-data-dir",
                       f"{root} has no dataset.json (not a gen-data "
                       "output?)")
    meta = json.loads(meta_path.read_text())
    worlds = {}
    for p in sorted((root / "worlds").glob("world_*.json")):
        wid = int(p.stem.split("_")[1])
        worlds[wid] = W.world_from_json(p.read_text())
    splits = {}
    for p in sorted((root / "splits").glob("*.json")):
        splits[p.stem] = [_record_from_obj(o)
                          for o in json.loads(p.read_text())]
    corpus = [i for rec in splits["train"]
              for lang in ("src", "tgt")
              for i in rec.instructions[lang]]
    vocab = L.build_vocab(corpus, min_freq=meta["min_freq"])
    return L.Dataset(splits=splits, worlds=worlds, vocab=vocab,
                     lexicon=None, epsilon=meta["epsilon"],
                     seed=meta["seed"],
                     mt_fingerprint=meta["mt_fingerprint"])


# ------------------------------------------------------------- commands

def cmd_gen_world(args):
    started = time.time()
    out = _prepare_out(args.out, args.force)
    seeds = _parse_seeds(args.seeds)
    for seed in seeds:
        world = W.generate_world(seed, args.nodes)
        _write(out / f"world_{seed:03d}.json", W.world_to_json(world))
    _write_manifest(out, "gen-world",
                    {"seeds": list(seeds), "nodes": args.nodes},
                    seeds, {}, started)
    return 0


def cmd_gen_data(args):
    started = time.time()
    out = _prepare_out(args.out, args.force)
    if args.epsilon < 0 or args.epsilon > 1:
        raise CliError("bad-epsilon", f"epsilon={args.epsilon} outside "
                       "[0, 1]")
    seen = [W.generate_world(1000 * args.seed + i, args.nodes)
            for i in range(args.seen_worlds)]
    unseen = [W.generate_world(1000 * args.seed + 500 + i, args.nodes)
              for i in range(args.unseen_worlds)]
    dataset = L.make_dataset(
        seen, unseen, args.train, args.val_seen, args.val_unseen,
        epsilon=args.epsilon, seed=args.seed, min_freq=args.min_freq)
    save_dataset(out, dataset, args.min_freq)
    config = {k: getattr(args, k) for k in
              ("seed", "seen_worlds", "unseen_worlds", "nodes", "train",
               "val_seen", "val_unseen", "epsilon", "min_freq")}
    _write_manifest(out, "gen-data", config, [args.seed], {}, started)
    return 0


def cmd_train(args):
    started = time.time()
    _check_regime(args.regime)
    dataset = load_dataset(args.data)
    config = _load_train_config(args)
    out = _prepare_out(args.out, args.force)
    per_seed = {"val_seen": {}, "val_unseen": {}}
    for seed in config.seeds:
        ckpt, log = T.train(config, dataset, seed=seed)
        T.save_checkpoint(out / f"seed_{seed}.xlnv", ckpt)
        _write(out / f"seed_{seed}_runlog.csv", log.to_csv())
        for split in ("val_seen", "val_unseen"):
            per_seed[split][seed] = T.evaluate(
                ckpt, dataset, split, config.regime,
                limit_per_record=config.eval_instructions)
    reports = {split: M.aggregate(f"{config.regime}/{split}", metrics)
               for split, metrics in per_seed.items()}
    _write(out / "report.csv", M.report_to_csv(reports.values()))
    _write_manifest(out, "train", asdict(config), config.seeds,
                    {"data": args.data}, started)
    return 0


def cmd_eval(args):
    started = time.time()
    dataset = load_dataset(args.data)
    out = _prepare_out(args.out, args.force)
    if args.regime == "teacher-oracle":
        # shortest-path policy: checks the benchmark, not a model
        from . import agent as A
        regime, policy = "train_w_an", "teacher"
        aconfig = T.agent_config_for(dataset, T.TrainConfig(), regime)
        ckpt = T.Checkpoint(params=A.init_params(aconfig, seed=0),
                            agent_config=aconfig, iteration=0, seed=0)
    else:
        _check_regime(args.regime)
        regime, policy = args.regime, args.policy
        if not args.checkpoint:
            raise CliError("missing-checkpoint",
                           "--checkpoint is required unless --regime "
                           "teacher-oracle")
        ckpt = T.load_checkpoint(args.checkpoint)
    episodes = T.evaluate(ckpt, dataset, args.split, regime,
                          policy=policy)
    report = M.aggregate(f"{regime}/{args.split}",
                         {ckpt.seed: episodes})
    _write(out / "report.csv", M.report_to_csv([report]))
    _write_manifest(out, "eval",
                    {"regime": args.regime, "split": args.split,
                     "policy": policy}, [ckpt.seed],
                    {"data": args.data,
                     "checkpoint": args.checkpoint or ""}, started)
    return 0


def cmd_zero_shot(args):
    started = time.time()
    dataset = load_dataset(args.data)
    config = _load_train_config(args)
    out = _prepare_out(args.out, args.force)
    _, csv = T.zero_shot_experiment(config, dataset)
    _write(out / "zero_shot.csv", csv)
    _write_manifest(out, "zero-shot", asdict(config), config.seeds,
                    {"data": args.data}, started)
    return 0


def cmd_transfer_sweep(args):
    started = time.time()
    dataset = load_dataset(args.data)
    config = _load_train_config(args)
    out = _prepare_out(args.out, args.force)
    methods = tuple(args.methods.split(","))
    for m in methods:
        if m not in T.TRANSFER_METHODS:
            raise CliError(
                "unknown-method",
                f"{m!r}; valid methods are "
                f"{', '.join(T.TRANSFER_METHODS)}")
    epsilons = ([float(e) for e in args.epsilons.split(",")]
                if args.epsilons else None)
    _, csv = T.transfer_sweep(config, dataset, epsilons=epsilons,
                              methods=methods, workers=_threads())
    _write(out / "transfer.csv", csv)
    _write_manifest(out, "transfer-sweep",
                    {**asdict(config), "methods": list(methods),
                     "epsilons": epsilons}, config.seeds,
                    {"data": args.data}, started)
    return 0


def cmd_inspect(args):
    started = time.time()
    from . import agent as A
    dataset = load_dataset(args.data)
    ckpt = T.load_checkpoint(args.checkpoint)
    if ckpt.agent_config.mode != "xli":
        raise CliError("mono-checkpoint",
                       "inspect requires a dual-stream (xli) checkpoint")
    try:
        split, index_text = args.episode_id.split(":")
        index = int(index_text)
        rec, instrs = T.eval_examples(dataset, split, "xli")[index]
    except (ValueError, KeyError, IndexError):
        raise CliError("bad-episode-id",
                       f"{args.episode_id!r}; expected <split>:<index>")
    out = _prepare_out(args.out, args.force)
    world = dataset.world_of(rec)
    ids = {lang: dataset.vocab.encode(i.tokens)
           for lang, i in instrs.items()}
    traj, fusions, trace = A.run_episode(
        world, W.Pose(rec.path[0], rec.heading), ids, ckpt.params,
        ckpt.agent_config)
    steps = []
    for fusion, step in zip(fusions, trace):
        steps.append({
            "t": step["t"],
            "alpha": fusion.alpha,
            "action": step["action"],
            "visual_attention": step["vis_weights"],
            "textual_attention": step["txt_weights"],
        })
    payload = {
        "episode_id": args.episode_id,
        "path_id": rec.path_id,
        "instructions": {lang: i.text for lang, i in instrs.items()},
        "tokens": {lang: ["<bos>"] + list(i.tokens) + ["<eos>"]
                   for lang, i in instrs.items()},
        "trajectory": traj,
        "reference": rec.path,
        "steps": steps,
    }
    _write(out / "episode.json",
           json.dumps(payload, indent=1, sort_keys=True) + "\n")
    _write_manifest(out, "inspect", {"episode_id": args.episode_id},
                    [ckpt.seed],
                    {"data": args.data, "checkpoint": args.checkpoint},
                    started)
    return 0


def cmd_corpus_stats(args):
    started = time.time()
    dataset = load_dataset(args.data)
    out = _prepare_out(args.out, args.force)
    for split, records in sorted(dataset.splits.items()):
        corpus = [i for rec in records for lang in ("src", "tgt")
                  for i in rec.instructions[lang]]
        _write(out / f"stats_{split}.csv",
               L.stats_to_csv(L.corpus_stats(corpus)))
    _write_manifest(out, "corpus-stats", {}, [], {"data": args.data},
                    started)
    return 0


# --------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(
        prog="xlnav",
        description="Bilingual instruction-following navigation "
                    "benchmark and agent")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.set_defaults(fn=fn)
        p.add_argument("--out", required=True,
                       help="output directory (one manifest per run)")
        p.add_argument("--force", action="store_true",
                       help="overwrite a non-empty output directory")
        return p

    p = add("gen-world", cmd_gen_world, help="generate world graphs")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--nodes", type=int, default=30)

    p = add("gen-data", cmd_gen_data,
            help="generate a bilingual navigation dataset")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--seen-worlds", type=int, default=3)
    p.add_argument("--unseen-worlds", type=int, default=2)
    p.add_argument("--nodes", type=int, default=30)
    p.add_argument("--train", type=int, default=500)
    p.add_argument("--val-seen", type=int, default=50)
    p.add_argument("--val-unseen", type=int, default=100)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--min-freq", type=int, default=5)

    p = add("train", cmd_train, help="train one regime over seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--regime", required=True)
    p.add_argument("--seeds", default=None)
    p.add_argument("--config", default=None,
                   help="JSON file overriding training defaults")

    p = add("eval", cmd_eval, help="evaluate a checkpoint on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", default="val_unseen")
    p.add_argument("--regime", required=True)
    p.add_argument("--policy", default="greedy",
                   choices=("greedy", "teacher"))

    p = add("zero-shot", cmd_zero_shot,
            help="run the four-regime zero-shot matrix")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", default=None)

    p = add("transfer-sweep", cmd_transfer_sweep,
            help="annotation-fraction transfer curves")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", default=None)
    p.add_argument("--methods", default=",".join(T.TRANSFER_METHODS))
    p.add_argument("--epsilons", default=None,
                   help="comma-separated fractions (default 0.0..1.0)")

    p = add("inspect", cmd_inspect,
            help="dump per-timestep fusion and attention for an episode")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episode-id", required=True,
                   help="<split>:<index>, e.g. val_unseen:3")

    p = add("corpus-stats", cmd_corpus_stats,
            help="instruction length and clause histograms")
    p.add_argument("--data", required=True)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"xlnav-error: {exc.code}: {exc.detail}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"xlnav-error: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
