"""Training loops, model selection, checkpointing, and the experiment
protocols: the zero-shot regime matrix, the bilingual-annotation
transfer sweep, and the encoder warm-start ablation.

Regimes (target-language navigation unless noted):

- ``train_w_an``: mono agent trained and tested on human target-language
  instructions (the golden-annotation skyline).
- ``train_w_mt``: mono agent trained on machine-translated
  target-language instructions, tested on human ones.
- ``test_w_mt``: mono source-language agent trained on human source
  instructions, tested on machine translations of the human
  target-language instructions.
- ``xli``: dual-stream agent trained on (human source, MT target)
  pairs, tested on (MT source, human target) pairs, with the fusion
  gate arbitrating between streams.
"""

import io
import json
import struct
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import agent as A
from . import metrics as M
from . import world as W
from .autodiff.params import ParamStore
from .autodiff.optim import AdamState, adam_step
from .lang import Dataset, Record, select_bilingual

REGIMES = ("train_w_an", "train_w_mt", "test_w_mt", "xli", "mono_src")
ZERO_SHOT_REGIMES = ("train_w_an", "train_w_mt", "test_w_mt", "xli")
TRANSFER_METHODS = ("xli", "an", "an_en", "an_mt")


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 16
    eval_interval: int = 100
    encoder_lr: float = 5e-4
    decoder_lr: float = 1e-3
    weight_decay: float = 5e-4
    dropout: float = 0.5
    seeds: tuple = (0, 1, 2)
    regime: str = "train_w_an"
    epsilon: float = 0.0
    d_embed: int = 32
    d_enc: int = 64
    d_dec: int = 64
    max_actions: int = 10
    student_forcing: bool = False
    eval_instructions: int = 1   # eval episodes per trajectory
    grad_clip: float = 0.0       # global grad-norm cap; 0 disables

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seed list must be non-empty")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be non-negative")
        if self.iterations and self.iterations % self.eval_interval:
            raise ValueError("eval_interval must divide iterations")
        if self.regime not in REGIMES:
            raise ValueError(
                f"unknown regime {self.regime!r}; valid: {REGIMES}")


@dataclass
class Checkpoint:
    params: ParamStore
    agent_config: A.AgentConfig
    iteration: int
    seed: int


@dataclass
class RunLogEntry:
    iteration: int
    train_loss: float
    val_seen: dict           # metric -> mean over episodes
    val_unseen: dict


@dataclass
class RunLog:
    entries: list = field(default_factory=list)
    selected_iteration: int = 0

    def best_entry(self):
        return max(self.entries,
                   key=lambda e: (e.val_unseen["SPL"], -e.iteration))

    def to_csv(self):
        buf = io.StringIO()
        names = M.METRIC_NAMES
        buf.write("iteration,train_loss,split," + ",".join(names) + "\n")
        for e in self.entries:
            for split, vals in (("val_seen", e.val_seen),
                                ("val_unseen", e.val_unseen)):
                cells = [str(e.iteration), f"{e.train_loss:.6f}", split]
                cells += [f"{vals[n]:.4f}" for n in names]
                buf.write(",".join(cells) + "\n")
        buf.write(f"selected,{self.selected_iteration},,"
                  + ",".join("" for _ in names) + "\n")
        return buf.getvalue()


# ----------------------------------------------------- example assembly

def _pair_by_origin(humans, mts, h_lang, m_lang):
    """(human, MT) pairs matched through the MT's origin index."""
    by_origin = {mt.origin_index: mt for mt in mts}
    return [{h_lang: h, m_lang: by_origin[j]}
            for j, h in enumerate(humans) if j in by_origin]


def training_examples(dataset, regime):
    """(record, {language: Instruction}) training pool for a regime."""
    out = []
    for rec in dataset.splits["train"]:
        if regime == "train_w_an":
            picked = [{"tgt": i} for i in rec.humans("tgt")]
        elif regime == "train_w_mt":
            picked = [{"tgt": i} for i in rec.mts("tgt")]
        elif regime in ("test_w_mt", "mono_src"):
            picked = [{"src": i} for i in rec.humans("src")]
        else:  # xli: machine translation fills the annotation gap
            tgt_humans = rec.humans("tgt")
            if tgt_humans:
                # annotated record: golden pairs, plus the annotation
                # paired with its MT rendition in the source language
                # (matching what the agent sees at test time)
                picked = _pair_by_origin(tgt_humans, rec.mts("src"),
                                         "tgt", "src")
                picked += [{"src": s, "tgt": t}
                           for s, t in zip(rec.humans("src"), tgt_humans)]
            else:
                # unannotated record: the golden source instruction
                # paired with its MT rendition in the target language
                picked = _pair_by_origin(rec.humans("src"),
                                         rec.mts("tgt"), "src", "tgt")
        out.extend((rec, instrs) for instrs in picked)
    if not out:
        raise ValueError(
            f"no training examples for regime {regime!r} "
            f"(missing instruction provenance in dataset?)")
    return out


def eval_examples(dataset, split, regime, limit_per_record=1):
    """(record, {language: Instruction}) evaluation episodes."""
    out = []
    for rec in dataset.splits[split]:
        if regime in ("train_w_an", "train_w_mt"):
            picked = [{"tgt": i} for i in rec.humans("tgt")]
        elif regime == "mono_src":
            picked = [{"src": i} for i in rec.humans("src")]
        elif regime == "test_w_mt":
            picked = [{"src": i} for i in rec.mts("src")]
        else:
            picked = _pair_by_origin(rec.humans("tgt"), rec.mts("src"),
                                     "tgt", "src")
        if not picked:
            raise ValueError(
                f"record {rec.path_id} lacks eval instructions for "
                f"regime {regime!r}")
        out.extend((rec, instrs) for instrs in picked[:limit_per_record])
    return out


def agent_config_for(dataset, config, regime):
    world = next(iter(dataset.worlds.values()))
    mode = "xli" if regime == "xli" else "mono"
    language = "src" if regime in ("test_w_mt", "mono_src") else "tgt"
    return A.AgentConfig(
        vocab_size=len(dataset.vocab), view_dim=world.view_dim,
        K=world.K, d_embed=config.d_embed, d_enc=config.d_enc,
        d_dec=config.d_dec, dropout=config.dropout, mode=mode,
        language=language, max_actions=config.max_actions)


def _encode_instrs(vocab, instrs):
    return {lang: vocab.encode(ins.tokens) for lang, ins in
            instrs.items()}


def _path_spec(world, rec):
    return W.PathSpec(path=tuple(rec.path), start_heading=rec.heading,
                      goal=rec.path[-1],
                      geodesic_length=W.geodesic(world, rec.path[0],
                                                 rec.path[-1]))


# --------------------------------------------------------------- training

def train(config, dataset, seed=None, examples=None, warm_start=None):
    """One training run; returns (best-val-unseen-SPL Checkpoint, RunLog).

    Encoder-prefixed parameters (enc_*) train at config.encoder_lr,
    everything else at config.decoder_lr. Evaluation runs on both
    validation splits every eval_interval iterations; the retained
    checkpoint maximizes val-unseen SPL (earliest iteration on ties).

    ``examples`` overrides the regime-derived training pool (the
    transfer baselines stitch their own); ``warm_start`` maps parameter
    names to arrays copied over the fresh initialization (encoder
    pretraining).
    """
    seed = config.seeds[0] if seed is None else seed
    regime = config.regime
    aconfig = agent_config_for(dataset, config, regime)
    params = A.init_params(aconfig, seed=seed)
    if warm_start:
        for name, value in warm_start.items():
            if name in params.names():
                params.set_value(name, value.copy())
    if examples is None:
        examples = training_examples(dataset, regime) \
            if config.iterations else []
    rng = np.random.default_rng([seed, 0xD5EA])
    state = AdamState(params)
    log = RunLog()
    best = None
    losses = []

    def loss_for_log():
        if losses:
            return float(np.mean(losses))
        # before the first update: probe one batch without training
        probe = 0.0
        n = min(config.batch_size, len(examples)) or 1
        if not examples:
            return 0.0
        for k in range(n):
            rec, instrs = examples[k % len(examples)]
            world = dataset.world_of(rec)
            loss, tape, _ = A.episode_loss(
                world, _path_spec(world, rec),
                _encode_instrs(dataset.vocab, instrs), params, aconfig)
            probe += float(tape.val(loss))
        return probe / n

    def eval_point(iteration):
        nonlocal best
        entry = RunLogEntry(
            iteration=iteration, train_loss=loss_for_log(),
            val_seen=_split_means(params, aconfig, dataset, "val_seen",
                                  regime, config),
            val_unseen=_split_means(params, aconfig, dataset,
                                    "val_unseen", regime, config))
        log.entries.append(entry)
        if best is None or entry.val_unseen["SPL"] > \
                log.entries[best].val_unseen["SPL"]:
            best = len(log.entries) - 1
            log.selected_iteration = iteration
            return True
        return False

    if eval_point(0):
        best_params = params.copy()
        best_iter = 0
    for it in range(1, config.iterations + 1):
        batch = rng.integers(len(examples), size=config.batch_size)
        batch_loss = 0.0
        for idx in batch:
            rec, instrs = examples[int(idx)]
            world = dataset.world_of(rec)
            drop = np.random.default_rng([seed, it, int(idx)]) \
                if config.dropout > 0 else None
            # student forcing mixes in 50% of episodes executed greedily
            # (with a dynamic shortest-path teacher) so the agent learns
            # to recover from its own mistakes
            forcing = "student" if config.student_forcing \
                and rng.random() < 0.5 else "teacher"
            batch_loss += A.accumulate_episode_gradient(
                world, _path_spec(world, rec),
                _encode_instrs(dataset.vocab, instrs), params, aconfig,
                dropout_rng=drop, scale=1.0 / config.batch_size,
                forcing=forcing)
        losses.append(batch_loss / config.batch_size)
        if config.grad_clip:
            gnorm = np.sqrt(sum(float(np.sum(params.grad(n) ** 2))
                                for n in params.names()))
            if gnorm > config.grad_clip:
                for n in params.names():
                    params.grad(n)[...] *= config.grad_clip / gnorm
        adam_step(params, state, lr=config.decoder_lr,
                  weight_decay=config.weight_decay,
                  lr_overrides={"enc": config.encoder_lr})
        if it % config.eval_interval == 0:
            if eval_point(it):
                best_params = params.copy()
                best_iter = it
            losses.clear()
    return Checkpoint(params=best_params, agent_config=aconfig,
                      iteration=best_iter, seed=seed), log


def _split_means(params, aconfig, dataset, split, regime, config,
                 policy="greedy"):
    episodes = evaluate_params(params, aconfig, dataset, split, regime,
                               policy=policy,
                               limit_per_record=config.eval_instructions)
    return {name: float(np.mean([getattr(m, name) for m in episodes]))
            for name in M.METRIC_NAMES}


def evaluate_params(params, aconfig, dataset, split, regime,
                    policy="greedy", limit_per_record=1):
    """Greedy (or teacher-diagnostic) rollouts over a split; returns a
    TrajectoryMetrics list in episode order."""
    out = []
    for rec, instrs in eval_examples(dataset, split, regime,
                                     limit_per_record):
        world = dataset.world_of(rec)
        spec = _path_spec(world, rec)
        traj, _, _ = A.run_episode(
            world, W.Pose(rec.path[0], rec.heading),
            _encode_instrs(dataset.vocab, instrs), params, aconfig,
            policy=policy, path_spec=spec)
        out.append(M.evaluate_trajectory(world, M.TrajectoryRecord(
            predicted=tuple(traj), reference=tuple(rec.path),
            goal=spec.goal)))
    return out


def evaluate(checkpoint, dataset, split, regime, policy="greedy",
             limit_per_record=1):
    return evaluate_params(checkpoint.params, checkpoint.agent_config,
                           dataset, split, regime, policy=policy,
                           limit_per_record=limit_per_record)


# ------------------------------------------------------------ checkpoints

CHECKPOINT_MAGIC = b"XLNV"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, checkpoint, extra_meta=None):
    """Binary parameter dump plus a JSON sidecar with the config."""
    params = checkpoint.params
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        names = params.names()
        f.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode()
            value = params.value(name)
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", value.ndim))
            f.write(struct.pack(f"<{value.ndim}I", *value.shape))
            f.write(value.astype("<f8").tobytes())
    meta = {"agent_config": asdict(checkpoint.agent_config),
            "iteration": checkpoint.iteration,
            "seed": checkpoint.seed}
    meta.update(extra_meta or {})
    with open(str(path) + ".meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path):
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        version, = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        params = ParamStore()
        count, = struct.unpack("<I", f.read(4))
        for _ in range(count):
            nlen, = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode()
            rank, = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
            n = int(np.prod(shape)) if rank else 1
            value = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(
                shape).copy()
            params.add(name, value)
    with open(str(path) + ".meta.json") as f:
        meta = json.load(f)
    aconfig = A.AgentConfig(**meta["agent_config"])
    return Checkpoint(params=params, agent_config=aconfig,
                      iteration=meta["iteration"], seed=meta["seed"])


# -------------------------------------------------------------- protocols

def epsilon_view(dataset, epsilon):
    """Derived dataset exposing only an epsilon-fraction of the human
    target-language training annotations (and the MT renditions made
    from them); nested across epsilon values."""
    if epsilon > dataset.epsilon:
        raise ValueError(
            f"base dataset has epsilon={dataset.epsilon}; cannot expose "
            f"{epsilon}")
    train = dataset.splits["train"]
    keep = select_bilingual([r.path_id for r in train], epsilon)
    view_train = []
    for rec in train:
        if rec.path_id in keep:
            view_train.append(rec)
            continue
        instructions = {
            # drop human target annotations and MT source renditions
            # derived from them
            "src": rec.humans("src"),
            "tgt": rec.mts("tgt"),
        }
        view_train.append(Record(
            path_id=rec.path_id, world_id=rec.world_id,
            heading=rec.heading, path=rec.path,
            instructions=instructions))
    splits = dict(dataset.splits)
    splits["train"] = view_train
    return Dataset(splits=splits, worlds=dataset.worlds,
                   vocab=dataset.vocab, lexicon=dataset.lexicon,
                   epsilon=epsilon, seed=dataset.seed,
                   mt_fingerprint=dataset.mt_fingerprint)


def _run_regime(config, dataset, regime):
    """Train per seed and aggregate both validation splits."""
    cfg = replace(config, regime=regime)
    per_seed = {"val_seen": {}, "val_unseen": {}}
    checkpoints = {}
    for seed in cfg.seeds:
        ckpt, _ = train(cfg, dataset, seed=seed)
        checkpoints[seed] = ckpt
        for split in ("val_seen", "val_unseen"):
            per_seed[split][seed] = evaluate(
                ckpt, dataset, split, regime,
                limit_per_record=cfg.eval_instructions)
    reports = {split: M.aggregate(f"{regime}/{split}", per_seed[split])
               for split in ("val_seen", "val_unseen")}
    return reports, checkpoints


def zero_shot_experiment(config, dataset):
    """The four-regime baseline matrix on an epsilon=0 training view.

    Returns ({regime: {split: AggregateReport}}, csv text).
    """
    data = epsilon_view(dataset, 0.0)
    results = {}
    for regime in ZERO_SHOT_REGIMES:
        # the golden-annotation skyline needs the full annotations
        regime_data = dataset if regime == "train_w_an" else data
        results[regime], _ = _run_regime(config, regime_data, regime)
    csv = M.report_to_csv([results[r][s] for r in ZERO_SHOT_REGIMES
                           for s in ("val_seen", "val_unseen")])
    return results, csv


def _transfer_config(config, method):
    regime = "xli" if method == "xli" else "train_w_an"
    return replace(config, regime=regime)


def _transfer_examples_patch(dataset, method):
    """an/an_en/an_mt differ only in which extra mono examples join the
    epsilon-selected human target annotations."""
    extra = []
    for rec in dataset.splits["train"]:
        if method == "an_en":
            extra.extend((rec, {"src": i}) for i in rec.humans("src"))
        elif method == "an_mt":
            extra.extend((rec, {"tgt": i}) for i in rec.mts("tgt"))
    return extra


def transfer_sweep(config, dataset, epsilons=None,
                   methods=TRANSFER_METHODS, workers=1):
    """SPL/SR curves over the annotation fraction for XLI and the mono
    baselines. Returns (curves dict, csv text); curves maps
    (method, epsilon, split) -> AggregateReport. With workers > 1 the
    independent (epsilon, method, seed) runs train concurrently; the
    output is assembled in a fixed order either way."""
    epsilons = [round(0.1 * i, 1) for i in range(11)] \
        if epsilons is None else list(epsilons)
    views = {eps: epsilon_view(dataset, eps) for eps in epsilons}
    jobs = [(eps, method, seed)
            for eps in epsilons for method in methods
            for seed in _transfer_config(config, method).seeds]

    def run(job):
        eps, method, seed = job
        cfg = _transfer_config(config, method)
        ckpt, _ = _train_transfer(cfg, views[eps], method, seed)
        return {split: evaluate(ckpt, views[eps], split, cfg.regime,
                                limit_per_record=cfg.eval_instructions)
                for split in ("val_seen", "val_unseen")}

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = dict(zip(jobs, pool.map(run, jobs)))
    else:
        outcomes = {job: run(job) for job in jobs}

    curves = {}
    rows = ["epsilon,method,split,seed,SR,SPL"]
    for eps in epsilons:
        for method in methods:
            cfg = _transfer_config(config, method)
            per_seed = {"val_seen": {}, "val_unseen": {}}
            for seed in cfg.seeds:
                for split in ("val_seen", "val_unseen"):
                    per_seed[split][seed] = \
                        outcomes[(eps, method, seed)][split]
            for split in ("val_seen", "val_unseen"):
                rep = M.aggregate(f"{method}/{split}", per_seed[split])
                curves[(method, eps, split)] = rep
                for seed in rep.seeds:
                    rows.append(
                        f"{eps:.1f},{method},{split},{seed},"
                        f"{rep.per_seed[seed]['SR']:.4f},"
                        f"{rep.per_seed[seed]['SPL']:.4f}")
                rows.append(f"{eps:.1f},{method},{split},mean,"
                            f"{rep.mean['SR']:.4f},{rep.mean['SPL']:.4f}")
    return curves, "\n".join(rows) + "\n"


def _train_transfer(cfg, data, method, seed):
    """Transfer baselines share the train loop but stitch their own
    example pools; ``an`` at epsilon=0 has no data and stays untrained."""
    if method == "xli":
        return train(cfg, data, seed=seed)
    base = []
    for rec in data.splits["train"]:
        base.extend((rec, {"tgt": i}) for i in rec.humans("tgt"))
    pool = base + _transfer_examples_patch(data, method)
    if not pool:
        untrained = replace(cfg, iterations=0)
        return train(untrained, data, seed=seed, examples=[])
    return train(cfg, data, seed=seed, examples=pool)


def pretrained_encoder_weights(dataset, config, regime, steps, mask_rate,
                               seed):
    """Masked-token pretraining over the whole bilingual train corpus;
    returns only the encoder/embedding arrays (the MLM head is
    dropped)."""
    aconfig = agent_config_for(dataset, config, regime)
    params = A.init_params(aconfig, seed=seed)
    corpus = [(ins.language, dataset.vocab.encode(ins.tokens))
              for rec in dataset.splits["train"]
              for lang in ("src", "tgt")
              for ins in rec.instructions[lang]]
    A.pretrain_encoder(corpus, params, aconfig, steps=steps,
                       mask_rate=mask_rate, seed=seed)
    return {name: params.value(name) for name in params.names()
            if name.startswith("enc") and not
            name.startswith("enc_mlm")}


def encoder_ablation(config, dataset, pretrain_steps=0,
                     mask_rate=0.15):
    """SPL gap between golden-annotation and MT training, optionally
    with a masked-token warm start of the encoder.

    Returns (report dict, csv text); Delta-SPL = SPL(AN) - SPL(MT).
    """
    results = {}
    for regime in ("train_w_an", "train_w_mt"):
        cfg = replace(config, regime=regime)
        per_seed = {"val_seen": {}, "val_unseen": {}}
        for seed in cfg.seeds:
            warm = None
            if pretrain_steps:
                warm = pretrained_encoder_weights(
                    dataset, cfg, regime, pretrain_steps, mask_rate,
                    seed)
            ckpt, _ = train(cfg, dataset, seed=seed, warm_start=warm)
            for split in ("val_seen", "val_unseen"):
                per_seed[split][seed] = evaluate(
                    ckpt, dataset, split, regime,
                    limit_per_record=cfg.eval_instructions)
        results[regime] = {
            split: M.aggregate(f"{regime}/{split}", per_seed[split])
            for split in ("val_seen", "val_unseen")}
    rows = ["regime,split,SPL,SR"]
    for regime in ("train_w_an", "train_w_mt"):
        for split in ("val_seen", "val_unseen"):
            rep = results[regime][split]
            rows.append(f"{regime},{split},{rep.mean['SPL']:.4f},"
                        f"{rep.mean['SR']:.4f}")
    for split in ("val_seen", "val_unseen"):
        delta = (results["train_w_an"][split].mean["SPL"]
                 - results["train_w_mt"][split].mean["SPL"])
        rows.append(f"delta,{split},{delta:.4f},")
    return results, "\n".join(rows) + "\n"
