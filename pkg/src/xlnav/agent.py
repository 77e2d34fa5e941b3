"""Navigation agent: recurrent instruction encoder, panoramic attention
decoder, cross-lingual fusion gate, and candidate action scoring.

The decoder attends over the current panorama with its previous hidden
state, folds the attended view and the previous action embedding into
its recurrent state, grounds that state on the instruction with textual
attention, and scores navigable candidates (plus Stop) against the
grounded representation. In xli mode two language streams share the
decoder parameters; a two-logit softmax gate produces the belief in the
source stream and fuses the grounded representations convexly before
scoring.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, backward
from .autodiff.params import ParamStore
from . import world as W


@dataclass
class AgentConfig:
    vocab_size: int
    view_dim: int
    K: int = 8
    d_embed: int = 32
    d_enc: int = 64
    d_dec: int = 64
    dropout: float = 0.5
    mode: str = "mono"           # "mono" | "xli"
    language: str = "src"        # the stream a mono agent listens to
    shared_embedding: bool = True
    max_actions: int = 10

    def __post_init__(self):
        if self.mode not in ("mono", "xli"):
            raise ValueError(f"unknown mode: {self.mode}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class EncoderOutput:
    contextual: int          # tape node: (N, d_enc)
    pooled: int              # tape node: (d_enc,) state at BOS position
    n_tokens: int


@dataclass
class StreamState:
    language: str
    h: int                   # tape node: decoder hidden (d_dec,)
    c: int                   # tape node: decoder cell (d_dec,)
    grounded: int            # tape node: h_t (d_dec,)
    encoder: EncoderOutput
    txt_weights: np.ndarray = None
    vis_weights: np.ndarray = None


@dataclass
class FusionRecord:
    t: int
    alpha: float
    fused: int               # tape node
    txt_weights: dict        # language -> attention over tokens


@dataclass
class ActionDistribution:
    candidates: list         # Actions, Stop last
    logits: int              # tape node, aligned with candidates

    def probs(self, tape):
        from ._kernels import impl as K
        return K.softmax_rows_fwd(tape.val(self.logits))


def init_params(config, seed):
    """Fresh parameter store; uniform(-0.08, 0.08) like small-scale
    seq2seq initializations. Encoder entries are prefixed enc_, decoder
    entries dec_, so optimizer groups can target them by prefix.
    """
    rng = np.random.default_rng(seed)
    store = ParamStore()

    def u(name, *shape):
        store.add(name, rng.uniform(-0.08, 0.08, size=shape))

    de, dh, dd = config.d_embed, config.d_enc, config.d_dec
    dv = config.view_dim
    if config.shared_embedding:
        u("enc_embed", config.vocab_size, de)
    else:
        u("enc_embed_src", config.vocab_size, de)
        u("enc_embed_tgt", config.vocab_size, de)
    u("enc_w", de + dh, 4 * dh)
    u("enc_b", 4 * dh)
    u("dec_h0_w", dh, dd)
    u("dec_h0_b", dd)
    u("dec_w", dv + dd + dd, 4 * dd)
    lstm_bias("dec_b", dd)
    u("dec_attn_vis", dd, dv)
    u("dec_attn_txt", dd, dh)
    u("dec_ho_w", dh + dd, dd)
    u("dec_ho_b", dd)
    u("dec_u_w", dv, dd)
    u("dec_u_stop", 1, dd)
    u("dec_a0", dd)
    u("dec_act_w", dd, dd)
    u("dec_gate_w", 2 * dd, 2)
    u("dec_gate_b", 2)
    return store


def _embed_table(config, language):
    if config.shared_embedding:
        return "enc_embed"
    return f"enc_embed_{language}"


def encode(tape, token_ids, params, config, language,
           dropout_rng=None):
    """Instruction encoder: embeddings -> reverse-direction LSTM.

    Running the recurrence from the last token back to the first makes
    the state at the BOS position the pooled summary of the whole
    instruction. Dropout applies to embeddings only when a dropout rng
    is supplied (training).
    """
    n = len(token_ids)
    if not 1 <= n <= 82:  # BOS + 80 + EOS
        raise ValueError(f"instruction length {n} out of range")
    table = tape.param(params, _embed_table(config, language))
    if max(token_ids) >= config.vocab_size or min(token_ids) < 0:
        raise IndexError(f"token id out of vocabulary: {token_ids}")
    emb = tape.embedding(table, token_ids)
    if dropout_rng is not None and config.dropout > 0.0:
        keep = 1.0 - config.dropout
        mask = (dropout_rng.random((n, config.d_embed)) < keep) / keep
        emb = tape.dropout(emb, mask=mask)
    rev = tape.slice(emb, (slice(None, None, -1), slice(None)))
    zeros = tape.leaf(np.zeros(config.d_enc))
    hs_rev = tape.lstm_seq(rev, tape.param(params, "enc_w"),
                           tape.param(params, "enc_b"), zeros, zeros)
    hs = tape.slice(hs_rev, (slice(None, None, -1), slice(None)))
    pooled = tape.slice(hs, (0, slice(None)))
    return EncoderOutput(contextual=hs, pooled=pooled, n_tokens=n)


def attend(tape, query, keys, values, w):
    """Bilinear attention: score_i = query . W . key_i, softmax over i,
    context = weights . values. Returns (context node, weights array)."""
    ctx = tape.attn(query, keys, values, w)
    return ctx, tape.attn_weights(ctx).copy()


def pretrain_encoder(corpus, params, config, steps, mask_rate, seed,
                     lr=0.001):
    """Masked-token warm start for the encoder and embeddings.

    ``corpus`` is a list of (language, token id sequence) covering both
    languages. Each step masks tokens of one instruction with the UNK
    id and trains a softmax head to recover them from the contextual
    embeddings. Mutates ``params`` (adding the head under enc_mlm_*)
    and returns the per-step losses.
    """
    from .autodiff.optim import AdamState, adam_step

    if not 0.0 < mask_rate <= 1.0:
        raise ValueError("mask_rate must be in (0, 1]")
    if not corpus:
        raise ValueError("empty pretraining corpus")
    langs = {lang for lang, _ in corpus}
    if config.shared_embedding is False and len(langs) < 2:
        raise ValueError("pretraining corpus must cover both languages")
    rng = np.random.default_rng(seed)
    if "enc_mlm_w" not in params.names():
        params.add("enc_mlm_w", rng.uniform(
            -0.08, 0.08, size=(config.d_enc, config.vocab_size)))
        params.add("enc_mlm_b", np.zeros(config.vocab_size))
    state = AdamState(params)
    losses = []
    for _ in range(steps):
        lang, ids = corpus[rng.integers(len(corpus))]
        mask = rng.random(len(ids)) < mask_rate
        if not mask.any():
            mask[rng.integers(len(ids))] = True
        masked = [1 if m else t for t, m in zip(ids, mask)]
        loss = mlm_loss(masked, ids, mask, params, config, lang)
        losses.append(loss)
        adam_step(params, state, lr=lr)
    return losses


def mlm_loss(masked_ids, true_ids, mask, params, config, language,
             with_grad=True):
    """Cross-entropy of the masked-token head; runs backward when
    with_grad is set and returns the loss value."""
    tape = Tape()
    enc = encode(tape, masked_ids, params, config, language)
    loss = None
    for i, is_masked in enumerate(mask):
        if not is_masked:
            continue
        c_i = tape.slice(enc.contextual, (i, slice(None)))
        logits = tape.affine(c_i, tape.param(params, "enc_mlm_w"),
                             tape.param(params, "enc_mlm_b"))
        term = tape.cross_entropy(logits, true_ids[i])
        loss = term if loss is None else tape.add(loss, term)
    if with_grad:
        backward(tape, loss)
    return float(tape.val(loss))


def init_stream(tape, encoder_output, params, config, language):
    """Decoder state from the pooled encoder state; cell starts at 0."""
    h0 = tape.tanh(tape.affine(encoder_output.pooled,
                               tape.param(params, "dec_h0_w"),
                               tape.param(params, "dec_h0_b")))
    c0 = tape.leaf(np.zeros(config.d_dec))
    return StreamState(language=language, h=h0, c=c0, grounded=h0,
                       encoder=encoder_output)


def decode_step(tape, stream, obs_node, a_prev, params, config):
    """One panoramic decoding step for one language stream."""
    if stream.encoder is None:
        raise ValueError("stream not initialized")
    f_att, vis_w = attend(tape, stream.h, obs_node, obs_node,
                          tape.param(params, "dec_attn_vis"))
    xh = tape.concat(f_att, a_prev, stream.h)
    hc = tape.lstm_cell(xh, stream.c, tape.param(params, "dec_w"),
                        tape.param(params, "dec_b"))
    h = tape.slice(hc, (0, slice(None)))
    c = tape.slice(hc, (1, slice(None)))
    ctx, txt_w = attend(tape, h, stream.encoder.contextual,
                        stream.encoder.contextual,
                        tape.param(params, "dec_attn_txt"))
    grounded = tape.tanh(tape.affine(tape.concat(ctx, h),
                                     tape.param(params, "dec_ho_w"),
                                     tape.param(params, "dec_ho_b")))
    return StreamState(language=stream.language, h=h, c=c,
                       grounded=grounded, encoder=stream.encoder,
                       txt_weights=txt_w, vis_weights=vis_w)


def xli_fuse(tape, h_src, h_tgt, params, config, t=0, txt_weights=None):
    """Two-logit softmax gate; alpha is the belief in the source stream."""
    if config.mode != "xli":
        raise ValueError("xli_fuse requires xli mode")
    logits = tape.affine(tape.concat(h_src, h_tgt),
                         tape.param(params, "dec_gate_w"),
                         tape.param(params, "dec_gate_b"))
    probs = tape.softmax(logits)
    a = tape.slice(probs, (0,))
    b = tape.slice(probs, (1,))
    fused = tape.add(tape.mul(a, h_src), tape.mul(b, h_tgt))
    return FusionRecord(t=t, alpha=float(tape.val(a)), fused=fused,
                        txt_weights=txt_weights or {})


def _candidate_views(world, pose, obs, candidates):
    """Observation rows (heading-relative) for each MoveTo candidate."""
    rows = []
    for act in candidates:
        if act.is_stop:
            continue
        sector = world.sector_of(pose.viewpoint, act.target)
        rows.append(obs[(sector - pose.heading) % world.K])
    return np.array(rows).reshape(len(rows), obs.shape[1])


def score_actions(tape, fused, world, pose, obs, params, config,
                  candidates=None):
    """Bilinear candidate scoring: the fused representation is projected
    and dotted against each candidate's projected view vector; Stop uses
    a learned embedding.
    """
    if candidates is None:
        candidates = W.navigable_actions(world, pose)
    q = tape.matmul(fused, tape.param(params, "dec_act_w"))
    stop_logit = tape.matmul(tape.param(params, "dec_u_stop"), q)
    move_rows = _candidate_views(world, pose, obs, candidates)
    if len(move_rows):
        u_moves = tape.matmul(tape.leaf(move_rows),
                              tape.param(params, "dec_u_w"))
        logits = tape.concat(tape.matmul(u_moves, q), stop_logit)
    else:
        logits = stop_logit
    return ActionDistribution(candidates=candidates, logits=logits)


def action_embedding(tape, world, pose, obs, action, params):
    """Embedding of an executed action: projected view row for MoveTo,
    the learned stop row for Stop."""
    if action.is_stop:
        return tape.slice(tape.param(params, "dec_u_stop"),
                          (0, slice(None)))
    s = world.sector_of(pose.viewpoint, action.target)
    row = obs[(s - pose.heading) % world.K]
    return tape.matmul(tape.leaf(row), tape.param(params, "dec_u_w"))


def _teacher_action(world, pose, path_spec, visited_hops):
    if visited_hops < len(path_spec.path) - 1:
        return W.Action(path_spec.path[visited_hops + 1])
    return W.STOP_ACTION


def _dynamic_teacher(world, pose, goal):
    """Next hop on the shortest path from the current node to the goal;
    Stop once there. Used when the agent strays off the reference."""
    if pose.viewpoint == goal:
        return W.STOP_ACTION
    path, _ = W.shortest_path(world, pose.viewpoint, goal)
    return W.Action(path[1])


def _select_languages(config, instruction_ids):
    """xli consumes the {src, tgt} pair; mono listens to its configured
    language and ignores any extra instruction in the mapping."""
    if config.mode == "xli":
        if sorted(instruction_ids) != ["src", "tgt"]:
            raise ValueError("xli mode needs a {src, tgt} instruction pair")
        return ["src", "tgt"]
    if config.language in instruction_ids:
        return [config.language]
    if len(instruction_ids) == 1:
        return list(instruction_ids)
    raise ValueError(
        f"mono agent listens to {config.language!r}; got "
        f"{sorted(instruction_ids)}")


def _encode_pair(tape, instruction_ids, langs, params, config,
                 dropout_rng):
    """Returns language -> EncoderOutput for each consumed language."""
    return {lang: encode(tape, instruction_ids[lang], params, config,
                         lang, dropout_rng)
            for lang in langs}


def episode_loss(world, path_spec, instruction_ids, params, config,
                 dropout_rng=None, tape=None, forcing="teacher"):
    """Cross-entropy against the teacher action at every step.

    With teacher forcing (default) the agent also executes the teacher
    action, walking the reference path. With student forcing it
    executes its own greedy choice, and the teacher target becomes the
    next hop on the shortest path from wherever it actually is.

    ``instruction_ids`` maps language -> encoded token ids; xli mode
    requires both languages, mono mode exactly one. Returns (loss node,
    tape, n_steps).
    """
    if forcing not in ("teacher", "student"):
        raise ValueError(f"unknown forcing: {forcing}")
    tape = tape or Tape()
    langs = _select_languages(config, instruction_ids)
    encoders = _encode_pair(tape, instruction_ids, langs, params, config,
                            dropout_rng)
    streams = {lang: init_stream(tape, encoders[lang], params, config,
                                 lang) for lang in langs}
    a_prev = tape.param(params, "dec_a0")
    pose = W.Pose(path_spec.path[0], path_spec.start_heading)
    loss = None
    hops = 0
    steps = 0
    for t in range(config.max_actions):
        obs = W.observe(world, pose)
        obs_node = tape.leaf(obs)
        for lang in langs:
            streams[lang] = decode_step(tape, streams[lang], obs_node,
                                        a_prev, params, config)
        if config.mode == "xli":
            fused = xli_fuse(tape, streams["src"].grounded,
                             streams["tgt"].grounded, params, config,
                             t=t).fused
        else:
            fused = streams[langs[0]].grounded
        dist = score_actions(tape, fused, world, pose, obs, params, config)
        if forcing == "teacher":
            teacher = _teacher_action(world, pose, path_spec, hops)
            executed = teacher
        else:
            teacher = _dynamic_teacher(world, pose, path_spec.goal)
            executed = dist.candidates[
                int(np.argmax(tape.val(dist.logits)))]
        target = dist.candidates.index(teacher)
        term = tape.cross_entropy(dist.logits, target)
        loss = term if loss is None else tape.add(loss, term)
        a_prev = action_embedding(tape, world, pose, obs, executed,
                                  params)
        steps += 1
        if executed.is_stop:
            break
        pose = W.step(world, pose, executed)
        hops += 1
    return loss, tape, steps


def run_episode(world, start_pose, instruction_ids, params, config,
                policy="greedy", path_spec=None, max_actions=None):
    """Roll out an episode. Returns (trajectory, fusion records,
    attention trace). Greedy ties break toward the lowest candidate
    index; teacher policy requires path_spec and follows it exactly.
    """
    if policy == "teacher" and path_spec is None:
        raise ValueError("teacher policy requires a path_spec")
    max_actions = max_actions or config.max_actions
    tape = Tape()
    langs = _select_languages(config, instruction_ids)
    encoders = _encode_pair(tape, instruction_ids, langs, params, config,
                            None)
    streams = {lang: init_stream(tape, encoders[lang], params, config,
                                 lang) for lang in langs}
    a_prev = tape.param(params, "dec_a0")
    pose = W.Pose(start_pose.viewpoint, start_pose.heading)
    trajectory = [pose.viewpoint]
    fusions = []
    trace = []
    hops = 0
    for t in range(max_actions):
        obs = W.observe(world, pose)
        obs_node = tape.leaf(obs)
        for lang in langs:
            streams[lang] = decode_step(tape, streams[lang], obs_node,
                                        a_prev, params, config)
        if config.mode == "xli":
            rec = xli_fuse(
                tape, streams["src"].grounded, streams["tgt"].grounded,
                params, config, t=t,
                txt_weights={lang: streams[lang].txt_weights
                             for lang in langs})
            fusions.append(rec)
            fused = rec.fused
        else:
            fused = streams[langs[0]].grounded
        dist = score_actions(tape, fused, world, pose, obs, params, config)
        if policy == "teacher":
            action = _teacher_action(world, pose, path_spec, hops)
        else:
            action = dist.candidates[int(np.argmax(tape.val(dist.logits)))]
        trace.append({
            "t": t,
            "action": None if action.is_stop else action.target,
            "probs": dist.probs(tape).tolist(),
            "vis_weights": {lang: streams[lang].vis_weights.tolist()
                            for lang in langs},
            "txt_weights": {lang: streams[lang].txt_weights.tolist()
                            for lang in langs},
        })
        a_prev = action_embedding(tape, world, pose, obs, action, params)
        if action.is_stop:
            break
        pose = W.step(world, pose, action)
        trajectory.append(pose.viewpoint)
        hops += 1
    return trajectory, fusions, trace


def accumulate_episode_gradient(world, path_spec, instruction_ids, params,
                                config, dropout_rng=None, scale=1.0,
                                forcing="teacher"):
    """Forward + backward for one episode; adds scale * dLoss/dParams
    into the store. Returns the loss value."""
    loss, tape, _ = episode_loss(world, path_spec, instruction_ids,
                                 params, config, dropout_rng,
                                 forcing=forcing)
    if scale != 1.0:
        loss = tape.mul(loss, tape.leaf(scale))
    backward(tape, loss)
    return float(tape.val(loss))
