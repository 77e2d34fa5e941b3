"""Synthetic bilingual instruction corpus.

Two artificial languages share a concept inventory (directions, motion
verbs, landmark nouns, attributes) but have disjoint surface
vocabularies and different word orders: the source language is
verb-medial with articles and prepositions, the target language is
verb-final, article-free, and orders landmark phrases noun-then-
attribute. A lexicon-backed noisy translator stands in for a production
MT system: it drops function words, substitutes content words within
their category, and calques word order with configurable fidelity.
"""

import hashlib
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import world as W

MAX_INSTRUCTION_TOKENS = 80

SRC_PUNCT = {"clause": ",", "final": "."}
TGT_PUNCT = {"clause": "，", "final": "。"}
UNK_SURFACE = "<unk>"

# category -> ordering precedence inside an idiomatic clause
SRC_ORDER = {"verb": 0, "stopverb": 0, "direction": 1, "prep": 2,
             "article": 3, "adjective": 4, "noun": 5, "topic": 6}
TGT_ORDER = {"noun": 0, "adjective": 1, "topic": 2, "direction": 3,
             "verb": 4, "stopverb": 4, "prep": 5, "article": 5}


@dataclass
class MTConfig:
    p_drop: float = 0.15
    p_sub: float = 0.10
    order_fidelity: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("p_drop", "p_sub", "order_fidelity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")

    def fingerprint(self):
        return (f"drop={self.p_drop}:sub={self.p_sub}"
                f":order={self.order_fidelity}:seed={self.seed}")


@dataclass
class Instruction:
    language: str            # "src" | "tgt"
    tokens: list             # surface token strings
    text: str
    provenance: str          # "Human" | "MT"
    origin_index: int = -1   # Human instruction this was translated from
    unk_count: int = 0

    @property
    def clauses(self):
        out = []
        cur = []
        punct = set(SRC_PUNCT.values()) | set(TGT_PUNCT.values())
        for tok in self.tokens:
            if tok in punct:
                out.append(cur)
                cur = []
            else:
                cur.append(tok)
        if cur:
            out.append(cur)
        return out

    @property
    def n_sub_instructions(self):
        return len(self.clauses)


@dataclass
class Lexicon:
    """Concept-level bijection between the two surface vocabularies."""
    K: int
    concepts: dict           # concept -> (category, src forms, tgt forms)
    function_words: dict     # role -> {"src": form|None, "tgt": form|None}
    categories: dict = field(init=False)
    src_surface: dict = field(init=False)
    tgt_surface: dict = field(init=False)

    def __post_init__(self):
        self.categories = {}
        self.src_surface = {}
        self.tgt_surface = {}
        for concept, (cat, sf, tf) in self.concepts.items():
            self.categories.setdefault(cat, []).append(concept)
            for f in sf:
                self.src_surface[f] = concept
            for f in tf:
                self.tgt_surface[f] = concept
        for cat in self.categories:
            self.categories[cat].sort()
        overlap = set(self.src_surface) & set(self.tgt_surface)
        if overlap:
            raise ValueError(f"surface vocabularies overlap: {overlap}")

    def forms(self, concept, language):
        cat, sf, tf = self.concepts[concept]
        return sf if language == "src" else tf

    def category(self, concept):
        return self.concepts[concept][0]

    def lookup(self, surface, language):
        table = self.src_surface if language == "src" else self.tgt_surface
        return table.get(surface)

    def function_role(self, surface, language):
        for role, forms in self.function_words.items():
            if forms[language] == surface:
                return role
        return None


_SRC_SYLLABLES = [c + v for c in "bdfgklmnprst" for v in "aeiou"]
_TGT_CODA = "nrksm"


def _make_word(rng, target_language):
    n = int(rng.integers(2, 4))
    word = "".join(_SRC_SYLLABLES[int(rng.integers(len(_SRC_SYLLABLES)))]
                   for _ in range(n))
    if target_language:
        word += _TGT_CODA[int(rng.integers(len(_TGT_CODA)))]
    return word


def build_lexicon(n_categories=12, n_attributes=6, K=8, seed=101):
    """Deterministic lexicon. Source words end in a vowel, target words
    in a consonant, so the two surface vocabularies are disjoint by
    construction.
    """
    rng = np.random.default_rng(seed)
    used = set()

    def fresh(target_language):
        while True:
            w = _make_word(rng, target_language)
            if w not in used:
                used.add(w)
                return w

    def cluster(target_language):
        return [fresh(target_language)
                for _ in range(int(rng.integers(1, 4)))]

    concepts = {}
    for r in range(K):
        concepts[f"dir{r}"] = ("direction", cluster(False), cluster(True))
    for i in range(2):
        concepts[f"go{i}"] = ("verb", cluster(False), cluster(True))
    concepts["halt"] = ("stopverb", cluster(False), cluster(True))
    for c in range(n_categories):
        concepts[f"obj{c}"] = ("noun", cluster(False), cluster(True))
    for a in range(n_attributes):
        concepts[f"attr{a}"] = ("adjective", cluster(False), cluster(True))

    function_words = {
        "article": {"src": fresh(False), "tgt": None},
        "prep": {"src": fresh(False), "tgt": None},
        "topic": {"src": None, "tgt": fresh(True)},
    }
    return Lexicon(K=K, concepts=concepts, function_words=function_words)


def _pick(rng, forms):
    return forms[int(rng.integers(len(forms)))]


def _maneuvers(world, path_spec):
    """Per-hop (relative direction, landmark concepts) plus the stop
    maneuver, mirroring how the pose dynamics update heading.
    """
    heading = path_spec.start_heading
    out = []
    for a, b in zip(path_spec.path, path_spec.path[1:]):
        abs_sector = world.sector_of(a, b)
        rel = (abs_sector - heading) % world.K
        lm = next(((c, at) for s, c, at in world.landmarks[a]
                   if s == abs_sector), None)
        out.append(("move", rel, lm))
        heading = abs_sector
    goal_lms = world.landmarks[path_spec.goal]
    out.append(("stop", None, (goal_lms[0][1], goal_lms[0][2])
                if goal_lms else None))
    return out


def generate_instruction(world, path_spec, language, style_rng,
                         lexicon):
    """Human-provenance instruction: one clause per maneuver."""
    tokens = []
    maneuvers = _maneuvers(world, path_spec)
    punct = SRC_PUNCT if language == "src" else TGT_PUNCT
    fw = {role: forms[language]
          for role, forms in lexicon.function_words.items()}
    for idx, (kind, rel, lm) in enumerate(maneuvers):
        clause = []
        lm_tokens = []
        if lm is not None:
            noun = _pick(style_rng, lexicon.forms(f"obj{lm[0]}", language))
            adj = _pick(style_rng, lexicon.forms(f"attr{lm[1]}", language))
            if language == "src":
                lm_tokens = [fw["article"], adj, noun]
            else:
                lm_tokens = [noun, adj, fw["topic"]]
        if kind == "move":
            direction = _pick(style_rng,
                              lexicon.forms(f"dir{rel}", language))
            verb_concept = f"go{int(style_rng.integers(2))}"
            verb = _pick(style_rng, lexicon.forms(verb_concept, language))
            if language == "src":
                clause = [verb, direction]
                if lm_tokens:
                    clause += [fw["prep"]] + lm_tokens
            else:
                clause = lm_tokens + [direction, verb]
        else:
            verb = _pick(style_rng, lexicon.forms("halt", language))
            if language == "src":
                clause = [verb]
                if lm_tokens:
                    clause += [fw["prep"]] + lm_tokens
            else:
                clause = lm_tokens + [verb]
        tokens += clause
        tokens.append(punct["final"] if idx == len(maneuvers) - 1
                      else punct["clause"])
    tokens = tokens[:MAX_INSTRUCTION_TOKENS]
    return Instruction(language=language, tokens=tokens,
                       text=" ".join(tokens), provenance="Human")


def mt_translate(instruction, direction, mt_config, rng, lexicon):
    """Noisy lexicon translation. ``direction`` is "src2tgt" or
    "tgt2src"; the instruction's language must match the origin side.
    """
    origin, dest = direction.split("2")
    if instruction.language != origin:
        raise ValueError(f"instruction language {instruction.language} "
                         f"does not match direction {direction}")
    origin_punct = SRC_PUNCT if origin == "src" else TGT_PUNCT
    dest_punct = SRC_PUNCT if dest == "src" else TGT_PUNCT
    punct_map = {origin_punct[k]: dest_punct[k] for k in origin_punct}
    order = SRC_ORDER if dest == "src" else TGT_ORDER

    out = []
    unk = 0
    clause = []  # (surface, category) in origin order
    for tok in instruction.tokens + [None]:
        if tok is not None and tok not in punct_map:
            concept = lexicon.lookup(tok, origin)
            if concept is not None:
                cat = lexicon.category(concept)
                if rng.random() < mt_config.p_sub:
                    peers = [c for c in lexicon.categories[cat]
                             if c != concept]
                    if peers:
                        concept = peers[int(rng.integers(len(peers)))]
                surface = _pick(rng, lexicon.forms(concept, dest))
                clause.append((surface, cat))
                continue
            role = lexicon.function_role(tok, origin)
            if role is not None:
                if rng.random() < mt_config.p_drop:
                    continue
                dest_form = lexicon.function_words[role][dest]
                if dest_form is None:
                    # roles without a counterpart calque to the paired role
                    paired = {"prep": "topic", "topic": "prep",
                              "article": None}.get(role)
                    dest_form = (lexicon.function_words[paired][dest]
                                 if paired else None)
                if dest_form is not None:
                    clause.append((dest_form, role))
                continue
            unk += 1
            clause.append((UNK_SURFACE, "unk"))
            continue
        # clause boundary: emit with idiomatic or calqued order
        if clause:
            if rng.random() < mt_config.order_fidelity:
                clause = sorted(enumerate(clause),
                                key=lambda p: (order.get(p[1][1], 9), p[0]))
                clause = [c for _, c in clause]
            out += [surface for surface, _ in clause]
            clause = []
        if tok is not None:
            out.append(punct_map[tok])
    tokens = out[:MAX_INSTRUCTION_TOKENS]
    return Instruction(language=dest, tokens=tokens, text=" ".join(tokens),
                       provenance="MT", unk_count=unk)


class Vocabulary:
    PAD, UNK, BOS, EOS = 0, 1, 2, 3
    RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")

    def __init__(self, token_to_id, min_freq):
        self.token_to_id = token_to_id
        self.id_to_token = {i: t for t, i in token_to_id.items()}
        self.min_freq = min_freq

    def __len__(self):
        return len(self.token_to_id)

    def id(self, token):
        return self.token_to_id.get(token, self.UNK)

    def token(self, idx):
        return self.id_to_token.get(idx, "<unk>")

    def encode(self, tokens, add_markers=True):
        ids = [self.id(t) for t in tokens]
        if add_markers:
            ids = [self.BOS] + ids + [self.EOS]
        return ids

    def decode(self, ids):
        return [self.token(i) for i in ids
                if i not in (self.PAD, self.BOS, self.EOS)]


def build_vocab(corpus, min_freq=5):
    """Frequency-sorted ids above the reserved block; ties break
    lexicographically. ``corpus`` is an iterable of Instructions.
    """
    counts = Counter()
    for instr in corpus:
        counts.update(instr.tokens)
    table = {t: i for i, t in enumerate(Vocabulary.RESERVED)}
    kept = sorted((t for t, c in counts.items() if c >= min_freq),
                  key=lambda t: (-counts[t], t))
    for t in kept:
        table[t] = len(table)
    return Vocabulary(table, min_freq)


def corpus_stats(corpus):
    """Length and sub-instruction histograms plus vocab sizes, keyed by
    language.
    """
    stats = {}
    for instr in corpus:
        s = stats.setdefault(instr.language, {
            "length_hist": Counter(), "sub_instruction_hist": Counter(),
            "tokens": Counter(), "count": 0})
        s["length_hist"][len(instr.tokens)] += 1
        s["sub_instruction_hist"][instr.n_sub_instructions] += 1
        s["tokens"].update(instr.tokens)
        s["count"] += 1
    for s in stats.values():
        s["vocab_size"] = len(s.pop("tokens"))
    return stats


def stats_to_csv(stats):
    lines = ["language,kind,value,count"]
    for lang in sorted(stats):
        s = stats[lang]
        for kind in ("length_hist", "sub_instruction_hist"):
            for value in sorted(s[kind]):
                lines.append(f"{lang},{kind[:-5]},{value},{s[kind][value]}")
        lines.append(f"{lang},vocab_size,{s['vocab_size']},{s['count']}")
    return "\n".join(lines) + "\n"


def _stable_hash(text):
    return int(hashlib.sha1(text.encode()).hexdigest()[:12], 16)


def select_bilingual(path_ids, epsilon):
    """Deterministic, nested epsilon-selection keyed on trajectory-id
    hash: the chosen set for a smaller epsilon is a subset of any larger
    one.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    ranked = sorted(path_ids,
                    key=lambda p: (hashlib.sha1(p.encode()).hexdigest(), p))
    n = int(round(epsilon * len(ranked)))
    return set(ranked[:n])


@dataclass
class Record:
    path_id: str
    world_id: int
    heading: int
    path: list
    instructions: dict       # {"src": [Instruction], "tgt": [Instruction]}

    def humans(self, language):
        return [i for i in self.instructions[language]
                if i.provenance == "Human"]

    def mts(self, language):
        return [i for i in self.instructions[language]
                if i.provenance == "MT"]


@dataclass
class Dataset:
    splits: dict             # split name -> [Record]
    worlds: dict             # world id -> World
    vocab: Vocabulary
    lexicon: Lexicon
    epsilon: float
    seed: int
    mt_fingerprint: str

    def world_of(self, record):
        return self.worlds[record.world_id]


def _mt_rng(seed, path_id, language, index):
    return np.random.default_rng(
        [seed, _stable_hash(path_id), 0 if language == "src" else 1, index])


def make_dataset(seen_worlds, unseen_worlds, n_train, n_val_seen,
                 n_val_unseen, epsilon, seed, instructions_per_path=3,
                 mt_config=None, lexicon=None, min_freq=5,
                 min_hops=3, max_hops=6):
    """Assemble train / val_seen / val_unseen splits.

    Every trajectory gets Human source instructions; a deterministic
    epsilon-fraction of training trajectories additionally gets Human
    target instructions; both validation splits are fully bilingual.
    Every Human instruction gets one cached MT rendition in the other
    language (Humans first in each list, then MTs in origin order).
    """
    seen_ids = {id(w) for w in seen_worlds}
    if any(id(w) in seen_ids for w in unseen_worlds):
        raise ValueError("seen and unseen world sets overlap")
    mt_config = mt_config or MTConfig()
    lexicon = lexicon or build_lexicon(
        n_categories=seen_worlds[0].n_categories,
        n_attributes=seen_worlds[0].n_attributes, K=seen_worlds[0].K)
    rng = np.random.default_rng(seed)
    world_ids = {}
    worlds = {}
    for w in list(seen_worlds) + list(unseen_worlds):
        world_ids[id(w)] = len(worlds)
        worlds[len(worlds)] = w

    def sample_split(split, pool, count):
        records = []
        for i in range(count):
            w = pool[int(rng.integers(len(pool)))]
            ps = W.sample_trajectory(w, rng, min_hops, max_hops)
            records.append(Record(
                path_id=f"{split}_{i:05d}", world_id=world_ids[id(w)],
                heading=ps.start_heading, path=list(ps.path),
                instructions={"src": [], "tgt": []}))
        return records

    splits = {
        "train": sample_split("train", seen_worlds, n_train),
        "val_seen": sample_split("val_seen", seen_worlds, n_val_seen),
        "val_unseen": sample_split("val_unseen", unseen_worlds,
                                   n_val_unseen),
    }
    bilingual = select_bilingual([r.path_id for r in splits["train"]],
                                 epsilon)

    for split, records in splits.items():
        for rec in records:
            w = worlds[rec.world_id]
            ps = W.PathSpec(path=rec.path, start_heading=rec.heading,
                            goal=rec.path[-1],
                            geodesic_length=W.geodesic(w, rec.path[0],
                                                       rec.path[-1]))
            langs = ["src"]
            if split != "train" or rec.path_id in bilingual:
                langs.append("tgt")
            for lang in langs:
                for j in range(instructions_per_path):
                    style = np.random.default_rng(
                        [seed, _stable_hash(rec.path_id),
                         2 if lang == "src" else 3, j])
                    rec.instructions[lang].append(
                        generate_instruction(w, ps, lang, style, lexicon))
            # cached MT renditions of every Human instruction
            for lang, other in (("src", "tgt"), ("tgt", "src")):
                for j, human in enumerate(list(rec.humans(lang))):
                    mt = mt_translate(
                        human, f"{lang}2{other}", mt_config,
                        _mt_rng(mt_config.seed, rec.path_id, lang, j),
                        lexicon)
                    mt.origin_index = j
                    rec.instructions[other].append(mt)

    train_corpus = [i for rec in splits["train"]
                    for lang in ("src", "tgt")
                    for i in rec.instructions[lang]]
    vocab = build_vocab(train_corpus, min_freq=min_freq)
    return Dataset(splits=splits, worlds=worlds, vocab=vocab,
                   lexicon=lexicon, epsilon=epsilon, seed=seed,
                   mt_fingerprint=mt_config.fingerprint())
