"""Instruction prompts to selection vectors, and source predictions to text.

The default converter is a small deterministic grammar: a prompt is split
into sentences, and inside a sentence every noun is bound to the most recent
verb (REMOVE or RETAIN class). A learned converter with the attention
classifier layout (768 -> 64, 16-head attention, 64 -> 32 -> N) is available
through ``AttentionClassifier`` and ``LearnedPromptConverter``.
"""

import hashlib
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
from sklearn.base import BaseEstimator, TransformerMixin

from .compositor import ALL_COMPONENTS, SCENE
from ._validation import check_vector

REMOVE, RETAIN = "remove", "retain"


@dataclass
class PromptVocabulary:
    nouns: Dict[str, Tuple[str, ...]]
    groups: Dict[str, Tuple[Tuple[str, ...], Tuple[str, ...]]] = field(default_factory=dict)
    remove_verbs: Tuple[str, ...] = ()
    retain_verbs: Tuple[str, ...] = ()
    fillers: Tuple[str, ...] = ()

    def __post_init__(self):
        seen = {}
        for comp, phrases in self.nouns.items():
            for phrase in phrases:
                key = normalize(phrase)
                if key in seen:
                    raise ValueError(f"noun {key!r} listed for both {seen[key]} and {comp}")
                seen[key] = comp
        self._phrases = {}
        for comp, phrases in self.nouns.items():
            for phrase in phrases:
                self._phrases[normalize(phrase)] = ("noun", (comp,))
        for name, (comps, phrases) in self.groups.items():
            for phrase in phrases:
                self._add(phrase, ("noun", tuple(comps)))
        for verb in self.remove_verbs:
            self._add(verb, ("verb", REMOVE))
        for verb in self.retain_verbs:
            self._add(verb, ("verb", RETAIN))
        for word in self.fillers:
            self._phrases.setdefault(normalize(word), ("filler", None))
        self._max_len = max(len(p.split()) for p in self._phrases)

    def _add(self, phrase, entry):
        key = normalize(phrase)
        if key in self._phrases and self._phrases[key] != entry:
            raise ValueError(f"phrase {key!r} has conflicting meanings")
        self._phrases[key] = entry

    def display_name(self, comp):
        return self.nouns[comp][0] if comp in self.nouns else comp.replace("_", " ")

    def lookup(self, words, i):
        """Longest phrase starting at ``words[i]``: (length, entry) or (0, None)."""
        for n in range(min(self._max_len, len(words) - i), 0, -1):
            entry = self._phrases.get(" ".join(words[i:i + n]))
            if entry is not None:
                return n, entry
        return 0, None

    def describe(self):
        parts = [f"{c}: {', '.join(p)}" for c, p in self.nouns.items()]
        parts += [f"{g}: {', '.join(p)}" for g, (_, p) in self.groups.items()]
        return "; ".join(parts)


def normalize(text):
    return " ".join(text.lower().split())


def parse_vocabulary(text):
    nouns, groups = {}, {}
    remove, retain, fillers = (), (), ()
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, body = line.partition(":")
        items = tuple(p.strip() for p in body.split("|") if p.strip())
        head = head.strip()
        if head.startswith("@group"):
            name = head.split()[1]
            comps, _, phrases = body.partition("=")
            groups[name] = (tuple(comps.split()),
                            tuple(p.strip() for p in phrases.split("|") if p.strip()))
        elif head == "@remove":
            remove = items
        elif head == "@retain":
            retain = items
        elif head == "@filler":
            fillers = items
        else:
            nouns[head] = items
    return PromptVocabulary(nouns, groups, remove, retain, fillers)


def load_vocabulary(path=None):
    if path is None:
        text = resources.files("cbdnet").joinpath("data/vocabulary.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_vocabulary(text)


_SENTENCE = re.compile(r"[.;!?]")
_TOKEN = re.compile(r"[a-z0-9_']+")


def _clauses(text):
    for sentence in _SENTENCE.split(normalize(text)):
        words = _TOKEN.findall(sentence)
        if words:
            yield words


def parse_prompt(text, presence, vocab=None, components=ALL_COMPONENTS):
    """Convert an instruction into the selection vector ``V_c``.

    Inside each sentence, nouns bind to the last verb seen. REMOVE-only
    prompts keep every unmentioned component; a prompt with any RETAIN verb
    drops every unmentioned component, the scene included. When a component
    is mentioned more than once, the last mention wins. The result is masked
    by ``presence``. An empty prompt removes every degradation.
    """
    vocab = vocab or load_vocabulary()
    components = tuple(components)
    presence = check_vector(presence, len(components), "presence")
    if not normalize(text):
        v = np.zeros(len(components))
        v[0] = 1.0
        return v * (presence > 0)

    decisions = {}
    retain_mode = False
    for words in _clauses(text):
        verb = None
        named = 0
        i = 0
        while i < len(words):
            n, entry = vocab.lookup(words, i)
            if entry is None:
                raise ValueError(f"unknown word {words[i]!r} in prompt; vocabulary: "
                                 f"{vocab.describe()}")
            kind, value = entry
            if kind == "verb":
                verb = value
                retain_mode |= value == RETAIN
            elif kind == "noun":
                if verb is None:
                    raise ValueError(f"ambiguous instruction: no verb before "
                                     f"{' '.join(words[i:i + n])!r}")
                named += 1
                for comp in value:
                    decisions[comp] = verb == RETAIN
            i += n
        if verb is not None and not named:
            raise ValueError("ambiguous instruction: no component named after "
                             f"{' '.join(words)!r}")

    default = not retain_mode
    v = np.array([float(decisions.get(c, default)) for c in components])
    return v * (presence > 0)


def describe_sources(probs, vocab=None, components=ALL_COMPONENTS, threshold=0.5):
    vocab = vocab or load_vocabulary()
    probs = check_vector(probs, len(components), "probabilities")
    items = [f"{vocab.display_name(c)} ({p:.2f})" for c, p in zip(components, probs) if p > threshold]
    return "present: " + (", ".join(items) if items else "none")


class PromptConverter(BaseEstimator, TransformerMixin):
    """Grammar-based converter with the transformer API.

    ``transform(texts, presence=None)`` returns an (n_prompts, N) array.
    """

    def __init__(self, components=ALL_COMPONENTS, vocabulary_path=None):
        self.components = components
        self.vocabulary_path = vocabulary_path

    def fit(self, X=None, y=None):
        self.vocabulary_ = load_vocabulary(self.vocabulary_path)
        self.n_components_ = len(self.components)
        return self

    def fit_transform(self, X, y=None, presence=None):
        return self.fit(X).transform(X, presence)

    def transform(self, X, presence=None):
        if not hasattr(self, "vocabulary_"):
            self.fit()
        n = len(self.components)
        if presence is None:
            presence = np.ones((len(X), n))
        presence = np.broadcast_to(np.asarray(presence, dtype=float), (len(X), n))
        return np.stack([parse_prompt(t, p, self.vocabulary_, self.components)
                         for t, p in zip(X, presence)])


# --------------------------------------------------------------------------
# learned path


class HashingTextEmbedder:
    """Deterministic token embeddings: each token maps to a seeded normal vector."""

    def __init__(self, width=768, seed=0):
        self.width = width
        self.seed = seed
        self._cache = {}

    def token_vector(self, token):
        if token not in self._cache:
            digest = hashlib.sha256(f"{self.seed}:{token}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            self._cache[token] = rng.standard_normal(self.width) / np.sqrt(self.width)
        return self._cache[token]

    def __call__(self, text):
        words = _TOKEN.findall(normalize(text)) or ["<empty>"]
        return np.stack([self.token_vector(w) for w in words])


class AttentionClassifier(nn.Module):
    def __init__(self, n_components, in_width=768, width=64, heads=16, dropout=0.1):
        super().__init__()
        self.in_width = in_width
        self.fc1 = nn.Linear(in_width, width)
        self.attn = nn.MultiheadAttention(width, heads, dropout=dropout, batch_first=True)
        self.fc2 = nn.Linear(width, 32)
        self.fc3 = nn.Linear(32, n_components)
        self.pool = nn.AdaptiveAvgPool1d(1)

    def forward(self, embedding):
        """(B, L, in_width) token embeddings -> (B, N) logits."""
        if embedding.shape[-1] != self.in_width:
            raise ValueError(f"embedding width {embedding.shape[-1]} != {self.in_width}")
        x = self.fc1(embedding)
        x, _ = self.attn(x, x, x, need_weights=False)
        x = self.fc3(torch.relu(self.fc2(x)))
        return self.pool(x.transpose(1, 2)).squeeze(-1)


def embed_classify(embedding, model):
    """Logits of the learned converter for one embedding (L, width) or (width,)."""
    x = torch.as_tensor(np.asarray(embedding), dtype=torch.float32)
    if x.dim() == 1:
        x = x[None]
    with torch.no_grad():
        return model(x[None])[0].numpy()


class LearnedPromptConverter(BaseEstimator):
    def __init__(self, n_components=len(ALL_COMPONENTS), epochs=60, lr=3e-3, batch_size=16,
                 embed_seed=0, random_state=0):
        self.n_components = n_components
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.embed_seed = embed_seed
        self.random_state = random_state

    def _buckets(self, texts):
        # prompts of equal token count share a batch, so no padding is needed
        seqs = [self.embedder_(t) for t in texts]
        by_len = {}
        for i, s in enumerate(seqs):
            by_len.setdefault(len(s), []).append(i)
        return {n: (np.array(idx), torch.as_tensor(np.stack([seqs[i] for i in idx]),
                                                    dtype=torch.float32))
                for n, idx in by_len.items()}

    def fit(self, texts, y):
        torch.manual_seed(self.random_state)
        self.embedder_ = HashingTextEmbedder(seed=self.embed_seed)
        self.model_ = AttentionClassifier(self.n_components)
        y = torch.as_tensor(np.asarray(y), dtype=torch.float32)
        buckets = list(self._buckets(texts).values())
        opt = torch.optim.Adam(self.model_.parameters(), self.lr)
        gen = np.random.default_rng(self.random_state)
        self.model_.train()
        for _ in range(self.epochs):
            batches = []
            for idx, x in buckets:
                order = gen.permutation(len(idx))
                for start in range(0, len(idx), self.batch_size):
                    pick = order[start:start + self.batch_size]
                    batches.append((idx[pick], x[pick]))
            for b in gen.permutation(len(batches)):
                idx, x = batches[b]
                loss = nn.functional.binary_cross_entropy_with_logits(self.model_(x), y[idx])
                opt.zero_grad()
                loss.backward()
                opt.step()
        self.model_.eval()
        return self

    def decision_function(self, texts):
        out = np.zeros((len(texts), self.n_components))
        with torch.no_grad():
            for idx, x in self._buckets(texts).values():
                out[idx] = self.model_(x).numpy()
        return out

    def predict(self, texts):
        return (self.decision_function(texts) > 0).astype(float)
