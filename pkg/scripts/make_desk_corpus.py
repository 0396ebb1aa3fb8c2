"""Regenerate the bundled desk-scale corpus (src/ranklm/data/desk-*.txt).

The corpus is synthetic: a seeded template grammar over a Zipfian, topically
clustered pseudo-word vocabulary.  Machine-generated text carries no
copyright, so the bundled files are public domain.  Sentences are short and
template-driven on purpose: the resulting N-gram structure is what makes the
branching-set teacher informative at desk scale.

Run from the repository root:

    python scripts/make_desk_corpus.py
"""

from __future__ import annotations

import collections
from pathlib import Path

import numpy as np

SEED = 20240601
TRAIN_TOKENS = 100_000
VALID_TOKENS = 10_000
OUT_DIR = Path(__file__).resolve().parent.parent / "src" / "ranklm" / "data"

ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
          "br", "dr", "gr", "kr", "pl", "st", "tr", "sk", "fl", "sn"]
VOWELS = ["a", "e", "i", "o", "u", "ai", "ei", "ou", "ia", "oa"]
CODAS = ["", "n", "r", "l", "s", "t", "m", "k", "sh", "nd"]


def make_word_forms(rng: np.random.Generator, n: int) -> list[str]:
    syllables = [o + v + c for o in ONSETS for v in VOWELS for c in CODAS]
    rng.shuffle(syllables)
    m = len(syllables)
    words: list[str] = []
    seen: set[str] = set()
    i = 0
    while len(words) < n:
        a = syllables[i % m]
        b = syllables[(i * 7 + 3 + i // m) % m]
        w = a + b if i % 3 else a
        i += 1
        if w not in seen and len(w) > 2:
            seen.add(w)
            words.append(w)
    return words


def zipf_weights(n: int, exponent: float = 1.05, shift: float = 2.7) -> np.ndarray:
    w = 1.0 / np.power(np.arange(n, dtype=np.float64) + shift, exponent)
    return w / w.sum()


class Grammar:
    def __init__(self, seed: int = SEED):
        self.rng = np.random.default_rng(seed)
        forms = make_word_forms(self.rng, 7000)
        self.nouns = forms[:3500]
        self.verbs = ["".join((forms[3500 + i], "es")) for i in range(1750)]
        self.adjs = forms[5250:6250]
        self.advs = ["".join((forms[6250 + i], "ly")) for i in range(450)]
        self.dets = ["tha", "ena", "soma", "everi", "thisa", "ani"]
        self.preps = ["und", "ov", "tu", "fra", "bi", "mid", "nar", "pasa"]
        self.conjs = ["an", "ora", "buta"]
        self.prons = ["hu", "shi", "tei", "wi"]
        self.auxs = ["kan", "wil", "mus", "dout"]

        self.n_topics = 56
        self.topic_w = zipf_weights(self.n_topics, 1.0, 1.5)
        self.topic_nouns = []
        self.topic_verbs = []
        self.topic_adjs = []
        for j in range(self.n_topics):
            n_lo = 140 + j * 60
            v_lo = 80 + j * 30
            a_lo = 50 + j * 17
            self.topic_nouns.append(self.nouns[:140] + self.nouns[n_lo : n_lo + 200])
            self.topic_verbs.append(self.verbs[:80] + self.verbs[v_lo : v_lo + 100])
            self.topic_adjs.append(self.adjs[:50] + self.adjs[a_lo : a_lo + 65])

    def pick(self, pool: list[str], exponent: float = 1.05) -> str:
        # content pools sample with a flat tail so ~5k types are realized
        if len(pool) > 50:
            exponent = 0.72
        w = zipf_weights(len(pool), exponent)
        return pool[self.rng.choice(len(pool), p=w)]

    def sentence(self, topic: int) -> list[str]:
        rng = self.rng
        nouns, verbs, adjs = (
            self.topic_nouns[topic],
            self.topic_verbs[topic],
            self.topic_adjs[topic],
        )
        det = lambda: self.pick(self.dets, 1.6)
        noun = lambda: self.pick(nouns)
        verb = lambda: self.pick(verbs)
        adj = lambda: self.pick(adjs)
        adv = lambda: self.pick(self.advs)
        prep = lambda: self.pick(self.preps, 1.3)
        np_ = lambda: [det(), adj(), noun()] if rng.random() < 0.35 else [det(), noun()]
        t = rng.random()
        if t < 0.30:
            return np_() + [verb()] + np_()
        if t < 0.55:
            return np_() + [verb(), prep()] + np_()
        if t < 0.70:
            return [self.pick(self.prons, 1.4), self.pick(self.auxs, 1.4), verb()] + np_()
        if t < 0.85:
            return np_() + [verb()] + np_() + [prep()] + np_()
        if t < 0.95:
            return np_() + [verb(), adv(), self.pick(self.conjs, 1.3)] + np_() + [verb()]
        return np_() + [prep()] + np_() + [verb(), adv()]

    def emit(self, n_tokens: int) -> list[str]:
        lines: list[str] = []
        count = 0
        while count < n_tokens:
            topic = int(self.rng.choice(self.n_topics, p=self.topic_w))
            for _ in range(int(self.rng.integers(3, 9))):
                words = self.sentence(topic)
                lines.append(" ".join(words))
                count += len(words) + 1  # sentence terminator token
                if count >= n_tokens:
                    break
        return lines


def main() -> None:
    g = Grammar()
    train_lines = g.emit(TRAIN_TOKENS)
    valid_lines = g.emit(VALID_TOKENS)
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    (OUT_DIR / "desk-train.txt").write_text("\n".join(train_lines) + "\n", encoding="utf-8")
    (OUT_DIR / "desk-valid.txt").write_text("\n".join(valid_lines) + "\n", encoding="utf-8")

    counts = collections.Counter()
    for line in train_lines:
        counts.update(line.split())
        counts["<eos>"] += 1
    total = sum(counts.values())
    print(f"train tokens={total} types={len(counts)}")
    print("top:", counts.most_common(10))


if __name__ == "__main__":
    main()
