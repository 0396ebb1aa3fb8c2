import numpy as np
import pytest

from ranklm import TokenStream, Vocabulary, build_vocab


@pytest.fixture
def toy_corpus(tmp_path):
    """The two-sentence corpus used throughout the operation examples."""
    path = tmp_path / "toy.txt"
    path.write_text("the cat sat\nthe cat ran\n", encoding="utf-8")
    return path


@pytest.fixture
def toy_vocab(toy_corpus):
    return build_vocab(toy_corpus, min_count=1)


@pytest.fixture
def abc_stream():
    """Stream a b c a b d a b c with ids a=0 b=1 c=2 d=3."""
    return TokenStream(
        ids=np.array([0, 1, 2, 0, 1, 3, 0, 1, 2], dtype=np.uint32), vocab_size=4
    )


@pytest.fixture
def abc_vocab():
    return Vocabulary.from_tokens(["a", "b", "c", "d"])


def random_stream(rng: np.random.Generator, T: int, V: int) -> TokenStream:
    return TokenStream(ids=rng.integers(0, V, size=T).astype(np.uint32), vocab_size=V)


def write_corpus(tmp_path, name: str, text: str):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def make_cycle_corpus(tmp_path, n_words=12, repeats=40, name="cycle.txt"):
    """Deterministic corpus: a fixed word cycle, one line per repeat.  Every
    context of length >= 1 has a unique continuation, so it is memorizable."""
    words = [f"w{i:02d}" for i in range(n_words)]
    text = "\n".join(" ".join(words) for _ in range(repeats)) + "\n"
    return write_corpus(tmp_path, name, text)


def make_markov_corpus(tmp_path, seed=0, n_tokens=3000, V=30, name="markov.txt",
                       table_seed=1234):
    """Small learnable corpus: order-1 Markov chain over pseudo-words with a
    sparse transition table; ~8 tokens per line.  The table is fixed by
    table_seed so different seeds give fresh rollouts of the same language."""
    table_rng = np.random.default_rng(table_seed)
    rng = np.random.default_rng(seed)
    words = [f"t{i:02d}" for i in range(V)]
    succ = {i: table_rng.choice(V, size=3, replace=False) for i in range(V)}
    lines, count, state = [], 0, 0
    while count < n_tokens:
        line = []
        for _ in range(8):
            state = int(rng.choice(succ[state]))
            line.append(words[state])
        lines.append(" ".join(line))
        count += 9
    return write_corpus(tmp_path, name, "\n".join(lines) + "\n")
