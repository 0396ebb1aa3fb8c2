"""Access to the bundled desk-scale corpus.

The files are generated by scripts/make_desk_corpus.py (seeded synthetic
text, public domain) and ship with the package so the smoke runs and the
acceptance suite need no downloads.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path


def desk_corpus_paths() -> tuple[Path, Path]:
    """(train, valid) paths of the bundled ~100k/~10k token corpus."""
    root = resources.files("ranklm") / "data"
    return Path(str(root / "desk-train.txt")), Path(str(root / "desk-valid.txt"))
