"""Exception types shared across the package.

Everything user-facing derives from RanklmError so the CLI can turn any
module failure into a one-line diagnostic and a nonzero exit code.
"""


class RanklmError(Exception):
    pass


class CorpusError(RanklmError):
    """Unreadable/empty corpus files, unknown tokens without an <unk> id."""


class RankFormatError(RanklmError):
    """Malformed RKGT/JSON-lines rank files: bad magic, truncation, bad ids."""


class AlignmentError(RanklmError):
    """Rank ground-truths and token stream disagree on length or vocab."""


class DivergenceError(RanklmError):
    """Non-finite loss or gradients during training."""
