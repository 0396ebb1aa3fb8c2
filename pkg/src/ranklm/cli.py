"""Command-line entry point: the whole pipeline as subcommands.

Every run prints a reproducibility stanza (resolved arguments, seed where
applicable, format versions) before doing any work.  Module errors become a
one-line diagnostic and a nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import FORMAT_VERSIONS, __version__
from .corpus import Vocabulary, build_vocab, load_corpus
from .errors import RanklmError
from .metrics import perplexity, rank_frequency_stats, topk_accuracy, write_rank_frequency_csv
from .rankgen import (
    RankBuildConfig,
    brute_force_ranks,
    build_ranks,
    enumerate_schemas,
    render_branching_set,
)
from .student import load_checkpoint
from .teacherio import (
    RANDOM_TEACHER_PRNG,
    float_gt_to_top,
    random_teacher,
    read_ranks,
    write_ranks,
    write_ranks_jsonl,
)
from .trainer import TrainConfig, grad_check, train


def _stanza(command: str, args: dict) -> None:
    print(
        json.dumps(
            {
                "ranklm": __version__,
                "command": command,
                "resolved": args,
                "format_versions": FORMAT_VERSIONS,
            },
            sort_keys=True,
        )
    )


def _cmd_build_vocab(args) -> int:
    _stanza("build-vocab", {"corpus": args.corpus, "min_count": args.min_count, "out": args.out})
    vocab = build_vocab(args.corpus, min_count=args.min_count)
    vocab.save(args.out)
    print(f"wrote {vocab.size} tokens to {args.out}")
    return 0


def _cmd_build_ranks(args) -> int:
    _stanza(
        "build-ranks",
        {
            "corpus": args.corpus,
            "vocab": args.vocab,
            "max_past": args.max_past,
            "max_future": args.max_future,
            "cutoff": args.cutoff,
            "k_max": args.k_max,
            "overflow": args.overflow,
            "jobs": args.jobs,
            "out": args.out,
        },
    )
    vocab = Vocabulary.load(args.vocab)
    stream = load_corpus(args.corpus, vocab)
    config = RankBuildConfig(
        schemas=tuple(enumerate_schemas(args.max_past, args.max_future)),
        cutoff_q=args.cutoff,
        k_max=args.k_max,
        overflow_mode=args.overflow,
    )
    ranks = build_ranks(stream, config, jobs=args.jobs)
    if args.check_oracle:
        oracle = brute_force_ranks(stream, config)
        same = (
            (ranks.ranks == oracle.ranks).all()
            and (ranks.lengths == oracle.lengths).all()
            and (ranks.groups == oracle.groups).all()
        )
        print(f"oracle check: {'ok' if same else 'MISMATCH'}")
        if not same:
            return 1
    write_ranks(ranks, args.out)
    mean_len = float(ranks.lengths.mean())
    print(f"wrote ranks T={ranks.T} k_max={ranks.k_max} mean_len={mean_len:.2f} to {args.out}")
    return 0


def _cmd_random_ranks(args) -> int:
    _stanza(
        "random-ranks",
        {
            "corpus": args.corpus,
            "vocab": args.vocab,
            "k": args.k,
            "seed": args.seed,
            "prng": RANDOM_TEACHER_PRNG,
            "out": args.out,
        },
    )
    vocab = Vocabulary.load(args.vocab)
    stream = load_corpus(args.corpus, vocab)
    ranks = random_teacher(stream, args.k, vocab.size, args.seed)
    write_ranks(ranks, args.out)
    if args.jsonl_out:
        write_ranks_jsonl(
            ranks, vocab, args.jsonl_out,
            meta={"prng": RANDOM_TEACHER_PRNG, "seed": args.seed},
        )
    print(f"wrote random-teacher ranks T={ranks.T} k={args.k} to {args.out}")
    return 0


def _cmd_float_gt(args) -> int:
    _stanza("float-gt", {"ranks": args.ranks, "corpus": args.corpus, "vocab": args.vocab, "out": args.out})
    vocab = Vocabulary.load(args.vocab)
    stream = load_corpus(args.corpus, vocab)
    floated = float_gt_to_top(read_ranks(args.ranks), stream)
    write_ranks(floated, args.out)
    print(f"wrote floated ranks to {args.out}")
    return 0


def _cmd_inspect(args) -> int:
    _stanza("inspect", {"ranks": args.ranks, "vocab": args.vocab, "pos": args.pos, "width": args.width})
    vocab = Vocabulary.load(args.vocab)
    ranks = read_ranks(args.ranks)
    print(render_branching_set(ranks, vocab, args.pos, args.width))
    return 0


def _cmd_train(args) -> int:
    config = TrainConfig.from_json(args.config)
    _stanza("train", {"config": config.resolved(), "seed": config.student.seed})
    result = train(config)
    final = result.metrics[-1]
    print(
        f"finished epoch {final['epoch']}: train_loss={final['train_loss']} "
        f"val_ppl={final['val_ppl']} -> {result.checkpoint_path}"
    )
    print(f"metrics: {result.metrics_path}")
    return 0


def _cmd_eval(args) -> int:
    ks = sorted(int(x) for x in args.topk.split(","))
    _stanza("eval", {"checkpoint": args.checkpoint, "corpus": args.corpus, "vocab": args.vocab, "topk": ks})
    params = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    stream = load_corpus(args.corpus, vocab)
    res = perplexity(params, stream)
    acc = topk_accuracy(params, stream, ks)
    print(f"ppl={res.ppl:.4f} scored={res.n_scored} skipped={res.n_skipped}")
    print(" ".join(f"acc@{k}={acc[k]:.4f}" for k in ks))
    return 0


def _cmd_stats(args) -> int:
    _stanza("stats", {"ranks": args.ranks, "corpus": args.corpus, "vocab": args.vocab, "bins": args.bins, "out": args.out})
    vocab = Vocabulary.load(args.vocab)
    stream = load_corpus(args.corpus, vocab)
    ranks = read_ranks(args.ranks)
    rows = rank_frequency_stats(ranks, stream, n_bins=args.bins)
    write_rank_frequency_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    _stanza("gradcheck", {"cases": args.cases, "tol": args.tol, "seed": args.seed})
    report = grad_check(n_cases=args.cases, tolerance=args.tol, seed=args.seed)
    print(report.format())
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ranklm",
        description="Train word-level language models by learning to rank.",
    )
    parser.add_argument(
        "--version", action="version",
        version=f"ranklm {__version__} formats={json.dumps(FORMAT_VERSIONS)}",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="frequency-ordered vocabulary from a corpus")
    p.add_argument("corpus")
    p.add_argument("--min-count", type=int, default=1, dest="min_count")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_build_vocab)

    p = sub.add_parser("build-ranks", help="N-gram branching-set rank ground-truths")
    p.add_argument("corpus")
    p.add_argument("--vocab", required=True)
    p.add_argument("--max-past", type=int, default=5, dest="max_past")
    p.add_argument("--max-future", type=int, default=4, dest="max_future")
    p.add_argument("--cutoff", type=int, default=10)
    p.add_argument("--k-max", type=int, default=10, dest="k_max")
    p.add_argument("--overflow", choices=["discard", "cap"], default="discard")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--check-oracle", action="store_true", dest="check_oracle")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_build_ranks)

    p = sub.add_parser("random-ranks", help="random-teacher ablation ranks")
    p.add_argument("corpus")
    p.add_argument("--vocab", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--jsonl-out", dest="jsonl_out",
                   help="also write JSON-lines with the PRNG recorded in the header")
    p.set_defaults(fn=_cmd_random_ranks)

    p = sub.add_parser("float-gt", help="move corpus ground-truths to rank 1")
    p.add_argument("ranks")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_float_gt)

    p = sub.add_parser("inspect", help="render branching sets around a position")
    p.add_argument("ranks")
    p.add_argument("--vocab", required=True)
    p.add_argument("--pos", type=int, required=True)
    p.add_argument("--width", type=int, default=8)
    p.set_defaults(fn=_cmd_inspect)

    p = sub.add_parser("train", help="train a student from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="perplexity and top-k accuracy of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--topk", default="1,2,3,5,10")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("stats", help="rank/frequency statistics CSV")
    p.add_argument("ranks")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_stats)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except RanklmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
