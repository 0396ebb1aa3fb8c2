import numpy as np
import pytest

from ranklm import (
    BatchPlan,
    RankBuildConfig,
    RanklmError,
    StudentConfig,
    TokenStream,
    build_ranks,
    enumerate_schemas,
    init_params,
    perplexity,
    rank_frequency_stats,
    topk_accuracy,
)
from ranklm.metrics import write_rank_frequency_csv
from ranklm.rankgen import ContextSchema
from ranklm.student import forward_batch
from conftest import random_stream


def zero_student(V, ctx=2):
    return init_params(
        StudentConfig(vocab_size=V, context_len=ctx, embed_dim=3, hidden_dim=3,
                      init_scale=0.0)
    )


class TestPerplexity:
    def test_uniform_is_vocab_size(self):
        rng = np.random.default_rng(0)
        stream = random_stream(rng, 200, 23)
        res = perplexity(zero_student(23), stream)
        assert res.ppl == pytest.approx(23.0, rel=1e-9)
        assert res.n_skipped == 2
        assert res.n_scored == 198

    def test_exp_of_mean_ce(self):
        rng = np.random.default_rng(1)
        stream = random_stream(rng, 150, 9)
        p = init_params(StudentConfig(vocab_size=9, context_len=2, embed_dim=4,
                                      hidden_dim=4, seed=2), dtype=np.float64)
        res = perplexity(p, stream)
        assert abs(np.log(res.ppl) - res.mean_ce) < 1e-10

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        stream = random_stream(rng, 120, 7)
        p = init_params(StudentConfig(vocab_size=7, context_len=2, embed_dim=3,
                                      hidden_dim=3, seed=1), dtype=np.float64)
        base = perplexity(p, stream).ppl
        p.b2 += 55.0  # constant logit shift
        assert perplexity(p, stream).ppl == pytest.approx(base, rel=1e-9)

    def test_no_scorable_positions(self):
        stream = TokenStream(ids=np.array([1, 2], dtype=np.uint32), vocab_size=3)
        with pytest.raises(RanklmError):
            perplexity(zero_student(3, ctx=5), stream)

    def test_plan_chunking_matches(self):
        rng = np.random.default_rng(3)
        stream = random_stream(rng, 300, 11)
        p = init_params(StudentConfig(vocab_size=11, context_len=3, embed_dim=4,
                                      hidden_dim=5, seed=4), dtype=np.float64)
        a = perplexity(p, stream).ppl
        b = perplexity(p, stream, BatchPlan(batch_size=4, seq_len=7)).ppl
        assert a == pytest.approx(b, rel=1e-12)


class TestTopkAccuracy:
    def test_full_vocab_is_one(self):
        rng = np.random.default_rng(4)
        stream = random_stream(rng, 100, 13)
        acc = topk_accuracy(zero_student(13), stream, [13])
        assert acc[13] == 1.0

    def test_monotone_in_k(self):
        rng = np.random.default_rng(5)
        stream = random_stream(rng, 200, 17)
        p = init_params(StudentConfig(vocab_size=17, context_len=2, embed_dim=4,
                                      hidden_dim=4, seed=6))
        acc = topk_accuracy(p, stream, [1, 2, 3, 5, 10, 17])
        vals = [acc[k] for k in sorted(acc)]
        assert vals == sorted(vals)
        assert acc[17] == 1.0

    def test_tie_break_lower_id_first(self):
        # uniform logits: GT is "in top-k" iff its id < k
        V = 6
        ids = np.tile(np.arange(V, dtype=np.uint32), 30)
        stream = TokenStream(ids=ids, vocab_size=V)
        p = zero_student(V)
        acc = topk_accuracy(p, stream, [1, 3, 6])
        pos = np.arange(p.config.context_len, len(stream))
        gts = stream.ids[pos]
        for k in (1, 3, 6):
            assert acc[k] == pytest.approx(float((gts < k).mean()))

    def test_k_order_and_bound(self):
        rng = np.random.default_rng(6)
        stream = random_stream(rng, 50, 5)
        with pytest.raises(RanklmError):
            topk_accuracy(zero_student(5), stream, [3, 1])
        with pytest.raises(RanklmError):
            topk_accuracy(zero_student(5), stream, [9])

    def test_agrees_with_argsort_reference(self):
        rng = np.random.default_rng(7)
        stream = random_stream(rng, 220, 19)
        p = init_params(StudentConfig(vocab_size=19, context_len=2, embed_dim=4,
                                      hidden_dim=5, seed=8), dtype=np.float64)
        ks = [1, 3, 7]
        acc = topk_accuracy(p, stream, ks)
        ctx = p.config.context_len
        pos = np.arange(ctx, len(stream))
        offs = np.arange(-ctx, 0)
        logits, _ = forward_batch(p, stream.ids[pos[:, None] + offs].astype(np.int64))
        hits = {k: 0 for k in ks}
        for i, t in enumerate(pos):
            order = np.lexsort((np.arange(19), -logits[i]))
            rank = int(np.nonzero(order == stream.ids[t])[0][0])
            for k in ks:
                hits[k] += rank < k
        for k in ks:
            assert acc[k] == pytest.approx(hits[k] / len(pos))


class TestRankFrequencyStats:
    def test_gt_only_rows_make_series_proportional(self):
        rng = np.random.default_rng(8)
        stream = random_stream(rng, 120, 9)
        ranks = build_ranks(stream, RankBuildConfig(schemas=(ContextSchema(9, 9),), k_max=1))
        rows = rank_frequency_stats(ranks, stream, n_bins=3)
        for _, gt_freq, topk_freq, _ in rows:
            assert topk_freq == pytest.approx(gt_freq / ranks.k_max)

    def test_uniform_ranks_flat_bins(self):
        # every word appears once as GT and rows are GT-only: binned
        # averages of the scaled top-k frequency are flat
        V = 20
        ids = np.tile(np.arange(V, dtype=np.uint32), 5)
        stream = TokenStream(ids=ids, vocab_size=V)
        ranks = build_ranks(stream, RankBuildConfig(schemas=(ContextSchema(19, 19),), k_max=1))
        rows = rank_frequency_stats(ranks, stream, n_bins=4)
        bin_avgs = {r[3] for r in rows}
        assert len(bin_avgs) == 1

    def test_total_mass_identity(self):
        rng = np.random.default_rng(9)
        stream = random_stream(rng, 400, 25)
        ranks = build_ranks(
            stream,
            RankBuildConfig(schemas=tuple(enumerate_schemas(2, 1)), cutoff_q=10, k_max=6),
        )
        rows = rank_frequency_stats(ranks, stream, n_bins=5)
        total = sum(r[2] for r in rows)
        want = ranks.lengths.astype(np.float64).sum() / ranks.k_max
        assert abs(total - want) < 1e-9

    def test_csv_schema(self, tmp_path):
        rng = np.random.default_rng(10)
        stream = random_stream(rng, 90, 8)
        ranks = build_ranks(stream, RankBuildConfig(schemas=(ContextSchema(1, 0),), k_max=4))
        rows = rank_frequency_stats(ranks, stream, n_bins=2)
        path = tmp_path / "stats.csv"
        write_rank_frequency_csv(rows, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "word_rank,gt_freq,topk_freq,bin_avg"
        assert all(len(l.split(",")) == 4 for l in lines)
        assert len(lines) == 1 + 8
