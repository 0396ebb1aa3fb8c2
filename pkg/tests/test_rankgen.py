import numpy as np
import pytest

from ranklm import (
    ContextSchema,
    PAD_ID,
    RankBuildConfig,
    RanklmError,
    brute_force_ranks,
    build_ranks,
    collect_orders,
    enumerate_schemas,
    merge_orders,
    render_branching_set,
)
from conftest import random_stream


def key(past, future=()):
    return (tuple(past), tuple(future))


class TestEnumerateSchemas:
    def test_small(self):
        out = enumerate_schemas(2, 1)
        assert [(s.past, s.future) for s in out] == [(2, 1), (2, 0), (1, 1), (1, 0)]

    def test_paper_configuration(self):
        out = enumerate_schemas(5, 4)
        assert len(out) == 25
        assert (out[0].past, out[0].future) == (5, 4)
        assert (out[1].past, out[1].future) == (5, 3)
        assert (out[-2].past, out[-2].future) == (1, 1)
        assert (out[-1].past, out[-1].future) == (1, 0)

    def test_minimal(self):
        out = enumerate_schemas(1, 0)
        assert [(s.past, s.future) for s in out] == [(1, 0)]

    def test_zero_past_rejected(self):
        with pytest.raises(RanklmError):
            enumerate_schemas(0, 2)


class TestCollectOrders:
    def test_past_only_unigram_context(self, abc_stream):
        table = collect_orders(abc_stream, ContextSchema(1, 0), 10)
        assert table.sets == {
            key([0]): [1],
            key([1]): [2, 3],
            key([2]): [0],
            key([3]): [0],
        }

    def test_bigram_context(self, abc_stream):
        table = collect_orders(abc_stream, ContextSchema(2, 0), 10)
        assert table.sets == {
            key([0, 1]): [2, 3],
            key([1, 2]): [0],
            key([2, 0]): [1],
            key([1, 3]): [0],
            key([3, 0]): [1],
        }

    def test_cutoff_discard_marks_overflow(self, abc_stream):
        table = collect_orders(abc_stream, ContextSchema(1, 0), 2, "discard")
        assert key([1]) in table.overflowed
        assert table.lookup(key([1])) is None
        assert table.lookup(key([0])) == [1]

    def test_cutoff_cap_keeps_first(self, abc_stream):
        table = collect_orders(abc_stream, ContextSchema(1, 0), 2, "cap")
        assert table.lookup(key([1])) == [2]

    def test_future_context(self, abc_stream):
        # stream a b c a b d a b c; schema (1,1): key=(prev, next) -> word
        table = collect_orders(abc_stream, ContextSchema(1, 1), 10)
        assert table.sets[key([0], [2])] == [1]   # a _ c -> b (t=1 and t=7)
        assert table.sets[key([0], [3])] == [1]   # a _ d -> b (t=4)


class TestMergeOrders:
    def test_spec_row(self, abc_stream):
        tables = [
            collect_orders(abc_stream, ContextSchema(2, 0), 10),
            collect_orders(abc_stream, ContextSchema(1, 0), 10),
        ]
        ranks = merge_orders(abc_stream, tables, k_max=10)
        ids, groups, _ = ranks.row(2)
        assert ids.tolist() == [2, 3]
        assert groups.tolist() == [0, 1]

    def test_boundary_rows_are_gt_only(self, abc_stream):
        tables = [collect_orders(abc_stream, ContextSchema(2, 0), 10)]
        ranks = merge_orders(abc_stream, tables, k_max=10)
        ids, groups, _ = ranks.row(0)
        assert ids.tolist() == [0]
        assert ranks.lengths[1] == 1  # (2,0) window needs two past tokens

    def test_k_max_one_truncates_to_gt(self, abc_stream):
        tables = [
            collect_orders(abc_stream, ContextSchema(1, 0), 10),
        ]
        ranks = merge_orders(abc_stream, tables, k_max=1)
        assert (ranks.lengths == 1).all()
        assert (ranks.ranks[:, 0] == abc_stream.ids).all()

    def test_pad_value(self, abc_stream):
        ranks = merge_orders(abc_stream, [], k_max=3)
        assert (ranks.ranks[:, 1:] == PAD_ID).all()


def random_config(rng, max_past=3, max_future=2):
    p = int(rng.integers(1, max_past + 1))
    f = int(rng.integers(0, max_future + 1))
    return RankBuildConfig(
        schemas=tuple(enumerate_schemas(p, f)),
        cutoff_q=int(rng.choice([2, 5, 10])),
        k_max=int(rng.choice([1, 4, 10])),
        overflow_mode=str(rng.choice(["discard", "cap"])),
    )


class TestBuildRanks:
    def test_equals_phase_composition(self, abc_stream):
        config = RankBuildConfig(
            schemas=tuple(enumerate_schemas(2, 1)), cutoff_q=5, k_max=8
        )
        built = build_ranks(abc_stream, config)
        tables = [
            collect_orders(abc_stream, s, config.cutoff_q, config.overflow_mode)
            for s in config.schemas
        ]
        merged = merge_orders(abc_stream, tables, config.k_max)
        assert (built.ranks == merged.ranks).all()
        assert (built.groups == merged.groups).all()

    def test_matches_oracle_randomized(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            stream = random_stream(rng, int(rng.integers(10, 400)), int(rng.integers(2, 30)))
            config = random_config(rng)
            a = build_ranks(stream, config)
            b = brute_force_ranks(stream, config)
            assert (a.ranks == b.ranks).all()
            assert (a.lengths == b.lengths).all()
            assert (a.groups == b.groups).all()

    def test_workers_bit_identical(self):
        rng = np.random.default_rng(12)
        stream = random_stream(rng, 500, 12)
        config = RankBuildConfig(schemas=tuple(enumerate_schemas(3, 1)), cutoff_q=5, k_max=6)
        seq = build_ranks(stream, config, jobs=1)
        par = build_ranks(stream, config, jobs=4)
        assert seq.ranks.tobytes() == par.ranks.tobytes()
        assert seq.groups.tobytes() == par.groups.tobytes()
        assert seq.lengths.tobytes() == par.lengths.tobytes()

    def test_empty_schema_list_gt_only(self, abc_stream):
        cfg = RankBuildConfig(schemas=())
        for builder in (build_ranks, brute_force_ranks):
            r = builder(abc_stream, cfg)
            assert (r.lengths == 1).all()
            assert (r.ranks[:, 0] == abc_stream.ids).all()

    def test_oracle_size_bound(self):
        rng = np.random.default_rng(13)
        stream = random_stream(rng, 100_001, 5)
        with pytest.raises(RanklmError):
            brute_force_ranks(stream, RankBuildConfig(schemas=(ContextSchema(1, 0),)))


class TestRowInvariants:
    def test_gt_first_and_unique(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            stream = random_stream(rng, 300, 15)
            ranks = build_ranks(stream, random_config(rng))
            assert (ranks.ranks[:, 0] == stream.ids).all()
            for t in range(ranks.T):
                row, groups, _ = ranks.row(t)
                assert len(set(row.tolist())) == len(row)
                g = groups.astype(int)
                assert g[0] == 0
                assert (g[g] == g).all()
                assert (np.diff(g) >= 0).all()

    def test_schema_exclusion(self):
        # a word appended under schema s is absent from every earlier
        # schema's branching set for that position
        rng = np.random.default_rng(22)
        stream = random_stream(rng, 400, 8)
        config = RankBuildConfig(
            schemas=tuple(enumerate_schemas(2, 1)), cutoff_q=10, k_max=10
        )
        tables = [
            collect_orders(stream, s, config.cutoff_q, config.overflow_mode)
            for s in config.schemas
        ]
        ranks = merge_orders(stream, tables, config.k_max)
        from ranklm.rankgen import _context_key

        for t in range(ranks.T):
            row, groups, _ = ranks.row(t)
            for i in range(1, len(row)):
                start = int(groups[i])
                # find which earlier slots came from earlier schemas: every
                # member of an earlier schema's set must differ from row[i]
                for s_idx, table in enumerate(tables):
                    k = _context_key(stream.ids, t, table.schema)
                    if k is None:
                        continue
                    members = table.lookup(k) or []
                    if row[i] in members:
                        first_schema = s_idx
                        break
                else:
                    continue
                for earlier in tables[:first_schema]:
                    k = _context_key(stream.ids, t, earlier.schema)
                    members = earlier.lookup(k) if k is not None else None
                    assert not members or int(row[i]) not in members

    def test_adding_schema_preserves_prefix_order(self):
        # appending a schema to the list never reorders existing ranks
        rng = np.random.default_rng(23)
        stream = random_stream(rng, 300, 10)
        small = (ContextSchema(2, 0),)
        larger = (ContextSchema(2, 0), ContextSchema(1, 0))
        r_small = build_ranks(stream, RankBuildConfig(schemas=small, cutoff_q=10, k_max=10))
        r_large = build_ranks(stream, RankBuildConfig(schemas=larger, cutoff_q=10, k_max=10))
        for t in range(len(stream)):
            n = int(r_small.lengths[t])
            assert r_large.ranks[t, :n].tolist() == r_small.ranks[t, :n].tolist()


class TestRender:
    def test_toy_grid(self, abc_stream, abc_vocab):
        config = RankBuildConfig(
            schemas=(ContextSchema(2, 0), ContextSchema(1, 0)), cutoff_q=10, k_max=10
        )
        ranks = build_ranks(abc_stream, config)
        text = render_branching_set(ranks, abc_vocab, 2, 1)
        lines = text.splitlines()
        assert "c" in lines[1]          # GT row
        assert any("d" in l for l in lines[3:])  # group member below the rule
        assert "|" in text              # group-start marker

    def test_gt_only_row(self, abc_stream, abc_vocab):
        ranks = build_ranks(
            abc_stream,
            RankBuildConfig(schemas=(ContextSchema(2, 0),), cutoff_q=10, k_max=10),
        )
        text = render_branching_set(ranks, abc_vocab, 0, 1)
        assert "a" in text.splitlines()[1]

    def test_out_of_range(self, abc_stream, abc_vocab):
        ranks = build_ranks(
            abc_stream, RankBuildConfig(schemas=(ContextSchema(1, 0),))
        )
        with pytest.raises(RanklmError):
            render_branching_set(ranks, abc_vocab, 99, 1)


class TestSpecialTokensParticipate:
    def test_eos_and_unk_are_ordinary_rank_members(self, tmp_path):
        # open-question default: specials join branching sets like any word
        path = tmp_path / "s.txt"
        # context (y) continues with <eos> once and with k once
        path.write_text("x y\nx y k\n", encoding="utf-8")
        from ranklm import build_vocab, load_corpus

        vocab = build_vocab(path)
        stream = load_corpus(path, vocab)
        ranks = build_ranks(
            stream,
            RankBuildConfig(schemas=(ContextSchema(1, 0),), cutoff_q=10, k_max=5),
        )
        members = set()
        for t in range(ranks.T):
            row, _, _ = ranks.row(t)
            members.update(int(i) for i in row[1:])
        assert vocab.eos_id in members
