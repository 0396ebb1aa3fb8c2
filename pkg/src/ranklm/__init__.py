"""ranklm: word-level language modelling as learning to rank.

Builds top-k rank ground-truths from N-gram branching sets (a
non-probabilistic teacher), ingests externally produced teacher ranks, and
trains a small feedforward LM student with Plackett-Luce style list losses,
weak-order variants, top-k KL distillation, and a pairwise hinge loss.
"""

from .corpus import (
    BatchPlan,
    TokenStream,
    Vocabulary,
    batchify,
    build_vocab,
    detokenize,
    load_corpus,
)
from .errors import (
    AlignmentError,
    CorpusError,
    DivergenceError,
    RankFormatError,
    RanklmError,
)
from .losses import (
    LossConfig,
    RankTargets,
    ce_loss,
    combined_loss,
    cycle_alpha,
    pairwise_hinge_loss,
    pl_loss,
    pl_loss_batch,
    stepped_discounts,
    teacher_prob_discounts,
    topk_kl_loss,
)
from .metrics import perplexity, rank_frequency_stats, topk_accuracy
from .rankgen import (
    PAD_ID,
    ContextSchema,
    ContextTable,
    RankBuildConfig,
    RankGroundTruth,
    brute_force_ranks,
    build_ranks,
    collect_orders,
    enumerate_schemas,
    merge_orders,
    render_branching_set,
)
from .student import (
    StudentConfig,
    StudentParams,
    backward,
    forward,
    init_optimizer,
    init_params,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
)
from .teacherio import (
    float_gt_to_top,
    random_teacher,
    read_ranks,
    read_ranks_jsonl,
    write_ranks,
    write_ranks_jsonl,
)
from .trainer import TrainConfig, grad_check, train

__version__ = "0.1.0"
FORMAT_VERSIONS = {"rkgt": 1, "rkgt-jsonl": 1, "checkpoint": 1}

__all__ = [name for name in dir() if not name.startswith("_")]
