"""Zero-shot interaction-event classification workbench."""

__version__ = "0.1.0"

from .numerics import (  # noqa: F401
    GradCheckReport,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    grad_check,
)
from .dataio import (  # noqa: F401
    DataBundle,
    DdieSemanticsRecord,
    Instance,
    MolecularGraph,
    SplitSpec,
    SynthConfig,
    gzsl_holdout,
    load_dataset,
    make_splits,
    resample_imbalance,
    synth_generate,
)
from .pair_encoder import EncoderParams, PairEncoding, encode_pair  # noqa: F401
from .brl import BrlParams, attention_map, bilevel_tokens, encode_class_set, ssf_fuse  # noqa: F401
from .dua_loss import (  # noqa: F401
    BatchForward,
    LossConfig,
    align_loss,
    baseline_ce_loss,
    baseline_hinge_loss,
    class_uniformity_loss,
    instance_uniformity_loss,
    total_loss,
)
from .model import ModelParams, TrainSet, batch_forward, init_model  # noqa: F401
from .trainer import (  # noqa: F401
    CheckpointState,
    TrainConfig,
    fit,
    load_checkpoint,
    save_checkpoint,
)
from .evalkit import (  # noqa: F401
    EvalReport,
    Ranking,
    binary_metrics,
    harmonic_mean,
    macro_accuracy,
    predict,
    run_protocol,
    topk_accuracy,
)
