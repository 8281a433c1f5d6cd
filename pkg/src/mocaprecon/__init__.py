"""Missing-marker reconstruction for optical motion capture with small numpy networks."""

from .baselines import fill_mean, interpolate_linear
from .bvh import (
    CMU_UNIT_SCALE_TO_CM,
    ChannelFrames,
    Joint,
    PoseSequence,
    Skeleton,
    forward_kinematics,
    parse_bvh,
    read_bvh,
    serialize_bvh,
    write_bvh,
)
from .corruption import GapSpec, MaskSequence, corrupt, long_gap_mask, sample_mask
from .errors import *  # noqa: F403
from .evaluation import (
    EvalReport,
    baseline_methods,
    per_frame_rmse,
    rmse_missing,
    run_gap_sweep,
    run_generalization,
    run_long_gap,
    run_rate_table,
    write_reports,
)
from .models import (
    LstmModel,
    LstmStreamer,
    ModelBundle,
    TrainConfig,
    TrainLog,
    WindowModel,
    load_model,
    reconstruct_sequence,
    reconstruct_stream,
    reconstruct_window,
    save_model,
    train,
)
from .pipeline import (
    Catalog,
    Normalizer,
    SplitSpec,
    denormalize,
    fit_normalizer,
    hip_center,
    load_catalog,
    make_splits,
    normalize,
    sliding_windows,
)

__version__ = "0.1.0"
