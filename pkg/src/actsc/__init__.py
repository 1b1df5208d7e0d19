"""Difficulty-aware self-consistency toolkit.

Identifies difficulty-sensitive neurons in activation dumps, trains a
linear difficulty probe, calibrates a routing threshold, and runs
sampling-budget controllers against simulated, replayed, or live answer
sources, reporting sample counts, token costs, and accuracy.
"""

__version__ = "0.1.0"

from .activation_store import (
    ActivationRecord,
    DatasetManifest,
    SamplePool,
    load_dataset,
    load_sample_pool,
    save_dataset,
    save_sample_pool,
)
from .calibration import TauCalibration, calibrate_tau
from .controllers import (
    ConfScope,
    Policy,
    PolicyConfig,
    Route,
    RoutingDecision,
    SamplingTrace,
    StopReason,
    decide_route,
    majority_vote,
    run_policy,
)
from .dsn import Boundary, DsnSelection, GapConfig, SelectionMode, gap, identify_dsn
from .errors import ActscError
from .harness import RunReport, aggregate_metrics, render_report, run_benchmark
from .probe import (
    Normalizer,
    ProbeModel,
    TrainConfig,
    evaluate_probe,
    make_labels,
    predict_p_hard,
    train_probe,
)
from .samplers import (
    NO_ANSWER,
    AnswerSample,
    LiveSampler,
    LiveSamplerConfig,
    ReplaySampler,
    SimProblemSpec,
    SimSampler,
    extract_final_answer,
)
