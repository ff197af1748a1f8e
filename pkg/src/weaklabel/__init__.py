"""Weak-supervision labeling pipeline for speech corpora.

Turns unlabeled audio plus VAD/diarization event streams into weakly
labeled training chunks: several ASR backends propose transcripts per
segment, segments survive only when the hypotheses agree and the chosen
transcript is fluent under a language model, and surviving segments are
packed into bounded chunks. Includes a hyperparameter calibration search
and a WER/CER evaluation harness.
"""

from .calibration import (
    CalibrationSample,
    SearchSpace,
    calibrate,
    efficiency,
    objective_score,
    pipeline_error,
)
from .datamodel import (
    AudioAsset,
    Chunk,
    Decision,
    Hypothesis,
    PipelineConfig,
    QualityFlag,
    Segment,
    SelectionResult,
    read_manifest,
    validate_config,
    write_manifest,
)
from .evaluation import EvalPair, ModelReport, evaluate_pairs, reduction_table
from .generators import (
    CorruptionModel,
    GeneratorSpec,
    HttpGenerator,
    MockNoisyGenerator,
    ReplayGenerator,
    corrupt,
)
from .merging import merge_segments
from .orchestrator import (
    CorpusEntry,
    RunSummary,
    SimulationSpec,
    run_iteration,
    run_pipeline,
    simulate,
)
from .segmentation import SpeakerInterval, VadEvent, VadKind, flag_overlap, split_by_vad
from .selection import (
    CharNgramLM,
    admit_by_agreement,
    admit_by_perplexity,
    perplexity,
    select_hypothesis,
    train_char_lm,
)
from .textmetrics import (
    AgreementStats,
    NormalizationPolicy,
    TokenSequence,
    UnitKind,
    avg_pairwise_error,
    error_rate,
    levenshtein,
    normalize,
    rate_reduction,
)

__version__ = "0.1.0"
