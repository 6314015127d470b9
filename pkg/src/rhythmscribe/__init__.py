"""Rhythm transcription with Markov score models and a Gaussian timing model.

The package infers quantized note values from noisy performed onset times.
A score model (note-value, metrical, or pattern Markov chain, optionally
augmented with onset-shift and note-division states) supplies the prior over
rhythms; the timing model ties performed durations to score durations;
Viterbi or beam decoding recovers the score, and Gibbs sampling fits
piece-specific model parameters under Dirichlet priors.

Typical use::

    corpus = Corpus.load("corpus.json")
    config = ModelConfig.from_name("metmm1b")
    params = estimate_params(corpus, config)
    hp = assemble_hyperparams(params, config)
    tp = TimingParams.from_bpm(144.0, sigma_t=0.04)
    result = transcribe(config, hp, performance, tp)
"""

from .core import (
    DEFAULT_BAR_LENGTH,
    Corpus,
    NormalizationReport,
    NotePattern,
    RhythmScore,
    interval,
    normalize_corpus,
    score_from_metrical,
    segment_patterns,
    to_metrical,
    to_note_values,
)
from .evaluation import (
    EvalReport,
    EvaluationError,
    SparsenessStudy,
    benchmark,
    cross_entropy,
    distribution_entropy,
    entropy_rate,
    error_rate,
    sparseness_study,
    stationary_distribution,
)
from .inference import (
    GibbsConfig,
    Hyperparams,
    InferenceError,
    TranscriptionResult,
    beam_viterbi,
    default_beam_width,
    ffbs_sample,
    ffbs_sample_many,
    forward_loglik,
    gibbs_fit,
    sample_dirichlet,
    transcribe,
    viterbi,
)
from .models import (
    DivisionCatalog,
    LatentStateSpace,
    ModelConfig,
    ModelParams,
    build_basic_model,
    build_division_catalog,
    build_modified_model,
    build_state_space,
    load_params,
    params_from_dict,
    params_to_dict,
    pattern_index,
    pattern_vocabulary,
    sample_corpus,
    sample_score,
    save_params,
    sequence_log_prob,
)
from .timing import (
    Performance,
    PerformedCorpus,
    TimingParams,
    TranscriptionHmm,
    build_transcription_hmm,
    duration_log_density,
    synthesize,
)
from .training import (
    SmoothingConfig,
    assemble_hyperparams,
    attach_modification_presets,
    build_modification_base,
    estimate_params,
    hyperparams_from_dict,
    hyperparams_to_dict,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_BAR_LENGTH",
    "Corpus",
    "DivisionCatalog",
    "EvalReport",
    "EvaluationError",
    "GibbsConfig",
    "Hyperparams",
    "InferenceError",
    "LatentStateSpace",
    "ModelConfig",
    "ModelParams",
    "NormalizationReport",
    "NotePattern",
    "Performance",
    "PerformedCorpus",
    "RhythmScore",
    "SmoothingConfig",
    "SparsenessStudy",
    "TimingParams",
    "TranscriptionHmm",
    "TranscriptionResult",
    "assemble_hyperparams",
    "attach_modification_presets",
    "beam_viterbi",
    "benchmark",
    "build_basic_model",
    "build_division_catalog",
    "build_modification_base",
    "build_modified_model",
    "build_state_space",
    "build_transcription_hmm",
    "cross_entropy",
    "default_beam_width",
    "distribution_entropy",
    "duration_log_density",
    "entropy_rate",
    "error_rate",
    "estimate_params",
    "ffbs_sample",
    "ffbs_sample_many",
    "forward_loglik",
    "gibbs_fit",
    "hyperparams_from_dict",
    "hyperparams_to_dict",
    "interval",
    "load_params",
    "normalize_corpus",
    "params_from_dict",
    "params_to_dict",
    "pattern_index",
    "pattern_vocabulary",
    "sample_corpus",
    "sample_dirichlet",
    "sample_score",
    "save_params",
    "score_from_metrical",
    "segment_patterns",
    "sequence_log_prob",
    "sparseness_study",
    "stationary_distribution",
    "synthesize",
    "to_metrical",
    "to_note_values",
    "transcribe",
    "viterbi",
]
