"""Accompaniment prompt adherence over context/stem audio pairs.

The score compares a candidate set of (context, stem) window pairs against
a matched reference set and a randomly re-paired copy of it, using the
Frechet distance between Gaussian fits of mixed-down window embeddings.
"""

from .audio import (
    AudioBuffer,
    CANONICAL_RATE,
    Window,
    WindowPair,
    extract_window,
    load_audio,
    resample,
    save_audio,
)
from .dynamics import (
    MIX_REGIMES,
    MixRegime,
    LoudnessReading,
    integrated_loudness,
    limit,
    loudness_normalize,
    mix,
    peak_normalize,
    peak_of,
)
from .embed import (
    BUILTIN_EMBEDDER,
    BridgeClient,
    BuiltinEmbedder,
    EmbedderSpec,
    EmbeddingSet,
    bridge_embed,
    builtin_logmel_embed,
    embed_window,
    read_cache,
    write_cache,
)
from .perturb import (
    Transform,
    add_noise,
    external_transform,
    pitch_shift,
    substitute_stems,
    time_pitch_shift,
    time_shift,
)
from .pipeline import (
    ApaReport,
    PairManifest,
    RunConfig,
    ValidationReport,
    compute_apa,
    load_manifest,
    run_validation,
    sample_window_pairs,
)
from .stats import (
    ApaResult,
    GaussianStats,
    PcaProjection,
    apa_score,
    cles,
    fit_gaussian,
    fit_pca,
    frechet_distance,
    mismatch_pairs,
    project,
)
from .synth import generate_corpus

__version__ = "0.1.0"
