"""etakit: linear decomposition of frame-level speech representations into a
speaker-predictable component and a speaker-independent residual (eta), plus
the evaluation harness used to verify the disentanglement.
"""

from .core import (
    FitMeta,
    FrameMatrix,
    GramAccumulator,
    LatentModel,
    PcaModel,
    ReducedEmbedding,
    SpeakerEmbedding,
    accumulate,
    eta_transform,
    fit_pca,
    fit_pca_streaming,
    merge,
    project,
    solve,
    speaker_component,
    subsample_frames,
)
from .errors import EtaKitError

__version__ = "0.1.0"

__all__ = [
    "EtaKitError",
    "FitMeta",
    "FrameMatrix",
    "GramAccumulator",
    "LatentModel",
    "PcaModel",
    "ReducedEmbedding",
    "SpeakerEmbedding",
    "accumulate",
    "eta_transform",
    "fit_pca",
    "fit_pca_streaming",
    "merge",
    "project",
    "solve",
    "speaker_component",
    "subsample_frames",
    "__version__",
]
