"""extractor_bridge: real-data on-ramp for the decomposition toolkit.

Runs pretrained SSL models and speaker encoders over audio corpora and
emits corpora in the toolkit's on-disk formats (NPY arrays + JSONL
manifest). The two packages share no code, only the file contract.
"""

from .extract import AudioEntry, ExtractionFailed, ExtractionJob, extract

__version__ = "0.1.0"

__all__ = [
    "AudioEntry",
    "ExtractionFailed",
    "ExtractionJob",
    "extract",
    "__version__",
]
