"""Model registry: frame-level SSL extractors and speaker encoders.

Real checkpoints (WavLM, ECAPA-TDNN, WavLM-SV, Resemblyzer) are loaded
lazily so the package works in environments without torch or downloaded
weights. The ``dummy`` entries are deterministic signal-processing stand-ins
with the same interface and frame geometry (25 ms window, 20 ms hop at
16 kHz, matching the ~49 frames/second of the real frontend); they exist so
the extraction pipeline and its output contract are testable offline.
"""

from __future__ import annotations

import numpy as np

FRAME_WIN = 400  # 25 ms at 16 kHz
FRAME_HOP = 320  # 20 ms at 16 kHz
_N_FFT = 512

SSL_MODELS = ("wavlm-large", "dummy")
SPEAKER_ENCODERS = ("ecapa", "wavlm-sv", "resemblyzer", "dummy")


def _frame(wav: np.ndarray) -> np.ndarray:
    if wav.shape[0] < FRAME_WIN:
        raise ValueError(f"waveform too short ({wav.shape[0]} samples) to frame")
    n = 1 + (wav.shape[0] - FRAME_WIN) // FRAME_HOP
    idx = np.arange(FRAME_WIN)[None, :] + FRAME_HOP * np.arange(n)[:, None]
    return wav[idx] * np.hanning(FRAME_WIN)


def _log_spectrum(wav: np.ndarray) -> np.ndarray:
    mags = np.abs(np.fft.rfft(_frame(wav), n=_N_FFT, axis=1))
    return np.log1p(mags)


class DummySsl:
    """Deterministic stand-in: log-spectral frames through a fixed projection."""

    def __init__(self, layer: int = 15, q_dim: int = 1024):
        self.layer = layer
        self.q_dim = q_dim
        rng = np.random.default_rng(1000 + layer)
        self._proj = rng.normal(size=(_N_FFT // 2 + 1, q_dim)) / np.sqrt(q_dim)

    def extract(self, wav: np.ndarray) -> np.ndarray:
        feats = _log_spectrum(wav) @ self._proj
        return feats.astype(np.float32)


class DummySpeakerEncoder:
    """Deterministic stand-in: time-pooled spectral stats, projected and
    l2-normalized like a real speaker embedding."""

    def __init__(self, v_dim: int = 192):
        self.v_dim = v_dim
        rng = np.random.default_rng(2000)
        self._proj = rng.normal(size=(2 * (_N_FFT // 2 + 1), v_dim)) / np.sqrt(v_dim)

    def embed(self, wav: np.ndarray) -> np.ndarray:
        spec = _log_spectrum(wav)
        stats = np.concatenate([spec.mean(axis=0), spec.std(axis=0)])
        emb = stats @ self._proj
        norm = float(np.linalg.norm(emb))
        if norm > 1e-12:
            emb = emb / norm
        return emb.astype(np.float32)


class WavLMSsl:
    """Hidden states of a pretrained WavLM layer (Q = hidden size, 1024 for
    wavlm-large)."""

    def __init__(self, model_id: str = "microsoft/wavlm-large", layer: int = 15):
        try:
            import torch
            from transformers import WavLMModel
        except ImportError as exc:
            raise RuntimeError(
                "wavlm-large needs torch + transformers "
                "(pip install 'extractor-bridge[models]')"
            ) from exc
        self._torch = torch
        self.layer = layer
        self.model = WavLMModel.from_pretrained(model_id)
        self.model.eval()
        self.q_dim = int(self.model.config.hidden_size)

    def extract(self, wav: np.ndarray) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            x = torch.as_tensor(wav, dtype=torch.float32)[None, :]
            out = self.model(x, output_hidden_states=True)
        # hidden_states[0] is the conv frontend; [layer] is after that block
        h = out.hidden_states[self.layer][0]
        return h.cpu().numpy().astype(np.float32)


class EcapaEncoder:
    """ECAPA-TDNN speaker embeddings (V = 192)."""

    def __init__(self, source: str = "speechbrain/spkrec-ecapa-voxceleb"):
        try:
            import torch
            from speechbrain.inference import EncoderClassifier
        except ImportError as exc:
            raise RuntimeError(
                "ecapa needs torch + speechbrain (pip install speechbrain)"
            ) from exc
        self._torch = torch
        self.model = EncoderClassifier.from_hparams(source=source)
        self.v_dim = 192

    def embed(self, wav: np.ndarray) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            x = torch.as_tensor(wav, dtype=torch.float32)[None, :]
            emb = self.model.encode_batch(x)
        return emb.squeeze().cpu().numpy().astype(np.float32)


class WavLMSvEncoder:
    """WavLM fine-tuned for speaker verification (x-vector head, V = 512)."""

    def __init__(self, model_id: str = "microsoft/wavlm-base-plus-sv"):
        try:
            import torch
            from transformers import WavLMForXVector
        except ImportError as exc:
            raise RuntimeError(
                "wavlm-sv needs torch + transformers "
                "(pip install 'extractor-bridge[models]')"
            ) from exc
        self._torch = torch
        self.model = WavLMForXVector.from_pretrained(model_id)
        self.model.eval()
        self.v_dim = int(self.model.config.xvector_output_dim)

    def embed(self, wav: np.ndarray) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            x = torch.as_tensor(wav, dtype=torch.float32)[None, :]
            emb = self.model(x).embeddings[0]
        return emb.cpu().numpy().astype(np.float32)


class ResemblyzerEncoder:
    """Resemblyzer d-vector embeddings (V = 256)."""

    def __init__(self):
        try:
            from resemblyzer import VoiceEncoder
        except ImportError as exc:
            raise RuntimeError(
                "resemblyzer needs the resemblyzer package"
            ) from exc
        self.model = VoiceEncoder()
        self.v_dim = 256

    def embed(self, wav: np.ndarray) -> np.ndarray:
        return self.model.embed_utterance(
            wav.astype(np.float32)
        ).astype(np.float32)


def make_ssl(name: str, layer: int = 15, q_dim: int = 1024):
    if name == "wavlm-large":
        return WavLMSsl(layer=layer)
    if name == "dummy":
        return DummySsl(layer=layer, q_dim=q_dim)
    raise ValueError(f"unknown ssl model {name!r}, expected one of {SSL_MODELS}")


def make_speaker_encoder(name: str, v_dim: int = 192):
    if name == "ecapa":
        return EcapaEncoder()
    if name == "wavlm-sv":
        return WavLMSvEncoder()
    if name == "resemblyzer":
        return ResemblyzerEncoder()
    if name == "dummy":
        return DummySpeakerEncoder(v_dim=v_dim)
    raise ValueError(
        f"unknown speaker encoder {name!r}, expected one of {SPEAKER_ENCODERS}"
    )
