"""Acoustic feature extraction: MFCC, log-mel, chroma, tonnetz and
spectral contrast, each in sequential (coeffs x frames) and
frame-averaged form.

Conventions fixed once here so results are exactly reproducible:

* framing: no centering or padding; frame t covers samples
  ``[t*hop, t*hop + win)``, so frames = 1 + floor((len - win) / hop);
* window: symmetric Hann of length ``win_length``, frames zero-padded
  to ``n_fft`` for the transform;
* mel scale: mel(f) = 2595 * log10(1 + f/700);
* log floor: ``EPS = 1e-10`` wherever a log is taken;
* all extractors are pure functions of (clip, config).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.fftpack import dct

from .audio_io import AudioClip
from .errors import ConfigError, DataError

EPS = 1e-10
C1_HZ = 32.7032  # pitch class C, octave 1; reference for chroma folding
CONTRAST_BASE_HZ = 200.0

FEATURE_KINDS = ("mfcc", "mel", "chroma", "tonnetz", "contrast")

PITCH_CLASSES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")

FIVE_TYPES = (("mfcc", 40), ("mel", 64), ("chroma", None),
              ("tonnetz", None), ("contrast", None))


@dataclass(frozen=True)
class FeatureConfig:
    """Shared analysis parameters for every extractor."""

    sample_rate: int = 16000
    n_fft: int = 512
    hop_length: int = 160
    win_length: int = 400
    window: str = "hann"
    n_mels: int = 64
    n_mfcc: int = 40
    fmin: float = 0.0
    fmax: float | None = None
    n_chroma: int = 12
    n_contrast_bands: int = 6

    def __post_init__(self):
        if self.n_fft < 1 or self.n_fft & (self.n_fft - 1):
            raise ConfigError(f"n_fft must be a power of two, got {self.n_fft}")
        if not (1 <= self.hop_length <= self.win_length <= self.n_fft):
            raise ConfigError(
                "need hop_length <= win_length <= n_fft, got "
                f"{self.hop_length}/{self.win_length}/{self.n_fft}"
            )
        if self.window != "hann":
            raise ConfigError(f"unsupported window {self.window!r}")
        if self.n_mfcc > self.n_mels:
            raise ConfigError(
                f"n_mfcc ({self.n_mfcc}) cannot exceed n_mels ({self.n_mels})"
            )
        if self.n_chroma != 12:
            raise ConfigError("chroma folding is defined for 12 pitch classes")
        if not (0 <= self.fmin < self.resolved_fmax <= self.sample_rate / 2):
            raise ConfigError(
                f"need 0 <= fmin < fmax <= sample_rate/2, got "
                f"fmin={self.fmin}, fmax={self.resolved_fmax}, sr={self.sample_rate}"
            )

    @property
    def resolved_fmax(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else self.fmax

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.sample_rate / self.n_fft

    def frame_count(self, n_samples: int) -> int:
        if n_samples < self.win_length:
            raise DataError(
                f"clip of {n_samples} samples is shorter than one window "
                f"({self.win_length}); zero-pad at ingestion"
            )
        return 1 + (n_samples - self.win_length) // self.hop_length

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "n_fft": self.n_fft,
            "hop_length": self.hop_length,
            "win_length": self.win_length,
            "window": self.window,
            "n_mels": self.n_mels,
            "n_mfcc": self.n_mfcc,
            "fmin": self.fmin,
            "fmax": self.resolved_fmax,
            "n_chroma": self.n_chroma,
            "n_contrast_bands": self.n_contrast_bands,
        }


@dataclass(frozen=True)
class FeatureMatrix:
    """Sequential features: one column per analysis frame."""

    values: np.ndarray
    kind: str
    config: FeatureConfig

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"feature matrix must be 2-D, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def n_coeffs(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FeatureVector:
    """Frame-averaged features: one value per coefficient."""

    values: np.ndarray
    kind: str
    config: FeatureConfig

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise DataError(f"feature vector must be 1-D, got shape {values.shape}")
        object.__setattr__(self, "values", values)


def hz_to_mel(freq) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + np.asarray(freq, dtype=np.float64) / 700.0)


def mel_to_hz(mel) -> np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def _frames(samples: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    n_frames = cfg.frame_count(len(samples))
    window = np.hanning(cfg.win_length)
    idx = (np.arange(cfg.win_length)[None, :]
           + cfg.hop_length * np.arange(n_frames)[:, None])
    return samples[idx] * window


def stft_power(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    """Power spectrogram, shape (n_fft/2 + 1, frames).

    Each column is |DFT(hann * frame, n_fft)|^2 over the non-negative
    frequency bins.
    """
    if clip.sample_rate != cfg.sample_rate:
        raise DataError(
            f"clip sample rate {clip.sample_rate} differs from configured "
            f"{cfg.sample_rate}; resampling is unsupported"
        )
    frames = _frames(np.asarray(clip.samples, dtype=np.float64), cfg)
    spectrum = np.fft.rfft(frames, n=cfg.n_fft, axis=1)
    return (spectrum.real ** 2 + spectrum.imag ** 2).T


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_fft/2 + 1).

    Filter centers are equally spaced on the mel scale between fmin and
    fmax; every row is non-negative with at least one positive entry.
    """
    mel_points = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.resolved_fmax),
                             cfg.n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    freqs = cfg.bin_frequencies()

    bank = np.zeros((cfg.n_mels, cfg.n_bins))
    for m in range(cfg.n_mels):
        lower, center, upper = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        rising = (freqs - lower) / (center - lower)
        falling = (upper - freqs) / (upper - center)
        bank[m] = np.maximum(0.0, np.minimum(rising, falling))
        if not bank[m].any():
            raise ConfigError(
                f"mel filter {m} is empty: n_mels={cfg.n_mels} exceeds the "
                f"frequency resolution of n_fft={cfg.n_fft} at "
                f"{cfg.sample_rate} Hz"
            )
    return bank


def mel_features(clip: AudioClip, cfg: FeatureConfig) -> FeatureMatrix:
    """Log mel-filterbank power, n_mels rows."""
    power = stft_power(clip, cfg)
    bank = mel_filterbank(cfg)
    return FeatureMatrix(np.log(bank @ power + EPS), "mel", cfg)


def mfcc(clip: AudioClip, cfg: FeatureConfig) -> FeatureMatrix:
    """Mel-frequency cepstral coefficients, n_mfcc rows.

    Orthonormal DCT-II of the log mel powers per frame, truncated to the
    first n_mfcc coefficients; the first k rows therefore agree exactly
    across runs with different n_mfcc >= k.
    """
    log_mel = mel_features(clip, cfg).values
    cepstrum = dct(log_mel, type=2, axis=0, norm="ortho")
    return FeatureMatrix(cepstrum[: cfg.n_mfcc], "mfcc", cfg)


def _pitch_classes(cfg: FeatureConfig) -> np.ndarray:
    freqs = cfg.bin_frequencies()
    classes = np.full(cfg.n_bins, -1)
    positive = freqs > 0
    classes[positive] = np.round(
        12.0 * np.log2(freqs[positive] / C1_HZ)
    ).astype(int) % 12
    return classes


def chroma(clip: AudioClip, cfg: FeatureConfig) -> FeatureMatrix:
    """Fold spectrogram energy onto 12 pitch classes (bin 0 excluded).

    Columns are scaled to peak 1; all-zero columns are left untouched.
    """
    power = stft_power(clip, cfg)
    classes = _pitch_classes(cfg)
    folded = np.zeros((12, power.shape[1]))
    for pc in range(12):
        members = classes == pc
        if members.any():
            folded[pc] = power[members].sum(axis=0)
    peaks = folded.max(axis=0)
    nonzero = peaks > 0
    folded[:, nonzero] /= peaks[nonzero]
    return FeatureMatrix(folded, "chroma", cfg)


def tonnetz_basis() -> np.ndarray:
    """6x12 harmonic-network projection.

    Row pairs are (sin, cos) of theta = 2*pi*p*r/12 for intervals
    r = 7 (fifths), 3 (minor thirds), 4 (major thirds), with radii
    1, 1 and 0.5.
    """
    p = np.arange(12)
    basis = np.empty((6, 12))
    for row, (interval, radius) in enumerate(((7, 1.0), (3, 1.0), (4, 0.5))):
        theta = 2.0 * np.pi * p * interval / 12.0
        basis[2 * row] = radius * np.sin(theta)
        basis[2 * row + 1] = radius * np.cos(theta)
    return basis


def tonnetz(clip: AudioClip, cfg: FeatureConfig) -> FeatureMatrix:
    """Project L1-normalized chroma onto the 6 tonnetz coordinates."""
    chromagram = chroma(clip, cfg).values
    totals = chromagram.sum(axis=0)
    normalized = np.where(totals > 0, chromagram / np.where(totals > 0, totals, 1.0), 0.0)
    return FeatureMatrix(tonnetz_basis() @ normalized, "tonnetz", cfg)


def contrast_bands(cfg: FeatureConfig):
    """Octave band edges: one sub-200 Hz band plus n_contrast_bands
    octaves from 200 Hz, the last capped at fmax."""
    edges = [0.0, CONTRAST_BASE_HZ]
    for k in range(1, cfg.n_contrast_bands):
        edges.append(CONTRAST_BASE_HZ * 2.0 ** k)
    edges.append(min(CONTRAST_BASE_HZ * 2.0 ** cfg.n_contrast_bands,
                     cfg.resolved_fmax))
    return list(zip(edges[:-1], edges[1:]))


def spectral_contrast(clip: AudioClip, cfg: FeatureConfig) -> FeatureMatrix:
    """Per-band log peak-to-valley spread, n_contrast_bands + 1 rows.

    Peak and valley are the means of the top and bottom 2% of sorted
    band energies (at least one bin each).
    """
    power = stft_power(clip, cfg)
    freqs = cfg.bin_frequencies()
    bands = contrast_bands(cfg)

    rows = np.empty((len(bands), power.shape[1]))
    for b, (lo, hi) in enumerate(bands):
        if b == len(bands) - 1:
            members = (freqs >= lo) & (freqs <= hi)
        else:
            members = (freqs >= lo) & (freqs < hi)
        if not members.any():
            raise ConfigError(
                f"contrast band [{lo:g}, {hi:g}) Hz holds no bins at "
                f"n_fft={cfg.n_fft}, sample_rate={cfg.sample_rate}"
            )
        band = np.sort(power[members], axis=0)
        k = max(1, int(0.02 * band.shape[0]))
        valley = band[:k].mean(axis=0)
        peak = band[-k:].mean(axis=0)
        rows[b] = np.log(peak + EPS) - np.log(valley + EPS)
    return FeatureMatrix(rows, "contrast", cfg)


def time_average(matrix: FeatureMatrix) -> FeatureVector:
    """Arithmetic mean over frames, row-wise."""
    if matrix.n_frames < 1:
        raise DataError("cannot average a matrix with no frames")
    return FeatureVector(matrix.values.mean(axis=1), matrix.kind, matrix.config)


_EXTRACTORS = {
    "mfcc": mfcc,
    "mel": mel_features,
    "chroma": chroma,
    "tonnetz": tonnetz,
    "contrast": spectral_contrast,
}


def kind_rows(kind: str, cfg: FeatureConfig) -> int:
    return {
        "mfcc": cfg.n_mfcc,
        "mel": cfg.n_mels,
        "chroma": 12,
        "tonnetz": 6,
        "contrast": cfg.n_contrast_bands + 1,
    }[kind]


def parse_feature_kinds(spec) -> tuple:
    """Normalize a feature-set spec into ((kind, param), ...).

    Accepts the CLI string form "mfcc:40,mel:64,chroma" or an iterable
    of (kind, param) pairs. Only mfcc and mel take a parameter (their
    coefficient count).
    """
    if isinstance(spec, str):
        pairs = []
        for token in spec.split(","):
            token = token.strip()
            if not token:
                continue
            if ":" in token:
                kind, _, param = token.partition(":")
                try:
                    pairs.append((kind.strip(), int(param)))
                except ValueError:
                    raise ConfigError(f"bad feature count in {token!r}") from None
            else:
                pairs.append((token, None))
    else:
        pairs = [(kind, param) for kind, param in spec]

    seen = set()
    for kind, param in pairs:
        if kind not in FEATURE_KINDS:
            raise ConfigError(
                f"unknown feature kind {kind!r}; choose from {FEATURE_KINDS}"
            )
        if kind in seen:
            raise ConfigError(f"duplicate feature kind {kind!r}")
        seen.add(kind)
        if param is not None and kind not in ("mfcc", "mel"):
            raise ConfigError(f"feature kind {kind!r} takes no count parameter")
    if not pairs:
        raise ConfigError("feature spec is empty")
    return tuple(pairs)


def kinds_to_string(kinds) -> str:
    return ",".join(k if p is None else f"{k}:{p}" for k, p in kinds)


def _kind_config(kind: str, param, cfg: FeatureConfig) -> FeatureConfig:
    if param is None:
        return cfg
    if kind == "mfcc":
        return replace(cfg, n_mfcc=param)
    return replace(cfg, n_mels=param, n_mfcc=min(cfg.n_mfcc, param))


def extract_set(clip: AudioClip, kinds, cfg: FeatureConfig | None = None,
                averaged: bool = True):
    """Extract and concatenate a set of feature kinds in listed order.

    Returns a :class:`FeatureVector` when ``averaged`` (concatenated
    per-kind time averages), else a row-concatenated
    :class:`FeatureMatrix`; all kinds share the same framing so the
    sequential form lines up column-wise.
    """
    kinds = parse_feature_kinds(kinds)
    cfg = cfg or FeatureConfig()
    matrices = [
        _EXTRACTORS[kind](clip, _kind_config(kind, param, cfg))
        for kind, param in kinds
    ]
    label = kinds[0][0] if len(kinds) == 1 else "concat"
    if averaged:
        values = np.concatenate([m.values.mean(axis=1) for m in matrices])
        return FeatureVector(values, label, cfg)
    values = np.concatenate([m.values for m in matrices], axis=0)
    return FeatureMatrix(values, label, cfg)


def feature_dim(kinds, cfg: FeatureConfig | None = None) -> int:
    """Total coefficient count for a feature-set spec."""
    kinds = parse_feature_kinds(kinds)
    cfg = cfg or FeatureConfig()
    return sum(kind_rows(kind, _kind_config(kind, param, cfg)) for kind, param in kinds)
