import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from voxprofile.audio_io import AudioClip
from voxprofile.dataset import Manifest, scan_timit_layout
from voxprofile.synth import generate_corpus

SR = 16000


@dataclass(frozen=True)
class Corpus:
    root: Path
    meta: Path
    manifest: Manifest


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory) -> Corpus:
    """20-speaker synthetic corpus with TIMIT-style TRAIN/TEST layout."""
    root = tmp_path_factory.mktemp("corpus") / "timitish"
    meta = generate_corpus(root, n_speakers=20, seed=7, duration=1.0)
    return Corpus(root, meta, scan_timit_layout(root, meta).manifest)


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory) -> Corpus:
    """Small, fast corpus for plumbing tests."""
    root = tmp_path_factory.mktemp("mini") / "timitish"
    meta = generate_corpus(root, n_speakers=8, seed=3, duration=0.5)
    return Corpus(root, meta, scan_timit_layout(root, meta).manifest)


def tone(freq: float, duration: float = 1.0, sr: int = SR,
         amplitude: float = 0.5) -> AudioClip:
    t = np.arange(int(duration * sr)) / sr
    return AudioClip(amplitude * np.sin(2 * np.pi * freq * t), sr)


@pytest.fixture
def tone_clip():
    return tone
