"""Property tests over the core invariants."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from voxprofile.audio_io import AudioClip
from voxprofile.dataset import ACCENTS, SpeakerRecord, combo_counts, oversample_balanced
from voxprofile.dsp import FeatureConfig, stft_power
from voxprofile.training import regression_metrics


@given(
    n_samples=st.integers(400, 4000),
    hop=st.integers(1, 400),
    win=st.integers(1, 400),
)
@settings(max_examples=60, deadline=None)
def test_frame_count_formula(n_samples, hop, win):
    hop = min(hop, win)
    cfg = FeatureConfig(hop_length=hop, win_length=win, n_fft=512)
    clip = AudioClip(np.zeros(n_samples), 16000)
    out = stft_power(clip, cfg)
    assert out.shape == (257, 1 + (n_samples - win) // hop)


@given(
    counts=st.lists(st.integers(1, 25), min_size=1, max_size=16),
    seed=st.integers(0, 2 ** 31 - 1),
)
@settings(max_examples=60, deadline=None)
def test_oversample_equalizes_any_distribution(counts, seed):
    records = []
    for combo, count in enumerate(counts):
        accent = ACCENTS[combo % 8]
        gender = "MF"[combo // 8 % 2]
        records.extend(
            SpeakerRecord(f"{combo}/{i}.wav", f"{gender}AAA0", gender, 30.0, accent)
            for i in range(count)
        )
    out = oversample_balanced(records, seed)
    by_combo = combo_counts(out)
    n_combos = len(combo_counts(records))
    assert set(by_combo.values()) == {max(counts)}
    assert len(out) == max(counts) * n_combos
    assert out[: len(records)] == records


@given(
    errors=st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=64),
)
@settings(max_examples=100, deadline=None)
def test_mae_bounded_by_rmse(errors):
    m = regression_metrics(np.zeros(len(errors)), np.array(errors))
    assert m.mae <= m.rmse + 1e-9 * max(1.0, m.rmse)
