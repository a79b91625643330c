"""Binary feature cache: one record per utterance.

Layout (all integers little-endian):

======  =====================================================
bytes   content
======  =====================================================
6       magic ``VPFC1\\n``
4       u32 header length
var     UTF-8 JSON header, sorted keys:
        ``{"averaged": bool, "config": {...}, "kinds": [[kind, count|null], ...], "version": 1}``
4       u32 record count
------  per record ------------------------------------------
4       u32 key length, then the key (utterance path, UTF-8)
1       u8 ndim, then ndim u32 dimensions
var     float32 values, row-major
======  =====================================================

Vectors are stored 1-D, sequential matrices 2-D (coeffs x frames).
Re-extracting with identical kinds/config/averaged flags is a cache
hit; anything else is a miss and the file is rebuilt.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .audio_io import read_audio
from .dsp import FeatureConfig, extract_set, parse_feature_kinds
from .errors import DecodeError

MAGIC = b"VPFC1\n"


def cache_header(kinds, cfg: FeatureConfig, averaged: bool) -> dict:
    return {
        "averaged": bool(averaged),
        "config": cfg.to_dict(),
        "kinds": [[k, p] for k, p in parse_feature_kinds(kinds)],
        "version": 1,
    }


@dataclass
class FeatureCache:
    header: dict
    features: dict

    @property
    def averaged(self) -> bool:
        return self.header["averaged"]

    def matrix_for(self, paths) -> np.ndarray:
        """Stack averaged vectors for the given paths into [N, D]."""
        return np.stack([self.features[p] for p in paths]).astype(np.float32)

    def sequences_for(self, paths):
        return [self.features[p] for p in paths]


def write_cache(path, kinds, cfg: FeatureConfig, averaged: bool, records) -> None:
    header = json.dumps(cache_header(kinds, cfg, averaged),
                        sort_keys=True).encode("utf-8")
    records = list(records)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(records)))
        for key, values in records:
            values = np.ascontiguousarray(values, dtype="<f4")
            key_bytes = key.encode("utf-8")
            fh.write(struct.pack("<I", len(key_bytes)))
            fh.write(key_bytes)
            fh.write(struct.pack("<B", values.ndim))
            for dim in values.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(values.tobytes())


def read_cache(path) -> FeatureCache:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise DecodeError(f"{path}: not a feature cache file")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        features = {}
        for _ in range(count):
            (key_len,) = struct.unpack("<I", fh.read(4))
            key = fh.read(key_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n_values = int(np.prod(shape)) if ndim else 1
            payload = fh.read(4 * n_values)
            if len(payload) < 4 * n_values:
                raise OSError(f"{path}: truncated cache record for {key}")
            features[key] = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return FeatureCache(header, features)


def cache_matches(path, kinds, cfg: FeatureConfig, averaged: bool) -> bool:
    try:
        cached = read_cache(path)
    except (OSError, DecodeError, ValueError):
        return False
    return cached.header == cache_header(kinds, cfg, averaged)


def _extract_one(args):
    path, kinds, cfg, averaged = args
    clip = read_audio(path)
    return extract_set(clip, kinds, cfg, averaged=averaged).values.astype(np.float32)


def extract_features(paths, kinds, cfg: FeatureConfig, averaged: bool = True,
                     jobs: int = 1):
    """Extract features for many files; a pure, order-preserving map."""
    paths = list(paths)
    kinds = parse_feature_kinds(kinds)
    work = [(path, kinds, cfg, averaged) for path in paths]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(_extract_one, work, chunksize=8))
    else:
        values = [_extract_one(item) for item in work]
    return list(zip(paths, values))


def build_cache(path, manifest_paths, kinds, cfg: FeatureConfig,
                averaged: bool = True, jobs: int = 1,
                reuse: bool = True) -> bool:
    """Write (or reuse) a cache for the given paths; True means cache hit."""
    if reuse and cache_matches(path, kinds, cfg, averaged):
        cached = read_cache(path)
        if all(p in cached.features for p in manifest_paths):
            return True
    records = extract_features(manifest_paths, kinds, cfg, averaged, jobs=jobs)
    write_cache(path, kinds, cfg, averaged, records)
    return False
