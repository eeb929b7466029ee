"""Binary archives, TSV manifests and model files.

All multi-byte fields are little-endian; floats are stored as float32 and
widened to float64 on load.

=========  ==========================================================
file       layout
=========  ==========================================================
SEMB       "SEMB", u8 version=1, u32 dim, u64 count, count*dim f32
OHC1       "OHC1", u32 dim, u32 K, K*dim f32   (repeated for a pool)
SVM1       "SVM1", u32 dim, u8 emotion, f32 bias, dim f32  (repeated)
IND1       "IND1", u32 dim, u32 hidden, u32 classes, W1, b1, W2, b2 (f32)
TRU1       "TRU1", u32 dim, u32 S, S*dim f32 centers, 4*dim f32 offsets
=========  ==========================================================
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .emotion import EmotionBoundary, EmotionIndicator
from .errors import DataError, NumericalError
from .labels import EMOTIONS, Emotion
from .linalg import OrthogonalChain
from .synth import WorldSpec, WorldTruth

SEMB_MAGIC = b"SEMB"
SEMB_VERSION = 1
_SEMB_HEADER = struct.Struct("<4sBIQ")
_F32 = np.dtype("<f4")

MANIFEST_COLUMNS = ("utt_id", "speaker_id", "emotion", "row_index")


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None


def _f32(a) -> bytes:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.size and np.max(np.abs(a)) > np.finfo(_F32).max:
        raise NumericalError("value exceeds the float32 range and cannot be stored")
    return a.astype(_F32).tobytes()


# --------------------------------------------------------------------------
# embedding archive


def encode_archive(X) -> bytes:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise DataError(f"archive needs a non-empty 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("archive values must be finite")
    count, dim = X.shape
    return _SEMB_HEADER.pack(SEMB_MAGIC, SEMB_VERSION, dim, count) + _f32(X)


def decode_archive(buf: bytes, source="<bytes>") -> np.ndarray:
    if len(buf) < _SEMB_HEADER.size:
        raise DataError(f"{source}: truncated header ({len(buf)} bytes)")
    magic, version, dim, count = _SEMB_HEADER.unpack_from(buf)
    if magic != SEMB_MAGIC:
        raise DataError(f"{source}: bad magic {magic!r}, expected {SEMB_MAGIC!r}")
    if version != SEMB_VERSION:
        raise DataError(f"{source}: unsupported archive version {version}")
    if dim == 0 or count == 0:
        raise DataError(f"{source}: dim and count must be positive (dim={dim}, count={count})")
    expected = 4 * dim * count
    payload = len(buf) - _SEMB_HEADER.size
    if payload != expected:
        raise DataError(f"{source}: payload is {payload} bytes, header implies {expected}")
    X = np.frombuffer(buf, dtype=_F32, offset=_SEMB_HEADER.size).reshape(count, dim).astype(np.float64)
    if not np.all(np.isfinite(X)):
        raise DataError(f"{source}: archive contains non-finite values")
    return X


def write_archive(path, X) -> None:
    atomic_write(path, encode_archive(X))


def read_archive(path) -> np.ndarray:
    return decode_archive(_read_bytes(path), str(path))


# --------------------------------------------------------------------------
# manifest


@dataclass
class Manifest:
    utt_ids: list[str]
    speakers: list[str]
    emotions: list[Emotion | None]
    rows: list[int]

    def __post_init__(self):
        n = len(self.utt_ids)
        if not (len(self.speakers) == len(self.emotions) == len(self.rows) == n):
            raise DataError("manifest columns have different lengths")
        if len(set(self.utt_ids)) != n:
            dup = next(u for u in self.utt_ids if self.utt_ids.count(u) > 1)
            raise DataError(f"manifest: duplicate utt_id {dup!r}")
        if len(set(self.rows)) != n:
            raise DataError("manifest: duplicate row_index")

    def __len__(self):
        return len(self.utt_ids)

    @classmethod
    def from_world(cls, world) -> "Manifest":
        return cls(list(world.utt_ids), list(world.speakers), [Emotion(int(e)) for e in world.emotions], list(range(len(world.utt_ids))))

    def labels(self, source="manifest") -> np.ndarray:
        """Integer emotion labels; every row must be labelled."""
        missing = [u for u, e in zip(self.utt_ids, self.emotions) if e is None]
        if missing:
            raise DataError(f"{source}: emotion label missing for utterance {missing[0]!r}")
        return np.array([int(e) for e in self.emotions], dtype=np.int64)

    def check_archive(self, X, source="manifest") -> None:
        count = len(X)
        bad = [r for r in self.rows if r >= count]
        if bad:
            raise DataError(f"{source}: row_index {bad[0]} out of range for archive of {count} rows")

    def take(self, X) -> np.ndarray:
        """Archive rows in manifest order."""
        self.check_archive(X)
        return np.asarray(X)[self.rows]

    def subset(self, idx) -> "Manifest":
        idx = list(idx)
        return Manifest(
            [self.utt_ids[i] for i in idx],
            [self.speakers[i] for i in idx],
            [self.emotions[i] for i in idx],
            list(range(len(idx))),
        )

    def to_tsv(self) -> str:
        out = io.StringIO()
        out.write("\t".join(MANIFEST_COLUMNS) + "\n")
        for u, s, e, r in zip(self.utt_ids, self.speakers, self.emotions, self.rows):
            out.write(f"{u}\t{s}\t{'-' if e is None else e.tag}\t{r}\n")
        return out.getvalue()


def parse_manifest(text: str, source="<manifest>") -> Manifest:
    utts, spks, emos, rows = [], [], [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        cols = line.rstrip("\r\n").split("\t")
        if lineno == 1 and tuple(cols) == MANIFEST_COLUMNS:
            continue
        if len(cols) != 4:
            raise DataError(f"{source}:{lineno}: expected 4 tab-separated columns, got {len(cols)}")
        utt, spk, emo, row = cols
        if not utt or not spk:
            raise DataError(f"{source}:{lineno}: empty utt_id or speaker_id")
        if emo == "-":
            emos.append(None)
        else:
            try:
                emos.append(Emotion.parse(emo))
            except ValueError:
                raise DataError(f"{source}:{lineno}: unknown emotion {emo!r}") from None
        try:
            r = int(row)
        except ValueError:
            raise DataError(f"{source}:{lineno}: row_index {row!r} is not an integer") from None
        if r < 0:
            raise DataError(f"{source}:{lineno}: negative row_index")
        utts.append(utt)
        spks.append(spk)
        rows.append(r)
    if not utts:
        raise DataError(f"{source}: manifest is empty")
    try:
        return Manifest(utts, spks, emos, rows)
    except DataError as exc:
        raise DataError(f"{source}: {exc}") from None


def read_manifest(path) -> Manifest:
    return parse_manifest(_read_bytes(path).decode("utf-8"), str(path))


def write_manifest(path, manifest: Manifest) -> None:
    atomic_write(path, manifest.to_tsv())


# --------------------------------------------------------------------------
# model files


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf, self.pos, self.source = buf, 0, source

    def done(self) -> bool:
        return self.pos >= len(self.buf)

    def unpack(self, fmt: str):
        s = struct.Struct("<" + fmt)
        if self.pos + s.size > len(self.buf):
            raise DataError(f"{self.source}: truncated at byte {self.pos}")
        out = s.unpack_from(self.buf, self.pos)
        self.pos += s.size
        return out

    def floats(self, *shape) -> np.ndarray:
        n = int(np.prod(shape))
        if self.pos + 4 * n > len(self.buf):
            raise DataError(f"{self.source}: truncated at byte {self.pos}")
        a = np.frombuffer(self.buf, dtype=_F32, count=n, offset=self.pos).astype(np.float64)
        self.pos += 4 * n
        return a.reshape(shape)

    def magic(self, expected: bytes):
        (m,) = self.unpack("4s")
        if m != expected:
            raise DataError(f"{self.source}: bad magic {m!r}, expected {expected!r}")


def encode_chains(chains: Sequence[OrthogonalChain]) -> bytes:
    parts = []
    for c in chains:
        parts.append(struct.pack("<4sII", b"OHC1", c.dim, c.K) + _f32(c.reflectors))
    return b"".join(parts)


def decode_chains(buf: bytes, source="<chains>") -> list[OrthogonalChain]:
    r = _Reader(buf, source)
    chains = []
    while not r.done():
        r.magic(b"OHC1")
        dim, K = r.unpack("II")
        chains.append(OrthogonalChain(r.floats(K, dim), dim=dim))
    if not chains:
        raise DataError(f"{source}: no chains found")
    return chains


def write_chains(path, chains) -> None:
    atomic_write(path, encode_chains(chains))


def read_chains(path) -> list[OrthogonalChain]:
    return decode_chains(_read_bytes(path), str(path))


def encode_boundaries(boundaries) -> bytes:
    parts = []
    for emo in EMOTIONS:
        if emo not in boundaries:
            continue
        b = boundaries[emo]
        parts.append(struct.pack("<4sIBf", b"SVM1", b.dim, int(emo), b.b) + _f32(b.w))
    return b"".join(parts)


def decode_boundaries(buf: bytes, source="<boundaries>") -> dict[Emotion, EmotionBoundary]:
    r = _Reader(buf, source)
    out = {}
    while not r.done():
        r.magic(b"SVM1")
        dim, emo, bias = r.unpack("IBf")
        if emo >= len(EMOTIONS):
            raise DataError(f"{source}: invalid emotion id {emo}")
        out[Emotion(emo)] = EmotionBoundary(Emotion(emo), r.floats(dim), bias)
    if not out:
        raise DataError(f"{source}: no boundaries found")
    return out


def write_boundaries(path, boundaries) -> None:
    atomic_write(path, encode_boundaries(boundaries))


def read_boundaries(path) -> dict[Emotion, EmotionBoundary]:
    return decode_boundaries(_read_bytes(path), str(path))


def encode_indicator(ind: EmotionIndicator) -> bytes:
    head = struct.pack("<4sIII", b"IND1", ind.dim, ind.hidden, ind.W2.shape[0])
    return head + b"".join(_f32(p) for p in (ind.W1, ind.b1, ind.W2, ind.b2))


def decode_indicator(buf: bytes, source="<indicator>") -> EmotionIndicator:
    r = _Reader(buf, source)
    r.magic(b"IND1")
    dim, hidden, classes = r.unpack("III")
    ind = EmotionIndicator(r.floats(hidden, dim), r.floats(hidden), r.floats(classes, hidden), r.floats(classes))
    if not r.done():
        raise DataError(f"{source}: trailing bytes after indicator weights")
    return ind


def write_indicator(path, ind) -> None:
    atomic_write(path, encode_indicator(ind))


def read_indicator(path) -> EmotionIndicator:
    return decode_indicator(_read_bytes(path), str(path))


def encode_truth(truth: WorldTruth) -> bytes:
    S, d = truth.speaker_centers.shape
    return struct.pack("<4sII", b"TRU1", d, S) + _f32(truth.speaker_centers) + _f32(truth.emotion_offsets)


def decode_truth(buf: bytes, source="<truth>") -> WorldTruth:
    r = _Reader(buf, source)
    r.magic(b"TRU1")
    d, S = r.unpack("II")
    centers = r.floats(S, d)
    offsets = r.floats(len(EMOTIONS), d)
    if not r.done():
        raise DataError(f"{source}: trailing bytes after truth payload")
    return WorldTruth(centers, offsets, WorldSpec(dim=d, n_speakers=S))


def write_truth(path, truth) -> None:
    atomic_write(path, encode_truth(truth))


def read_truth(path) -> WorldTruth:
    return decode_truth(_read_bytes(path), str(path))


# --------------------------------------------------------------------------
# reports


def _jsonable(obj):
    if isinstance(obj, dict):
        return {(k.tag if isinstance(k, Emotion) else str(k)): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, Emotion):
        return obj.tag
    return obj


def dump_json(obj) -> str:
    """UTF-8 JSON keeping insertion order; non-finite floats become null."""
    return json.dumps(_jsonable(obj), indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    atomic_write(path, dump_json(obj))


def write_scores_csv(path, scores, is_same) -> None:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["score", "label"])
    for s, g in zip(np.asarray(scores).tolist(), np.asarray(is_same).tolist()):
        w.writerow([repr(float(s)), "target" if g else "nontarget"])
    atomic_write(path, out.getvalue())
