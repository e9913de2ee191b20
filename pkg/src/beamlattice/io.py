"""Binary grid containers and JSON-lines manifests.

Both grid containers share one layout (little-endian)::

    magic[4] | u32 version=1 | u32 T | u32 width | u32 frame_shift_ms | T*width f32, row-major

``CTCG`` holds CTC log-posteriors, ``VADG`` holds raw VAD model outputs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .core import DecodeResult, PosteriorGrid, Utterance

CTC_MAGIC = b"CTCG"
VAD_MAGIC = b"VADG"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class GridFormatError(ValueError):
    pass


def dump_matrix(values: np.ndarray, frame_shift_ms: int, magic: bytes) -> bytes:
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {values.shape}")
    t, width = values.shape
    return _HEADER.pack(magic, VERSION, t, width, int(frame_shift_ms)) + values.tobytes()


def load_matrix(data: bytes, magic: bytes) -> tuple:
    if len(data) < _HEADER.size:
        raise GridFormatError(f"truncated header ({len(data)} bytes)")
    got, version, t, width, shift = _HEADER.unpack_from(data)
    if got != magic:
        raise GridFormatError(f"bad magic {got!r}, expected {magic!r}")
    if version != VERSION:
        raise GridFormatError(f"unsupported version {version}")
    expected = _HEADER.size + 4 * t * width
    if len(data) != expected:
        raise GridFormatError(f"payload size {len(data)} does not match header ({expected})")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(t, width)
    return values.astype(np.float32), shift


def grid_to_bytes(grid: PosteriorGrid) -> bytes:
    return dump_matrix(grid.logp, grid.frame_shift_ms, CTC_MAGIC)


def grid_from_bytes(data: bytes) -> PosteriorGrid:
    values, shift = load_matrix(data, CTC_MAGIC)
    return PosteriorGrid(values, shift)


def write_grid(path, grid: PosteriorGrid) -> None:
    Path(path).write_bytes(grid_to_bytes(grid))


def read_grid(path) -> PosteriorGrid:
    return grid_from_bytes(Path(path).read_bytes())


def write_vad_outputs(path, outputs: np.ndarray, frame_shift_ms: int = 10) -> None:
    Path(path).write_bytes(dump_matrix(outputs, frame_shift_ms, VAD_MAGIC))


def read_vad_outputs(path) -> tuple:
    """Return ``(outputs[T, num_nodes], frame_shift_ms)``."""
    return load_matrix(Path(path).read_bytes(), VAD_MAGIC)


def read_jsonl(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None


def write_jsonl(path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def read_manifest(path) -> list:
    """Load every utterance of a manifest; grid paths are relative to the manifest's directory."""
    base = Path(path).parent
    utts = []
    for row in read_jsonl(path):
        grid = read_grid(_resolve(base, row["grid"]))
        frames = int(row.get("frames", grid.num_frames))
        if frames != grid.num_frames:
            raise ValueError(f"{row['id']}: manifest says {frames} frames, grid has {grid.num_frames}")
        utts.append(Utterance(row["id"], grid, frames))
    return utts


def manifest_row(utt_id: str, grid_path: str, frames: int) -> dict:
    return {"id": utt_id, "grid": grid_path, "frames": int(frames)}


def write_results(path, results: Iterable[DecodeResult]) -> None:
    write_jsonl(path, (r.to_json() for r in results))


def read_results(path) -> list:
    return [DecodeResult.from_json(row) for row in read_jsonl(path)]
