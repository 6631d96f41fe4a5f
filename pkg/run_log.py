"""
Run Log
반복 로그 CSV와 바이너리 체크포인트/모델 파일

CSV 형식:
    # newton-cnn-log v1
    iter,f,train_acc,test_acc,lambda,cg_iters,alpha,seconds
    1,0.48312...,0.91,0.9,1,12,1,0.53

바이너리 형식 v1 (little-endian):
    magic "NCNNCKPT" | uint32 version | uint32 iteration | float64 λ | float64 f
    | uint32 층 개수 | uint64 × 층 개수 (층별 파라미터 수)
    | uint32 rng 길이 | rng 상태 JSON (UTF-8) | uint64 n | float64 × n (θ)
"""

import json
import os
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from newton_solver import LOG_COLUMNS

LOG_SCHEMA_LINE = "# newton-cnn-log v1"
MAGIC = b"NCNNCKPT"
FORMAT_VERSION = 1


class ModelMismatchError(ValueError):
    """저장된 θ의 층 구성이 현재 config와 다름"""
    pass


class CheckpointError(ValueError):
    """체크포인트/모델 파일이 손상되었거나 형식이 다름"""
    pass


class IterationLog:
    """반복마다 한 줄씩 추가되는 CSV 로그"""

    def __init__(self, path: str, resume_iteration: Optional[int] = None):
        self.path = path
        if resume_iteration is not None and os.path.exists(path):
            # 체크포인트 이후에 기록된 줄은 버린다
            kept = read_log(path)
            kept = kept[kept["iter"] <= resume_iteration]
            self._write_header()
            if len(kept):
                self._append_frame(kept)
        else:
            self._write_header()

    def _write_header(self):
        with open(self.path, "w", encoding="utf-8", newline="") as f:
            f.write(LOG_SCHEMA_LINE + "\n")
            f.write(",".join(LOG_COLUMNS) + "\n")

    def _append_frame(self, frame: pd.DataFrame):
        frame = frame[LOG_COLUMNS].astype({"iter": "int64", "cg_iters": "int64"})
        frame.to_csv(self.path, mode="a", header=False, index=False,
                     float_format="%.17g", na_rep="nan", lineterminator="\n")

    def append(self, row: Dict):
        self._append_frame(pd.DataFrame([row], columns=LOG_COLUMNS))


def read_log(path: str) -> pd.DataFrame:
    with open(path, encoding="utf-8") as f:
        first = f.readline().rstrip("\n")
    if first != LOG_SCHEMA_LINE:
        raise CheckpointError(f"{path}: not a newton-cnn iteration log (first line {first!r})")
    return pd.read_csv(path, skiprows=1, float_precision="round_trip")


@dataclass
class Checkpoint:
    iteration: int
    lam: float
    f: float
    segment_sizes: List[int]
    theta: np.ndarray
    rng_state: Optional[dict] = None


def save_checkpoint(path: str, checkpoint: Checkpoint):
    """임시 파일에 쓴 뒤 os.replace로 교체"""
    theta = np.ascontiguousarray(checkpoint.theta, dtype="<f8")
    if theta.size != sum(checkpoint.segment_sizes):
        raise CheckpointError(
            f"theta has {theta.size} entries, segments sum to {sum(checkpoint.segment_sizes)}")
    rng = json.dumps(checkpoint.rng_state or {}, sort_keys=True).encode("utf-8")

    parts = [
        MAGIC,
        struct.pack("<IIddI", FORMAT_VERSION, checkpoint.iteration, checkpoint.lam, checkpoint.f,
                    len(checkpoint.segment_sizes)),
        struct.pack(f"<{len(checkpoint.segment_sizes)}Q", *checkpoint.segment_sizes),
        struct.pack("<I", len(rng)),
        rng,
        struct.pack("<Q", theta.size),
        theta.tobytes(),
    ]
    tmp_path = path + ".tmp"
    with open(tmp_path, "wb") as f:
        f.write(b"".join(parts))
    os.replace(tmp_path, path)


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError(f"{self.path}: truncated while reading {what}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        reader = _Reader(f.read(), path)

    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a newton-cnn checkpoint")
    version, iteration, lam, f_value, layer_count = reader.unpack("<IIddI", "header")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    segment_sizes = list(reader.unpack(f"<{layer_count}Q", "segment sizes"))
    (rng_length,) = reader.unpack("<I", "rng state length")
    try:
        rng_state = json.loads(reader.take(rng_length, "rng state").decode("utf-8")) or None
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupted rng state ({e})")
    (n,) = reader.unpack("<Q", "parameter count")
    if n != sum(segment_sizes):
        raise CheckpointError(f"{path}: parameter count {n} does not match segment sizes")
    theta = np.frombuffer(reader.take(8 * n, "parameters"), dtype="<f8").astype(np.float64)
    if reader.offset != len(reader.data):
        raise CheckpointError(f"{path}: {len(reader.data) - reader.offset} trailing bytes")

    return Checkpoint(iteration=iteration, lam=lam, f=f_value, segment_sizes=segment_sizes,
                      theta=theta, rng_state=rng_state)


def check_compatible(checkpoint: Checkpoint, network, path: str = "model"):
    """층별 파라미터 수를 비교해 처음 어긋나는 층을 알려준다 (층 번호는 1부터)"""
    expected = network.layout.segment_sizes
    for m, (saved, wanted) in enumerate(zip(checkpoint.segment_sizes, expected)):
        if saved != wanted:
            raise ModelMismatchError(
                f"{path}: layer {m + 1} has {saved} parameters, config expects {wanted}")
    if len(checkpoint.segment_sizes) != len(expected):
        raise ModelMismatchError(
            f"{path}: {len(checkpoint.segment_sizes)} layers saved, config has {len(expected)}")


def load_model(path: str, network) -> np.ndarray:
    checkpoint = load_checkpoint(path)
    check_compatible(checkpoint, network, path)
    return checkpoint.theta
