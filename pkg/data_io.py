"""
Data IO
MNIST IDX / CSV 이미지 분류 데이터 로딩, 전처리, one-hot 라벨, 정확도

전처리:
    1. 이미지별 min-max 정규화 (이미지 전체의 최솟값/최댓값, 상수 이미지는 0)
    2. 학습셋의 픽셀별 평균을 학습셋과 테스트셋 모두에서 뺀다

배치 형식: d × (a b l), 인스턴스 i의 열 r + a c 가 픽셀 (r, c)
"""

import os
import re
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from index_maps import select_instances

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """데이터 파일 형식 오류"""
    pass


@dataclass
class RawData:
    """전처리 전 이미지 (l, a, b, d) 행 우선 픽셀과 정수 라벨 (l,)"""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int = 10

    @property
    def size(self) -> int:
        return self.images.shape[0]

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    @property
    def class_ids(self) -> np.ndarray:
        return self.labels

    def select(self, idx: np.ndarray) -> "RawData":
        return RawData(self.images[idx], self.labels[idx], self.num_classes)


@dataclass
class Dataset:
    """전처리된 데이터. images는 d × (a b l), labels는 K × l one-hot"""

    images: np.ndarray
    labels: np.ndarray
    label_ids: np.ndarray
    dims: Tuple[int, int, int]
    num_classes: int
    pixel_mean: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.label_ids.size

    @property
    def class_ids(self) -> np.ndarray:
        return self.label_ids

    def batch(self, idx: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """인스턴스 idx의 (이미지 배치, one-hot 라벨)"""
        return select_instances(self.images, self.size, idx), self.labels[:, idx]

    def select(self, idx: np.ndarray) -> "Dataset":
        images, labels = self.batch(idx)
        return Dataset(images, labels, self.label_ids[idx], self.dims,
                       self.num_classes, self.pixel_mean)


def to_stacked(images: np.ndarray) -> np.ndarray:
    """(l, a, b, d) 행 우선 픽셀 → d × (a b l) 배치"""
    l, a, b, d = images.shape
    return np.reshape(images.transpose(3, 1, 2, 0), (d, a * b * l), order="F")


def from_stacked(stack: np.ndarray, dims: Tuple[int, int, int]) -> np.ndarray:
    """d × (a b l) 배치 → (l, a, b, d)"""
    a, b, d = dims
    return np.reshape(stack, (d, a, b, -1), order="F").transpose(3, 1, 2, 0)


def load_idx(path: str) -> np.ndarray:
    """
    IDX 파일 하나 읽기 (big-endian)

    이미지: magic 0x00000803, 개수, 행, 열, 그 뒤 uint8 픽셀 → (n, rows, cols)
    라벨:   magic 0x00000801, 개수, 그 뒤 uint8 라벨 → (n,)
    """
    with open(path, "rb") as f:
        data = f.read()

    if len(data) < 8:
        raise DataFormatError(f"{path}: file too short for an IDX header")
    magic, count = struct.unpack(">II", data[:8])

    if magic == IDX_IMAGE_MAGIC:
        if len(data) < 16:
            raise DataFormatError(f"{path}: truncated image header")
        rows, cols = struct.unpack(">II", data[8:16])
        shape, offset = (count, rows, cols), 16
    elif magic == IDX_LABEL_MAGIC:
        shape, offset = (count,), 8
    else:
        raise DataFormatError(f"{path}: unknown IDX magic number 0x{magic:08x}")

    expected = int(np.prod(shape))
    if len(data) - offset < expected:
        raise DataFormatError(
            f"{path}: truncated payload ({len(data) - offset} bytes, expected {expected})")
    return np.frombuffer(data, dtype=np.uint8, count=expected, offset=offset).reshape(shape)


def _check_labels(labels: np.ndarray, num_classes: int, source: str):
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = int(np.flatnonzero((labels < 0) | (labels >= num_classes))[0])
        raise DataFormatError(
            f"{source}: label {labels[bad]} of instance {bad + 1} outside [0, {num_classes})")


def load_idx_pair(images_path: str, labels_path: str, num_classes: int = 10) -> RawData:
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 3:
        raise DataFormatError(f"{images_path}: not an IDX image file")
    if labels.ndim != 1:
        raise DataFormatError(f"{labels_path}: not an IDX label file")
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}")

    labels = labels.astype(np.int64)
    _check_labels(labels, num_classes, labels_path)
    return RawData(images.astype(np.float64)[..., None], labels, num_classes)


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def load_csv(path: str, dims: Tuple[int, int, int], num_classes: int = 10) -> RawData:
    """
    CSV 한 줄 = label, pixel... (픽셀은 (높이, 너비, 채널) 행 우선)

    첫 줄이 숫자가 아니면 헤더로 보고 건너뛴다. 필드 수가 틀린 줄은 줄 번호와 함께 오류.
    """
    a, b, d = dims
    expected = 1 + a * b * d

    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
    has_header = bool(first.strip()) and not _is_number(first.split(",")[0].strip())
    line_offset = 2 if has_header else 1

    try:
        frame = pd.read_csv(path, header=0 if has_header else None, skip_blank_lines=True)
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        where = f"line {match.group(1)}" if match else "unknown line"
        raise DataFormatError(f"{path}: {where}: wrong number of fields (expected {expected})")
    except pd.errors.EmptyDataError:
        raise DataFormatError(f"{path}: no data rows")

    if frame.shape[1] != expected:
        line = 1 if has_header else line_offset
        raise DataFormatError(
            f"{path}: line {line}: {frame.shape[1]} fields, expected {expected} (label + {a}x{b}x{d} pixels)")

    values = frame.apply(pd.to_numeric, errors="coerce")
    bad_rows = np.flatnonzero(values.isna().any(axis=1).to_numpy())
    if bad_rows.size:
        raise DataFormatError(
            f"{path}: line {int(bad_rows[0]) + line_offset}: missing or non-numeric field")

    array = values.to_numpy(dtype=np.float64)
    labels = array[:, 0]
    if not np.all(labels == np.round(labels)):
        row = int(np.flatnonzero(labels != np.round(labels))[0])
        raise DataFormatError(f"{path}: line {row + line_offset}: label is not an integer")
    labels = labels.astype(np.int64)
    _check_labels(labels, num_classes, path)

    images = array[:, 1:].reshape(-1, a, b, d)
    return RawData(images, labels, num_classes)


def load_raw(paths: List[str], dims: Optional[Tuple[int, int, int]] = None,
             num_classes: int = 10) -> RawData:
    """경로 1개 = CSV (dims 필요), 2개 = IDX 이미지 + 라벨"""
    for path in paths:
        if not os.path.exists(path):
            raise FileNotFoundError(f"data file not found: {path}")
    if len(paths) == 1:
        if dims is None:
            raise DataFormatError("CSV data needs image dims (height, width, channels)")
        return load_csv(paths[0], dims, num_classes)
    if len(paths) == 2:
        return load_idx_pair(paths[0], paths[1], num_classes)
    raise DataFormatError(f"expected a CSV path or IDX images+labels paths, got {len(paths)} paths")


def min_max_scale(images: np.ndarray) -> np.ndarray:
    """이미지별 (Z - min) / (max - min). 상수 이미지는 0"""
    flat = images.reshape(images.shape[0], -1)
    low = flat.min(axis=1, keepdims=True)
    span = flat.max(axis=1, keepdims=True) - low
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (flat - low) / safe, 0.0)
    return scaled.reshape(images.shape)


def preprocess(raw: RawData, reference_mean: Optional[np.ndarray] = None) -> Dataset:
    """
    min-max 정규화 후 픽셀별 평균 제거

    reference_mean이 없으면 이 데이터(학습셋)의 평균을 쓰고, 테스트셋에는
    학습셋 Dataset의 pixel_mean을 넘긴다.
    """
    scaled = min_max_scale(np.asarray(raw.images, dtype=np.float64))
    mean = scaled.mean(axis=0) if reference_mean is None else reference_mean
    if mean.shape != scaled.shape[1:]:
        raise DataFormatError(f"pixel mean shape {mean.shape} does not match images {scaled.shape[1:]}")
    centered = scaled - mean

    return Dataset(
        images=to_stacked(centered),
        labels=one_hot(raw.labels, raw.num_classes),
        label_ids=np.asarray(raw.labels, dtype=np.int64),
        dims=raw.dims,
        num_classes=raw.num_classes,
        pixel_mean=mean,
    )


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    _check_labels(labels, num_classes, "labels")
    out = np.zeros((num_classes, labels.size))
    out[labels, np.arange(labels.size)] = 1.0
    return out


def _class_ids(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        return np.argmax(labels, axis=0)
    return labels


def correct_count(z_out: np.ndarray, labels: np.ndarray) -> int:
    """argmax 예측 (동점이면 작은 인덱스)이 맞은 개수"""
    return int(np.sum(np.argmax(z_out, axis=0) == _class_ids(labels)))


def accuracy(z_out: np.ndarray, labels: np.ndarray) -> float:
    if z_out.shape[1] == 0:
        return 0.0
    return correct_count(z_out, labels) / z_out.shape[1]


def stratified_subset(data, fraction: float, seed: int):
    """클래스별 비율을 유지하는 부분집합 (RawData, Dataset 모두 가능)"""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    ids = data.class_ids
    chosen = []
    for label in np.unique(ids):
        members = np.flatnonzero(ids == label)
        count = max(1, int(round(fraction * members.size)))
        chosen.append(rng.choice(members, size=count, replace=False))
    return data.select(np.sort(np.concatenate(chosen)))
