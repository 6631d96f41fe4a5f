"""
Index Maps
P_φ (부분 이미지 수집), P_pad (zero-padding), pooling 분할을 인덱스 벡터로 표현

모든 선형 인덱스는 column-major 기준이다. 내부 저장은 0-based int64,
문서의 예시와 dump 파일은 1-based.

배치 저장 형식: 인스턴스 i의 Z^{m,i} (d × ab)를 열 방향으로 이어 붙인 d × (a b l) 행렬
"""

from dataclasses import dataclass
from typing import Union

import numpy as np


class IndexMapError(ValueError):
    """인덱스 범위/차원 오류"""
    pass


@dataclass(frozen=True)
class PhiIndex:
    """
    φ(Z)의 행 k가 vec(Z)에서 읽는 위치

    indices 길이는 h h d_in a_out b_out. 한 열(부분 이미지) 안에서는
    필터 안의 위치 (p, q)가 가장 빠르게, 그 다음 채널 j 순서.
    """

    indices: np.ndarray
    a_in: int
    b_in: int
    d_in: int
    h: int
    s: int
    a_out: int
    b_out: int

    @property
    def rows(self) -> int:
        return self.h * self.h * self.d_in

    @property
    def columns(self) -> int:
        return self.a_out * self.b_out

    @property
    def input_volume(self) -> int:
        return self.d_in * self.a_in * self.b_in

    def one_based(self) -> np.ndarray:
        return self.indices + 1


@dataclass(frozen=True)
class PadIndex:
    """입력 이미지 원소들이 padding된 이미지 안에서 차지하는 위치"""

    indices: np.ndarray
    a_in: int
    b_in: int
    d: int
    pad: int

    @property
    def a_pad(self) -> int:
        return self.a_in + 2 * self.pad

    @property
    def b_pad(self) -> int:
        return self.b_in + 2 * self.pad

    @property
    def input_volume(self) -> int:
        return self.d * self.a_in * self.b_in

    @property
    def padded_volume(self) -> int:
        return self.d * self.a_pad * self.b_pad

    def one_based(self) -> np.ndarray:
        return self.indices + 1


@dataclass(frozen=True)
class PoolArgmax:
    """
    인스턴스별로 선택된 최댓값의 위치 (σ(S^{m,i}) 안의 선형 인덱스)

    indices: (d a_out b_out) × l, 0-based
    """

    indices: np.ndarray
    conv_volume: int

    @property
    def instances(self) -> int:
        return self.indices.shape[1]

    def one_based(self) -> np.ndarray:
        return self.indices + 1


def build_phi_index(a_in: int, b_in: int, d_in: int, h: int, s: int) -> PhiIndex:
    """(a + b a_in) s d_in + (p + q a_in) d_in + j 를 모든 (p, q, j, a, b)에 대해 계산"""
    if h < 1 or s < 1:
        raise IndexMapError(f"filter size and stride must be positive (h={h}, s={s})")
    if h > a_in or h > b_in:
        raise IndexMapError(f"filter {h}x{h} does not fit in a {a_in}x{b_in} image")

    a_out = (a_in - h) // s + 1
    b_out = (b_in - h) // s + 1

    window = np.arange(h, dtype=np.int64)
    first_channel = (window[:, None] + window[None, :] * a_in) * d_in
    first_column = first_channel.ravel(order="F")[:, None] + np.arange(d_in, dtype=np.int64)[None, :]
    column_offset = (np.arange(a_out, dtype=np.int64)[:, None]
                     + np.arange(b_out, dtype=np.int64)[None, :] * a_in) * s * d_in
    indices = first_column.ravel(order="F")[:, None] + column_offset.ravel(order="F")[None, :]

    return PhiIndex(indices=indices.ravel(order="F"), a_in=a_in, b_in=b_in, d_in=d_in,
                    h=h, s=s, a_out=a_out, b_out=b_out)


def pool_partition_index(a_conv: int, b_conv: int, d: int, h: int) -> PhiIndex:
    """겹치지 않는 pooling 영역 = stride가 h인 φ"""
    return build_phi_index(a_conv, b_conv, d, h, h)


def build_pad_index(a_in: int, b_in: int, d: int, pad: int) -> PadIndex:
    if pad < 0:
        raise IndexMapError(f"pad must be non-negative, got {pad}")
    a_pad = a_in + 2 * pad
    rows = np.arange(a_in, dtype=np.int64) + pad
    cols = np.arange(b_in, dtype=np.int64) + pad
    pixel = (rows[:, None] + cols[None, :] * a_pad).ravel(order="F")
    indices = (np.arange(d, dtype=np.int64)[:, None] + d * pixel[None, :]).ravel(order="F")
    return PadIndex(indices=indices, a_in=a_in, b_in=b_in, d=d, pad=pad)


def instance_vectors(batch: np.ndarray, volume: int) -> np.ndarray:
    """d × (a b l) 배치를 열마다 vec(Z^i)인 (d a b) × l 행렬로"""
    if batch.size % volume:
        raise IndexMapError(f"batch of {batch.size} entries is not a multiple of {volume}")
    return np.reshape(batch, (volume, batch.size // volume), order="F")


def select_instances(batch: np.ndarray, instances: int, idx: np.ndarray) -> np.ndarray:
    """배치에서 인스턴스 idx만 골라낸 배치 (열 블록 단위)"""
    rows, cols = batch.shape
    block = cols // instances
    return batch.reshape(rows, instances, block)[:, idx, :].reshape(rows, -1)


def replicate_instances(batch: np.ndarray, instances: int, copies: int) -> np.ndarray:
    """
    인스턴스 블록마다 copies번 반복

    결과의 열 c + block (u + copies i)는 원래 인스턴스 i의 열 c.
    출력 좌표 u마다 같은 mask/argmax를 쓰는 Jacobian 계산용.
    """
    if copies == 1:
        return batch
    rows, cols = batch.shape
    block = cols // instances
    expanded = np.repeat(batch.reshape(rows, instances, block), copies, axis=1)
    return expanded.reshape(rows, -1)


def gather(phi: PhiIndex, batch: np.ndarray) -> np.ndarray:
    """φ(Z^i)를 모든 인스턴스에 대해 계산: (h h d_in) × (a_out b_out l)"""
    if batch.ndim != 2 or batch.shape[0] != phi.d_in or batch.shape[1] % (phi.a_in * phi.b_in):
        raise IndexMapError(
            f"batch shape {batch.shape} does not match {phi.d_in} x ({phi.a_in}*{phi.b_in}*l)")
    vectors = instance_vectors(batch, phi.input_volume)
    gathered = vectors[phi.indices, :]
    return np.reshape(gathered, (phi.rows, -1), order="F")


def pad(batch: np.ndarray, pad_index: PadIndex) -> np.ndarray:
    if batch.ndim != 2 or batch.shape[0] != pad_index.d or batch.shape[1] % (pad_index.a_in * pad_index.b_in):
        raise IndexMapError(f"batch shape {batch.shape} does not match pad index input")
    if pad_index.pad == 0:
        return batch
    vectors = instance_vectors(batch, pad_index.input_volume)
    padded = np.zeros((pad_index.padded_volume, vectors.shape[1]))
    padded[pad_index.indices, :] = vectors
    return np.reshape(padded, (pad_index.d, -1), order="F")


def unpad(batch: np.ndarray, pad_index: PadIndex) -> np.ndarray:
    """P_padᵀ: padding된 배치 (또는 그 vec)에서 원래 위치만 읽어온다"""
    if batch.size % pad_index.padded_volume:
        raise IndexMapError(
            f"batch of {batch.size} entries is not a multiple of padded volume {pad_index.padded_volume}")
    if pad_index.pad == 0:
        return np.reshape(batch, (pad_index.d, -1), order="F")
    vectors = instance_vectors(batch, pad_index.padded_volume)
    return np.reshape(vectors[pad_index.indices, :], (pad_index.d, -1), order="F")


def accumulate_by_index(values: np.ndarray, indices: np.ndarray, out_len: int) -> np.ndarray:
    """out[k] = Σ_{j: indices[j] = k} values[j], 즉 Pᵀv"""
    values = np.ravel(values, order="F")
    indices = np.ravel(indices, order="F")
    if values.size != indices.size:
        raise IndexMapError(f"{values.size} values but {indices.size} indices")
    if indices.size and (indices.min() < 0 or indices.max() >= out_len):
        raise IndexMapError(f"index out of range [0, {out_len})")
    return np.bincount(indices, weights=values, minlength=out_len)


def batch_offset_indices(base: Union[PhiIndex, PoolArgmax, np.ndarray],
                         block_size: int, copies: int) -> np.ndarray:
    """
    copy c (0-based)의 인덱스에 c·block_size를 더해 이어 붙인다

    1-D 기준 인덱스는 모든 copy에 같은 인덱스를, 2-D (열 = copy)는 열마다 다른 인덱스를 쓴다.
    """
    if copies < 1:
        raise IndexMapError(f"copies must be >= 1, got {copies}")
    if isinstance(base, (PhiIndex, PoolArgmax)):
        base = base.indices
    base = np.asarray(base, dtype=np.int64)
    if base.size and (base.min() < 0 or base.max() >= block_size):
        raise IndexMapError(f"base index exceeds block size {block_size}")

    offsets = block_size * np.arange(copies, dtype=np.int64)
    if base.ndim == 1:
        return (base[:, None] + offsets[None, :]).ravel(order="F")
    if base.shape[1] != copies:
        raise IndexMapError(f"per-copy index matrix has {base.shape[1]} columns, expected {copies}")
    return (base + offsets[None, :]).ravel(order="F")


def dump_index(indices: Union[PhiIndex, PadIndex, PoolArgmax, np.ndarray], path: str):
    """1-based 인덱스를 한 줄에 하나씩 저장 (외부 오라클 비교용)"""
    if isinstance(indices, (PhiIndex, PadIndex, PoolArgmax)):
        indices = indices.indices
    np.savetxt(path, np.ravel(indices, order="F") + 1, fmt="%d")
