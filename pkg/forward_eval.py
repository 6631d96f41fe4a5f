"""
Forward Eval
네트워크 출력 z^{L+1,i}, 손실, 정규화된 목적함수 f(θ) 계산

f(θ) = θᵀθ / (2C) + (1/l) Σ_i ‖z^{L+1,i} − y^i‖²

손실은 부분집합 단위로 누적하고, Hessian 부분집합 S_R의 캐시만 남긴다.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from data_io import Dataset, correct_count
from index_maps import PhiIndex, PoolArgmax, instance_vectors, select_instances
from model_config import ParamVector


class ShapeMismatchError(ValueError):
    """행렬 차원이 맞지 않음"""
    pass


def conv_forward(W: np.ndarray, b: np.ndarray, phi_z: np.ndarray) -> np.ndarray:
    """S = W φ(pad(Z)) + b 1ᵀ, 배치 전체를 한 번의 행렬곱으로"""
    if W.shape[1] != phi_z.shape[0] or b.shape[0] != W.shape[0]:
        raise ShapeMismatchError(
            f"conv weights {W.shape} / bias {b.shape} do not match gathered input {phi_z.shape}")
    return W @ phi_z + b[:, None]


def relu(S: np.ndarray) -> np.ndarray:
    return np.maximum(S, 0.0)


def relu_mask(X: np.ndarray) -> np.ndarray:
    """I[X > 0] (0에서는 0)"""
    return (X > 0).astype(np.float64)


def maxpool(z_conv: np.ndarray, partition: PhiIndex) -> Tuple[np.ndarray, PoolArgmax]:
    """
    겹치지 않는 h×h 영역마다 최댓값 선택

    동점이면 영역 안에서 가장 작은 선형 인덱스 (영역의 행 순서가 선형 인덱스 순서와 같다).
    """
    volume = partition.input_volume
    if z_conv.ndim != 2 or z_conv.shape[0] != partition.d_in or z_conv.size % volume:
        raise ShapeMismatchError(f"conv output {z_conv.shape} does not match pooling partition")

    window = partition.h * partition.h
    outputs = partition.d_in * partition.columns
    regions = instance_vectors(z_conv, volume)[partition.indices, :]
    regions = np.reshape(regions, (window, outputs, -1), order="F")

    choice = np.argmax(regions, axis=0)
    pooled = np.take_along_axis(regions, choice[None, :, :], axis=0)[0]
    positions = np.reshape(partition.indices, (window, outputs), order="F")
    argmax = positions[choice, np.arange(outputs)[:, None]]

    z_out = np.reshape(pooled, (partition.d_in, -1), order="F")
    return z_out, PoolArgmax(indices=argmax, conv_volume=volume)


def fc_forward(W: np.ndarray, b: np.ndarray, z: np.ndarray) -> np.ndarray:
    if W.shape[1] != z.shape[0] or b.shape[0] != W.shape[0]:
        raise ShapeMismatchError(f"fc weights {W.shape} / bias {b.shape} do not match input {z.shape}")
    return W @ z + b[:, None]


def loss(z_out: np.ndarray, Y: np.ndarray) -> Tuple[np.ndarray, float]:
    """인스턴스별 ξ_i = ‖z − y‖² 과 평균"""
    if z_out.shape != Y.shape:
        raise ShapeMismatchError(f"outputs {z_out.shape} do not match labels {Y.shape}")
    per_instance = np.sum((z_out - Y) ** 2, axis=0)
    mean = float(per_instance.mean()) if per_instance.size else 0.0
    return per_instance, mean


@dataclass(frozen=True)
class BatchPlan:
    """
    {0..l-1}의 분할 S_1..S_R

    hessian_last이면 마지막 부분집합 S_R이 Hessian 부분집합이다.
    """

    subsets: Tuple[np.ndarray, ...]
    hessian_last: bool = False

    def __len__(self) -> int:
        return len(self.subsets)

    def __iter__(self):
        return iter(self.subsets)

    @property
    def hessian_subset(self) -> Optional[np.ndarray]:
        return self.subsets[-1] if self.hessian_last else None

    @property
    def total(self) -> int:
        return sum(subset.size for subset in self.subsets)


def make_plan(l: int, batch_size: int, hessian_subset: Optional[np.ndarray] = None) -> BatchPlan:
    """
    나머지 인스턴스를 인덱스 순서대로 거의 같은 크기로 나누고 S_R을 맨 뒤에 둔다
    """
    if l < 1 or batch_size < 1:
        raise ValueError(f"need l >= 1 and batch_size >= 1 (l={l}, batch_size={batch_size})")

    if hessian_subset is None:
        rest = np.arange(l, dtype=np.int64)
    else:
        hessian_subset = np.asarray(hessian_subset, dtype=np.int64)
        mask = np.ones(l, dtype=bool)
        mask[hessian_subset] = False
        rest = np.flatnonzero(mask)

    chunks = []
    if rest.size:
        chunks = np.array_split(rest, math.ceil(rest.size / batch_size))

    if hessian_subset is None:
        return BatchPlan(tuple(chunks))
    return BatchPlan(tuple(chunks) + (hessian_subset,), hessian_last=True)


@dataclass
class ForwardCache:
    """
    Z[m]: 층 m의 입력 (Z[0]은 이미지 배치, Z[L]은 출력 z^{L+1})
    pool_argmax[m]: pooling이 있는 conv 층의 argmax (이번 반복에서 기록)
    """

    Z: List[np.ndarray]
    pool_argmax: List[Optional[PoolArgmax]]
    instances: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def outputs(self) -> np.ndarray:
        return self.Z[-1]

    @property
    def size(self) -> int:
        return self.Z[-1].shape[1]


def as_flat(theta) -> np.ndarray:
    """ParamVector 또는 배열을 float64 1차원 배열로"""
    if isinstance(theta, ParamVector):
        return theta.data
    return np.asarray(theta, dtype=np.float64)


def forward(network, theta, images: np.ndarray,
            instances: Optional[np.ndarray] = None) -> ForwardCache:
    """배치 전체의 순전파. 모든 층의 입력과 pooling argmax를 기록"""
    theta = as_flat(theta)
    Z = images
    values = [Z]
    argmaxes = []
    for m, layer in enumerate(network.layers):
        W, b = network.weights(theta, m), network.bias(theta, m)
        Z, argmax = layer.forward(W, b, Z)
        values.append(Z)
        argmaxes.append(argmax)

    if instances is None:
        instances = np.arange(Z.shape[1], dtype=np.int64)
    return ForwardCache(Z=values, pool_argmax=argmaxes, instances=instances)


@dataclass
class Evaluation:
    f: float
    loss_sum: float
    correct: int
    size: int
    cache: Optional[ForwardCache] = None

    @property
    def accuracy(self) -> float:
        return self.correct / self.size if self.size else 0.0


def regularization_term(theta: np.ndarray, C: float) -> float:
    return float(theta @ theta) / (2.0 * C)


def check_plan(plan: BatchPlan, dataset: Dataset):
    if plan.total != dataset.size:
        raise ShapeMismatchError(f"batch plan covers {plan.total} instances, dataset has {dataset.size}")


def evaluate(network, theta, dataset: Dataset, C: float, plan: BatchPlan,
             retain_hessian_subset: bool = False) -> Evaluation:
    """f(θ)와 학습 정확도를 부분집합 단위로 계산"""
    if C <= 0:
        raise ValueError(f"C must be positive, got {C}")
    theta = as_flat(theta)
    check_plan(plan, dataset)

    loss_sum = 0.0
    correct = 0
    kept = None
    last = len(plan) - 1
    for r, subset in enumerate(plan):
        images, Y = dataset.batch(subset)
        cache = forward(network, theta, images, subset)
        per_instance, _ = loss(cache.outputs, Y)
        loss_sum += float(per_instance.sum())
        correct += correct_count(cache.outputs, Y)
        if retain_hessian_subset and plan.hessian_last and r == last:
            kept = cache
        del cache

    f = regularization_term(theta, C) + loss_sum / dataset.size
    return Evaluation(f=f, loss_sum=loss_sum, correct=correct, size=dataset.size, cache=kept)


def objective(network, theta, dataset: Dataset, C: float, plan: BatchPlan) -> float:
    return evaluate(network, theta, dataset, C, plan).f


def predict(network, theta, images: np.ndarray, batch_size: Optional[int] = None) -> np.ndarray:
    """출력 z^{L+1} (n_{L+1} × l), batch_size 단위로 나눠 계산"""
    a, b, _ = network.input_dims
    l = images.shape[1] // (a * b)
    if batch_size is None or batch_size >= l:
        return forward(network, theta, images).outputs
    outputs = []
    for subset in np.array_split(np.arange(l), math.ceil(l / batch_size)):
        outputs.append(forward(network, theta, select_instances(images, l, subset)).outputs)
    return np.concatenate(outputs, axis=1)
