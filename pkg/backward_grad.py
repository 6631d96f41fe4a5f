"""
Backward Grad
역전파로 ∇f(θ) = θ/C + (1/l) Σ_i ∂ξ_i/∂θ 계산 (부분집합 단위 누적)

copies 인자: 기울기는 1, Jacobian은 n_{L+1}. 인스턴스 블록마다 copies개의 열이 있고
mask와 pooling argmax는 같은 인스턴스의 모든 copy에 똑같이 적용된다.
"""

import weakref
from dataclasses import dataclass
from typing import ClassVar, Optional, Tuple

import numpy as np

from data_io import Dataset
from forward_eval import (BatchPlan, ForwardCache, ShapeMismatchError, as_flat, check_plan,
                          forward, loss, regularization_term, relu_mask)
from index_maps import (PadIndex, PhiIndex, PoolArgmax, accumulate_by_index,
                        batch_offset_indices, instance_vectors, replicate_instances, unpad)


def loss_grad_output(z_out: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """∂ξ/∂z^{L+1} = 2(z − y). 마지막 층은 선형이므로 ∂ξ/∂s^L 과 같다"""
    if z_out.shape != Y.shape:
        raise ShapeMismatchError(f"outputs {z_out.shape} do not match labels {Y.shape}")
    return 2.0 * (z_out - Y)


def conv_grad_params(dS: np.ndarray, phi_z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Σ_i (∂ξ_i/∂S^{m,i}) φ(pad(Z^{m,i}))ᵀ 와 bias 행 합"""
    if dS.shape[1] != phi_z.shape[1]:
        raise ShapeMismatchError(f"dS {dS.shape} does not match gathered input {phi_z.shape}")
    return dS @ phi_z.T, dS.sum(axis=1)


def conv_backprop_S(dZ_out: np.ndarray, Z_out: np.ndarray, pool_argmax: Optional[PoolArgmax],
                    instances: int, copies: int = 1) -> np.ndarray:
    """
    ∂ξ/∂Z^{m+1} → ∂ξ/∂S^m

    I[Z^{m+1}]로 mask한 뒤 argmax 위치로 흩뿌린다 (나머지는 0).
    """
    mask = replicate_instances(relu_mask(Z_out), instances, copies)
    if dZ_out.shape != mask.shape:
        raise ShapeMismatchError(f"upstream {dZ_out.shape} does not match layer output {mask.shape}")
    masked = dZ_out * mask
    if pool_argmax is None:
        return masked

    if pool_argmax.instances != instances:
        raise ShapeMismatchError(
            f"pooling argmax recorded for {pool_argmax.instances} instances, batch has {instances}")
    argmax = pool_argmax.indices
    if copies > 1:
        argmax = np.repeat(argmax, copies, axis=1)
    columns = instances * copies
    values = instance_vectors(masked, argmax.shape[0])
    scattered = accumulate_by_index(
        values, batch_offset_indices(argmax, pool_argmax.conv_volume, columns),
        pool_argmax.conv_volume * columns)
    return np.reshape(scattered, (Z_out.shape[0], -1), order="F")


def conv_backprop_Z(W: np.ndarray, dS: np.ndarray, phi: PhiIndex, pad_index: PadIndex) -> np.ndarray:
    """∂ξ/∂Z^m = unpad(Pφᵀ vec(Wᵀ ∂ξ/∂S^m)), 배치 전체를 한 번의 accumulate로"""
    if W.shape[0] != dS.shape[0]:
        raise ShapeMismatchError(f"weights {W.shape} do not match dS {dS.shape}")
    columns = dS.shape[1] // phi.columns
    V = W.T @ dS
    accumulated = accumulate_by_index(
        V, batch_offset_indices(phi, phi.input_volume, columns), phi.input_volume * columns)
    return unpad(accumulated, pad_index)


def fc_grad_params(ds: np.ndarray, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if ds.shape[1] != z.shape[1]:
        raise ShapeMismatchError(f"ds {ds.shape} does not match layer input {z.shape}")
    return ds @ z.T, ds.sum(axis=1)


def fc_backprop_z(W: np.ndarray, ds: np.ndarray) -> np.ndarray:
    """∂ξ/∂z^m = (W^m)ᵀ ∂ξ/∂s^m"""
    if W.shape[0] != ds.shape[0]:
        raise ShapeMismatchError(f"weights {W.shape} do not match ds {ds.shape}")
    return W.T @ ds


def fc_backprop(W: np.ndarray, ds: np.ndarray, z: np.ndarray, copies: int = 1) -> np.ndarray:
    """∂ξ/∂s^{m−1} = ((W^m)ᵀ ∂ξ/∂s^m) ⊙ I[z^m]"""
    return fc_backprop_z(W, ds) * replicate_instances(relu_mask(z), z.shape[1], copies)


@dataclass(eq=False)
class BackwardState:
    """
    현재 층의 ∂ξ/∂vec(S^m) 배치

    인접한 두 층의 상태만 살아 있어야 한다. peak_live는 동시에 살아 있던 최대 개수.
    """

    layer: int
    dS: np.ndarray

    _live: ClassVar[weakref.WeakSet] = weakref.WeakSet()
    peak_live: ClassVar[int] = 0

    def __post_init__(self):
        BackwardState._live.add(self)
        BackwardState.peak_live = max(BackwardState.peak_live, len(BackwardState._live))

    @classmethod
    def reset_peak(cls):
        cls.peak_live = len(cls._live)


def backward(network, theta, cache: ForwardCache, Y: np.ndarray) -> np.ndarray:
    """배치의 Σ_i ∂ξ_i/∂θ (θ와 같은 배치의 평탄화된 벡터)"""
    theta = as_flat(theta)
    instances = cache.size
    blocks = [None] * len(network.layers)

    dZ = loss_grad_output(cache.outputs, Y)
    state = None
    for m in reversed(range(len(network.layers))):
        layer = network.layers[m]
        state = BackwardState(m, layer.backprop_output(dZ, cache.Z[m + 1], cache.pool_argmax[m], instances))
        dZ = None
        blocks[m] = layer.grad_params(state.dS, cache.Z[m])
        if m > 0:
            dZ = layer.backprop_input(network.weights(theta, m), state.dS)

    return network.layout.pack(blocks)


@dataclass
class GradientResult:
    f: float
    grad: np.ndarray
    cache: Optional[ForwardCache] = None


def function_and_gradient(network, theta, dataset: Dataset, C: float, plan: BatchPlan) -> GradientResult:
    """
    f(θ), ∇f(θ)를 부분집합 단위로 계산하고 S_R의 ForwardCache를 돌려준다
    """
    if C <= 0:
        raise ValueError(f"C must be positive, got {C}")
    theta = as_flat(theta)
    check_plan(plan, dataset)

    total = np.zeros_like(theta)
    loss_sum = 0.0
    kept = None
    last = len(plan) - 1
    for r, subset in enumerate(plan):
        images, Y = dataset.batch(subset)
        cache = forward(network, theta, images, subset)
        per_instance, _ = loss(cache.outputs, Y)
        loss_sum += float(per_instance.sum())
        total += backward(network, theta, cache, Y)
        if plan.hessian_last and r == last:
            kept = cache
        del cache

    l = dataset.size
    f = regularization_term(theta, C) + loss_sum / l
    grad = theta / C + total / l
    return GradientResult(f=f, grad=grad, cache=kept)


def gradient(network, theta, dataset: Dataset, C: float, plan: BatchPlan) -> np.ndarray:
    return function_and_gradient(network, theta, dataset, C, plan).grad
