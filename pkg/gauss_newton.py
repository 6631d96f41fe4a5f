"""
Gauss-Newton
부분집합 S의 Jacobian 블록 ∂z^{L+1,i}/∂vec(S^{m,i})을 만들고 행렬 없이 (G^S + λI)v 계산

G^S v = (1/C) v + (1/|S|) Σ_{i∈S} (J^i)ᵀ B^i J^i v,  B^i = 2I

블록 배치: 층 m마다 d^{m+1} × (a_conv b_conv · n_{L+1} · |S|),
열 c + P (u + K i) 가 출력 좌표 u, 인스턴스 i, 위치 c.
"""

from dataclasses import dataclass, replace
from typing import List

import numpy as np

from forward_eval import ForwardCache, ShapeMismatchError, as_flat


@dataclass
class JacobianCache:
    blocks: List[np.ndarray]
    num_outputs: int
    instances: int

    def element_count(self) -> int:
        return sum(block.size for block in self.blocks)


def jacobian_element_count(cache: JacobianCache) -> int:
    return cache.element_count()


def build_jacobian_cache(network, theta, cache: ForwardCache) -> JacobianCache:
    """∂z^{L+1}/∂(s^L)ᵀ = I 에서 시작하는 역전파 (출력 좌표마다 한 copy)"""
    if cache is None or len(cache.Z) != len(network.layers) + 1:
        raise ShapeMismatchError("forward cache for the Hessian subset is missing")
    theta = as_flat(theta)
    K = network.num_classes
    instances = cache.size

    dZ = np.tile(np.eye(K), (1, instances))
    blocks = [None] * len(network.layers)
    for m in reversed(range(len(network.layers))):
        layer = network.layers[m]
        blocks[m] = layer.backprop_output(dZ, cache.Z[m + 1], cache.pool_argmax[m], instances, copies=K)
        dZ = None
        if m > 0:
            dZ = layer.backprop_input(network.weights(theta, m), blocks[m])

    return JacobianCache(blocks=blocks, num_outputs=K, instances=instances)


@dataclass(frozen=True)
class GNContext:
    network: object
    C: float
    lam: float
    cache: ForwardCache
    jacobian: JacobianCache

    @property
    def size(self) -> int:
        return self.cache.size

    def with_damping(self, lam: float) -> "GNContext":
        return replace(self, lam=lam)


def _split_block(layer, block: np.ndarray, K: int, instances: int) -> np.ndarray:
    """(rows, P K |S|) → (rows·P, K, |S|)"""
    return np.reshape(block, (layer.rows * layer.positions, K, instances), order="F")


def _check_length(network, v: np.ndarray, what: str):
    if v.ndim != 1 or v.size != network.num_params:
        raise ShapeMismatchError(f"{what} has {v.size} entries, network has {network.num_params} parameters")


def jv(context: GNContext, v) -> np.ndarray:
    """J v: 인스턴스마다 n_{L+1}개씩 쌓은 벡터 (출력 좌표가 안쪽)"""
    network = context.network
    v = as_flat(v)
    _check_length(network, v, "v")
    K, instances = context.jacobian.num_outputs, context.size

    out = np.zeros((K, instances))
    for m, layer in enumerate(network.layers):
        columns = layer.input_columns(context.cache.Z[m])
        P = network.weights(v, m) @ columns + network.bias(v, m)[:, None]
        P = np.reshape(P, (layer.rows * layer.positions, instances), order="F")
        out += np.einsum("rks,rs->ks", _split_block(layer, context.jacobian.blocks[m], K, instances), P)
    return out.ravel(order="F")


def apply_B(q: np.ndarray) -> np.ndarray:
    """제곱 손실의 B = 2I"""
    return 2.0 * q


def jtq(context: GNContext, q: np.ndarray) -> np.ndarray:
    """Jᵀ q: 층마다 u = Σ_k q_k ∂z_k/∂vec(S) 후 u [φᵀ 1]"""
    network = context.network
    K, instances = context.jacobian.num_outputs, context.size
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.size != K * instances:
        raise ShapeMismatchError(f"q has {q.size} entries, expected {K * instances}")
    Q = np.reshape(q, (K, instances), order="F")

    blocks = []
    for m, layer in enumerate(network.layers):
        U = np.einsum("rks,ks->rs", _split_block(layer, context.jacobian.blocks[m], K, instances), Q)
        U = np.reshape(U, (layer.rows, -1), order="F")
        blocks.append(layer.grad_params(U, context.cache.Z[m]))
    return network.layout.pack(blocks)


def gn_matvec(context: GNContext, v) -> np.ndarray:
    """(1/C + λ) v + (1/|S|) Jᵀ B J v"""
    if context.lam < 0:
        raise ValueError(f"damping must be non-negative, got {context.lam}")
    v = as_flat(v)
    return (1.0 / context.C + context.lam) * v + jtq(context, apply_B(jv(context, v))) / context.size


def assemble_jacobian(context: GNContext) -> np.ndarray:
    """
    J 전체를 (n_{L+1}|S|) × n 행렬로 조립 (검증용, 작은 네트워크만)

    행 u + K i, 층 m 구간은 vec(∂z_u^i/∂S^{m,i} [φ(pad(Z^{m,i}))ᵀ 1]).
    """
    network = context.network
    K, instances = context.jacobian.num_outputs, context.size
    J = np.zeros((K * instances, network.num_params))

    for m, layer in enumerate(network.layers):
        columns = layer.input_columns(context.cache.Z[m])
        augmented = np.vstack([columns, np.ones((1, columns.shape[1]))])
        augmented = np.reshape(augmented, (augmented.shape[0], layer.positions, instances), order="F")
        block = np.reshape(context.jacobian.blocks[m], (layer.rows, layer.positions, K, instances), order="F")
        # (K, |S|, fan_in + 1, rows) → vec의 column-major 순서
        per_output = np.einsum("rpks,fps->ksfr", block, augmented)
        per_output = per_output.transpose(1, 0, 2, 3).reshape(K * instances, -1)
        seg = network.layout.segments[m]
        J[:, seg.offset:seg.end] = per_output
    return J
