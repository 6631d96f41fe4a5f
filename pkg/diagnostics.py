"""
Diagnostics
구현 검증용 오라클 모음 (check 명령과 테스트에서 사용)

    - 중심 차분 기울기 / Jacobian 검사
    - ⟨Jv, q⟩ = ⟨v, Jᵀq⟩ 수반 관계
    - gn_matvec 대 명시적 (1/C + λ)I + (2/|S|)JᵀJ
    - 인덱스 맵 대 scipy.sparse 선택 행렬 / 반복문 구현
    - max pooling 예제와 P_pool 경로

상대 오차는 |a − b| / max(|a|, |b|, 1) 로 잰다 (값이 작은 좌표는 절대 오차).
"""

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp

from backward_grad import conv_backprop_S, function_and_gradient
from data_io import Dataset, RawData, preprocess, to_stacked
from forward_eval import conv_forward, evaluate, forward, make_plan, maxpool, relu
from gauss_newton import GNContext, assemble_jacobian, build_jacobian_cache, gn_matvec, jtq, jv
from index_maps import (PadIndex, PhiIndex, PoolArgmax, accumulate_by_index, build_pad_index,
                        build_phi_index, gather, instance_vectors, pad, pool_partition_index)
from model_config import init_params

GRADIENT_TOL = 1e-6
OPERATOR_TOL = 1e-10

# 3×3 이미지를 가운데 둔 5×5 padding 결과의 0/1 그림 (행 = 이미지 행)
PAD_MASK_EXAMPLE = np.array([
    [0, 0, 0, 0, 0],
    [0, 1, 1, 1, 0],
    [0, 1, 1, 1, 0],
    [0, 1, 1, 1, 0],
    [0, 0, 0, 0, 0],
])

POOL_EXAMPLE_A = np.array([[2, 3, 6, 8], [5, 4, 9, 7], [1, 2, 6, 0], [4, 3, 2, 1]], dtype=np.float64)
POOL_EXAMPLE_B = np.array([[3, 2, 3, 6], [4, 5, 4, 9], [2, 1, 2, 6], [3, 4, 3, 2]], dtype=np.float64)
POOL_EXAMPLE_RESULT = np.array([[5, 9], [4, 6]], dtype=np.float64)


@dataclass
class CheckResult:
    name: str
    passed: bool
    error: float = 0.0
    tolerance: float = 0.0
    detail: str = ""

    def format(self) -> str:
        mark = "✓ PASS" if self.passed else "✗ FAIL"
        measured = f" (error {self.error:.3e}, tol {self.tolerance:.0e})" if self.tolerance else ""
        detail = f" - {self.detail}" if self.detail else ""
        return f"  {mark}  {self.name}{measured}{detail}"


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b) / scale))


def synthetic_dataset(dims, num_classes: int, size: int, seed: int = 0) -> Dataset:
    """라벨이 i mod K인 무작위 이미지 (전처리까지 마친 상태)"""
    rng = np.random.default_rng(seed)
    a, b, d = dims
    images = rng.uniform(0.0, 255.0, size=(size, a, b, d))
    labels = np.arange(size, dtype=np.int64) % num_classes
    return preprocess(RawData(images, labels, num_classes))


# ---------------------------------------------------------------------------
# RELU 꺾임점에서 떨어진 θ
# ---------------------------------------------------------------------------

def kink_margin(network, theta: np.ndarray, images: np.ndarray) -> float:
    """
    은닉층 s의 최소 |s|와 pooling 영역 1, 2위 값의 최소 차이 중 작은 값

    pooling 최댓값이 0 이하인 영역은 기울기가 0이므로 차이를 보지 않는다.
    """
    margin = np.inf
    Z = images
    for m, layer in enumerate(network.layers):
        W, b = network.weights(theta, m), network.bias(theta, m)
        S = W @ layer.input_columns(Z) + b[:, None]
        if layer.is_last:
            break
        if S.size:
            margin = min(margin, float(np.min(np.abs(S))))
        Z = relu(S)
        if layer.kind == "fc":
            continue
        if layer.partition is not None:
            partition = layer.partition
            window = partition.h * partition.h
            regions = instance_vectors(Z, partition.input_volume)[partition.indices, :]
            regions = np.sort(np.reshape(regions, (window, -1), order="F"), axis=0)
            if window > 1:
                top, second = regions[-1], regions[-2]
                gaps = (top - second)[top > 0]
                if gaps.size:
                    margin = min(margin, float(gaps.min()))
            Z, _ = maxpool(Z, partition)
    return margin


def sample_params_away_from_kinks(network, dataset: Dataset, seed: int = 0,
                                  margin: float = 1e-4, max_tries: int = 200) -> np.ndarray:
    """He 초기화를 다시 뽑아 모든 꺾임점에서 margin 이상 떨어진 θ를 찾는다"""
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        theta = init_params(network.config, int(rng.integers(2 ** 31))).data
        # 편향도 0이 아닌 값으로 (동점 pooling 영역을 피한다)
        for m in range(len(network.layers)):
            bias = network.bias(theta, m)
            bias[:] = rng.normal(0.0, 0.1, size=bias.size)
        if kink_margin(network, theta, dataset.images) >= margin:
            return theta
    raise RuntimeError(f"no parameter sample with kink margin >= {margin} after {max_tries} tries")


# ---------------------------------------------------------------------------
# 중심 차분
# ---------------------------------------------------------------------------

def finite_difference_gradient(fun: Callable[[np.ndarray], float], theta: np.ndarray,
                               eps: float = 1e-6, coords: Optional[np.ndarray] = None) -> np.ndarray:
    coords = np.arange(theta.size) if coords is None else coords
    out = np.zeros(len(coords))
    probe = theta.copy()
    for k, j in enumerate(coords):
        probe[j] = theta[j] + eps
        f_plus = fun(probe)
        probe[j] = theta[j] - eps
        f_minus = fun(probe)
        probe[j] = theta[j]
        out[k] = (f_plus - f_minus) / (2.0 * eps)
    return out


def finite_difference_jacobian(network, theta: np.ndarray, images: np.ndarray,
                               eps: float = 1e-6, coords: Optional[np.ndarray] = None) -> np.ndarray:
    """∂vec(z^{L+1})/∂θ_j, 행 u + K i"""
    coords = np.arange(theta.size) if coords is None else coords
    probe = theta.copy()
    columns = []
    for j in coords:
        probe[j] = theta[j] + eps
        z_plus = forward(network, probe, images).outputs
        probe[j] = theta[j] - eps
        z_minus = forward(network, probe, images).outputs
        probe[j] = theta[j]
        columns.append(((z_plus - z_minus) / (2.0 * eps)).ravel(order="F"))
    return np.stack(columns, axis=1)


def _coords(n: int, max_coords: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if max_coords is None or n <= max_coords:
        return np.arange(n)
    return np.sort(rng.choice(n, size=max_coords, replace=False))


def check_gradient(network, dataset: Dataset, C: float, theta: np.ndarray,
                   eps: float = 1e-6, tol: float = GRADIENT_TOL,
                   gradient_fn: Optional[Callable] = None,
                   max_coords: Optional[int] = None, seed: int = 0) -> CheckResult:
    """
    ∇f 대 f의 중심 차분

    gradient_fn(network, θ, dataset, C, plan) -> ∇f 로 검사 대상을 바꿀 수 있다.
    """
    plan = make_plan(dataset.size, dataset.size)
    if gradient_fn is None:
        grad = function_and_gradient(network, theta, dataset, C, plan).grad
    else:
        grad = gradient_fn(network, theta, dataset, C, plan)

    coords = _coords(theta.size, max_coords, np.random.default_rng(seed))
    numeric = finite_difference_gradient(lambda t: evaluate(network, t, dataset, C, plan).f,
                                         theta, eps, coords)
    error = relative_error(grad[coords], numeric)
    return CheckResult("gradient vs central differences", error <= tol, error, tol,
                       f"{coords.size} of {theta.size} coordinates")


def hessian_context(network, theta: np.ndarray, dataset: Dataset, C: float, lam: float,
                    subset: Optional[np.ndarray] = None) -> GNContext:
    subset = np.arange(dataset.size) if subset is None else np.asarray(subset, dtype=np.int64)
    plan = make_plan(dataset.size, dataset.size, subset)
    cache = evaluate(network, theta, dataset, C, plan, retain_hessian_subset=True).cache
    return GNContext(network=network, C=C, lam=lam, cache=cache,
                     jacobian=build_jacobian_cache(network, theta, cache))


def check_jacobian(context: GNContext, theta: np.ndarray, dataset: Dataset,
                   eps: float = 1e-6, tol: float = GRADIENT_TOL,
                   max_coords: Optional[int] = None, seed: int = 0) -> CheckResult:
    J = assemble_jacobian(context)
    images, _ = dataset.batch(context.cache.instances)
    coords = _coords(theta.size, max_coords, np.random.default_rng(seed))
    numeric = finite_difference_jacobian(context.network, theta, images, eps, coords)
    error = relative_error(J[:, coords], numeric)
    return CheckResult("Jacobian vs central differences", error <= tol, error, tol,
                       f"{J.shape[0]} x {coords.size} entries")


def check_adjoint(context: GNContext, pairs: int = 100, tol: float = OPERATOR_TOL,
                  seed: int = 0) -> CheckResult:
    """|⟨Jv, q⟩ − ⟨v, Jᵀq⟩| / (‖Jv‖‖q‖)"""
    rng = np.random.default_rng(seed)
    n = context.network.num_params
    rows = context.jacobian.num_outputs * context.size
    worst = 0.0
    for _ in range(pairs):
        v = rng.standard_normal(n)
        q = rng.standard_normal(rows)
        Jv = jv(context, v)
        left, right = float(Jv @ q), float(v @ jtq(context, q))
        scale = max(np.linalg.norm(Jv) * np.linalg.norm(q), np.finfo(float).tiny)
        worst = max(worst, abs(left - right) / scale)
    return CheckResult("adjointness <Jv,q> = <v,J^T q>", worst <= tol, worst, tol, f"{pairs} random pairs")


def check_gauss_newton(context: GNContext, vectors: int = 20, tol: float = OPERATOR_TOL,
                       seed: int = 0) -> CheckResult:
    """gn_matvec 대 조립한 (1/C + λ)I + (2/|S|) JᵀJ"""
    rng = np.random.default_rng(seed)
    J = assemble_jacobian(context)
    n = J.shape[1]
    G = (1.0 / context.C + context.lam) * np.eye(n) + (2.0 / context.size) * (J.T @ J)
    worst = 0.0
    for _ in range(vectors):
        v = rng.standard_normal(n)
        expected = G @ v
        worst = max(worst, float(np.linalg.norm(gn_matvec(context, v) - expected) / np.linalg.norm(expected)))
    return CheckResult("gn_matvec vs explicit Gauss-Newton", worst <= tol, worst, tol, f"{vectors} vectors")


def check_gradient_from_jacobian(network, theta: np.ndarray, dataset: Dataset, C: float,
                                 tol: float = OPERATOR_TOL) -> CheckResult:
    """S = 전체일 때 θ/C + (1/l) Jᵀ 2(z − y) 가 ∇f 와 같다"""
    context = hessian_context(network, theta, dataset, C, 0.0)
    Y = dataset.labels[:, context.cache.instances]
    q = (2.0 * (context.cache.outputs - Y)).ravel(order="F")
    via_jacobian = theta / C + jtq(context, q) / dataset.size
    grad = function_and_gradient(network, theta, dataset, C, make_plan(dataset.size, dataset.size)).grad
    error = float(np.linalg.norm(via_jacobian - grad) / max(np.linalg.norm(grad), 1.0))
    return CheckResult("gradient = J^T dxi/dz consistency", error <= tol, error, tol)


# ---------------------------------------------------------------------------
# 인덱스 맵 오라클
# ---------------------------------------------------------------------------

def phi_selector(phi: PhiIndex) -> sp.csr_matrix:
    """vec(φ(Z)) = P_φ vec(Z) 인 0/1 행렬"""
    rows = np.arange(phi.indices.size)
    return sp.csr_matrix((np.ones(rows.size), (rows, phi.indices)),
                         shape=(phi.indices.size, phi.input_volume))


def pad_selector(pad_index: PadIndex) -> sp.csr_matrix:
    """vec(pad(Z)) = P_pad vec(Z)"""
    cols = np.arange(pad_index.indices.size)
    return sp.csr_matrix((np.ones(cols.size), (pad_index.indices, cols)),
                         shape=(pad_index.padded_volume, pad_index.input_volume))


def pool_selector(pool_argmax: PoolArgmax, instance: int) -> sp.csr_matrix:
    """인스턴스 하나의 P_pool: vec(Z^{m+1,i}) = P_pool vec(σ(S^{m,i}))"""
    chosen = pool_argmax.indices[:, instance]
    rows = np.arange(chosen.size)
    return sp.csr_matrix((np.ones(rows.size), (rows, chosen)),
                         shape=(chosen.size, pool_argmax.conv_volume))


def brute_force_phi(image: np.ndarray, h: int, s: int) -> np.ndarray:
    """image (a, b, d) → φ 결과 (h h d) × (a_out b_out), 행 p + h q + h h j / 열 x + a_out y"""
    a_in, b_in, d = image.shape
    a_out = (a_in - h) // s + 1
    b_out = (b_in - h) // s + 1
    out = np.zeros((h * h * d, a_out * b_out))
    for y in range(b_out):
        for x in range(a_out):
            for j in range(d):
                for q in range(h):
                    for p in range(h):
                        out[p + h * q + h * h * j, x + a_out * y] = image[x * s + p, y * s + q, j]
    return out


def brute_force_pad(image: np.ndarray, pad_size: int) -> np.ndarray:
    a_in, b_in, d = image.shape
    out = np.zeros((a_in + 2 * pad_size, b_in + 2 * pad_size, d))
    out[pad_size:pad_size + a_in, pad_size:pad_size + b_in, :] = image
    return out


def _stack_one(image: np.ndarray) -> np.ndarray:
    return to_stacked(image[None, ...])


def check_index_examples() -> List[CheckResult]:
    results = []

    phi = build_phi_index(3, 2, 1, 2, 1)
    expected = np.array([1, 2, 4, 5, 2, 3, 5, 6])
    found = phi.one_based()
    results.append(CheckResult("phi index 3x2 image, 2x2 filter", bool(np.array_equal(found, expected)),
                               detail=f"{found.tolist()}"))

    pad_index = build_pad_index(3, 3, 1, 1)
    from_mask = np.flatnonzero(PAD_MASK_EXAMPLE.ravel(order="F")) + 1
    found = pad_index.one_based()
    results.append(CheckResult("pad index 3x3 in 5x5 (positions read off the 0/1 mask)",
                               bool(np.array_equal(found, from_mask)), detail=f"{found.tolist()}"))

    partition = pool_partition_index(4, 4, 1, 2)
    pooled = []
    for image in (POOL_EXAMPLE_A, POOL_EXAMPLE_B):
        z_out, _ = maxpool(_stack_one(image[:, :, None]), partition)
        pooled.append(np.reshape(z_out, (2, 2), order="F"))
    same = all(np.array_equal(p, POOL_EXAMPLE_RESULT) for p in pooled)
    results.append(CheckResult("2x2 max pooling of shifted images", same,
                               detail=f"{pooled[0].tolist()} / {pooled[1].tolist()}"))
    return results


def check_index_maps_random(configs: int = 50, seed: int = 0) -> CheckResult:
    """
    무작위 모양에서 gather/pad/accumulate 대 반복문 구현과 sparse 행렬

    값은 작은 정수라 누적 순서가 달라도 정확히 같아야 한다.
    """
    rng = np.random.default_rng(seed)
    failures = []
    for trial in range(configs):
        a_in, b_in = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        d = int(rng.integers(1, 4))
        pad_size = int(rng.integers(0, 3))
        h = int(rng.integers(1, min(a_in, b_in) + 2 * pad_size + 1))
        s = int(rng.integers(1, 4))
        instances = int(rng.integers(1, 4))

        images = rng.integers(-9, 10, size=(instances, a_in, b_in, d)).astype(np.float64)
        pad_index = build_pad_index(a_in, b_in, d, pad_size)
        phi = build_phi_index(pad_index.a_pad, pad_index.b_pad, d, h, s)

        gathered = gather(phi, pad(to_stacked(images), pad_index))
        P_phi, P_pad = phi_selector(phi), pad_selector(pad_index)
        block = phi.columns
        for i in range(instances):
            expected = brute_force_phi(brute_force_pad(images[i], pad_size), h, s)
            found = gathered[:, i * block:(i + 1) * block]
            vec_z = _stack_one(images[i]).ravel(order="F")
            via_sparse = (P_phi @ (P_pad @ vec_z)).reshape((phi.rows, block), order="F")
            if not (np.array_equal(found, expected) and np.array_equal(found, via_sparse)):
                failures.append(trial)
                break

        values = rng.integers(-9, 10, size=phi.indices.size).astype(np.float64)
        if not np.array_equal(accumulate_by_index(values, phi.indices, phi.input_volume), P_phi.T @ values):
            failures.append(trial)

    detail = f"{configs} shapes" if not failures else f"failed shapes {sorted(set(failures))}"
    return CheckResult("gather/pad/accumulate vs sparse and loop oracles", not failures, detail=detail)


def check_pooling_path(network, theta: np.ndarray, dataset: Dataset, seed: int = 0) -> CheckResult:
    """
    pooling이 있는 conv 층마다 명시적 P_pool로 순전파와 역전파를 다시 계산
    """
    cache = forward(network, theta, dataset.images)
    rng = np.random.default_rng(seed)
    error = 0.0
    checked = 0
    for m, layer in enumerate(network.layers):
        if layer.kind != "conv" or layer.partition is None:
            continue
        checked += 1
        argmax = cache.pool_argmax[m]
        S = conv_forward(network.weights(theta, m), network.bias(theta, m), layer.input_columns(cache.Z[m]))
        sigma = instance_vectors(layer.activate(S), argmax.conv_volume)
        pooled = instance_vectors(cache.Z[m + 1], argmax.indices.shape[0])
        upstream = rng.standard_normal(cache.Z[m + 1].shape)
        scattered = instance_vectors(
            conv_backprop_S(upstream, cache.Z[m + 1], argmax, cache.size), argmax.conv_volume)
        mask = instance_vectors((cache.Z[m + 1] > 0).astype(np.float64), argmax.indices.shape[0])
        upstream_vectors = instance_vectors(upstream, argmax.indices.shape[0])
        for i in range(cache.size):
            P = pool_selector(argmax, i)
            error = max(error, float(np.max(np.abs(P @ sigma[:, i] - pooled[:, i]))))
            expected = P.T @ (upstream_vectors[:, i] * mask[:, i])
            error = max(error, float(np.max(np.abs(scattered[:, i] - expected))))
    return CheckResult("pooling via explicit P_pool", error == 0.0, error,
                       detail=f"{checked} pooling layers")


# ---------------------------------------------------------------------------
# 전체 묶음
# ---------------------------------------------------------------------------

def run_checks(network, dataset: Dataset, C: float, lam: float = 1.0, seed: int = 0,
               gradient_fn: Optional[Callable] = None,
               max_coords: Optional[int] = 200, margin: float = 1e-4) -> List[CheckResult]:
    """check 명령이 실행하는 전체 검사"""
    results = check_index_examples()
    results.append(check_index_maps_random(seed=seed))

    theta = sample_params_away_from_kinks(network, dataset, seed, margin)
    results.append(check_gradient(network, dataset, C, theta, gradient_fn=gradient_fn,
                                  max_coords=max_coords, seed=seed))
    results.append(check_pooling_path(network, theta, dataset, seed))

    context = hessian_context(network, theta, dataset, C, lam)
    results.append(check_jacobian(context, theta, dataset, max_coords=max_coords, seed=seed))
    results.append(check_adjoint(context, seed=seed))
    if network.num_params <= 5000:
        results.append(check_gauss_newton(context, seed=seed))
    results.append(check_gradient_from_jacobian(network, theta, dataset, C))
    return results


def format_report(results: List[CheckResult]) -> str:
    passed = sum(result.passed for result in results)
    lines = [result.format() for result in results]
    lines.append(f"\n📊 {passed}/{len(results)} checks passed")
    return "\n".join(lines)
