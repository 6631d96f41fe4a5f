"""
Newton Solver
부분 표본 Gauss-Newton 행렬을 쓰는 Newton-CG 학습

매 반복:
    1. S_k 추출 (비복원, 시드 고정)
    2. 미니배치로 f, ∇f 계산 (S_k = 마지막 미니배치 S_R, 캐시 유지)
    3. S_k에서 Jacobian 캐시 생성
    4. CG로 (G^S + λI) d = −∇f 풀기
    5. backtracking line search (α = 1, 1/2, 1/4, ...)
    6. ρ로 Levenberg-Marquardt λ 갱신
"""

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from backward_grad import function_and_gradient
from data_io import Dataset, accuracy
from forward_eval import evaluate, make_plan, predict
from gauss_newton import GNContext, build_jacobian_cache, gn_matvec
from resources import batch_size_for_budget

LOG_COLUMNS = ["iter", "f", "train_acc", "test_acc", "lambda", "cg_iters", "alpha", "seconds"]


class NumericalError(RuntimeError):
    """NaN/Inf 등 수치 오류로 학습 중단"""

    def __init__(self, message: str, state: Optional["NewtonState"] = None):
        super().__init__(message)
        self.state = state


class NegativeCurvatureError(NumericalError):
    """CG 연산자가 양의 정부호가 아님 (구현 버그)"""
    pass


class LineSearchFailed(NumericalError):
    """α가 하한보다 작아질 때까지 충분 감소 조건을 만족하지 못함"""
    pass


@dataclass
class SolverConfig:
    max_newton_iters: int = 100
    cg_tol: float = 0.1
    cg_max: int = 250
    eta: float = 1e-4
    lambda_init: float = 1.0
    drop: float = 2.0 / 3.0
    boost: float = 1.5
    rho_upper: float = 0.75
    rho_lower: float = 0.25
    sampling_rate: float = 0.05
    C: Optional[float] = None
    c_factor: float = 0.01
    seed: int = 0
    alpha_floor: float = 2.0 ** -20
    lambda_min: float = 1e-10
    lambda_max: float = 1e10
    rho_with_lambda: bool = False
    batch_size: Optional[int] = None
    memory_budget_mb: float = 1024.0

    def validate(self):
        if self.max_newton_iters < 0:
            raise ValueError(f"max_newton_iters must be >= 0, got {self.max_newton_iters}")
        if not 0 < self.cg_tol < 1:
            raise ValueError(f"cg_tol must be in (0, 1), got {self.cg_tol}")
        if self.cg_max < 1:
            raise ValueError(f"cg_max must be >= 1, got {self.cg_max}")
        if not 0 < self.eta < 1:
            raise ValueError(f"eta must be in (0, 1), got {self.eta}")
        if not 0 < self.drop < 1 < self.boost:
            raise ValueError(f"need 0 < drop < 1 < boost, got drop={self.drop}, boost={self.boost}")
        if not 0 < self.rho_lower < self.rho_upper < 1:
            raise ValueError(f"need 0 < rho_lower < rho_upper < 1, got {self.rho_lower}, {self.rho_upper}")
        if not 0 < self.sampling_rate <= 1:
            raise ValueError(f"sampling_rate must be in (0, 1], got {self.sampling_rate}")
        if self.C is not None and self.C <= 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if not 0 < self.lambda_min <= self.lambda_init <= self.lambda_max:
            raise ValueError("lambda_init must lie inside [lambda_min, lambda_max]")
        if not 0 < self.alpha_floor < 1:
            raise ValueError(f"alpha_floor must be in (0, 1), got {self.alpha_floor}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    def regularization(self, l: int) -> float:
        """C (기본값 0.01·l)"""
        return self.C if self.C is not None else self.c_factor * l

    def subset_size(self, l: int) -> int:
        return min(l, max(1, math.ceil(self.sampling_rate * l)))


@dataclass
class NewtonState:
    """
    iteration 번째 반복이 끝난 뒤의 상태

    lam은 다음 반복에서 쓸 λ_{k+1}.
    """

    iteration: int
    theta: np.ndarray
    f: float
    lam: float
    rho: float = float("nan")
    cg_iters: int = 0
    ls_steps: int = 0
    alpha: float = 0.0
    seconds: float = 0.0
    train_acc: float = float("nan")
    test_acc: float = float("nan")


@dataclass
class CGResult:
    d: np.ndarray
    iterations: int
    residual: float


@dataclass
class LineSearchResult:
    alpha: float
    f: float
    steps: int


@dataclass
class TrainingResult:
    theta: np.ndarray
    log: List[Dict] = field(default_factory=list)
    state: Optional[NewtonState] = None
    status: str = "completed"


def cg_solve(matvec: Callable[[np.ndarray], np.ndarray], g: np.ndarray,
             sigma: float, cg_max: int) -> CGResult:
    """
    d₀ = 0에서 시작하는 CG로 A d = −g 풀기

    ‖A d + g‖ ≤ σ‖g‖ 이거나 cg_max번 반복하면 멈춘다.
    """
    g = np.asarray(g, dtype=np.float64)
    d = np.zeros_like(g)
    r = -g.copy()
    p = r.copy()
    rs = float(r @ r)
    tolerance = sigma * math.sqrt(rs)

    if not math.isfinite(rs):
        raise NumericalError("gradient contains non-finite values")

    iterations = 0
    while math.sqrt(rs) > tolerance and iterations < cg_max:
        Ap = matvec(p)
        curvature = float(p @ Ap)
        if not math.isfinite(curvature):
            raise NumericalError(f"non-finite curvature at CG iteration {iterations + 1}")
        if curvature <= 0:
            raise NegativeCurvatureError(
                f"operator not positive definite: <p, Ap> = {curvature:.3e} at CG iteration {iterations + 1}")
        step = rs / curvature
        d += step * p
        r -= step * Ap
        rs_next = float(r @ r)
        iterations += 1
        p = r + (rs_next / rs) * p
        rs = rs_next

    return CGResult(d=d, iterations=iterations, residual=math.sqrt(rs))


def line_search(fun: Callable[[np.ndarray], float], theta: np.ndarray, d: np.ndarray,
                f: float, gtd: float, eta: float, alpha_floor: float) -> LineSearchResult:
    """f(θ + αd) ≤ f(θ) + ηα∇fᵀd 를 만족하는 가장 큰 α ∈ {1, 1/2, ...}"""
    if not gtd < 0:
        raise ValueError(f"not a descent direction: grad^T d = {gtd}")

    alpha = 1.0
    steps = 0
    while alpha >= alpha_floor:
        steps += 1
        f_new = fun(theta + alpha * d)
        if f_new <= f + eta * alpha * gtd:
            return LineSearchResult(alpha=alpha, f=f_new, steps=steps)
        alpha /= 2.0

    raise LineSearchFailed(f"line search failed: alpha fell below {alpha_floor:g} after {steps} steps")


def lm_update(lam: float, rho: float, config: SolverConfig) -> float:
    if rho > config.rho_upper:
        lam = lam * config.drop
    elif rho < config.rho_lower:
        lam = lam * config.boost
    return min(max(lam, config.lambda_min), config.lambda_max)


def predicted_reduction(g: np.ndarray, d: np.ndarray, matvec: Callable[[np.ndarray], np.ndarray]) -> float:
    """∇fᵀd + ½ dᵀ G d"""
    return float(g @ d + 0.5 * (d @ matvec(d)))


def sample_subset(rng: np.random.Generator, l: int, size: int) -> np.ndarray:
    return np.sort(rng.choice(l, size=size, replace=False))


def _batch_size(network, config: SolverConfig, subset_size: int) -> int:
    if config.batch_size is not None:
        return config.batch_size
    return max(1, min(subset_size, batch_size_for_budget(network.config, config.memory_budget_mb)))


def prediction_batch_size(network, config: SolverConfig) -> int:
    """예측용 미니배치 크기. 학습 중 로그와 eval 명령이 같은 값을 써야 정확도가 일치한다"""
    if config.batch_size is not None:
        return config.batch_size
    return batch_size_for_budget(network.config, config.memory_budget_mb)


def newton_train(network, train: Dataset, config: SolverConfig,
                 test: Optional[Dataset] = None,
                 theta0: Optional[np.ndarray] = None,
                 resume: Optional[NewtonState] = None,
                 rng_state: Optional[dict] = None,
                 callback: Optional[Callable] = None,
                 record_time: bool = True,
                 verbose: bool = True) -> TrainingResult:
    """
    Newton-CG 학습

    callback(state, row, rng)는 반복마다 호출된다 (로그, 체크포인트 기록용).
    LineSearchFailed/NumericalError는 마지막으로 받아들인 상태를 e.state에 담아 올린다.
    """
    config.validate()
    l = train.size
    C = config.regularization(l)
    subset_size = config.subset_size(l)
    batch_size = _batch_size(network, config, subset_size)
    full_plan = make_plan(l, batch_size)

    rng = np.random.default_rng(config.seed)
    if rng_state is not None:
        rng.bit_generator.state = rng_state

    if resume is not None:
        theta = resume.theta.copy()
        f, lam = resume.f, resume.lam
        start = resume.iteration + 1
        state = resume
    else:
        theta = network.init_params(config.seed).data if theta0 is None else np.array(theta0, dtype=np.float64)
        f = evaluate(network, theta, train, C, full_plan).f
        lam = config.lambda_init
        start = 1
        state = NewtonState(iteration=0, theta=theta.copy(), f=f, lam=lam)
    if not math.isfinite(f):
        raise NumericalError(f"initial objective is not finite ({f})", state)

    if verbose:
        print(f"  l={l}, C={C:g}, |S|={subset_size}, mini-batch={batch_size}, n={network.num_params:,}")

    log = []
    status = "completed"
    for k in range(start, config.max_newton_iters + 1):
        started = time.perf_counter()
        subset = sample_subset(rng, l, subset_size)
        plan = make_plan(l, batch_size, subset)

        result = function_and_gradient(network, theta, train, C, plan)
        g = result.grad
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"iteration {k}: gradient is not finite", state)
        if not np.any(g):
            status = "converged"
            if verbose:
                print(f"  ✓ gradient is zero at iteration {k}, stopping")
            break

        context = GNContext(network=network, C=C, lam=lam, cache=result.cache,
                            jacobian=build_jacobian_cache(network, theta, result.cache))
        cg = cg_solve(lambda v: gn_matvec(context, v), g, config.cg_tol, config.cg_max)

        accepted = {}

        def trial_objective(trial: np.ndarray) -> float:
            evaluation = evaluate(network, trial, train, C, full_plan)
            accepted["evaluation"] = evaluation
            return evaluation.f

        try:
            search = line_search(trial_objective, theta, cg.d, f, float(g @ cg.d),
                                 config.eta, config.alpha_floor)
        except LineSearchFailed as e:
            e.state = state
            raise

        step = search.alpha * cg.d
        rho_context = context if config.rho_with_lambda else context.with_damping(0.0)
        predicted = predicted_reduction(g, step, lambda v: gn_matvec(rho_context, v))
        rho = (search.f - f) / predicted
        if not math.isfinite(search.f) or search.f > f:
            raise NumericalError(f"iteration {k}: objective increased from {f} to {search.f}", state)

        lam_used = lam
        lam = lm_update(lam, rho, config)
        theta = theta + step
        f = search.f

        train_acc = accepted["evaluation"].accuracy
        test_acc = float("nan")
        if test is not None:
            test_acc = accuracy(predict(network, theta, test.images, prediction_batch_size(network, config)),
                                test.label_ids)
        seconds = time.perf_counter() - started if record_time else 0.0

        state = NewtonState(iteration=k, theta=theta, f=f, lam=lam, rho=rho,
                            cg_iters=cg.iterations, ls_steps=search.steps, alpha=search.alpha,
                            seconds=seconds, train_acc=train_acc, test_acc=test_acc)
        row = {"iter": k, "f": f, "train_acc": train_acc, "test_acc": test_acc,
               "lambda": lam_used, "cg_iters": cg.iterations, "alpha": search.alpha,
               "seconds": seconds}
        log.append(row)

        if verbose:
            test_part = f" | test {test_acc:.4f}" if test is not None else ""
            print(f"  [{k}/{config.max_newton_iters}] f={f:.6e} | λ={lam_used:.3e} | "
                  f"CG {cg.iterations} | α={search.alpha:g} | train {train_acc:.4f}{test_part}")
        if callback is not None:
            callback(state, row, rng)

    return TrainingResult(theta=theta, log=log, state=state, status=status)
