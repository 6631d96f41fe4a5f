"""
Newton CNN Trainer - 통합 CLI

부분 표본 Gauss-Newton 행렬을 쓰는 Newton-CG 방법으로 CNN 학습 / 검증 / 평가

사용법:
    python newton_trainer.py train --config configs/mnist_3layer.txt \\
        --train-data train-images-idx3-ubyte train-labels-idx1-ubyte \\
        --test-data t10k-images-idx3-ubyte t10k-labels-idx1-ubyte \\
        --train-subset 0.0833 --test-subset 0.1 --iters 20 --out runs/mnist
    python newton_trainer.py train ... --resume runs/mnist/checkpoint.bin   # 이어서 학습
    python newton_trainer.py check --config configs/tiny_cnn.txt            # 오라클 검사
    python newton_trainer.py eval --config configs/mnist_3layer.txt --model runs/mnist/model.bin --test-data ...
    python newton_trainer.py resources --config configs/mnist_3layer.txt --instances 60000

종료 코드: 0 성공, 1 수치 오류로 중단 (check는 실패한 검사가 있을 때), 2 사용법/입출력 오류
"""

import os
import sys

from dotenv import load_dotenv

# 환경 변수 로드
load_dotenv()

THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def configure_threads(argv) -> None:
    """numpy를 불러오기 전에 BLAS 스레드 수 고정 (--reproducible이면 1)"""
    threads = "1" if "--reproducible" in argv else os.environ.get("NEWTON_CNN_THREADS")
    if threads:
        for variable in THREAD_VARIABLES:
            os.environ[variable] = threads


configure_threads(sys.argv[1:])

import argparse  # noqa: E402
from dataclasses import asdict, dataclass, field  # noqa: E402
from typing import List, Optional, Tuple  # noqa: E402

import numpy as np  # noqa: E402

from backward_grad import function_and_gradient  # noqa: E402
from data_io import (DataFormatError, Dataset, accuracy, load_raw, preprocess,  # noqa: E402
                     stratified_subset)
from database import TrainingDatabase  # noqa: E402
from diagnostics import format_report, run_checks, synthetic_dataset  # noqa: E402
from forward_eval import predict  # noqa: E402
from model_config import format_config, load_config  # noqa: E402
from network import Network  # noqa: E402
from newton_solver import (NewtonState, NumericalError, SolverConfig, newton_train,  # noqa: E402
                           prediction_batch_size)
from resources import batch_size_for_budget, estimate_resources, format_resources  # noqa: E402
from run_log import (Checkpoint, IterationLog, check_compatible, load_checkpoint,  # noqa: E402
                     load_model, save_checkpoint)

# 기본 설정
DB_PATH = "newton_runs.db"
OUTPUT_FOLDER = "run_output"
LOG_FILE = "iterations.csv"
CHECKPOINT_FILE = "checkpoint.bin"
MODEL_FILE = "model.bin"
PIXEL_MEAN_FILE = "pixel_mean.npy"

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2


@dataclass
class RunManifest:
    """한 번의 실행에 필요한 모든 입력"""

    command: str
    config_path: str
    train_data: List[str] = field(default_factory=list)
    test_data: List[str] = field(default_factory=list)
    dims: Optional[Tuple[int, int, int]] = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    out_dir: str = OUTPUT_FOLDER
    reproducible: bool = False
    train_subset: float = 1.0
    test_subset: float = 1.0
    resume: Optional[str] = None
    db_path: Optional[str] = None
    model_path: Optional[str] = None
    pixel_mean_path: Optional[str] = None
    instances: int = 5
    quiet: bool = False
    corrupt_gradient: bool = False

    @property
    def seed(self) -> int:
        return self.solver.seed

    def validate(self):
        """참조하는 파일이 모두 있는지 확인"""
        paths = [self.config_path] + self.train_data + self.test_data
        paths += [path for path in (self.resume, self.model_path, self.pixel_mean_path) if path]
        for path in paths:
            if not os.path.exists(path):
                raise FileNotFoundError(f"file not found: {path}")
        for name, fraction in (("--train-subset", self.train_subset), ("--test-subset", self.test_subset)):
            if not 0 < fraction <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {fraction}")
        self.solver.validate()


def parse_dims(text: str) -> Tuple[int, int, int]:
    try:
        a, b, d = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxWxC, got '{text}'")
    if min(a, b, d) < 1:
        raise argparse.ArgumentTypeError(f"dims must be positive, got '{text}'")
    return a, b, d


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Newton CNN Trainer - subsampled Gauss-Newton Newton-CG for convolutional networks'
    )
    commands = parser.add_subparsers(dest='command', required=True)

    train = commands.add_parser('train', help='Train a CNN with the Newton method')
    train.add_argument('--config', required=True, help='Architecture config file')
    train.add_argument('--train-data', nargs='+', required=True,
                       help='One CSV file, or IDX images file followed by IDX labels file')
    train.add_argument('--test-data', nargs='+', default=[], help='Same formats as --train-data')
    train.add_argument('--dims', type=parse_dims, default=None, help='Image dims HxWxC (required for CSV)')
    train.add_argument('--train-subset', type=float, default=1.0, help='Stratified fraction of training data')
    train.add_argument('--test-subset', type=float, default=1.0, help='Stratified fraction of test data')
    train.add_argument('--iters', type=int, default=100, help='Newton iterations (default: 100)')
    train.add_argument('--sample-rate', type=float, default=0.05, help='Gauss-Newton subsampling rate')
    train.add_argument('--cg-max', type=int, default=250, help='Max CG iterations per Newton step')
    train.add_argument('--cg-tol', type=float, default=0.1, help='Relative CG stopping tolerance')
    train.add_argument('--C', type=float, default=None, help='Regularization C (default: 0.01 * l)')
    train.add_argument('--batch-size', type=int, default=None, help='Mini-batch size for f and gradient')
    train.add_argument('--memory-budget-mb', type=float, default=1024.0,
                       help='Memory budget used to size mini-batches (default: 1024)')
    train.add_argument('--seed', type=int, default=0)
    train.add_argument('--out', default=OUTPUT_FOLDER, help=f'Output folder (default: {OUTPUT_FOLDER})')
    train.add_argument('--reproducible', action='store_true',
                       help='Single-threaded kernels and zero timings for bit-identical logs')
    train.add_argument('--rho-with-lambda', action='store_true',
                       help='Include the damping term in the predicted reduction')
    train.add_argument('--resume', default=None, help='Checkpoint file to continue from')
    train.add_argument('--db', default=None, help='Run database path')
    train.add_argument('--quiet', action='store_true')

    check = commands.add_parser('check', help='Run gradient, Jacobian and index-map oracles')
    check.add_argument('--config', default=os.path.join('configs', 'tiny_cnn.txt'))
    check.add_argument('--instances', type=int, default=5, help='Synthetic instances (default: 5)')
    check.add_argument('--C', type=float, default=0.05)
    check.add_argument('--seed', type=int, default=0)
    check.add_argument('--corrupt-gradient', action='store_true', help=argparse.SUPPRESS)

    evaluate = commands.add_parser('eval', help='Evaluate a saved model')
    evaluate.add_argument('--config', required=True)
    evaluate.add_argument('--model', required=True, help='model.bin or checkpoint.bin')
    evaluate.add_argument('--test-data', nargs='+', required=True)
    evaluate.add_argument('--dims', type=parse_dims, default=None)
    evaluate.add_argument('--test-subset', type=float, default=1.0)
    evaluate.add_argument('--pixel-mean', default=None,
                          help=f'Training pixel mean (default: {PIXEL_MEAN_FILE} next to the model)')
    evaluate.add_argument('--batch-size', type=int, default=None)
    evaluate.add_argument('--seed', type=int, default=0)

    resources = commands.add_parser('resources', help='Print memory and cost estimates')
    resources.add_argument('--config', required=True)
    resources.add_argument('--instances', type=int, default=60000, help='Training set size l')
    resources.add_argument('--sample-rate', type=float, default=0.05)
    resources.add_argument('--memory-budget-mb', type=float, default=1024.0)

    return parser


def manifest_from_args(args) -> RunManifest:
    solver = SolverConfig(seed=args.seed) if hasattr(args, 'seed') else SolverConfig()
    manifest = RunManifest(command=args.command, config_path=args.config, solver=solver)

    if args.command == 'train':
        manifest.solver = SolverConfig(
            max_newton_iters=args.iters, cg_tol=args.cg_tol, cg_max=args.cg_max,
            sampling_rate=args.sample_rate, C=args.C, seed=args.seed,
            rho_with_lambda=args.rho_with_lambda, batch_size=args.batch_size,
            memory_budget_mb=args.memory_budget_mb,
        )
        manifest.train_data = args.train_data
        manifest.test_data = args.test_data
        manifest.dims = args.dims
        manifest.train_subset = args.train_subset
        manifest.test_subset = args.test_subset
        manifest.out_dir = args.out
        manifest.reproducible = args.reproducible
        manifest.resume = args.resume
        manifest.db_path = args.db or os.environ.get('NEWTON_CNN_DB') or DB_PATH
        manifest.quiet = args.quiet
    elif args.command == 'check':
        manifest.solver = SolverConfig(C=args.C, seed=args.seed)
        manifest.instances = args.instances
        manifest.corrupt_gradient = args.corrupt_gradient
    elif args.command == 'eval':
        manifest.model_path = args.model
        manifest.test_data = args.test_data
        manifest.dims = args.dims
        manifest.test_subset = args.test_subset
        manifest.pixel_mean_path = args.pixel_mean
        manifest.solver = SolverConfig(seed=args.seed, batch_size=args.batch_size)
    elif args.command == 'resources':
        manifest.solver = SolverConfig(sampling_rate=args.sample_rate, memory_budget_mb=args.memory_budget_mb)
        manifest.instances = args.instances
    return manifest


def load_split(paths: List[str], manifest: RunManifest, network: Network, fraction: float):
    """원본 데이터 로드 + 차원 확인 + 층화 부분집합"""
    raw = load_raw(paths, manifest.dims or network.input_dims, network.num_classes)
    if raw.dims != tuple(network.input_dims):
        raise DataFormatError(
            f"{paths[0]}: images are {raw.dims[0]}x{raw.dims[1]}x{raw.dims[2]}, "
            f"config expects {'x'.join(str(x) for x in network.input_dims)}")
    if fraction < 1:
        raw = stratified_subset(raw, fraction, manifest.seed)
    return raw


def _resume_state(manifest: RunManifest, network: Network):
    checkpoint = load_checkpoint(manifest.resume)
    check_compatible(checkpoint, network, manifest.resume)
    state = NewtonState(iteration=checkpoint.iteration, theta=checkpoint.theta,
                        f=checkpoint.f, lam=checkpoint.lam)
    return state, checkpoint.rng_state


def cmd_train(manifest: RunManifest) -> int:
    """Newton 학습 실행, 반복마다 로그/체크포인트/DB 기록"""
    verbose = not manifest.quiet
    config = load_config(manifest.config_path)
    network = Network(config)

    if verbose:
        print("=" * 80)
        print("Newton CNN Trainer - train")
        print("=" * 80)
        for line in network.describe():
            print(f"  {line}")

    train = preprocess(load_split(manifest.train_data, manifest, network, manifest.train_subset))
    test: Optional[Dataset] = None
    if manifest.test_data:
        test = preprocess(load_split(manifest.test_data, manifest, network, manifest.test_subset),
                          reference_mean=train.pixel_mean)
    if verbose:
        print(f"✓ Training data: {train.size} images" + (f", test data: {test.size} images" if test else ""))

    os.makedirs(manifest.out_dir, exist_ok=True)
    np.save(os.path.join(manifest.out_dir, PIXEL_MEAN_FILE), train.pixel_mean)

    resume, rng_state = None, None
    if manifest.resume:
        resume, rng_state = _resume_state(manifest, network)
        if verbose:
            print(f"✓ Resuming from iteration {resume.iteration} ({manifest.resume})")

    log = IterationLog(os.path.join(manifest.out_dir, LOG_FILE),
                       resume_iteration=resume.iteration if resume else None)
    checkpoint_path = os.path.join(manifest.out_dir, CHECKPOINT_FILE)
    segment_sizes = network.layout.segment_sizes

    db = TrainingDatabase(manifest.db_path, verbose=verbose)
    run_id = db.insert_run(
        config_path=manifest.config_path, config_text=format_config(config),
        train_data=" ".join(manifest.train_data), test_data=" ".join(manifest.test_data) or None,
        out_dir=manifest.out_dir, seed=manifest.seed, num_params=network.num_params,
        train_size=train.size, test_size=test.size if test else None, solver=asdict(manifest.solver),
    )

    def record(state: NewtonState, row, rng):
        log.append(row)
        save_checkpoint(checkpoint_path, Checkpoint(
            iteration=state.iteration, lam=state.lam, f=state.f, segment_sizes=segment_sizes,
            theta=state.theta, rng_state=rng.bit_generator.state))
        if run_id is not None:
            db.insert_iteration(run_id, row)

    try:
        result = newton_train(network, train, manifest.solver, test=test, resume=resume,
                              rng_state=rng_state, callback=record,
                              record_time=not manifest.reproducible, verbose=verbose)
    except NumericalError as e:
        print(f"\n✗ Training aborted: {e}")
        if e.state is not None:
            print(f"  Last accepted iteration: {e.state.iteration} (checkpoint: {checkpoint_path})")
        if run_id is not None:
            db.finish_run(run_id, "aborted", final_f=e.state.f if e.state else None)
        db.close()
        return EXIT_NUMERICAL

    final = result.state
    save_checkpoint(os.path.join(manifest.out_dir, MODEL_FILE), Checkpoint(
        iteration=final.iteration, lam=final.lam, f=final.f, segment_sizes=segment_sizes,
        theta=result.theta, rng_state=None))

    test_acc = None
    if test is not None:
        test_acc = accuracy(predict(network, result.theta, test.images,
                                    prediction_batch_size(network, manifest.solver)), test.label_ids)
    if run_id is not None:
        db.finish_run(run_id, result.status, final_f=final.f, final_test_acc=test_acc)

    if verbose:
        print(f"\n{'=' * 80}")
        print(f"📊 Finished ({result.status}) after {final.iteration} iterations")
        print(f"{'=' * 80}")
        print(f"  Final f: {final.f:.10g}")
        if test_acc is not None:
            print(f"  Test accuracy: {test_acc:.4f}")
        print(f"  Log: {os.path.join(manifest.out_dir, LOG_FILE)}")
        print(f"  Model: {os.path.join(manifest.out_dir, MODEL_FILE)}")
        print(f"  Database: {manifest.db_path}")
    db.close()
    return EXIT_OK


def _corrupted_gradient(network, theta, dataset, C, plan):
    """FD 검사가 실패해야 하는 기울기 (검사 자체의 음성 대조군)"""
    grad = function_and_gradient(network, theta, dataset, C, plan).grad.copy()
    grad[0] += 1e-2
    return grad


def cmd_check(manifest: RunManifest) -> int:
    """설정된 네트워크와 작은 합성 데이터로 오라클 검사"""
    config = load_config(manifest.config_path)
    network = Network(config)
    dataset = synthetic_dataset(network.input_dims, network.num_classes, manifest.instances, manifest.seed)
    C = manifest.solver.regularization(dataset.size)

    print("=" * 80)
    print(f"Newton CNN Trainer - check ({manifest.config_path}, {network.num_params:,} parameters)")
    print("=" * 80)

    margin = 1e-4 if network.num_params <= 5000 else 1e-5
    results = run_checks(network, dataset, C, seed=manifest.seed, margin=margin,
                         gradient_fn=_corrupted_gradient if manifest.corrupt_gradient else None)
    print(format_report(results))
    print()
    report = estimate_resources(config, dataset.size, manifest.solver.subset_size(dataset.size))
    print(format_resources(report))

    return EXIT_OK if all(result.passed for result in results) else EXIT_NUMERICAL


def cmd_eval(manifest: RunManifest) -> int:
    config = load_config(manifest.config_path)
    network = Network(config)
    theta = load_model(manifest.model_path, network)

    mean_path = manifest.pixel_mean_path
    if mean_path is None:
        candidate = os.path.join(os.path.dirname(manifest.model_path), PIXEL_MEAN_FILE)
        mean_path = candidate if os.path.exists(candidate) else None

    raw = load_split(manifest.test_data, manifest, network, manifest.test_subset)
    if mean_path is None:
        print(f"⚠ {PIXEL_MEAN_FILE} not found, centering with the evaluation data's own mean")
        data = preprocess(raw)
    else:
        data = preprocess(raw, reference_mean=np.load(mean_path))

    outputs = predict(network, theta, data.images, prediction_batch_size(network, manifest.solver))
    acc = accuracy(outputs, data.label_ids)
    print(f"📊 Accuracy: {acc:.4f} ({int(round(acc * data.size))}/{data.size})")
    return EXIT_OK


def cmd_resources(manifest: RunManifest) -> int:
    config = load_config(manifest.config_path)
    l = manifest.instances
    report = estimate_resources(config, l, manifest.solver.subset_size(l))
    print(format_resources(report))
    print(f"\n  Mini-batch size for {manifest.solver.memory_budget_mb:g} MB: "
          f"{batch_size_for_budget(config, manifest.solver.memory_budget_mb):,}")
    return EXIT_OK


COMMANDS = {
    'train': cmd_train,
    'check': cmd_check,
    'eval': cmd_eval,
    'resources': cmd_resources,
}


def main(argv=None) -> int:
    """메인 실행"""
    args = build_parser().parse_args(argv)
    try:
        manifest = manifest_from_args(args)
        manifest.validate()
        return COMMANDS[manifest.command](manifest)
    except NumericalError as e:
        print(f"✗ Numerical error: {e}")
        return EXIT_NUMERICAL
    except (OSError, ValueError) as e:
        # ConfigError, DataFormatError, ModelMismatchError, CheckpointError 포함
        print(f"✗ Error: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
