"""
Full MNIST reproduction (오래 걸림, CI 제외)

전체 60,000장 / 10,000장, 3-layer CNN, 100 Newton 반복 후 테스트 정확도가
99.28% ± 0.3% 안에 드는지 확인한다.

사용법:
    python reproduce_mnist.py --mnist-dir ./MNIST
    python reproduce_mnist.py --mnist-dir ./MNIST --out runs/mnist_full --iters 100
"""

import argparse
import os
import sys

import pandas as pd

import newton_trainer
from run_log import read_log

TARGET_ACCURACY = 0.9928
TOLERANCE = 0.003

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def mnist_paths(mnist_dir: str) -> dict:
    paths = {key: os.path.join(mnist_dir, name) for key, name in MNIST_FILES.items()}
    missing = [path for path in paths.values() if not os.path.exists(path)]
    if missing:
        raise FileNotFoundError(f"missing MNIST files: {', '.join(missing)}")
    return paths


def main():
    parser = argparse.ArgumentParser(description='Reproduce the full-data MNIST 3-layer result')
    parser.add_argument('--mnist-dir', default=os.environ.get('MNIST_DIR', 'MNIST'))
    parser.add_argument('--out', default=os.path.join('runs', 'mnist_full'))
    parser.add_argument('--iters', type=int, default=100)
    parser.add_argument('--config', default=os.path.join('configs', 'mnist_3layer.txt'))
    args = parser.parse_args()

    try:
        paths = mnist_paths(args.mnist_dir)
    except FileNotFoundError as e:
        print(f"✗ {e}")
        return 2

    code = newton_trainer.main([
        'train', '--config', args.config,
        '--train-data', paths['train_images'], paths['train_labels'],
        '--test-data', paths['test_images'], paths['test_labels'],
        '--iters', str(args.iters), '--out', args.out,
        '--db', os.path.join(args.out, 'newton_runs.db'),
    ])
    if code != 0:
        return code

    log: pd.DataFrame = read_log(os.path.join(args.out, newton_trainer.LOG_FILE))
    final = float(log['test_acc'].iloc[-1])
    ok = abs(final - TARGET_ACCURACY) <= TOLERANCE

    print(f"\n{'=' * 80}")
    print(f"📊 Test accuracy after {int(log['iter'].iloc[-1])} iterations: {final:.4f} "
          f"(target {TARGET_ACCURACY:.4f} ± {TOLERANCE})")
    print(f"  {'✓ within tolerance' if ok else '✗ outside tolerance'}")
    print(f"{'=' * 80}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
