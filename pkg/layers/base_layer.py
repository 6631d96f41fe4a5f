"""
Base Layer
conv / fc 층의 공통 인터페이스

모든 층은 같은 순서로 호출된다:
    forward:  Z^m → (S^m) → Z^{m+1}
    backward: ∂/∂Z^{m+1} → ∂/∂S^m (backprop_output) → ∂/∂Z^m (backprop_input)
"""

from typing import Optional, Tuple

import numpy as np

from forward_eval import relu
from index_maps import PoolArgmax
from model_config import LayerShape


class BaseLayer:
    """층 기본 클래스"""

    def __init__(self, shape: LayerShape, is_last: bool, input_rows: int):
        self.shape = shape
        self.index = shape.index
        self.is_last = is_last
        # 이전 층 출력 배치의 행 수 (conv 배치는 채널 수, fc는 뉴런 수)
        self.input_rows = input_rows

    @property
    def kind(self) -> str:
        return self.shape.kind

    @property
    def rows(self) -> int:
        """S^m의 행 수 d^{m+1} (fc는 n_{m+1})"""
        return self.shape.d_out

    @property
    def positions(self) -> int:
        return self.shape.positions

    def activate(self, S: np.ndarray) -> np.ndarray:
        """은닉층은 RELU, 마지막 층은 선형"""
        if self.is_last:
            return S
        return relu(S)

    def input_columns(self, Z: np.ndarray) -> np.ndarray:
        """W^m이 곱해지는 입력: conv는 φ(pad(Z^m)), fc는 z^m"""
        raise NotImplementedError("Subclasses must implement input_columns()")

    def forward(self, W: np.ndarray, b: np.ndarray, Z: np.ndarray) -> Tuple[np.ndarray, Optional[PoolArgmax]]:
        raise NotImplementedError("Subclasses must implement forward()")

    def backprop_output(self, dZ_out: np.ndarray, Z_out: np.ndarray, pool_argmax: Optional[PoolArgmax],
                        instances: int, copies: int = 1) -> np.ndarray:
        raise NotImplementedError("Subclasses must implement backprop_output()")

    def backprop_input(self, W: np.ndarray, dS: np.ndarray) -> np.ndarray:
        raise NotImplementedError("Subclasses must implement backprop_input()")

    def grad_params(self, dS: np.ndarray, Z_in: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError("Subclasses must implement grad_params()")

    def __repr__(self) -> str:
        return f"{type(self).__name__}(layer={self.index + 1}, out={self.rows})"
