"""
Convolutional Layer
padding → φ → W φ + b → RELU → max pooling
"""

from typing import Optional, Tuple

import numpy as np

from backward_grad import conv_backprop_S, conv_backprop_Z, conv_grad_params
from forward_eval import conv_forward, maxpool
from index_maps import (PoolArgmax, build_pad_index, build_phi_index, gather, pad,
                        pool_partition_index)
from model_config import LayerShape

from .base_layer import BaseLayer


class ConvLayer(BaseLayer):
    """인덱스 맵 (φ, pad, pooling 분할)은 생성 시 한 번만 만든다"""

    def __init__(self, shape: LayerShape, is_last: bool, input_rows: int):
        super().__init__(shape, is_last, input_rows)
        self.pad_index = build_pad_index(shape.a_in, shape.b_in, shape.d_in, shape.pad)
        self.phi = build_phi_index(shape.a_pad, shape.b_pad, shape.d_in, shape.filter_size, shape.stride)
        self.partition = None
        if shape.pool is not None:
            self.partition = pool_partition_index(shape.a_conv, shape.b_conv, shape.d_out, shape.pool)

    def input_columns(self, Z: np.ndarray) -> np.ndarray:
        return gather(self.phi, pad(Z, self.pad_index))

    def forward(self, W: np.ndarray, b: np.ndarray, Z: np.ndarray) -> Tuple[np.ndarray, Optional[PoolArgmax]]:
        Z_conv = self.activate(conv_forward(W, b, self.input_columns(Z)))
        if self.partition is None:
            return Z_conv, None
        return maxpool(Z_conv, self.partition)

    def backprop_output(self, dZ_out: np.ndarray, Z_out: np.ndarray, pool_argmax: Optional[PoolArgmax],
                        instances: int, copies: int = 1) -> np.ndarray:
        return conv_backprop_S(dZ_out, Z_out, pool_argmax, instances, copies)

    def backprop_input(self, W: np.ndarray, dS: np.ndarray) -> np.ndarray:
        return conv_backprop_Z(W, dS, self.phi, self.pad_index)

    def grad_params(self, dS: np.ndarray, Z_in: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return conv_grad_params(dS, self.input_columns(Z_in))
