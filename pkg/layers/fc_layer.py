"""
Fully-Connected Layer
s = W z + b, 은닉층은 RELU, 마지막 층은 선형
"""

from typing import Optional, Tuple

import numpy as np

from backward_grad import fc_backprop_z, fc_grad_params
from forward_eval import fc_forward, relu_mask
from index_maps import PoolArgmax, instance_vectors, replicate_instances

from .base_layer import BaseLayer


class FullLayer(BaseLayer):

    def input_columns(self, Z: np.ndarray) -> np.ndarray:
        # conv 배치 d × (a b l)도 열마다 vec(Z^i)가 되도록 펼친다
        return instance_vectors(Z, self.shape.n_in)

    def forward(self, W: np.ndarray, b: np.ndarray, Z: np.ndarray) -> Tuple[np.ndarray, Optional[PoolArgmax]]:
        return self.activate(fc_forward(W, b, self.input_columns(Z))), None

    def backprop_output(self, dZ_out: np.ndarray, Z_out: np.ndarray, pool_argmax: Optional[PoolArgmax],
                        instances: int, copies: int = 1) -> np.ndarray:
        if self.is_last:
            return dZ_out
        return dZ_out * replicate_instances(relu_mask(Z_out), instances, copies)

    def backprop_input(self, W: np.ndarray, dS: np.ndarray) -> np.ndarray:
        # 이전 층 출력 형식으로 되돌린다 (conv면 d × (a b ·))
        return np.reshape(fc_backprop_z(W, dS), (self.input_rows, -1), order="F")

    def grad_params(self, dS: np.ndarray, Z_in: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return fc_grad_params(dS, self.input_columns(Z_in))
