"""
Layers Module
CNN 층 모듈 - conv / fc 층의 순전파, 역전파, Jacobian 역전파
"""

from .base_layer import BaseLayer
from .conv_layer import ConvLayer
from .fc_layer import FullLayer
from .layer_factory import LayerFactory

__all__ = [
    'BaseLayer',
    'ConvLayer',
    'FullLayer',
    'LayerFactory',
]
