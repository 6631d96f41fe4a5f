"""
Resources
메모리 사용량과 연산량 (곱셈-덧셈 횟수) 추정

메모리 (원소 수, 8바이트 실수):
    Z:        l × (Σ_conv d^m a^m b^m + Σ_{m=L^c+1}^{L+1} n_m)
    Jacobian: |S| × n_{L+1} × (Σ_conv d^{m+1} a^m_conv b^m_conv + Σ_fc n_{m+1})
연산량 (층마다 core = h h d^m d^{m+1} a_conv b_conv, fc는 n_{m+1} n_m):
    함수 l·core, 기울기 2·l·core, Jacobian |S|·K·core, Gv 한 번 2·|S|·core, line search 한 단계 l·core
"""

from dataclasses import dataclass
from typing import List

import pandas as pd

from model_config import ModelConfig, derive_shapes

BYTES_PER_REAL = 8


@dataclass(frozen=True)
class LayerCost:
    layer: int
    kind: str
    params: int
    phi_index: int
    z_per_instance: int
    jacobian_per_instance: int
    core: int
    phi_per_instance: int
    backward_per_instance: int


@dataclass(frozen=True)
class ResourceReport:
    layers: List[LayerCost]
    instances: int
    subset_size: int
    num_classes: int
    output_size: int

    @property
    def params(self) -> int:
        return sum(cost.params for cost in self.layers)

    @property
    def phi_index(self) -> int:
        return sum(cost.phi_index for cost in self.layers)

    @property
    def z_per_instance(self) -> int:
        return sum(cost.z_per_instance for cost in self.layers) + self.output_size

    @property
    def function_memory(self) -> int:
        return self.instances * self.z_per_instance

    @property
    def phi_memory(self) -> int:
        return self.instances * max((cost.phi_per_instance for cost in self.layers), default=0)

    @property
    def backward_memory(self) -> int:
        return self.instances * max((cost.backward_per_instance for cost in self.layers), default=0)

    @property
    def jacobian_memory(self) -> int:
        return self.subset_size * sum(cost.jacobian_per_instance for cost in self.layers)

    @property
    def function_flops(self) -> int:
        return self.instances * sum(cost.core for cost in self.layers)

    @property
    def gradient_flops(self) -> int:
        return 2 * self.function_flops

    @property
    def jacobian_flops(self) -> int:
        return self.subset_size * self.num_classes * sum(cost.core for cost in self.layers)

    @property
    def gv_flops(self) -> int:
        return 2 * self.subset_size * sum(cost.core for cost in self.layers)

    @property
    def line_search_flops(self) -> int:
        return self.function_flops

    def per_instance_bytes(self) -> int:
        """미니배치 한 인스턴스가 함수/기울기 계산에 쓰는 메모리"""
        largest_phi = max((cost.phi_per_instance for cost in self.layers), default=0)
        return BYTES_PER_REAL * (self.z_per_instance + largest_phi)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for cost in self.layers:
            rows.append({
                "layer": cost.layer,
                "kind": cost.kind,
                "params": cost.params,
                "phi_index": cost.phi_index,
                "Z_memory": self.instances * cost.z_per_instance,
                "J_memory": self.subset_size * cost.jacobian_per_instance,
                "function_madds": self.instances * cost.core,
                "jacobian_madds": self.subset_size * self.num_classes * cost.core,
                "gv_madds": 2 * self.subset_size * cost.core,
            })
        return pd.DataFrame(rows)


def estimate_resources(config: ModelConfig, l: int, subset_size: int) -> ResourceReport:
    shapes = derive_shapes(config)
    K = shapes.num_classes
    costs = []

    for position, shape in enumerate(shapes):
        if shape.is_conv:
            core = shape.filter_size ** 2 * shape.d_in * shape.d_out * shape.positions
            phi_per_instance = shape.fan_in * shape.positions
            phi_index = phi_per_instance
            next_conv = 0
            if position + 1 < len(shapes) and shapes[position + 1].is_conv:
                next_conv = shapes[position + 1].conv_volume
            backward = shape.conv_volume + next_conv
        else:
            core = shape.n_out * shape.n_in
            phi_per_instance = 0
            phi_index = 0
            backward = shape.n_in + shape.n_out
        costs.append(LayerCost(
            layer=position + 1,
            kind=shape.kind,
            params=shape.segment_size,
            phi_index=phi_index,
            z_per_instance=shape.n_in,
            jacobian_per_instance=K * shape.d_out * shape.positions,
            core=core,
            phi_per_instance=phi_per_instance,
            backward_per_instance=backward,
        ))

    return ResourceReport(layers=costs, instances=l, subset_size=subset_size,
                          num_classes=K, output_size=shapes[-1].n_out)


def batch_size_for_budget(config: ModelConfig, budget_mb: float) -> int:
    """메모리 예산 안에 들어가는 미니배치 크기 (최소 1)"""
    per_instance = estimate_resources(config, 1, 1).per_instance_bytes()
    return max(1, int(budget_mb * 1024 * 1024 // per_instance))


def _format_bytes(count: int) -> str:
    size = count * BYTES_PER_REAL
    for unit in ("B", "KB", "MB", "GB"):
        if size < 1024:
            return f"{size:.1f} {unit}"
        size /= 1024
    return f"{size:.1f} TB"


def format_resources(report: ResourceReport) -> str:
    lines = [
        f"📊 Resources (l={report.instances}, |S|={report.subset_size}, n_L+1={report.num_classes})",
        f"  Parameters:          {report.params:,}",
        f"  phi index entries:   {report.phi_index:,}",
        f"  Z memory (all l):    {report.function_memory:,} reals ({_format_bytes(report.function_memory)})",
        f"  phi(pad(Z)) temp:    {report.phi_memory:,} reals ({_format_bytes(report.phi_memory)})",
        f"  backward state:      {report.backward_memory:,} reals ({_format_bytes(report.backward_memory)})",
        f"  Jacobian cache (|S|): {report.jacobian_memory:,} reals ({_format_bytes(report.jacobian_memory)})",
        f"  function madds:      {report.function_flops:,}",
        f"  gradient madds:      {report.gradient_flops:,}",
        f"  Jacobian madds:      {report.jacobian_flops:,}",
        f"  one Gv madds:        {report.gv_flops:,}",
        f"  line-search step:    {report.line_search_flops:,}",
        "",
        report.to_frame().to_string(index=False),
    ]
    return "\n".join(lines)
