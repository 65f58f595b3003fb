"""potq: power-of-two weight quantization, QAT, shift-MAC emulation and
packing/size accounting for small classifiers."""

from .autograd import SgdConfig, Tensor, backward
from .qat import QatConfig, evaluate, train, train_float
from .quantizers import (
    ApotScheme,
    FloatScheme,
    PotScheme,
    PruneConfig,
    QuantizedLayer,
    UniformScheme,
    dequantize,
    quant_levels,
    quantize,
    quantize_apot,
    quantize_pot,
    quantize_uniform,
)
from .shift_mac import MacConfig, MacEvents, WeightCode, cost_report, mac_dot

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "SgdConfig",
    "QatConfig",
    "train",
    "train_float",
    "evaluate",
    "FloatScheme",
    "UniformScheme",
    "PotScheme",
    "ApotScheme",
    "PruneConfig",
    "QuantizedLayer",
    "quantize",
    "quantize_pot",
    "quantize_uniform",
    "quantize_apot",
    "dequantize",
    "quant_levels",
    "MacConfig",
    "MacEvents",
    "WeightCode",
    "mac_dot",
    "cost_report",
    "__version__",
]
