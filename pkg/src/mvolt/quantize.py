"""Symmetric per-layer 8-bit weight quantization.

Codes are signed int8 in [-127, 127] with scale = max|W|/127 (scale 1 for
an all-zero layer). Rounding is half-away-from-zero. Biases stay float32:
they live in the digital accumulators, not in crossbar cells, so they are
neither quantized nor subject to variation.
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import ShapeError
from .graph import ModelGraph

QMAX = 127


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantizedModel:
    template: ModelGraph  # topology carrier; weight values are ignored
    codes: tuple  # per parametric layer, int8
    scales: tuple  # per parametric layer, positive float
    biases: tuple  # per parametric layer, float32

    def __post_init__(self):
        for c in self.codes:
            if c.dtype != np.int8:
                raise ShapeError("codes must be int8")
            if np.abs(c.astype(np.int32)).max(initial=0) > QMAX:
                raise ShapeError("codes outside [-127, 127]")
        if any(s <= 0 for s in self.scales):
            raise ShapeError("scales must be positive")

    @property
    def num_param_layers(self):
        return len(self.codes)

    def weight_limit(self, ordinal: int) -> float:
        """Largest representable dequantized magnitude for a layer."""
        return float(np.float32(self.scales[ordinal]) * QMAX)


def quantize(model: ModelGraph) -> QuantizedModel:
    codes: List[np.ndarray] = []
    scales: List[float] = []
    for w in model.weights():
        if not np.isfinite(w).all():
            raise ShapeError("weights must be finite")
        peak = float(np.abs(w).max())
        scale = peak / QMAX if peak > 0 else 1.0
        c = _round_half_away(w.astype(np.float64) / scale)
        codes.append(np.clip(c, -QMAX, QMAX).astype(np.int8))
        scales.append(scale)
    return QuantizedModel(
        template=model,
        codes=tuple(codes),
        scales=tuple(scales),
        biases=tuple(model.biases()),
    )


def dequantize(q: QuantizedModel) -> ModelGraph:
    weights = [
        (np.float32(s) * c.astype(np.float32)).astype(np.float32)
        for c, s in zip(q.codes, q.scales)
    ]
    return q.template.with_params(weights, list(q.biases))
