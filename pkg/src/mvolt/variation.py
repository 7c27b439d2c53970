"""Crossbar deployment model: parameter deviations, stuck cells, writes.

Variation is modeled in the weight domain: each crossbar cell holds one
dequantized weight. A sampled map assigns per-cell deviations (value
scales with the programmed weight) or stuck states (low -> 0, high ->
sign-preserving representable maximum). Deployment materializes the
effective-weight graph once; parameter writes produce new immutable
views and keep a log for the modified-parameter metric.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, NamedTuple, Tuple

import numpy as np

from .errors import FormatError, MapError
from .graph import ModelGraph
from .quantize import QuantizedModel, dequantize

KIND_DEVIATION = "deviation"
KIND_STUCK_LOW = "stuck_low"
KIND_STUCK_HIGH = "stuck_high"
_KINDS = (KIND_DEVIATION, KIND_STUCK_LOW, KIND_STUCK_HIGH)
_KIND_CODE = {k: i for i, k in enumerate(_KINDS)}

# deviations smaller than this are dropped at sampling time
MIN_DEVIATION = 1e-12


@dataclass(frozen=True)
class VariationConfig:
    gaussian_sigma: float = 0.1
    saf_rate: float = 0.01
    saf_low_high_ratio: float = 0.5  # fraction of stuck cells frozen low
    seed: int = 0

    def __post_init__(self):
        if self.gaussian_sigma < 0:
            raise MapError("gaussian_sigma must be >= 0")
        if not (0.0 <= self.saf_rate <= 1.0):
            raise MapError("saf_rate must be in [0, 1]")
        if not (0.0 <= self.saf_low_high_ratio <= 1.0):
            raise MapError("saf_low_high_ratio must be in [0, 1]")

    @property
    def is_zero(self):
        return self.gaussian_sigma == 0.0 and self.saf_rate == 0.0


class LayerEntries(NamedTuple):
    indices: np.ndarray  # int64, strictly increasing
    kinds: np.ndarray  # uint8 codes into _KINDS
    values: np.ndarray  # float32; deviation delta or stuck effective value


@dataclass(frozen=True)
class VariationMap:
    layers: Dict[int, LayerEntries] = field(default_factory=dict)
    header: str = ""

    def __post_init__(self):
        for ordinal, ent in self.layers.items():
            if len(ent.indices) != len(ent.kinds) or len(ent.indices) != len(ent.values):
                raise MapError(f"ragged entries for layer {ordinal}")
            if len(np.unique(ent.indices)) != len(ent.indices):
                raise MapError(f"duplicate index in layer {ordinal}")
            if not np.isfinite(ent.values).all():
                raise MapError(f"non-finite value in layer {ordinal}")

    @property
    def num_entries(self):
        return sum(len(e.indices) for e in self.layers.values())

    def records(self):
        """Yield (layer, index, kind, value) in layer/index order."""
        for ordinal in sorted(self.layers):
            ent = self.layers[ordinal]
            for i in range(len(ent.indices)):
                yield ordinal, int(ent.indices[i]), _KINDS[ent.kinds[i]], float(ent.values[i])


def empty_map() -> VariationMap:
    return VariationMap({})


def map_from_records(records, header: str = "") -> VariationMap:
    by_layer: Dict[int, list] = {}
    for layer, index, kind, value in records:
        if kind not in _KINDS:
            raise MapError(f"unknown kind {kind!r}")
        by_layer.setdefault(int(layer), []).append((int(index), _KIND_CODE[kind], float(value)))
    layers = {}
    for ordinal, rows in by_layer.items():
        rows.sort()
        idx = np.array([r[0] for r in rows], dtype=np.int64)
        layers[ordinal] = LayerEntries(
            idx,
            np.array([r[1] for r in rows], dtype=np.uint8),
            np.array([r[2] for r in rows], dtype=np.float32),
        )
    return VariationMap(layers, header)


def sample_weight_deviations(weights, stuck_limits, cfg: VariationConfig, rng) -> VariationMap:
    """Sample a deviation map for arbitrary weight arrays.

    `stuck_limits[k]` is the stuck-high magnitude for layer k. Each cell
    independently becomes stuck with probability saf_rate, otherwise gets
    a multiplicative deviation w * eps, eps ~ N(0, sigma). Draws nothing
    from rng when the config is all-zero, so a zero sampler leaves the
    caller's random stream untouched.
    """
    layers = {}
    for k, w in enumerate(weights):
        flat = np.ascontiguousarray(w, dtype=np.float32).ravel()
        n = flat.size
        kinds = np.zeros(n, dtype=np.uint8)
        values = np.zeros(n, dtype=np.float32)
        covered = np.zeros(n, dtype=bool)
        if cfg.saf_rate > 0:
            stuck = rng.random(n) < cfg.saf_rate
            low_draw = rng.random(n) < cfg.saf_low_high_ratio
            low = stuck & low_draw
            high = stuck & ~low_draw
            limit = np.float32(stuck_limits[k])
            kinds[low] = _KIND_CODE[KIND_STUCK_LOW]
            values[low] = 0.0
            kinds[high] = _KIND_CODE[KIND_STUCK_HIGH]
            values[high] = np.where(flat[high] >= 0, limit, -limit)
            covered = stuck
        if cfg.gaussian_sigma > 0:
            eps = rng.normal(0.0, cfg.gaussian_sigma, n).astype(np.float32)
            dev = flat * eps
            pick = (~covered) & (np.abs(dev) >= MIN_DEVIATION)
            kinds[pick] = _KIND_CODE[KIND_DEVIATION]
            values[pick] = dev[pick]
            covered = covered | pick
        if covered.any():
            idx = np.nonzero(covered)[0].astype(np.int64)
            layers[k] = LayerEntries(idx, kinds[idx], values[idx])
    return VariationMap(layers)


def sample_variation(q: QuantizedModel, cfg: VariationConfig) -> VariationMap:
    """Map for a quantized model; deterministic for a fixed config seed."""
    rng = np.random.default_rng(cfg.seed)
    free = dequantize(q)
    limits = [q.weight_limit(k) for k in range(q.num_param_layers)]
    vmap = sample_weight_deviations(free.weights(), limits, cfg, rng)
    header = (
        f"sigma={cfg.gaussian_sigma} saf_rate={cfg.saf_rate} "
        f"saf_low_high_ratio={cfg.saf_low_high_ratio} seed={cfg.seed}"
    )
    return replace(vmap, header=header)


def apply_map_to_weights(weights, vmap: VariationMap):
    """Effective arrays W+theta; the inputs are not modified."""
    out = []
    for k, w in enumerate(weights):
        eff = np.array(w, dtype=np.float32)
        ent = vmap.layers.get(k)
        if ent is not None:
            if len(ent.indices) and int(ent.indices[-1]) >= eff.size:
                raise MapError(
                    f"index {int(ent.indices[-1])} out of range for layer {k}"
                )
            flat = eff.ravel()
            dev = ent.kinds == _KIND_CODE[KIND_DEVIATION]
            flat[ent.indices[dev]] += ent.values[dev]
            flat[ent.indices[~dev]] = ent.values[~dev]
        out.append(eff)
    return out


class WeightWrite(NamedTuple):
    layer: int
    index: int
    value: float


@dataclass(frozen=True)
class DeployedModel:
    base: QuantizedModel
    vmap: VariationMap
    graph: ModelGraph  # cached effective-weight view
    write_count: int = 0
    clip_count: int = 0

    @property
    def input_shape(self):
        return self.graph.input_shape

    @property
    def num_classes(self):
        return self.graph.num_classes


def deploy(q: QuantizedModel, vmap: VariationMap) -> DeployedModel:
    for ordinal in vmap.layers:
        if not (0 <= ordinal < q.num_param_layers):
            raise MapError(f"layer ordinal {ordinal} out of range")
    free = dequantize(q)
    eff = apply_map_to_weights(free.weights(), vmap)
    return DeployedModel(q, vmap, free.with_params(eff))


def detect_variation(d: DeployedModel, miss_rate: float = 0.0, seed: int = 0) -> VariationMap:
    """Variation-detection oracle: the deployed map, thinned by miss_rate."""
    if miss_rate <= 0.0:
        return d.vmap
    rng = np.random.default_rng(seed)
    layers = {}
    for ordinal, ent in d.vmap.layers.items():
        keep = rng.random(len(ent.indices)) >= miss_rate
        if keep.any():
            layers[ordinal] = LayerEntries(
                ent.indices[keep], ent.kinds[keep], ent.values[keep]
            )
    return VariationMap(layers, d.vmap.header)


def apply_parameter_writes(d: DeployedModel, writes) -> DeployedModel:
    """New deployed view with the listed cells overwritten.

    Values outside the layer's representable range are clipped and
    counted. Accepts a VictimSet-like object (write_records()) or an
    iterable of WeightWrite.
    """
    records = writes.write_records() if hasattr(writes, "write_records") else list(writes)
    weights = [np.array(w, dtype=np.float32) for w in d.graph.weights()]
    clips = 0
    count = 0
    for layer, index, value in records:
        if not (0 <= layer < len(weights)):
            raise MapError(f"write layer {layer} out of range")
        flat = weights[layer].ravel()
        if not (0 <= index < flat.size):
            raise MapError(f"write index {index} out of range for layer {layer}")
        limit = d.base.weight_limit(layer)
        v = float(value)
        if abs(v) > limit:
            v = limit if v > 0 else -limit
            clips += 1
        flat[index] = np.float32(v)
        count += 1
    return DeployedModel(
        d.base,
        d.vmap,
        d.graph.with_params(weights),
        d.write_count + count,
        d.clip_count + clips,
    )


def save_map(path, vmap: VariationMap, config_hash: str = ""):
    with open(path, "w") as f:
        f.write("# mvolt variation map v1\n")
        if vmap.header:
            f.write(f"# {vmap.header}\n")
        if config_hash:
            f.write(f"# config_hash={config_hash}\n")
        f.write("layer,index,kind,value\n")
        for layer, index, kind, value in vmap.records():
            f.write(f"{layer},{index},{kind},{value!r}\n")


def load_map(path) -> VariationMap:
    header_lines = []
    records = []
    with open(path) as f:
        first = f.readline()
        if not first.startswith("# mvolt variation map v1"):
            raise FormatError("not a variation map file")
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                header_lines.append(line[1:].strip())
                continue
            if line == "layer,index,kind,value":
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise FormatError(f"bad map line: {line!r}")
            records.append((int(parts[0]), int(parts[1]), parts[2], float(parts[3])))
    header = " | ".join(h for h in header_lines if not h.startswith("config_hash="))
    return map_from_records(records, header)


def map_config_hash(path) -> str:
    """config_hash recorded in a map file, or '' when absent."""
    with open(path) as f:
        for line in f:
            if line.startswith("# config_hash="):
                return line.split("=", 1)[1].strip()
            if not line.startswith("#"):
                break
    return ""
