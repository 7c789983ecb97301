"""
The trainable estimator of the atmospheric field h.

A stack of stride-1 3×3 convolutions with ReLU between layers and a shifted
softplus on the output, so h is strictly positive and equals 1 when the final
pre-activation equals 1. Gradients come from the tape in ``tape.py``.
"""

import logging
import math
from collections import OrderedDict
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParameterBudgetError, ShapeMismatchError, TapeError
from .haze_model import AtmosphericMap, enhance_traced
from .image_core import ImagePlane
from .losses import LOSS_MODES, LossWeights, total_traced
from .tape import Tape, Var, bias_add, conv2d, relu, softplus
from .utils import make_rng

logger = logging.getLogger("lowlight_haze.network")

PARAM_BUDGET = 12_000
ACTIVATIONS = ("relu", "none")
FINAL_ACTIVATIONS = ("shifted_softplus",)

# softplus(z + SOFTPLUS_SHIFT) == 1 at z == 1
SOFTPLUS_SHIFT = math.log(math.e - 1.0) - 1.0
FINAL_BIAS = 1.0
FINAL_GAIN = 0.1


@dataclass(frozen=True)
class LayerSpec:
    in_channels: int
    out_channels: int
    activation: str = "relu"
    kernel: int = 3

    @property
    def param_count(self) -> int:
        return self.kernel * self.kernel * self.in_channels * self.out_channels + self.out_channels


@dataclass(frozen=True)
class NetConfig:
    """Layer list, output activation and initialisation seed."""

    layers: tuple[LayerSpec, ...] = field(
        default_factory=lambda: (
            LayerSpec(3, 16),
            LayerSpec(16, 16),
            LayerSpec(16, 16),
            LayerSpec(16, 16),
            LayerSpec(16, 16),
            LayerSpec(16, 3, activation="none"),
        )
    )
    final_activation: str = "shifted_softplus"
    seed: int = 0

    @classmethod
    def linear(cls, seed: int = 0) -> "NetConfig":
        """Single 3→3 convolution followed by the output activation."""
        return cls(layers=(LayerSpec(3, 3, activation="none"),), seed=seed)

    @classmethod
    def from_dict(cls, data: dict) -> "NetConfig":
        known = {"layers", "final_activation", "seed"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown network config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "layers" in kwargs:
            layers = []
            for entry in kwargs["layers"]:
                if isinstance(entry, dict):
                    extra = set(entry) - {"in_channels", "out_channels", "activation", "kernel"}
                    if extra:
                        raise ConfigError(f"Unknown layer keys: {sorted(extra)}")
                    layers.append(LayerSpec(**entry))
                else:
                    layers.append(LayerSpec(*entry))
            kwargs["layers"] = tuple(layers)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "in_channels": layer.in_channels,
                    "out_channels": layer.out_channels,
                    "activation": layer.activation,
                    "kernel": layer.kernel,
                }
                for layer in self.layers
            ],
            "final_activation": self.final_activation,
            "seed": self.seed,
        }

    @property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.layers)

    def validate(self) -> None:
        """
        Validate the layer chain.

        Raises:
            ConfigError: If channels do not chain or an activation is unknown
            ParameterBudgetError: If the parameter count exceeds the budget
        """
        if not self.layers:
            raise ConfigError("Network needs at least one layer")
        if self.layers[0].in_channels != 3:
            raise ConfigError(f"First layer must take 3 channels, got {self.layers[0].in_channels}")
        if self.layers[-1].out_channels != 3:
            raise ConfigError(
                f"Last layer must emit 3 channels, got {self.layers[-1].out_channels}"
            )
        for previous, current in zip(self.layers, self.layers[1:]):
            if previous.out_channels != current.in_channels:
                raise ConfigError(
                    f"Layer chain broken: {previous.out_channels} -> {current.in_channels}"
                )
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ConfigError(f"Invalid activation: {layer.activation}")
            if layer.kernel % 2 != 1 or layer.kernel < 1:
                raise ConfigError(f"Kernel size must be odd, got {layer.kernel}")
        if self.final_activation not in FINAL_ACTIVATIONS:
            raise ConfigError(f"Invalid final activation: {self.final_activation}")
        if self.param_count > PARAM_BUDGET:
            raise ParameterBudgetError(
                f"Network has {self.param_count} parameters, budget is {PARAM_BUDGET}"
            )


class ParamStore:
    """Ordered named weight tensors with parallel float64 gradient slots."""

    def __init__(self, params: "OrderedDict[str, np.ndarray] | None" = None):
        self._params: OrderedDict[str, np.ndarray] = OrderedDict()
        self._grads: OrderedDict[str, np.ndarray] = OrderedDict()
        self.has_grad = False
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> None:
        self._params[name] = np.asarray(value)
        self._grads[name] = np.zeros(self._params[name].shape, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        current = self._params[name]
        if np.shape(value) != current.shape:
            raise ShapeMismatchError(f"{name}: expected {current.shape}, got {np.shape(value)}")
        self._params[name] = np.asarray(value, dtype=current.dtype)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def accumulate_grad(self, name: str, grad: np.ndarray) -> None:
        self._grads[name] += np.asarray(grad, dtype=np.float64).reshape(self._grads[name].shape)
        self.has_grad = True

    def zero_grad(self) -> None:
        for name in self._grads:
            self._grads[name].fill(0.0)
        self.has_grad = False

    @property
    def dtype(self) -> np.dtype:
        for value in self._params.values():
            return value.dtype
        return np.dtype(np.float32)

    @property
    def total_count(self) -> int:
        return count_params(self)

    def copy(self) -> "ParamStore":
        return ParamStore(OrderedDict((k, v.copy()) for k, v in self._params.items()))

    def astype(self, dtype) -> "ParamStore":
        return ParamStore(OrderedDict((k, v.astype(dtype)) for k, v in self._params.items()))

    def equals(self, other: "ParamStore") -> bool:
        """Bit-identical comparison of names, shapes and values."""
        if self.names() != other.names():
            return False
        return all(np.array_equal(self[n], other[n]) for n in self.names())


def count_params(params: ParamStore) -> int:
    """Exact number of scalar parameters."""
    return int(sum(value.size for _, value in params.items()))


def _layer_names(index: int) -> tuple[str, str]:
    return f"conv{index}.weight", f"conv{index}.bias"


def init_params(config: NetConfig, seed: int | None = None) -> ParamStore:
    """
    He-initialised weights; zero biases except the output bias, which starts at 1.

    The output layer's weights are further scaled by FINAL_GAIN so a fresh network
    emits h close to 1 (near-identity enhancement).

    Args:
        config: Network layout
        seed: Overrides config.seed when given

    Returns:
        Deterministic ParamStore in float32

    Raises:
        ParameterBudgetError: If the layout exceeds the parameter budget
    """
    config.validate()
    rng = make_rng(config.seed if seed is None else seed, "init")
    store = ParamStore()
    last = len(config.layers) - 1
    for index, layer in enumerate(config.layers):
        fan_in = layer.kernel * layer.kernel * layer.in_channels
        std = math.sqrt(2.0 / fan_in)
        if index == last:
            std *= FINAL_GAIN
        shape = (layer.kernel, layer.kernel, layer.in_channels, layer.out_channels)
        weight = (rng.standard_normal(shape) * std).astype(np.float32)
        bias = np.zeros(layer.out_channels, dtype=np.float32)
        if index == last:
            bias.fill(FINAL_BIAS)
        weight_name, bias_name = _layer_names(index)
        store.add(weight_name, weight)
        store.add(bias_name, bias)
    logger.debug(f"Initialised {count_params(store)} parameters")
    return store


def identity_params(config: NetConfig) -> ParamStore:
    """All-zero weights with the output bias at 1, giving h ≡ 1."""
    store = init_params(config)
    for name, value in list(store.items()):
        store[name] = np.zeros_like(value)
    store[_layer_names(len(config.layers) - 1)[1]] = np.full(
        config.layers[-1].out_channels, FINAL_BIAS, dtype=store.dtype
    )
    return store


def shifted_softplus(z: np.ndarray) -> np.ndarray:
    """The output activation evaluated on plain arrays."""
    return np.logaddexp(0.0, np.asarray(z, dtype=np.float64) + SOFTPLUS_SHIFT)


@dataclass
class ForwardPass:
    """Output of a forward pass: the traced h and the tape that produced it."""

    h: Var
    tape: Tape
    c: float = 1.0

    @property
    def atmospheric_map(self) -> AtmosphericMap:
        return AtmosphericMap(self.h.data.astype(np.float64), self.c)


def forward(
    params: ParamStore,
    inverted: ImagePlane,
    config: NetConfig | None = None,
    tape: Tape | None = None,
) -> ForwardPass:
    """
    Estimate h from an inverted image, recording the tape for backward.

    Args:
        params: Network weights (their dtype fixes the tape precision)
        inverted: 3-channel image in [0, 1]
        config: Layer activations; inferred as the default layout when omitted
        tape: Existing tape to record on

    Returns:
        ForwardPass with an H×W×3 strictly positive h

    Raises:
        ShapeMismatchError: If the input does not have 3 channels
    """
    if inverted.channels != 3:
        raise ShapeMismatchError(f"network input must have 3 channels, got {inverted.channels}")
    tape = tape or Tape(params.dtype)
    layers = _layers_for(params, config)

    x = tape.constant(inverted.data)
    last = len(layers) - 1
    for index, activation in enumerate(layers):
        weight_name, bias_name = _layer_names(index)
        weight = tape.variable(params[weight_name], name=weight_name)
        bias = tape.variable(params[bias_name], name=bias_name)
        x = bias_add(conv2d(x, weight), bias)
        if activation == "relu" and index != last:
            x = relu(x)
    h = softplus(x + SOFTPLUS_SHIFT)
    return ForwardPass(h=h, tape=tape)


def _layers_for(params: ParamStore, config: NetConfig | None) -> list[str]:
    if config is not None:
        return [layer.activation for layer in config.layers]
    count = len(params) // 2
    return ["relu"] * (count - 1) + ["none"]


def predict(
    params: ParamStore, inverted: ImagePlane, config: NetConfig | None = None
) -> AtmosphericMap:
    """Forward pass without keeping the tape."""
    return forward(params, inverted, config).atmospheric_map


def backward(params: ParamStore, tape: Tape, loss: Var, loss_grad: float = 1.0) -> None:
    """
    Accumulate d(loss)/d(parameter) into the store's gradient slots.

    Args:
        params: Store whose slots receive the gradients
        tape: Tape recorded by forward() and the loss
        loss: Scalar loss Var on that tape
        loss_grad: Upstream gradient (e.g. 1/batch_size)

    Raises:
        TapeError: If no forward pass was recorded or the tape was consumed
    """
    if not tape.bindings:
        raise TapeError("backward() called without a forward pass on this tape")
    tape.backward(loss, loss_grad)
    for name, leaf in tape.bindings.items():
        if leaf.grad is not None:
            params.accumulate_grad(name, leaf.grad)
        else:
            params.accumulate_grad(name, np.zeros(leaf.shape))


@dataclass
class GradCheckReport:
    """Per-parameter worst relative error of analytic vs central-difference gradients."""

    loss: str
    precision: str
    tolerance: float
    errors: dict[str, float]

    @property
    def worst(self) -> tuple[str, float]:
        if not self.errors:
            return ("", 0.0)
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.errors.values())


CENTRAL_STENCIL = ((1, 0.5), (-1, -0.5))
FOURTH_ORDER_STENCIL = ((2, -1.0 / 12.0), (1, 8.0 / 12.0), (-1, -8.0 / 12.0), (-2, 1.0 / 12.0))


@dataclass(frozen=True)
class Precision:
    """Tape dtype of the analytic pass, finite-difference step and stencil, pass threshold."""

    dtype: type
    step: float
    tolerance: float
    stencil: tuple[tuple[int, float], ...] = CENTRAL_STENCIL


PRECISIONS = {
    "single": Precision(np.float32, 1e-3, 1e-3),
    "double": Precision(np.float64, 1e-4, 1e-6, FOURTH_ORDER_STENCIL),
}


def central_difference(
    evaluate: Callable[[np.ndarray], float],
    point: np.ndarray,
    entries: Iterable[int],
    step: float,
    stencil: tuple[tuple[int, float], ...] = CENTRAL_STENCIL,
) -> np.ndarray:
    """
    Finite-difference derivative of a scalar function along flat entries of ``point``.

    ``evaluate`` always receives float64 candidates; the stencil holds
    (offset in steps, coefficient) pairs.
    """
    point = np.array(point, dtype=np.float64)
    derivative = []
    for entry in entries:
        value = 0.0
        for offset, coefficient in stencil:
            candidate = point.copy()
            candidate.flat[entry] += offset * step
            value += coefficient * evaluate(candidate)
        derivative.append(value / step)
    return np.array(derivative, dtype=np.float64)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """max|a − n| normalised by the larger of max|a|, max|n| (and a small floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), floor)
    return float(np.max(np.abs(analytic - numeric))) / scale


def loss_on(
    params: ParamStore,
    config: NetConfig,
    low: ImagePlane,
    target: ImagePlane,
    loss: str,
    weights: LossWeights,
    kinks: list[np.ndarray] | None = None,
) -> tuple[Var, Tape]:
    """
    Record forward → enhancement chain → selected loss; returns (loss Var, tape).

    ``kinks`` replays the relu/abs sign pattern of an earlier recording.
    """
    inverted = ImagePlane(1.0 - low.data.astype(np.float64))
    result = forward(params, inverted, config, tape=Tape(params.dtype, kinks=kinks))
    prediction = enhance_traced(low, result.h, result.c)
    value, _ = total_traced(target, prediction, weights, mode=loss)
    return value, result.tape


def grad_check(
    config: NetConfig,
    loss: str = "total",
    trials: int = 3,
    precision: str = "single",
    seed: int = 0,
    size: int = 8,
    samples_per_param: int = 6,
    tolerance: float | None = None,
    weights: LossWeights | None = None,
    corrupt: bool = False,
) -> GradCheckReport:
    """
    Compare analytic gradients with finite differences on random inputs.

    For every trial a fresh network, low-light input and target are drawn; for each
    parameter tensor a random subset of entries is perturbed. The analytic pass runs
    on a tape of the chosen precision. The finite differences always run in float64
    and replay that tape's relu/abs sign pattern, so a step that straddles a kink
    measures the slope of the recorded piece.

    Args:
        config: Network layout
        loss: One of total, l1, brightness, smooth, ssim
        trials: Number of random instances (>= 1)
        precision: "single" (float32 tape, central step 1e-3) or "double"
            (float64 tape, fourth-order step 1e-4)
        seed: Base seed
        size: Spatial size of the random inputs
        samples_per_param: Entries checked per tensor
        tolerance: Pass threshold (defaults to 1e-3 single / 1e-6 double)
        weights: Loss constants
        corrupt: Scale the first tensor's analytic gradient (negative control)

    Returns:
        GradCheckReport with the worst error per parameter
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    if loss not in LOSS_MODES:
        raise ConfigError(f"Unknown loss: {loss} (choose from {LOSS_MODES})")
    if precision not in PRECISIONS:
        raise ConfigError(f"Unknown precision: {precision}")
    mode = PRECISIONS[precision]
    tolerance = mode.tolerance if tolerance is None else tolerance
    weights = weights or LossWeights()

    errors: dict[str, float] = {}
    for trial in range(trials):
        rng = make_rng(seed + trial, "gradcheck")
        params = init_params(config, seed=seed + trial).astype(mode.dtype)
        low = ImagePlane(rng.uniform(0.02, 0.6, size=(size, size, 3)))
        target = ImagePlane(rng.uniform(0.1, 0.95, size=(size, size, 3)))

        value, tape = loss_on(params, config, low, target, loss, weights)
        kinks = list(tape.kinks)
        backward(params, tape, value)
        reference = params.astype(np.float64)

        for index, name in enumerate(params.names()):
            analytic = params.grad(name).ravel()
            if corrupt and index == 0:
                analytic = analytic * 1.5 + 1e-3
            flat_size = params[name].size
            picks = np.sort(
                rng.choice(flat_size, size=min(samples_per_param, flat_size), replace=False)
            )
            original = reference[name]

            def evaluate(candidate: np.ndarray, name: str = name) -> float:
                reference[name] = candidate
                replay, _ = loss_on(reference, config, low, target, loss, weights, kinks=kinks)
                return float(replay.data)

            numeric = central_difference(evaluate, original, picks, mode.step, mode.stencil)
            reference[name] = original
            err = relative_error(analytic[picks], numeric)
            errors[name] = max(errors.get(name, 0.0), err)

    report = GradCheckReport(loss=loss, precision=precision, tolerance=tolerance, errors=errors)
    worst_name, worst_err = report.worst
    logger.info(
        f"Gradient check ({loss}, {precision}, {trials} trials): "
        f"worst {worst_name} = {worst_err:.3e}, {'PASS' if report.passed else 'FAIL'}"
    )
    return report
