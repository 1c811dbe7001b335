"""Parameter storage, deterministic initializers and the Adam optimizer."""

import zlib
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, DimensionError, ParameterError

INIT_KINDS = ("xavier-uniform", "gaussian", "uniform-std", "zeros")


@dataclass(frozen=True)
class InitSpec:
    """How to draw initial parameter values.

    kind:
      xavier-uniform  uniform on +/- sqrt(6 / (fan_in + fan_out))
      gaussian        normal(mean, std)
      uniform-std     zero-mean uniform on +/- std * sqrt(3), i.e. the
                      uniform distribution whose standard deviation is std
      zeros           all zeros
    Draws are a pure function of (kind, seed, shape).
    """

    kind: str = "xavier-uniform"
    seed: int = 0
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ConfigError(f"unknown init kind {self.kind!r}, expected one of {INIT_KINDS}")
        if self.kind in ("gaussian", "uniform-std") and self.std <= 0:
            raise ParameterError(f"init std must be positive, got {self.std}")


def seed_for(base_seed: int, label: str) -> int:
    """Stable per-name child seed (crc32 of the label, mixed with the base)."""
    ss = np.random.SeedSequence((int(base_seed), zlib.crc32(label.encode("utf-8"))))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _fans(shape: tuple) -> tuple[int, int]:
    if len(shape) == 2:            # Din x Dout
        return shape[0], shape[1]
    if len(shape) == 4:            # K x C x kh x kw
        k, c, kh, kw = shape
        return c * kh * kw, k * kh * kw
    n = int(np.prod(shape))
    return n, n


def draw_init(spec: InitSpec, shape, seed: int | None = None) -> np.ndarray:
    """Draw initial values. ``seed`` overrides spec.seed for per-parameter
    derived streams; same (kind, seed, shape) is always bit-identical."""
    shape = tuple(int(s) for s in shape)
    if spec.kind == "zeros":
        return np.zeros(shape)
    use_seed = spec.seed if seed is None else seed
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(use_seed)))
    if spec.kind == "xavier-uniform":
        if len(shape) == 1:
            return np.zeros(shape)  # biases start at zero
        fan_in, fan_out = _fans(shape)
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, shape)
    if spec.kind == "gaussian":
        return rng.normal(spec.mean, spec.std, shape)
    # uniform-std
    bound = spec.std * np.sqrt(3.0)
    return rng.uniform(-bound, bound, shape)


class ParamStore:
    """Named trainable tensors plus their Adam state.

    Every parameter tensor owns a persistent ``grad`` buffer that reverse
    passes accumulate into; ``zero_grads`` clears them. Adam moments are
    kept alongside, one pair per parameter, and ``step_count`` increments
    by exactly one per optimizer step.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ConfigError(f"parameter {name!r} already exists")
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def get(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def items(self):
        return self._params.items()

    def num_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def reset_optimizer(self) -> None:
        for name, t in self._params.items():
            self._m[name] = np.zeros_like(t.data)
            self._v[name] = np.zeros_like(t.data)
        self.step_count = 0

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            t = self._params[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != t.data.shape:
                raise DimensionError(
                    f"parameter {name!r}: stored shape {arr.shape} != model {t.data.shape}")
            t.data[...] = arr


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update with bias correction. Gradients are left untouched;
    the caller decides when to zero them."""
    if lr <= 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    t = store.step_count + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in store.items():
        g = p.grad
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    store.step_count = t
