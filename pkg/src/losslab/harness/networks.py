"""Named architectures used by the experiment recipes."""

from __future__ import annotations

from ..nn import Conv2d, Dense, MaxPool, NetworkSpec, ReLU, SoftmaxOutput, mlp


def moons_mlp() -> NetworkSpec:
    return mlp([2, 16, 16, 2], name="moons-mlp")


def shallow_cnn(size: int = 16, channels: int = 3, classes: int = 2, width: tuple[int, int] = (8, 16),
                fc: tuple[int, int] = (32, 16), kernel: int = 3, name: str = "tiny-cnn") -> NetworkSpec:
    """``[conv, maxpool, relu] x 2, fc, relu, fc, fc, softmax``."""
    c1, c2 = width
    pad = kernel // 2
    flat = c2 * (size // 4) ** 2
    layers = (
        Conv2d(channels, c1, kernel, 1, pad), MaxPool(2), ReLU(),
        Conv2d(c1, c2, kernel, 1, pad), MaxPool(2), ReLU(),
        Dense(flat, fc[0]), ReLU(),
        Dense(fc[0], fc[1]),
        Dense(fc[1], classes),
        SoftmaxOutput(),
    )
    return NetworkSpec((channels, size, size), layers, name)


def tiny_teacher(size: int = 16, channels: int = 3, classes: int = 2) -> NetworkSpec:
    layers = (
        Conv2d(channels, 16, 3, 1, 1), ReLU(),
        Conv2d(16, 16, 3, 1, 1), MaxPool(2), ReLU(),
        Conv2d(16, 32, 3, 1, 1), MaxPool(2), ReLU(),
        Dense(32 * (size // 4) ** 2, 64), ReLU(),
        Dense(64, 64), ReLU(),
        Dense(64, classes),
        SoftmaxOutput(),
    )
    return NetworkSpec((channels, size, size), layers, "tiny-teacher")


def cifar_student() -> NetworkSpec:
    """Full-size student for 32x32 CIFAR-10 input."""
    return shallow_cnn(32, 3, 10, width=(32, 64), fc=(256, 128), kernel=5, name="cifar-student")


PRESETS = {
    "moons-mlp": moons_mlp,
    "tiny-cnn": shallow_cnn,
    "tiny-teacher": tiny_teacher,
    "cifar-student": cifar_student,
}


def resolve_network(net) -> NetworkSpec:
    """Preset name, NetworkSpec dict, or NetworkSpec."""
    if isinstance(net, NetworkSpec):
        return net
    if isinstance(net, str):
        if net not in PRESETS:
            raise KeyError(f"unknown network preset {net!r}; known: {sorted(PRESETS)}")
        return PRESETS[net]()
    return NetworkSpec.from_dict(net)
