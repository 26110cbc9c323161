"""Polynomial sheaf filter networks.

A filter is a matrix polynomial in the block sheaf Laplacian acting on a
multichannel cochain, sum over k of L^k S W_k, evaluated by iterated
application of L (powers of the operator are never materialized). A network
stacks such filters with an entrywise Lipschitz nonlinearity fixing 0, so a
zero signal stays zero and node relabeling commutes with the whole forward
pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sheaf import BlockSheafLaplacian

_NONLINEARITIES = {
    "relu": lambda x: np.maximum(x, 0.0),
    "tanh": np.tanh,
    "identity": lambda x: x,
}


@dataclass(frozen=True)
class MultiChannelCochain:
    """A stack of channels over the node fibers, stored as (n*d, channels)."""

    n: int
    d: int
    channels: int
    matrix: np.ndarray

    def __post_init__(self):
        if self.matrix.shape != (self.n * self.d, self.channels):
            raise ValueError("multichannel cochain matrix has the wrong shape")

    @classmethod
    def from_stack(cls, stack: np.ndarray) -> "MultiChannelCochain":
        n, d, f = stack.shape
        return cls(n=n, d=d, channels=f, matrix=stack.reshape(n * d, f).copy())

    @property
    def stack(self) -> np.ndarray:
        return self.matrix.reshape(self.n, self.d, self.channels)


@dataclass(frozen=True)
class FilterSpec:
    """Layer structure of a polynomial sheaf filter network.

    ``orders[l]`` is the polynomial order K of layer l, ``widths`` the channel
    counts F_0 ... F_L, and ``weights[l][k]`` the F_l x F_(l+1) coefficient
    matrix of the k-th Laplacian power in layer l. The nonlinearity must fix
    zero and be 1-Lipschitz entrywise.
    """

    orders: tuple
    widths: tuple
    weights: tuple
    nonlinearity: str = "relu"

    def __post_init__(self):
        if self.nonlinearity not in _NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        layers = len(self.orders)
        if len(self.widths) != layers + 1:
            raise ValueError("need one width per layer boundary")
        if len(self.weights) != layers:
            raise ValueError("need one weight list per layer")
        for l, per_layer in enumerate(self.weights):
            if len(per_layer) != self.orders[l]:
                raise ValueError(f"layer {l} needs {self.orders[l]} weight matrices")
            for w in per_layer:
                if w.shape != (self.widths[l], self.widths[l + 1]):
                    raise ValueError(f"layer {l} weight shape mismatch")

    @property
    def layers(self) -> int:
        return len(self.orders)


def random_filter_spec(orders, widths, nonlinearity: str, rng) -> FilterSpec:
    """FilterSpec with independent N(0, 1/fan_in) weight entries."""
    from .rng import as_generator

    gen = as_generator(rng)
    weights = []
    for l, order in enumerate(orders):
        scale = 1.0 / np.sqrt(widths[l] * order)
        weights.append(tuple(
            scale * gen.standard_normal((widths[l], widths[l + 1]))
            for _ in range(order)))
    return FilterSpec(orders=tuple(orders), widths=tuple(widths),
                      weights=tuple(weights), nonlinearity=nonlinearity)


def polynomial_filter(lap: BlockSheafLaplacian, s: MultiChannelCochain,
                      weights, order: int) -> MultiChannelCochain:
    """Evaluate sum over k < order of L^k S W_k by iterated application."""
    if order < 1 or len(weights) != order:
        raise ValueError("need exactly `order` weight matrices, order >= 1")
    if s.n != lap.n or s.d != lap.d:
        raise ValueError("cochain dimensions do not match the Laplacian")
    stack = s.stack
    acc = stack @ weights[0]
    power = stack
    for k in range(1, order):
        power = lap.apply_stack(power)
        acc = acc + power @ weights[k]
    return MultiChannelCochain.from_stack(acc)


def forward(lap: BlockSheafLaplacian, s0: MultiChannelCochain,
            spec: FilterSpec) -> MultiChannelCochain:
    """Layer recursion S_(l+1) = sigma(polynomial filter of S_l)."""
    if s0.channels != spec.widths[0]:
        raise ValueError("input channel count does not match the first width")
    sigma = _NONLINEARITIES[spec.nonlinearity]
    current = s0
    for l in range(spec.layers):
        filtered = polynomial_filter(lap, current, spec.weights[l], spec.orders[l])
        current = MultiChannelCochain(
            n=filtered.n, d=filtered.d, channels=filtered.channels,
            matrix=sigma(filtered.matrix))
    return current


def transfer_disagreement(lap_a: BlockSheafLaplacian, lap_b: BlockSheafLaplacian,
                          s_a: MultiChannelCochain, s_b: MultiChannelCochain,
                          spec: FilterSpec, probes_a, probes_b) -> float:
    """RMS output difference of one network on two samplings, at probe nodes.

    Two samplings of a manifold share no nodes in general, so the caller
    plants a common set of probe points in both samples and passes their node
    indices; the forward outputs are compared only there.
    """
    probes_a = np.asarray(probes_a, dtype=int)
    probes_b = np.asarray(probes_b, dtype=int)
    if probes_a.size == 0 or probes_a.shape != probes_b.shape:
        raise ValueError("need a nonempty matching set of probe nodes")
    if lap_a.d != lap_b.d:
        raise ValueError("stalk dimensions differ")
    out_a = forward(lap_a, s_a, spec).stack[probes_a]
    out_b = forward(lap_b, s_b, spec).stack[probes_b]
    return float(np.sqrt(np.mean((out_a - out_b) ** 2)))


# ---------------------------------------------------------------------------
# text formats: key-value filter specs, CSV outputs
# ---------------------------------------------------------------------------

def save_filter_spec(path, spec: FilterSpec) -> None:
    """Write a spec as flat key-value lines; weight blocks are row-major."""
    from .sheaf import _fmt

    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"layers = {spec.layers}\n")
        fh.write("orders = " + " ".join(str(k) for k in spec.orders) + "\n")
        fh.write("widths = " + " ".join(str(w) for w in spec.widths) + "\n")
        fh.write(f"nonlinearity = {spec.nonlinearity}\n")
        for l in range(spec.layers):
            for k in range(spec.orders[l]):
                vals = " ".join(_fmt(v) for v in spec.weights[l][k].reshape(-1))
                fh.write(f"weights {l} {k} = {vals}\n")


def load_filter_spec(path) -> FilterSpec:
    """Read a spec written by :func:`save_filter_spec`."""
    scalars = {}
    blocks = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key.startswith("weights"):
                _, l, k = key.split()
                blocks[(int(l), int(k))] = np.array(
                    [float(v) for v in value.split()])
            else:
                scalars[key] = value
    orders = tuple(int(v) for v in scalars["orders"].split())
    widths = tuple(int(v) for v in scalars["widths"].split())
    layers = int(scalars.get("layers", len(orders)))
    if layers != len(orders):
        raise ValueError("declared layer count does not match the orders")
    weights = tuple(
        tuple(blocks[(l, k)].reshape(widths[l], widths[l + 1])
              for k in range(orders[l]))
        for l in range(layers))
    return FilterSpec(orders=orders, widths=widths, weights=weights,
                      nonlinearity=scalars.get("nonlinearity", "relu"))


def write_output_csv(path, out: MultiChannelCochain, comment: str = "network output") -> None:
    """One row per (node, fiber coordinate, channel)."""
    from ._csvio import write_csv

    stack = out.stack
    rows = []
    for node in range(out.n):
        for coord in range(out.d):
            for channel in range(out.channels):
                rows.append([node, coord, channel, stack[node, coord, channel]])
    write_csv(path, comment=comment,
              header=["node", "coord", "channel", "value"], rows=rows)
