"""Small dense-network engine on numpy: forward/backward, dropout, layer norm, Adam.

Weights are stored as ``W[d]`` with shape ``(n_in, n_out)`` so a batch ``a`` of
shape ``(B, n_in)`` maps to ``a @ W[d] + b[d]``. All arithmetic is float64.
"""
from dataclasses import dataclass, field
import zlib

import numpy as np

ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "identity", "tanh")


class ShapeError(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    def __init__(self, layer, message):
        super().__init__(message)
        self.layer = layer


def make_rng(seed, *labels) -> np.random.Generator:
    """Independent PCG64 stream for ``seed`` and a path of labels.

    Labels may be ints or strings; strings are hashed with CRC32 so the
    derivation is stable across processes and platforms.
    """
    key = []
    for lab in labels:
        if isinstance(lab, str):
            key.append(zlib.crc32(lab.encode("utf-8")))
        else:
            key.append(int(lab))
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes plus per-layer activation.

    ``activations`` has one entry per weight layer (``len(layer_sizes) - 1``).
    Dropout and layer norm act on hidden layers only.
    """

    layer_sizes: tuple
    activations: tuple
    leaky_slope: float = 0.01
    dropout: float = 0.0
    layer_norm: bool = False

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"need at least two positive layer sizes, got {sizes}")
        if len(self.activations) != len(sizes) - 1:
            raise ValueError("one activation per weight layer required")
        bad = [a for a in self.activations if a not in ACTIVATIONS]
        if bad:
            raise ValueError(f"unknown activation(s) {bad}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @classmethod
    def build(cls, sizes, hidden="relu", output="identity", **kw):
        sizes = tuple(sizes)
        acts = (hidden,) * (len(sizes) - 2) + (output,)
        return cls(sizes, acts, **kw)

    @property
    def n_layers(self):
        return len(self.layer_sizes) - 1

    def to_dict(self):
        return {
            "layer_sizes": list(self.layer_sizes),
            "activations": list(self.activations),
            "leaky_slope": self.leaky_slope,
            "dropout": self.dropout,
            "layer_norm": self.layer_norm,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["layer_sizes"]), tuple(d["activations"]), d["leaky_slope"], d["dropout"], d["layer_norm"])


def _act(name, z, slope):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_relu":
        return np.where(z > 0, z, slope * z)
    if name == "sigmoid":
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a, g, slope):
    if name == "relu":
        return g * (z > 0)
    if name == "leaky_relu":
        return g * np.where(z > 0, 1.0, slope)
    if name == "sigmoid":
        return g * a * (1.0 - a)
    if name == "tanh":
        return g * (1.0 - a * a)
    return g


_LN_EPS = 1e-5


@dataclass
class Tape:
    """Per-layer cache recorded by a train-mode forward pass."""

    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    normed: list = field(default_factory=list)
    inv_std: list = field(default_factory=list)
    post: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    squeeze: bool = False


class Mlp:
    """Multilayer perceptron with explicit, tape-based reverse mode."""

    def __init__(self, spec: MlpSpec, weights, biases):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for d, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (spec.layer_sizes[d], spec.layer_sizes[d + 1])
            if w.shape != want or b.shape != (want[1],):
                raise ShapeError(f"layer {d}: weight {w.shape} / bias {b.shape}, expected {want}")

    @classmethod
    def init(cls, spec: MlpSpec, rng: np.random.Generator):
        """Kaiming-uniform weights scaled by fan-in, zero biases."""
        ws, bs = [], []
        for d in range(spec.n_layers):
            n_in, n_out = spec.layer_sizes[d], spec.layer_sizes[d + 1]
            act = spec.activations[d]
            if act == "relu":
                gain = np.sqrt(2.0)
            elif act == "leaky_relu":
                gain = np.sqrt(2.0 / (1.0 + spec.leaky_slope**2))
            else:
                gain = 1.0
            bound = gain * np.sqrt(3.0 / n_in)
            ws.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            bs.append(np.zeros(n_out))
        return cls(spec, ws, bs)

    def parameters(self):
        """Flat list ``[W0, b0, W1, b1, ...]`` of live parameter arrays."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return Mlp(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def __call__(self, x):
        return self.forward(x, train=False)[0]

    def forward(self, x, train=False, rng=None):
        """Run the network on ``x`` of shape ``(n_in,)`` or ``(B, n_in)``.

        Returns ``(output, tape)``. Dropout is active only when ``train`` is set,
        using inverted scaling so inference needs no rescale; a generator must
        be supplied in that case.
        """
        spec = self.spec
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        a = x[None, :] if squeeze else x
        if a.ndim != 2 or a.shape[1] != spec.layer_sizes[0]:
            raise ShapeError(f"layer 0: input has shape {x.shape}, expected (..., {spec.layer_sizes[0]})")
        p = spec.dropout if train else 0.0
        if p > 0 and rng is None:
            raise ValueError("train-mode dropout needs an rng")
        tape = Tape(squeeze=squeeze)
        last = spec.n_layers - 1
        for d in range(spec.n_layers):
            tape.inputs.append(a)
            z = a @ self.weights[d] + self.biases[d]
            tape.pre.append(z)
            if spec.layer_norm and d < last:
                mu = z.mean(axis=1, keepdims=True)
                inv = 1.0 / np.sqrt(z.var(axis=1, keepdims=True) + _LN_EPS)
                zn = (z - mu) * inv
            else:
                inv, zn = None, z
            tape.normed.append(zn)
            tape.inv_std.append(inv)
            a = _act(spec.activations[d], zn, spec.leaky_slope)
            tape.post.append(a)
            mask = None
            if p > 0 and d < last:
                mask = (rng.random(a.shape) >= p) / (1.0 - p)
                a = a * mask
            tape.masks.append(mask)
        return (a[0] if squeeze else a), tape

    def backward(self, tape: Tape, grad_out):
        """Reverse pass through a recorded forward.

        Returns ``(grads, grad_input)`` where ``grads`` mirrors ``parameters()``.
        """
        if tape is None or not tape.inputs:
            raise RuntimeError("backward called without a recorded forward pass")
        spec = self.spec
        g = np.asarray(grad_out, dtype=np.float64)
        if tape.squeeze:
            g = g[None, :]
        if g.shape != tape.post[-1].shape:
            raise ShapeError(f"layer {spec.n_layers - 1}: upstream gradient {g.shape}, expected {tape.post[-1].shape}")
        grads = [None] * (2 * spec.n_layers)
        for d in reversed(range(spec.n_layers)):
            if tape.masks[d] is not None:
                g = g * tape.masks[d]
            g = _act_grad(spec.activations[d], tape.normed[d], tape.post[d], g, spec.leaky_slope)
            if tape.inv_std[d] is not None:
                xn, inv = tape.normed[d], tape.inv_std[d]
                g = inv * (g - g.mean(axis=1, keepdims=True) - xn * (g * xn).mean(axis=1, keepdims=True))
            grads[2 * d] = tape.inputs[d].T @ g
            grads[2 * d + 1] = g.sum(axis=0)
            g = g @ self.weights[d].T
        return grads, (g[0] if tape.squeeze else g)


class Adam:
    """Adam optimizer updating a list of arrays in place."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr, self.betas, self.eps = float(lr), tuple(betas), float(eps)
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ShapeError(f"{len(grads)} gradients for {len(self.params)} parameters")
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g.shape != p.shape:
                raise ShapeError(f"layer {i // 2}: gradient {g.shape} vs parameter {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(i // 2, f"non-finite gradient in layer {i // 2}")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self, prefix):
        out = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}.m{i}"] = m
            out[f"{prefix}.v{i}"] = v
        return out

    def load_state(self, arrays, prefix, t):
        for i in range(len(self.m)):
            self.m[i][...] = arrays[f"{prefix}.m{i}"]
            self.v[i][...] = arrays[f"{prefix}.v{i}"]
        self.t = int(t)


@dataclass(frozen=True)
class LatentSpec:
    dim: int
    law: str = "normal"  # or "uniform"
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if self.law not in ("normal", "uniform"):
            raise ValueError(f"unknown latent law {self.law!r}")


def sample_latent(spec: LatentSpec, rng: np.random.Generator, n=None):
    """Draw one latent vector (``n=None``) or a batch of ``n``."""
    shape = (spec.dim,) if n is None else (n, spec.dim)
    if spec.law == "uniform":
        return rng.uniform(spec.low, spec.high, size=shape)
    return rng.standard_normal(shape)
