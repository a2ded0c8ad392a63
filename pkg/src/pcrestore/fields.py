"""Occupancy fields: analytic CSG shapes and a small MLP variant.

An occupancy field maps a 3D point to a value in (0, 1), high inside the
shape and low outside, with an analytic spatial gradient. Analytic fields
squash a signed distance d (negative inside) through a logistic with
sharpness c, so p = sigmoid(-c * d). Occupancy is clipped to
[OCC_EPS, 1 - OCC_EPS]; the reported gradient is the derivative of the
clipped function, i.e. exactly zero wherever the clamp is active.

CSG signed distances: union = min, intersection = max,
difference(a, b) = max(d_a, -d_b). At exact ties the gradient follows the
first operand. smoothness_margin reports a conservative distance to the
nearest gradient discontinuity (tie surfaces, primitive singular sets,
clamp onset) so finite-difference probes can avoid them.
"""

from __future__ import annotations

import json
import math
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    InvalidSpec,
    TruncatedFile,
)

OCC_EPS = 1e-7
DEFAULT_SHARPNESS = 50.0
# |logit| beyond this clips the occupancy: log((1 - eps) / eps).
_CLIP_LOGIT = math.log((1.0 - OCC_EPS) / OCC_EPS)


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t, dtype=np.float64)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _as_batch(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == 3:
        return arr.reshape(1, 3), True
    if arr.ndim == 2 and arr.shape[1] == 3:
        return arr, False
    raise ValueError(f"expected shape (3,) or (N, 3), got {arr.shape}")


class OccupancyField(ABC):
    """Scalar field p(x) in (0, 1) with an analytic gradient."""

    @abstractmethod
    def _occupancy(self, X: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _gradient(self, X: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _smoothness_margin(self, X: np.ndarray) -> np.ndarray: ...

    def occupancy(self, x):
        X, single = _as_batch(x)
        p = self._occupancy(X)
        return float(p[0]) if single else p

    def gradient(self, x):
        X, single = _as_batch(x)
        g = self._gradient(X)
        return g[0] if single else g

    def smoothness_margin(self, x):
        """Conservative distance to the nearest gradient discontinuity.

        Used to reject finite-difference probe points near CSG ties,
        primitive singular sets, and the occupancy clamp onset. Units are
        the field's natural input units; the bound is approximate but
        never reports smooth where the field is not.
        """
        X, single = _as_batch(x)
        m = self._smoothness_margin(X)
        return float(m[0]) if single else m


# ---------------------------------------------------------------------------
# CSG signed-distance nodes


class CsgNode(ABC):
    @abstractmethod
    def distance(self, X: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def distance_and_gradient(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...

    @abstractmethod
    def smoothness_margin(self, X: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def to_spec(self) -> dict: ...


def _unit_or_zero(vec: np.ndarray, norm: np.ndarray) -> np.ndarray:
    safe = np.where(norm > 0.0, norm, 1.0)
    out = vec / safe[:, None]
    out[norm == 0.0] = 0.0
    return out


@dataclass(frozen=True)
class Sphere(CsgNode):
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere radius must be > 0")

    def distance(self, X):
        return np.sqrt(((X - np.asarray(self.center)) ** 2).sum(axis=1)) - self.radius

    def distance_and_gradient(self, X):
        rel = X - np.asarray(self.center)
        r = np.sqrt((rel * rel).sum(axis=1))
        # Gradient convention at the exact center: zero vector.
        return r - self.radius, _unit_or_zero(rel, r)

    def smoothness_margin(self, X):
        rel = X - np.asarray(self.center)
        return np.sqrt((rel * rel).sum(axis=1))

    def to_spec(self):
        return {"op": "sphere", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Box(CsgNode):
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]

    def __post_init__(self):
        if not all(h > 0 for h in self.half_extents):
            raise ValueError("box half_extents must all be > 0")

    def _q(self, X):
        rel = X - np.asarray(self.center)
        return rel, np.abs(rel) - np.asarray(self.half_extents)

    def distance(self, X):
        _, q = self._q(X)
        outside = np.maximum(q, 0.0)
        return np.sqrt((outside * outside).sum(axis=1)) + np.minimum(q.max(axis=1), 0.0)

    def distance_and_gradient(self, X):
        rel, q = self._q(X)
        outside = np.maximum(q, 0.0)
        norm = np.sqrt((outside * outside).sum(axis=1))
        d = norm + np.minimum(q.max(axis=1), 0.0)
        grad = _unit_or_zero(np.sign(rel) * outside, norm)
        inside = norm == 0.0
        if inside.any():
            j = q[inside].argmax(axis=1)
            g_in = np.zeros((inside.sum(), 3))
            g_in[np.arange(g_in.shape[0]), j] = np.sign(rel[inside, j])
            grad[inside] = g_in
        return d, grad

    def smoothness_margin(self, X):
        rel, q = self._q(X)
        qs = np.sort(q, axis=1)
        margin = qs[:, 2] - qs[:, 1]  # gap between the two largest components
        aq = np.sort(np.abs(q), axis=1)
        margin = np.minimum(margin, aq[:, 1])  # edge/corner proximity
        j = q.argmax(axis=1)
        margin = np.minimum(margin, np.abs(rel[np.arange(X.shape[0]), j]))
        return margin

    def to_spec(self):
        return {
            "op": "box",
            "center": list(self.center),
            "half_extents": list(self.half_extents),
        }


@dataclass(frozen=True)
class Torus(CsgNode):
    """Torus with its ring in the xy-plane around the z axis through center."""

    center: tuple[float, float, float]
    major_radius: float
    minor_radius: float

    def __post_init__(self):
        if not (self.major_radius > 0 and self.minor_radius > 0):
            raise ValueError("torus radii must be > 0")
        if not self.minor_radius < self.major_radius:
            raise ValueError("torus needs minor_radius < major_radius")

    def _parts(self, X):
        rel = X - np.asarray(self.center)
        rho = np.sqrt(rel[:, 0] ** 2 + rel[:, 1] ** 2)
        a = rho - self.major_radius
        s = np.sqrt(a * a + rel[:, 2] ** 2)
        return rel, rho, a, s

    def distance(self, X):
        return self._parts(X)[3] - self.minor_radius

    def distance_and_gradient(self, X):
        rel, rho, a, s = self._parts(X)
        grad = np.zeros_like(rel)
        ok = (s > 0.0) & (rho > 0.0)
        coef = np.zeros_like(s)
        coef[ok] = a[ok] / (s[ok] * rho[ok])
        grad[:, 0] = coef * rel[:, 0]
        grad[:, 1] = coef * rel[:, 1]
        sz = np.where(s > 0.0, s, 1.0)
        grad[:, 2] = np.where(s > 0.0, rel[:, 2] / sz, 0.0)
        return s - self.minor_radius, grad

    def smoothness_margin(self, X):
        _, rho, _, s = self._parts(X)
        return np.minimum(rho, s)

    def to_spec(self):
        return {
            "op": "torus",
            "center": list(self.center),
            "major_radius": self.major_radius,
            "minor_radius": self.minor_radius,
        }


@dataclass(frozen=True)
class Capsule(CsgNode):
    a: tuple[float, float, float]
    b: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("capsule radius must be > 0")
        if np.allclose(self.a, self.b):
            raise ValueError("capsule endpoints must differ")

    def _w(self, X):
        a = np.asarray(self.a, dtype=np.float64)
        ba = np.asarray(self.b, dtype=np.float64) - a
        t = np.clip((X - a) @ ba / (ba @ ba), 0.0, 1.0)
        w = X - a - t[:, None] * ba
        return w, np.sqrt((w * w).sum(axis=1))

    def distance(self, X):
        return self._w(X)[1] - self.radius

    def distance_and_gradient(self, X):
        w, wn = self._w(X)
        return wn - self.radius, _unit_or_zero(w, wn)

    def smoothness_margin(self, X):
        return self._w(X)[1]

    def to_spec(self):
        return {"op": "capsule", "a": list(self.a), "b": list(self.b), "radius": self.radius}


class _Combinator(CsgNode):
    op: str

    def __init__(self, children):
        children = tuple(children)
        if len(children) < 2:
            raise ValueError(f"{self.op} needs at least two children")
        if any(not isinstance(c, CsgNode) for c in children):
            raise ValueError(f"{self.op} children must be CSG nodes")
        self.children = children

    def _child_matrix(self, X):
        return np.stack([c.distance(X) for c in self.children], axis=0)

    def _select(self, D):
        raise NotImplementedError

    def distance(self, X):
        D = self._child_matrix(X)
        sel = self._select(D)
        return D[sel, np.arange(X.shape[0])]

    def distance_and_gradient(self, X):
        pairs = [c.distance_and_gradient(X) for c in self.children]
        D = np.stack([d for d, _ in pairs], axis=0)
        G = np.stack([g for _, g in pairs], axis=0)
        sel = self._select(D)
        cols = np.arange(X.shape[0])
        return D[sel, cols], G[sel, cols]

    def _tie_margin(self, D):
        raise NotImplementedError

    def smoothness_margin(self, X):
        D = self._child_matrix(X)
        margin = self._tie_margin(D)
        for c in self.children:
            margin = np.minimum(margin, c.smoothness_margin(X))
        return margin

    def to_spec(self):
        return {"op": self.op, "children": [c.to_spec() for c in self.children]}


class Union(_Combinator):
    op = "union"

    def _select(self, D):
        return D.argmin(axis=0)  # first operand wins exact ties

    def _tie_margin(self, D):
        Ds = np.sort(D, axis=0)
        return Ds[1] - Ds[0]


class Intersection(_Combinator):
    op = "intersection"

    def _select(self, D):
        return D.argmax(axis=0)

    def _tie_margin(self, D):
        Ds = np.sort(D, axis=0)
        return Ds[-1] - Ds[-2]


class Difference(CsgNode):
    """Points of `a` not in `b`: d = max(d_a, -d_b); ties follow `a`."""

    def __init__(self, a: CsgNode, b: CsgNode):
        if not (isinstance(a, CsgNode) and isinstance(b, CsgNode)):
            raise ValueError("difference children must be CSG nodes")
        self.a = a
        self.b = b

    def distance(self, X):
        return np.maximum(self.a.distance(X), -self.b.distance(X))

    def distance_and_gradient(self, X):
        da, ga = self.a.distance_and_gradient(X)
        db, gb = self.b.distance_and_gradient(X)
        use_a = da >= -db
        d = np.where(use_a, da, -db)
        g = np.where(use_a[:, None], ga, -gb)
        return d, g

    def smoothness_margin(self, X):
        da = self.a.distance(X)
        db = self.b.distance(X)
        margin = np.abs(da + db)
        margin = np.minimum(margin, self.a.smoothness_margin(X))
        return np.minimum(margin, self.b.smoothness_margin(X))

    def to_spec(self):
        return {"op": "difference", "children": [self.a.to_spec(), self.b.to_spec()]}


class AnalyticField(OccupancyField):
    """Occupancy p = clip(sigmoid(-sharpness * d), OCC_EPS, 1 - OCC_EPS)."""

    def __init__(self, root: CsgNode, sharpness: float = DEFAULT_SHARPNESS):
        if not isinstance(root, CsgNode):
            raise ValueError("root must be a CSG node")
        if not sharpness > 0:
            raise ValueError("sharpness must be > 0")
        self.root = root
        self.sharpness = float(sharpness)

    def signed_distance(self, x):
        X, single = _as_batch(x)
        d = self.root.distance(X)
        return float(d[0]) if single else d

    def _occupancy(self, X):
        raw = _sigmoid(-self.sharpness * self.root.distance(X))
        return np.clip(raw, OCC_EPS, 1.0 - OCC_EPS)

    def _gradient(self, X):
        d, gd = self.root.distance_and_gradient(X)
        raw = _sigmoid(-self.sharpness * d)
        coef = -self.sharpness * raw * (1.0 - raw)
        coef[(raw < OCC_EPS) | (raw > 1.0 - OCC_EPS)] = 0.0
        return coef[:, None] * gd

    def _smoothness_margin(self, X):
        d = self.root.distance(X)
        clamp = np.abs(np.abs(d) - _CLIP_LOGIT / self.sharpness)
        return np.minimum(clamp, self.root.smoothness_margin(X))

    def to_spec(self) -> dict:
        return {"sharpness": self.sharpness, "csg": self.root.to_spec()}


# ---------------------------------------------------------------------------
# JSON field specs


def _spec_number(node, key, path, *, default=None):
    if key not in node:
        if default is not None:
            return default
        raise InvalidSpec(f"missing '{key}' at {path}")
    v = node[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
        raise InvalidSpec(f"'{key}' at {path} must be a finite number, got {v!r}")
    return float(v)


def _spec_vector(node, key, path):
    if key not in node:
        raise InvalidSpec(f"missing '{key}' at {path}")
    v = node[key]
    if (
        not isinstance(v, (list, tuple))
        or len(v) != 3
        or any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in v)
        or any(not math.isfinite(c) for c in v)
    ):
        raise InvalidSpec(f"'{key}' at {path} must be a list of three finite numbers")
    return tuple(float(c) for c in v)


def _parse_node(node, path: str) -> CsgNode:
    if not isinstance(node, dict):
        raise InvalidSpec(f"node at {path} must be an object")
    op = node.get("op")
    try:
        if op == "sphere":
            return Sphere(_spec_vector(node, "center", path), _spec_number(node, "radius", path))
        if op == "box":
            return Box(_spec_vector(node, "center", path), _spec_vector(node, "half_extents", path))
        if op == "torus":
            return Torus(
                _spec_vector(node, "center", path),
                _spec_number(node, "major_radius", path),
                _spec_number(node, "minor_radius", path),
            )
        if op == "capsule":
            return Capsule(
                _spec_vector(node, "a", path),
                _spec_vector(node, "b", path),
                _spec_number(node, "radius", path),
            )
    except ValueError as exc:
        if isinstance(exc, InvalidSpec):
            raise
        raise InvalidSpec(f"invalid {op} at {path}: {exc}") from exc
    if op in ("union", "intersection", "difference"):
        kids = node.get("children")
        if not isinstance(kids, list) or len(kids) < 2:
            raise InvalidSpec(f"'{op}' at {path} needs a 'children' list of length >= 2")
        if op == "difference" and len(kids) != 2:
            raise InvalidSpec(f"'difference' at {path} needs exactly two children")
        parsed = [_parse_node(k, f"{path}.children[{i}]") for i, k in enumerate(kids)]
        if op == "union":
            return Union(parsed)
        if op == "intersection":
            return Intersection(parsed)
        return Difference(parsed[0], parsed[1])
    raise InvalidSpec(f"unknown op {op!r} at {path}")


def parse_field_spec(spec: dict) -> AnalyticField:
    """Build an AnalyticField from a spec dict; InvalidSpec names the bad node."""
    if not isinstance(spec, dict):
        raise InvalidSpec("spec must be an object")
    if "csg" not in spec:
        raise InvalidSpec("missing 'csg' at top level")
    sharpness = _spec_number(spec, "sharpness", "top level", default=DEFAULT_SHARPNESS)
    if sharpness <= 0:
        raise InvalidSpec("'sharpness' at top level must be > 0")
    return AnalyticField(_parse_node(spec["csg"], "csg"), sharpness)


def field_from_json(text: str) -> AnalyticField:
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"not valid JSON: {exc}") from exc
    return parse_field_spec(spec)


# ---------------------------------------------------------------------------
# MLP occupancy fields

MLP_MAGIC = b"OCCMLP1\x00"
_ACT_CODES = {0: "relu", 1: "tanh", 2: "identity"}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


@dataclass(frozen=True)
class MlpLayer:
    weights: np.ndarray  # (rows, cols) float64
    bias: np.ndarray  # (rows,) float64
    activation: str

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        b = np.ascontiguousarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ValueError("layer weights must be (rows, cols) with bias (rows,)")
        if self.activation not in _ACT_NAMES:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_deriv(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


class MlpField(OccupancyField):
    """Small fully connected network mapping (x, latent) to an occupancy logit.

    Input is the 3D point concatenated with a fixed latent vector, so the
    first layer must have 3 + latent_dim columns and the last layer one row.
    The final activation output is the logit; occupancy is the clipped
    logistic of it.
    """

    def __init__(self, layers, latent):
        layers = tuple(layers)
        if not layers:
            raise ValueError("need at least one layer")
        latent = np.ascontiguousarray(latent, dtype=np.float64).reshape(-1)
        expected = 3 + latent.shape[0]
        for li, layer in enumerate(layers):
            if layer.weights.shape[1] != expected:
                raise ValueError(
                    f"layer {li} expects {layer.weights.shape[1]} inputs, got {expected}"
                )
            expected = layer.weights.shape[0]
        if layers[-1].weights.shape[0] != 1:
            raise ValueError("last layer must produce a single logit")
        self.layers = layers
        self.latent = latent

    @property
    def latent_dim(self) -> int:
        return int(self.latent.shape[0])

    def _input(self, X):
        if self.latent_dim == 0:
            return X
        return np.concatenate([X, np.tile(self.latent, (X.shape[0], 1))], axis=1)

    def _forward(self, X):
        a = self._input(X)
        pres = []
        for layer in self.layers:
            z = a @ layer.weights.T + layer.bias
            pres.append(z)
            a = _act(layer.activation, z)
        return pres, a[:, 0]

    def logit(self, x):
        X, single = _as_batch(x)
        _, logit = self._forward(X)
        return float(logit[0]) if single else logit

    def _occupancy(self, X):
        _, logit = self._forward(X)
        return np.clip(_sigmoid(logit), OCC_EPS, 1.0 - OCC_EPS)

    def _gradient(self, X):
        pres, logit = self._forward(X)
        raw = _sigmoid(logit)
        g = (raw * (1.0 - raw))[:, None]
        g = np.where(((raw < OCC_EPS) | (raw > 1.0 - OCC_EPS))[:, None], 0.0, g)
        for layer, z in zip(reversed(self.layers), reversed(pres)):
            g = (g * _act_deriv(layer.activation, z)) @ layer.weights
        return g[:, :3]

    def _smoothness_margin(self, X):
        pres, logit = self._forward(X)
        margin = np.abs(np.abs(logit) - _CLIP_LOGIT)
        for layer, z in zip(self.layers, pres):
            if layer.activation == "relu" and z.size:
                margin = np.minimum(margin, np.abs(z).min(axis=1))
        return margin


def save_mlp_field(field: MlpField, path) -> None:
    """Write the little-endian weight file format MlpField loads."""
    parts = [MLP_MAGIC, struct.pack("<II", field.latent_dim, len(field.layers))]
    for layer in field.layers:
        rows, cols = layer.weights.shape
        parts.append(struct.pack("<IIB", rows, cols, _ACT_NAMES[layer.activation]))
        parts.append(layer.weights.astype("<f4").tobytes())
        parts.append(layer.bias.astype("<f4").tobytes())
    parts.append(field.latent.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(
                f"file ends at byte {len(self.data)} while reading {what} at byte {self.pos}",
                offset=self.pos,
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def f32s(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def load_mlp_field(path) -> MlpField:
    """Parse an MLP weight file.

    Layout, all little-endian: 8 magic bytes "OCCMLP1\\0", u32 latent_dim,
    u32 layer_count, then per layer u32 rows, u32 cols, u8 activation
    (0 relu, 1 tanh, 2 identity), rows*cols float32 row-major weights and
    rows float32 biases, then latent_dim float32 latent values. Errors name
    the byte offset where parsing failed.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    magic = r.take(len(MLP_MAGIC), "magic")
    if magic != MLP_MAGIC:
        raise BadMagic(f"expected magic {MLP_MAGIC!r} at byte 0, got {magic!r}", offset=0)
    latent_dim = r.u32("latent_dim")
    layer_count = r.u32("layer_count")
    if layer_count == 0:
        raise DimensionMismatch("layer_count is 0 at byte 12", offset=12)
    layers = []
    expected_cols = 3 + latent_dim
    for li in range(layer_count):
        at = r.pos
        rows = r.u32(f"layer {li} rows")
        cols = r.u32(f"layer {li} cols")
        act_off = r.pos
        act = r.u8(f"layer {li} activation")
        if rows == 0 or cols == 0:
            raise DimensionMismatch(
                f"layer {li} has zero dimension ({rows}x{cols}) at byte {at}", offset=at
            )
        if cols != expected_cols:
            raise DimensionMismatch(
                f"layer {li} expects {expected_cols} input columns, header says {cols}"
                f" at byte {at}",
                offset=at,
            )
        if act not in _ACT_CODES:
            raise DimensionMismatch(
                f"unknown activation tag {act} at byte {act_off}", offset=act_off
            )
        w = r.f32s(rows * cols, f"layer {li} weights").reshape(rows, cols)
        b = r.f32s(rows, f"layer {li} biases")
        layers.append(MlpLayer(w, b, _ACT_CODES[act]))
        expected_cols = rows
    if layers[-1].weights.shape[0] != 1:
        raise DimensionMismatch(
            f"last layer must have 1 row, got {layers[-1].weights.shape[0]}", offset=None
        )
    latent = r.f32s(latent_dim, "latent vector")
    if r.pos != len(data):
        raise DimensionMismatch(
            f"{len(data) - r.pos} trailing bytes after latent block at byte {r.pos}",
            offset=r.pos,
        )
    return MlpField(layers, latent)


def load_field(path) -> OccupancyField:
    """Load a field from disk: JSON spec (analytic) or binary MLP weights."""
    path = str(path)
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            return field_from_json(fh.read())
    return load_mlp_field(path)
