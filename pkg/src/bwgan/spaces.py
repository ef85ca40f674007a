"""Norm algebra for discretized Banach spaces and their duals.

Four families are supported: L^p, Sobolev W^{s,p} realized through an FFT
multiplier (1 + |xi|^2)^(s/2), diagonally weighted spaces, and finite
products.  Every family comes with its analytic dual norm under the plain
coordinate pairing <g, x> = sum_i g_i x_i, plus the explicit maximizer of
the duality quotient, which serves as an independent check of the dual
norm formulas.

Two discretization measures are available.  ``counting`` treats every
entry with weight 1; ``normalized`` averages (weight 1/N).  The primal
norms differ by N^(-1/p), and since the pairing is kept as the plain dot
product, the normalized dual norm picks up the compensating factor
N^(1/p) on the counting q-norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad

FAMILIES = ("lp", "sobolev", "weighted", "product")
MEASURES = ("counting", "normalized")


class SpaceError(ValueError):
    """Raised for invalid space parameters or incompatible signals."""


@dataclass
class SpaceSpec:
    """Descriptor of one Banach space.

    Only the fields relevant to ``family`` are used: ``s``,
    ``frequency_scale`` and ``signal_shape`` for Sobolev spaces,
    ``weight``/``base`` for weighted spaces, ``factors`` (pairs of
    sub-space and flat size) for products.
    """

    family: str
    p: float = 2.0
    s: float = 0.0
    frequency_scale: float = 5.0
    signal_shape: tuple | None = None
    weight: np.ndarray | None = None
    base: "SpaceSpec | None" = None
    factors: tuple = ()
    measure: str = "counting"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpaceError(f"unknown family {self.family!r}")
        if self.measure not in MEASURES:
            raise SpaceError(f"unknown measure {self.measure!r}")
        if not (self.p >= 1.0):
            raise SpaceError(f"exponent p must be >= 1, got {self.p}")
        if self.family == "sobolev":
            if self.signal_shape is None:
                raise SpaceError("sobolev space needs a signal_shape")
            if not (self.frequency_scale > 0):
                raise SpaceError("frequency_scale must be positive")
            self.signal_shape = tuple(int(d) for d in self.signal_shape)
            for n in _fft_lengths(self.signal_shape):
                if n & (n - 1) or n == 0:
                    raise SpaceError(
                        f"sobolev FFT axes must be powers of two, got {self.signal_shape}")
        if self.family == "weighted":
            if self.base is None or self.weight is None:
                raise SpaceError("weighted space needs base and weight")
            self.weight = np.asarray(self.weight, dtype=np.float64).ravel()
            if np.any(self.weight == 0.0):
                raise SpaceError("weight operator must be invertible (no zeros)")
        if self.family == "product" and not self.factors:
            raise SpaceError("product space needs at least one factor")

    @property
    def size(self) -> int | None:
        """Flat signal size, where the family pins it down."""
        if self.family == "sobolev":
            return int(np.prod(self.signal_shape))
        if self.family == "weighted":
            return self.weight.size
        if self.family == "product":
            return sum(sz for _, sz in self.factors)
        return None


def lp_space(p=2.0, measure="counting") -> SpaceSpec:
    return SpaceSpec("lp", p=p, measure=measure)


def sobolev_space(s, p=2.0, signal_shape=(16, 16), frequency_scale=5.0,
                  measure="counting") -> SpaceSpec:
    return SpaceSpec("sobolev", p=p, s=s, signal_shape=tuple(signal_shape),
                     frequency_scale=frequency_scale, measure=measure)


def weighted_space(base: SpaceSpec, weight) -> SpaceSpec:
    return SpaceSpec("weighted", p=base.p, base=base, weight=weight)


def product_space(factors, p=2.0) -> SpaceSpec:
    """Product of (space, flat_size) factors combined with exponent ``p``."""
    return SpaceSpec("product", p=p,
                     factors=tuple((sp, int(sz)) for sp, sz in factors))


@dataclass
class DualElement:
    """Coordinates of a dual-space element, tagged with its primal space."""

    values: np.ndarray
    space: SpaceSpec


def iota_star(gradient, space: SpaceSpec) -> DualElement:
    """Re-tag an autodiff gradient as an element of the dual space.

    The coordinate identification between R^n and the discretized space is
    the identity, so this is purely formal; it marks the point where a raw
    gradient tensor starts being measured with the dual norm.
    """
    return DualElement(np.asarray(gradient, dtype=np.float64), space)


def _values(g) -> np.ndarray:
    if isinstance(g, DualElement):
        return g.values
    return np.asarray(g, dtype=np.float64)


# ---------------------------------------------------------------------------
# Exponents and elementary norms
# ---------------------------------------------------------------------------

def dual_exponent(p: float) -> float:
    """Hoelder conjugate q with 1/p + 1/q = 1; requires p > 1."""
    if not p > 1.0:
        raise SpaceError(f"dual exponent requires p > 1, got {p}")
    return p / (p - 1.0)


def lp_norm(x, p: float, measure: str = "counting") -> float:
    """(sum |x_i|^p)^(1/p), or the averaged variant for ``normalized``."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if not p >= 1.0:
        raise SpaceError(f"lp_norm requires p >= 1, got {p}")
    if np.isinf(p):
        return float(np.max(np.abs(x))) if x.size else 0.0
    total = float(np.sum(np.abs(x) ** p))
    if measure == "normalized":
        total /= x.size
    return total ** (1.0 / p)


def _lp_norm_rows(X, p, measure):
    if np.isinf(p):
        return np.max(np.abs(X), axis=1)
    total = np.sum(np.abs(X) ** p, axis=1)
    if measure == "normalized":
        total = total / X.shape[1]
    return total ** (1.0 / p)


# ---------------------------------------------------------------------------
# Sobolev multiplier
# ---------------------------------------------------------------------------

def _fft_lengths(spatial_shape):
    return spatial_shape[-1:] if len(spatial_shape) == 1 else spatial_shape[-2:]


@lru_cache(maxsize=64)
def sobolev_weights(spatial_shape: tuple, s: float, frequency_scale: float):
    """Multiplier (1 + |xi|^2)^(s/2) on the FFT grid of the trailing axes.

    For axis length N the integer modes k in {-N/2, ..., N/2 - 1} are
    mapped to xi = frequency_scale * k / (N/2), so |xi| <= frequency_scale
    per axis.
    """
    lengths = _fft_lengths(spatial_shape)
    grids = []
    for n in lengths:
        if n & (n - 1) or n == 0:
            raise SpaceError(f"FFT axis length {n} is not a power of two")
        xi = 2.0 * frequency_scale * np.fft.fftfreq(n)
        grids.append(xi)
    if len(lengths) == 1:
        xi_sq = grids[0] ** 2
    else:
        xi_sq = grids[0][:, None] ** 2 + grids[1][None, :] ** 2
    return (1.0 + xi_sq) ** (s / 2.0)


def sobolev_multiplier(x, s: float, frequency_scale: float = 5.0) -> np.ndarray:
    """Apply F^-1 [(1 + |xi|^2)^(s/2) F x] over the trailing spatial axes.

    ``x`` may be (n,), (h, w) or (c, h, w); the output is real, and the
    discarded imaginary residue is verified to be below 1e-10.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2, 3):
        raise SpaceError(f"unsupported signal rank {x.ndim}")
    mult = sobolev_weights(x.shape, float(s), float(frequency_scale))
    axes = tuple(range(-1 if x.ndim == 1 else -2, 0))
    spec = np.fft.fftn(x, axes=axes, norm="ortho") * mult
    out = np.fft.ifftn(spec, axes=axes, norm="ortho")
    residue = np.max(np.abs(out.imag)) if out.size else 0.0
    scale = max(1.0, float(np.max(np.abs(x))) if x.size else 1.0)
    if residue > 1e-10 * scale:
        raise SpaceError(f"imaginary residue {residue:.3e} exceeds tolerance")
    return np.ascontiguousarray(out.real)


def _sobolev_rows(X, space: SpaceSpec, s):
    """Multiplier applied to rows of flattened signals."""
    mult = sobolev_weights(space.signal_shape, float(s), float(space.frequency_scale))
    shape = space.signal_shape
    axes = tuple(range(-1 if len(shape) == 1 else -2, 0))
    v = X.reshape((X.shape[0],) + shape)
    spec = np.fft.fftn(v, axes=axes, norm="ortho") * mult
    out = np.fft.ifftn(spec, axes=axes, norm="ortho").real
    return out.reshape(X.shape)


# ---------------------------------------------------------------------------
# Norms (numeric, batched over rows of flattened signals)
# ---------------------------------------------------------------------------

def _check_rows(space: SpaceSpec, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise SpaceError(f"expected rows of flattened signals, got shape {X.shape}")
    expected = space.size
    if expected is not None and X.shape[1] != expected:
        raise SpaceError(
            f"signal size {X.shape[1]} does not match space size {expected}")
    return X


def norm_batch(space: SpaceSpec, X) -> np.ndarray:
    """Norms of a batch of flattened signals, one per row."""
    X = _check_rows(space, X)
    if space.family == "lp":
        return _lp_norm_rows(X, space.p, space.measure)
    if space.family == "sobolev":
        return _lp_norm_rows(_sobolev_rows(X, space, space.s), space.p, space.measure)
    if space.family == "weighted":
        return norm_batch(space.base, X * space.weight)
    # product
    out = np.zeros(X.shape[0])
    offset = 0
    for sub, size in space.factors:
        out += norm_batch(sub, X[:, offset:offset + size]) ** space.p
        offset += size
    return out ** (1.0 / space.p)


def norm(space: SpaceSpec, x) -> float:
    """Norm of one signal in its natural or flattened layout."""
    x = np.asarray(x, dtype=np.float64)
    return float(norm_batch(space, x.reshape(1, -1))[0])


def dual_norm_batch(space: SpaceSpec, G) -> np.ndarray:
    """Analytic dual norms of a batch of flattened dual elements."""
    G = _check_rows(space, G)
    q = dual_exponent(space.p)
    if space.family == "lp":
        vals = _lp_norm_rows(G, q, "counting")
        if space.measure == "normalized":
            vals *= G.shape[1] ** (1.0 / space.p)
        return vals
    if space.family == "sobolev":
        U = _sobolev_rows(G, space, -space.s)
        vals = _lp_norm_rows(U, q, "counting")
        if space.measure == "normalized":
            vals *= G.shape[1] ** (1.0 / space.p)
        return vals
    if space.family == "weighted":
        return dual_norm_batch(space.base, G / space.weight)
    # product
    out = np.zeros(G.shape[0])
    offset = 0
    for sub, size in space.factors:
        out += dual_norm_batch(sub, G[:, offset:offset + size]) ** q
        offset += size
    return out ** (1.0 / q)


def dual_norm(space: SpaceSpec, g) -> float:
    """Dual norm of one element of B*, accepting a DualElement or array."""
    g = _values(g)
    return float(dual_norm_batch(space, g.reshape(1, -1))[0])


def dual_space(space: SpaceSpec) -> SpaceSpec:
    """A SpaceSpec whose norm is the dual norm of ``space``.

    Used for double-dual consistency checks; normalized-measure duals are
    expressed as a scalar-weighted normalized space.
    """
    q = dual_exponent(space.p)
    if space.family in ("lp", "sobolev"):
        if space.family == "lp":
            base = lp_space(q)
        else:
            base = sobolev_space(-space.s, q, space.signal_shape,
                                 space.frequency_scale)
        if space.measure == "counting":
            return base
        base.measure = "normalized"
        n = space.size
        if n is None:
            raise SpaceError("normalized lp dual space needs a fixed size; "
                             "use dual_norm directly")
        return weighted_space(base, np.full(n, float(n)))
    if space.family == "weighted":
        return weighted_space(dual_space(space.base), 1.0 / space.weight)
    return SpaceSpec("product", p=q,
                     factors=tuple((dual_space(sub), sz) for sub, sz in space.factors))


def dual_norm_maximizer(space: SpaceSpec, g) -> np.ndarray:
    """A signal h attaining <g, h> / ||h||_B = dual_norm(space, g).

    Returns the zero signal when g = 0.  Serves as the equality half of the
    Hoelder duality check.
    """
    g = _values(g).ravel()
    q = dual_exponent(space.p)
    if space.family == "lp":
        return np.sign(g) * np.abs(g) ** (q - 1.0)
    if space.family == "sobolev":
        u = _sobolev_rows(g.reshape(1, -1), space, -space.s)[0]
        h = np.sign(u) * np.abs(u) ** (q - 1.0)
        return _sobolev_rows(h.reshape(1, -1), space, -space.s)[0]
    if space.family == "weighted":
        return dual_norm_maximizer(space.base, g / space.weight) / space.weight
    # product: scale per-factor maximizers by d_i^(q-1) / ||h_i||
    out = np.zeros_like(g)
    offset = 0
    for sub, size in space.factors:
        gi = g[offset:offset + size]
        di = dual_norm(sub, gi)
        if di > 0.0:
            hi = dual_norm_maximizer(sub, gi)
            out[offset:offset + size] = hi * (di ** (q - 1.0) / norm(sub, hi))
        offset += size
    return out


# ---------------------------------------------------------------------------
# Graph builders (differentiable norms over batched rows)
# ---------------------------------------------------------------------------

def _lp_rows_node(x, p, measure, n):
    total = ad.sum_rows(ad.abs_pow(x, p))
    if measure == "normalized":
        total = total * (1.0 / n)
    return ad.abs_pow(total, 1.0 / p)


def norm_rows(space: SpaceSpec, x: ad.Node) -> ad.Node:
    """Graph node of per-row norms for a (batch, size) operand."""
    n = x.shape[1]
    if space.family == "lp":
        return _lp_rows_node(x, space.p, space.measure, n)
    if space.family == "sobolev":
        mult = sobolev_weights(space.signal_shape, float(space.s),
                               float(space.frequency_scale))
        y = ad.fourier_multiplier(x, space.signal_shape, mult)
        return _lp_rows_node(y, space.p, space.measure, n)
    if space.family == "weighted":
        return norm_rows(space.base, ad.mul(x, ad.Constant(space.weight)))
    total = None
    offset = 0
    for sub, size in space.factors:
        part = ad.abs_pow(norm_rows(sub, ad.slice_cols(x, offset, offset + size)),
                          space.p)
        total = part if total is None else ad.add(total, part)
        offset += size
    return ad.abs_pow(total, 1.0 / space.p)


def dual_norm_rows(space: SpaceSpec, g: ad.Node) -> ad.Node:
    """Graph node of per-row dual norms for a (batch, size) operand."""
    n = g.shape[1]
    q = dual_exponent(space.p)
    if space.family == "lp":
        vals = _lp_rows_node(g, q, "counting", n)
        if space.measure == "normalized":
            vals = vals * (n ** (1.0 / space.p))
        return vals
    if space.family == "sobolev":
        mult = sobolev_weights(space.signal_shape, float(-space.s),
                               float(space.frequency_scale))
        u = ad.fourier_multiplier(g, space.signal_shape, mult)
        vals = _lp_rows_node(u, q, "counting", n)
        if space.measure == "normalized":
            vals = vals * (n ** (1.0 / space.p))
        return vals
    if space.family == "weighted":
        return dual_norm_rows(space.base, ad.mul(g, ad.Constant(1.0 / space.weight)))
    total = None
    offset = 0
    for sub, size in space.factors:
        part = ad.abs_pow(dual_norm_rows(sub, ad.slice_cols(g, offset, offset + size)),
                          q)
        total = part if total is None else ad.add(total, part)
        offset += size
    return ad.abs_pow(total, 1.0 / q)


def pairing(g, x) -> float:
    """Coordinate dual pairing <g, x> = sum_i g_i x_i."""
    return float(np.dot(_values(g).ravel(), np.asarray(x, dtype=np.float64).ravel()))
