"""3D Poisson blending with a soft boundary-aware guidance field.

Discretisation
--------------
Gradients are forward differences, ``v_a(p) = u(p + e_a) - u(p)`` (zero on
the far face), and divergence is the matching backward difference
``div V(p) = sum_a V_a(p) - V_a(p - e_a)``, so ``divergence(forward_gradient(u))``
is the 6-point Laplacian on interior voxels.

For every voxel ``p`` of the blend region the solver enforces

    N_p f(p) - sum_{q in N6(p), q in Omega} f(q)
        = sum_{q in N6(p), q not in Omega} s(q) - div V(p)

which reproduces ``f = s`` exactly when ``V`` is the gradient of ``s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, EmptyRegion, NotConverged, OutOfBounds, ParamOutOfRange
from .volume import LabelMap3, Volume3, check_box, touches_face

MODES = ("spb", "source_only", "mixed_max")
METHODS = ("cg", "dense")
DENSE_MAX_VOXELS = 512
_SIX = ndimage.generate_binary_structure(3, 1)
_OFFSETS = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]


@dataclass(frozen=True, eq=False)
class GuidanceField:
    vx: np.ndarray
    vy: np.ndarray
    vz: np.ndarray

    def __post_init__(self):
        comps = [np.asarray(c, dtype=np.float64) for c in (self.vx, self.vy, self.vz)]
        if not comps[0].shape == comps[1].shape == comps[2].shape or comps[0].ndim != 3:
            raise DimensionMismatch("guidance components must be 3D arrays of equal shape")
        if not all(np.isfinite(c).all() for c in comps):
            raise ParamOutOfRange("guidance field contains NaN or Inf")
        for name, c in zip(("vx", "vy", "vz"), comps):
            object.__setattr__(self, name, c)

    @property
    def dims(self):
        return self.vx.shape

    def components(self):
        return self.vx, self.vy, self.vz

    def norm(self):
        return np.sqrt(self.vx ** 2 + self.vy ** 2 + self.vz ** 2)


@dataclass(frozen=True)
class SolverConfig:
    method: str = "cg"
    rel_tol: float = 1e-8
    max_iter: int | None = None
    jacobi: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParamOutOfRange(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.rel_tol > 0:
            raise ParamOutOfRange("rel_tol must be > 0")
        if self.max_iter is not None and self.max_iter < 1:
            raise ParamOutOfRange("max_iter must be >= 1")

    def iteration_cap(self, n_unknowns):
        if self.max_iter is not None:
            return self.max_iter
        return min(100000, max(1, math.ceil(10 * n_unknowns ** (1.0 / 3.0) * 100)))


@dataclass(frozen=True, eq=False)
class BlendRegion:
    """The blend region, its inner boundary and its Dirichlet ring."""

    omega: np.ndarray
    inner_boundary: np.ndarray
    dirichlet: np.ndarray

    @classmethod
    def from_mask(cls, omega):
        if isinstance(omega, LabelMap3):
            omega = omega.data
        omega = np.asarray(omega)
        if omega.ndim != 3:
            raise DimensionMismatch(f"region mask must be 3D, got shape {omega.shape}")
        if omega.max(initial=0) > 1:
            raise ParamOutOfRange("region mask must be restricted to {0, 1}")
        omega = omega.astype(bool)
        if touches_face(omega):
            raise OutOfBounds("blend region must keep a 1-voxel margin from the grid face")
        inner = omega & ~ndimage.binary_erosion(omega, _SIX, border_value=0)
        ring = ndimage.binary_dilation(omega, _SIX) & ~omega
        return cls(omega, inner, ring)

    @property
    def dims(self):
        return self.omega.shape

    @property
    def size(self):
        return int(np.count_nonzero(self.omega))

    def dirichlet_values(self, s: Volume3):
        """Map from outside-adjacent voxel index to the host value there."""
        idx = np.argwhere(self.dirichlet)
        return {tuple(int(i) for i in p): float(s.data[tuple(p)]) for p in idx}


@dataclass(frozen=True)
class SolveInfo:
    method: str
    iterations: int
    residual: float
    unknowns: int


def _forward_diff(a, axis):
    out = np.zeros(a.shape, dtype=np.float64)
    hi = [slice(None)] * 3
    lo = [slice(None)] * 3
    hi[axis] = slice(1, None)
    lo[axis] = slice(None, -1)
    out[tuple(lo)] = a[tuple(hi)] - a[tuple(lo)]
    return out


def forward_gradient(v: Volume3) -> GuidanceField:
    data = np.asarray(v.data if isinstance(v, Volume3) else v, dtype=np.float64)
    if data.ndim != 3 or min(data.shape) < 2:
        raise DimensionMismatch(f"forward_gradient needs at least 2 voxels per axis, got {data.shape}")
    return GuidanceField(*(_forward_diff(data, a) for a in range(3)))


def _divergence_array(V: GuidanceField):
    out = np.zeros(V.dims, dtype=np.float64)
    for axis, comp in enumerate(V.components()):
        out += comp
        hi = [slice(None)] * 3
        lo = [slice(None)] * 3
        hi[axis] = slice(1, None)
        lo[axis] = slice(None, -1)
        out[tuple(hi)] -= comp[tuple(lo)]
    return out


def divergence(V: GuidanceField) -> Volume3:
    return Volume3(_divergence_array(V))


def _check_dims(*shapes):
    if len({tuple(s) for s in shapes}) != 1:
        raise DimensionMismatch(f"dimension mismatch: {[tuple(s) for s in shapes]}")


def build_guidance(s: Volume3, g: Volume3, region: BlendRegion, mode="spb") -> GuidanceField:
    """Guidance field over ``region``; host gradient everywhere outside it.

    ``spb``: host gradient on inner-boundary voxels where its norm beats the
    lesion gradient's, lesion gradient elsewhere in the region.
    ``source_only``: lesion gradient throughout the region.
    ``mixed_max``: whichever gradient has the larger norm, region-wide.
    Whole 3-vectors are selected; ties go to the lesion gradient.
    """
    if mode not in MODES:
        raise ParamOutOfRange(f"mode must be one of {MODES}, got {mode!r}")
    _check_dims(s.dims, g.dims, region.dims)
    gs = forward_gradient(s)
    gg = forward_gradient(g)
    if mode == "source_only":
        use_s = ~region.omega
    else:
        stronger = gs.norm() > gg.norm()
        if mode == "spb":
            stronger &= region.inner_boundary
        use_s = ~region.omega | stronger
    return GuidanceField(*(np.where(use_s, a, b) for a, b in zip(gs.components(), gg.components())))


class _Stencil:
    """Matrix-free operator ``A f = N_p f(p) - sum of in-region neighbours``."""

    def __init__(self, omega):
        self.coords = np.nonzero(omega)
        n = self.coords[0].size
        lookup = np.full(omega.shape, -1, dtype=np.int64)
        lookup[self.coords] = np.arange(n)
        self.neighbours = []
        self.outside = []
        for off in _OFFSETS:
            q = tuple(c + o for c, o in zip(self.coords, off))
            j = lookup[q]
            self.neighbours.append(j)
            self.outside.append(j < 0)
        self.diag = np.full(n, 6.0)

    def apply(self, x):
        y = self.diag * x
        for j in self.neighbours:
            inside = j >= 0
            y[inside] -= x[j[inside]]
        return y

    def rhs(self, s_data, div):
        b = -div[self.coords]
        for off, out in zip(_OFFSETS, self.outside):
            q = tuple(c[out] + o for c, o in zip(self.coords, off))
            b[out] += s_data[q]
        return b


def conjugate_gradient(apply, b, x0, rel_tol, max_iter, diag=None):
    """Solve ``A x = b`` for SPD ``A`` given as a callable.

    Returns ``(x, iterations, relative_residual)``. ``diag`` enables Jacobi
    preconditioning.
    """
    b_norm = np.linalg.norm(b)
    scale = b_norm if b_norm > 0 else 1.0
    x = np.array(x0, dtype=np.float64, copy=True)
    r = b - apply(x)
    res = np.linalg.norm(r) / scale
    if res <= rel_tol:
        return x, 0, res
    inv_d = None if diag is None else 1.0 / diag
    z = r if inv_d is None else inv_d * r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        ap = apply(p)
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        res = np.linalg.norm(r) / scale
        if res <= rel_tol:
            return x, it, res
        z = r if inv_d is None else inv_d * r
        rz_next = r @ z
        p = z + (rz_next / rz) * p
        rz = rz_next
    return x, max_iter, res


def assemble_dense(s_data, omega, V: GuidanceField):
    """Dense system for the region, assembled voxel by voxel."""
    coords = [tuple(int(i) for i in p) for p in np.argwhere(omega)]
    index = {p: k for k, p in enumerate(coords)}
    n = len(coords)
    A = np.zeros((n, n))
    b = np.zeros(n)
    comps = V.components()
    shape = omega.shape
    for k, p in enumerate(coords):
        div = 0.0
        for axis in range(3):
            div += comps[axis][p]
            back = list(p)
            back[axis] -= 1
            if back[axis] >= 0:
                div -= comps[axis][tuple(back)]
        b[k] = -div
        for off in _OFFSETS:
            q = tuple(pi + oi for pi, oi in zip(p, off))
            if not all(0 <= qi < ni for qi, ni in zip(q, shape)):
                continue
            A[k, k] += 1.0
            if q in index:
                A[k, index[q]] -= 1.0
            else:
                b[k] += s_data[q]
    return A, b, coords


def _solve(s: Volume3, region: BlendRegion, V: GuidanceField, cfg: SolverConfig):
    _check_dims(s.dims, region.dims, V.dims)
    s_data = np.asarray(s.data, dtype=np.float64)
    out = s_data.copy()
    n = region.size
    if n == 0:
        return out, SolveInfo(cfg.method, 0, 0.0, 0)
    if cfg.method == "dense":
        if n > DENSE_MAX_VOXELS:
            raise ParamOutOfRange(f"dense solve is limited to {DENSE_MAX_VOXELS} unknowns, region has {n}")
        A, b, coords = assemble_dense(s_data, region.omega, V)
        f = np.linalg.solve(A, b)
        res = np.linalg.norm(A @ f - b) / (np.linalg.norm(b) or 1.0)
        out[tuple(np.array(coords).T)] = f
        return out, SolveInfo("dense", 1, float(res), n)

    op = _Stencil(region.omega)
    b = op.rhs(s_data, _divergence_array(V))
    cap = cfg.iteration_cap(n)
    f, iters, res = conjugate_gradient(op.apply, b, s_data[op.coords], cfg.rel_tol, cap,
                                       op.diag if cfg.jacobi else None)
    if res > cfg.rel_tol:
        raise NotConverged(f"CG residual {res:.3e} > {cfg.rel_tol:.1e} after {iters} iterations", res)
    out[op.coords] = f
    return out, SolveInfo("cg", iters, float(res), n)


def _as_output(host: Volume3, data):
    dtype = host.data.dtype if np.issubdtype(host.data.dtype, np.floating) else np.float32
    return host.with_data(data.astype(dtype))


def solve_poisson(s: Volume3, region: BlendRegion, V: GuidanceField, cfg: SolverConfig = SolverConfig(),
                  *, return_info=False):
    """Replace ``s`` on the region by the solution of the discrete Poisson system."""
    data, info = _solve(s, region, V, cfg)
    out = _as_output(s, data)
    return (out, info) if return_info else out


def place_in_host(host_dims, patch_data, origin, dtype=np.float64):
    box = check_box(host_dims, origin, patch_data.shape)
    out = np.zeros(host_dims, dtype=dtype)
    out[box] = patch_data
    return out


def blend(host: Volume3, lesion: Volume3, lesion_mask: LabelMap3, origin, mode="spb",
          cfg: SolverConfig = SolverConfig(), *, return_info=False):
    """Composite ``lesion`` into ``host`` at ``origin`` over the lesion mask.

    Returns the blended volume and a host-sized label map carrying 2 on the
    blend region. Voxels outside the region are copied from ``host``.
    """
    _check_dims(lesion.dims, lesion_mask.dims)
    if not lesion_mask.is_binary():
        raise ParamOutOfRange("lesion mask must be restricted to {0, 1}")
    if lesion_mask.count(1) == 0:
        raise EmptyRegion("lesion mask is empty")
    g = Volume3(place_in_host(host.dims, lesion.data, origin), host.spacing)
    omega = place_in_host(host.dims, lesion_mask.data == 1, origin, dtype=bool)
    region = BlendRegion.from_mask(omega)
    V = build_guidance(host, g, region, mode)
    data, info = _solve(host, region, V, cfg)
    out = np.array(host.data, copy=True)
    out[region.omega] = data[region.omega].astype(out.dtype)
    labels = LabelMap3(np.where(region.omega, 2, 0).astype(np.uint8), host.spacing)
    result = (_as_output(host, out), labels)
    return (*result, info) if return_info else result
