"""Weighted phase-space inner products, transport operator, orbit averages.

The species Hilbert spaces carry the weight w(e) = c (1+|e|)^(-alpha), so

    <f, g> = int_0^P int f g w(e) dv dx

on the tensor grid (uniform x) x (Gauss-Legendre in v1) x (GL in v2).

Two orbit functionals are realized by quadrature along backward
characteristics, reusing one trajectory ensemble per pass:

    exponential average   (Q^lam k)(x,v) = int_{-inf}^0 lam e^{lam s} k(orbit(s)) ds
    time average          (Pbar k)(x,v)  = (1/T) int_{-T}^0 k(orbit(s)) ds

Q^lam has operator norm one, tends to the identity as lam -> inf and to the
orthogonal projection onto the transport kernel as lam -> 0; the time
average is the computable realization of that projection and is
cross-checked against Q at a small rate (Abel limit).  Each s integral uses
composite Gauss-Legendre panels narrow enough for both the e^{lam s} scale
and the orbit oscillation; the backward horizon ln(1/tail_tol)/lam bounds
the dropped tail by tail_tol.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .characteristics import OrbitEnsemble
from .equilibrium import EquilibriumFields, VelocityGrid, trig_coefficients
from .errors import GridMismatch, ProjectionDisagreement
from .profiles import EquilibriumProfile, species_sign

# ---------------------------------------------------------------------------
# phase grid and functions
# ---------------------------------------------------------------------------


class PhaseGrid:
    """Tensor quadrature grid over one period times the truncated v domain.

    x resolution is independent of the equilibrium's own grid; potentials are
    sampled here by trigonometric interpolation.  Species weights w(e+/-) are
    cached per species.
    """

    def __init__(self, profile: EquilibriumProfile, fields: EquilibriumFields,
                 n_x: int, n_v: int):
        self.profile = profile
        self.fields = fields
        self.period = profile.period
        self.x = self.period * np.arange(n_x) / n_x
        self.vgrid = VelocityGrid(v_max=profile.v_max, n_v=n_v)
        self.phi_x = fields.phi_at(self.x)
        self.psi_x = fields.psi_at(self.x)
        self._cache: dict = {}

    @property
    def n_x(self) -> int:
        return self.x.shape[0]

    @property
    def n_v(self) -> int:
        return self.vgrid.n_v

    @property
    def shape(self):
        return (self.n_x, self.n_v, self.n_v)

    @property
    def dx(self) -> float:
        return self.period / self.n_x

    def invariants(self, species: str):
        """(e, p) arrays on the full grid for one species."""
        key = ("ep", species)
        if key not in self._cache:
            sgn = species_sign(species)
            vg = self.vgrid
            e = vg.gamma[None, :, :] + sgn * self.phi_x[:, None, None]
            p = vg.v2[None, :, :] + sgn * self.psi_x[:, None, None]
            self._cache[key] = (e, np.broadcast_to(p, e.shape))
        return self._cache[key]

    def species_weight(self, species: str):
        key = ("w", species)
        if key not in self._cache:
            e, _ = self.invariants(species)
            self._cache[key] = self.profile.weight(e)
        return self._cache[key]

    def measure(self, species: str):
        """Full quadrature measure w(e) * v-weights * dx per node."""
        key = ("meas", species)
        if key not in self._cache:
            self._cache[key] = (self.species_weight(species)
                                * self.vgrid.weight2d[None, :, :] * self.dx)
        return self._cache[key]

    def start_arrays(self):
        """Broadcast (x, v1, v2) initial conditions for the orbit ensemble."""
        shape = self.shape
        x0 = np.broadcast_to(self.x[:, None, None], shape)
        v1 = np.broadcast_to(self.vgrid.v1[None, :, :], shape)
        v2 = np.broadcast_to(self.vgrid.v2[None, :, :], shape)
        return x0, v1, v2

    def grid_hash(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for arr in (self.x, self.vgrid.nodes, self.phi_x, self.psi_x):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


@dataclass
class PhaseFunction:
    """Real scalar sampled on a PhaseGrid for one species."""

    values: np.ndarray
    species: str
    grid: PhaseGrid

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise GridMismatch(
                f"values shape {self.values.shape} != grid {self.grid.shape}")

    def norm(self) -> float:
        return float(np.sqrt(weighted_inner(self, self)))


def _check_compatible(f: PhaseFunction, g: PhaseFunction):
    if f.grid is not g.grid:
        raise GridMismatch("phase functions live on different grids")
    if f.species != g.species:
        raise GridMismatch(f"species mismatch: {f.species} vs {g.species}")


def weighted_inner(f: PhaseFunction, g: PhaseFunction) -> float:
    """<f, g> in the species-weighted L2 over one period."""
    _check_compatible(f, g)
    meas = f.grid.measure(f.species)
    return float(np.sum(f.values * g.values * meas))


# ---------------------------------------------------------------------------
# transport operator (for adjointness/kernel diagnostics)
# ---------------------------------------------------------------------------


def _three_point_weights(a, b, c, at):
    """Derivative weights at `at` from Lagrange basis on points (a, b, c)."""
    wa = (2 * at - b - c) / ((a - b) * (a - c))
    wb = (2 * at - a - c) / ((b - a) * (b - c))
    wc = (2 * at - a - b) / ((c - a) * (c - b))
    return wa, wb, wc


def centered_diff_matrix(nodes: np.ndarray) -> np.ndarray:
    """Second-order first-derivative matrix on nonuniform nodes."""
    n = nodes.size
    d = np.zeros((n, n))
    for i in range(n):
        j = min(max(i, 1), n - 2)  # stencil center; one-sided at the ends
        a, b, c = nodes[j - 1], nodes[j], nodes[j + 1]
        d[i, j - 1], d[i, j], d[i, j + 1] = _three_point_weights(a, b, c, nodes[i])
    return d


def apply_d(k: PhaseFunction, fields: EquilibriumFields) -> PhaseFunction:
    """Transport derivative v1hat dx k +/- (E1+v2hat B) dv1 k -/+ v1hat B dv2 k.

    Spectral in x, second-order centered differences on the nonuniform v
    nodes.  Intended for adjointness and kernel checks, not for assembly.
    """
    grid = k.grid
    vg = grid.vgrid
    sgn = species_sign(k.species)
    vals = k.values

    kx = 2.0 * np.pi * np.arange(grid.n_x // 2 + 1) / grid.period
    fh = np.fft.rfft(vals, axis=0) * (1j * kx)[:, None, None]
    if grid.n_x % 2 == 0:
        fh[-1] = 0.0
    d_x = np.fft.irfft(fh, grid.n_x, axis=0)

    dv = centered_diff_matrix(vg.nodes)
    d_v1 = np.einsum("ab,xbj->xaj", dv, vals)
    d_v2 = np.einsum("ab,xib->xia", dv, vals)

    e1 = fields.e1_at(grid.x)[:, None, None]
    b0 = fields.b0_at(grid.x)[:, None, None]
    v1h = vg.v1hat[None, :, :]
    v2h = vg.v2hat[None, :, :]
    out = v1h * d_x + sgn * (e1 + v2h * b0) * d_v1 - sgn * v1h * b0 * d_v2
    return PhaseFunction(out, k.species, grid)


# ---------------------------------------------------------------------------
# s-quadrature construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SQuadrature:
    """Backward-time quadrature nodes (descending from 0) with gap structure.

    gaps[i] = s[i] - s[i-1] < 0; gap_ids index the small table of distinct
    gap values so the field-free ensemble can cache phase factors.
    """

    s_nodes: np.ndarray
    weights: np.ndarray
    gaps: np.ndarray
    gap_ids: np.ndarray
    horizon: float
    total_weight: float


def _panel_layout(horizon: float, panel_width: float, panel_nodes: int):
    gl_x, gl_w = np.polynomial.legendre.leggauss(panel_nodes)
    # offsets within a panel [-w, 0], descending (closest to 0 first)
    off = (-0.5 * panel_width + 0.5 * panel_width * gl_x)[::-1]
    wts = (0.5 * panel_width * gl_w)[::-1]
    n_panels = max(1, int(np.ceil(horizon / panel_width)))
    starts = -panel_width * np.arange(n_panels)
    s = (starts[:, None] + off[None, :]).ravel()
    w = np.tile(wts, n_panels)
    # gap ids: 0 = entry into a panel from its start, 1..k-1 = interior,
    # k = panel-to-panel hop; values repeat exactly by construction
    k = panel_nodes
    ids = np.empty(s.size, dtype=np.int64)
    ids[0] = 0
    for j in range(1, k):
        ids[j::k] = j
    ids[k::k] = k
    gap_table = np.empty(k + 1)
    gap_table[0] = off[0]
    gap_table[1:k] = off[1:] - off[:-1]
    gap_table[k] = off[0] - off[-1] - panel_width
    gaps = gap_table[ids]
    return s, w, gaps, ids


def exp_orbit_quadrature(lam: float, tail_tol: float = 4e-18,
                         panel_width: float = 0.45, panel_nodes: int = 6) -> SQuadrature:
    """Quadrature for int_{-S}^0 lam e^{lam s} (.) ds with e^{-lam S} <= tail_tol."""
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    horizon = np.log(1.0 / tail_tol) / lam
    width = min(panel_width, 0.5 / lam)
    s, w, gaps, ids = _panel_layout(horizon, width, panel_nodes)
    weights = w * lam * np.exp(lam * s)
    return SQuadrature(s, weights, gaps, ids, horizon, float(np.sum(weights)))


def average_orbit_quadrature(t_avg: float, panel_width: float = 0.45,
                             panel_nodes: int = 6) -> SQuadrature:
    """Quadrature for (1/T) int_{-T}^0 (.) ds; T is rounded up to whole panels."""
    s, w, gaps, ids = _panel_layout(t_avg, panel_width, panel_nodes)
    t_eff = panel_width * np.ceil(t_avg / panel_width)
    weights = w / t_eff
    return SQuadrature(s, weights, gaps, ids, t_eff, float(np.sum(weights)))


# ---------------------------------------------------------------------------
# kernel batches accumulated along orbits
# ---------------------------------------------------------------------------


class TrigKernelBatch:
    """Accumulates orbit averages of e^{i m k1 X(s)} for m = 0..n_modes.

    acc1[m]  ~ average of e^{i m k1 X(s)}
    acc2[m]  ~ average of v2hat(s) e^{i m k1 X(s)}   (with_v2)
    acc_v1   ~ average of v1hat(s)                    (with_v1)

    Real and imaginary parts give the averages of cos and sin modes.  In the
    field-free case velocities are constant along orbits, so the v-weighted
    accumulators reduce to pointwise multiples of acc1 and are formed at
    finalize time instead of per step.
    """

    def __init__(self, n_modes: int, shape, with_v2: bool = True,
                 with_v1: bool = True):
        self.n_modes = n_modes
        self.acc1 = np.zeros((n_modes + 1,) + tuple(shape), complex)
        self.with_v2 = with_v2
        self.with_v1 = with_v1
        self.acc2 = None
        self.acc_v1 = None
        self.total_weight = 0.0
        self._ff = False

    def prepare(self, ens: OrbitEnsemble):
        self._ff = ens.field_free
        shape = ens.x.shape
        if self.with_v2 and not self._ff:
            self.acc2 = np.zeros((self.n_modes + 1,) + shape, complex)
        if self.with_v1 and not self._ff:
            self.acc_v1 = np.zeros(shape)

    def accumulate(self, ens: OrbitEnsemble, w: float):
        z = ens.z
        self.total_weight += w
        self.acc1[0] += w
        wv2 = None
        if self.with_v2 and not self._ff:
            wv2 = w * ens.v2hat
            self.acc2[0] += wv2
        if self.with_v1 and not self._ff:
            self.acc_v1 += w * ens.v1hat
        zp = z
        for m in range(1, self.n_modes + 1):
            self.acc1[m] += w * zp
            if wv2 is not None:
                self.acc2[m] += wv2 * zp
            if m < self.n_modes:
                zp = zp * z

    def finalize(self, ens: OrbitEnsemble):
        if self._ff:
            if self.with_v2:
                self.acc2 = ens.v2hat[None, ...] * self.acc1
            if self.with_v1:
                self.acc_v1 = ens.v1hat * self.total_weight


class PhaseFunctionKernelBatch:
    """Evaluates grid-sampled phase functions along orbits.

    x dependence is a trigonometric series (exact for band-limited data);
    the v dependence is barycentric Lagrange interpolation on the GL nodes.
    """

    def __init__(self, funcs: Sequence[PhaseFunction]):
        self.funcs = list(funcs)
        grid = self.funcs[0].grid
        self.grid = grid
        n_x = grid.n_x
        self.coeffs = []
        for f in self.funcs:
            # one-sided complex coefficients along x for every (v1, v2) node
            fh = np.fft.rfft(f.values, axis=0) / n_x
            c = np.empty_like(fh)
            c[0] = fh[0].real
            c[1:] = 2.0 * fh[1:]
            if n_x % 2 == 0:
                c[-1] = fh[-1].real
            self.coeffs.append(c)
        self.n_modes = self.coeffs[0].shape[0] - 1
        nodes = grid.vgrid.nodes
        diff = nodes[:, None] - nodes[None, :]
        np.fill_diagonal(diff, 1.0)
        bw = 1.0 / np.prod(diff, axis=1)
        self.bary_w = bw / np.max(np.abs(bw))
        self.acc = [np.zeros(grid.shape) for _ in self.funcs]
        self._ff = False
        self._dm = None

    def _bary_matrix(self, v):
        """Barycentric evaluation weights, rows = flattened points."""
        nodes = self.grid.vgrid.nodes
        d = v.reshape(-1, 1) - nodes[None, :]
        exact = d == 0.0
        d = np.where(exact, 1.0, d)
        t = self.bary_w[None, :] / d
        t = np.where(np.any(exact, axis=1, keepdims=True),
                     exact.astype(float), t)
        return t / np.sum(t, axis=1, keepdims=True)

    def _mode_values(self, ens: OrbitEnsemble):
        b1 = self._bary_matrix(ens.v1)
        b2 = self._bary_matrix(ens.v2)
        out = []
        for c in self.coeffs:
            # t[m, n] = sum_ij c[m,i,j] b1[n,i] b2[n,j]
            t = np.einsum("ni,mij,nj->mn", b1, c, b2, optimize=True)
            out.append(t)
        return out

    def prepare(self, ens: OrbitEnsemble):
        self._ff = ens.field_free
        if self._ff:
            self._dm = self._mode_values(ens)

    def accumulate(self, ens: OrbitEnsemble, w: float):
        zflat = ens.z.reshape(-1)
        dm = self._dm if self._ff else self._mode_values(ens)
        zp = np.ones_like(zflat)
        vals = [d[0].real.copy() for d in dm]
        for m in range(1, self.n_modes + 1):
            zp = zp * zflat
            for v, d in zip(vals, dm):
                v += (d[m] * zp).real
        for acc, v in zip(self.acc, vals):
            acc += w * v.reshape(acc.shape)

    def finalize(self, ens: OrbitEnsemble):
        pass


class CallableKernelBatch:
    """Evaluates callables k(x, v1, v2) along orbits (x unreduced)."""

    def __init__(self, funcs: Sequence[Callable], shape):
        self.funcs = list(funcs)
        self.acc = [np.zeros(shape) for _ in self.funcs]

    def prepare(self, ens: OrbitEnsemble):
        pass

    def accumulate(self, ens: OrbitEnsemble, w: float):
        for acc, f in zip(self.acc, self.funcs):
            acc += w * f(ens.x, ens.v1, ens.v2)

    def finalize(self, ens: OrbitEnsemble):
        pass


def run_orbit_quadrature(fields: EquilibriumFields, species: str,
                         grid: PhaseGrid, quad: SQuadrature, batches,
                         max_step: float = 0.12):
    """Advance one backward ensemble through quad, feeding all batches."""
    x0, v1_0, v2_0 = grid.start_arrays()
    ens = OrbitEnsemble(fields, species, x0, v1_0, v2_0, max_step=max_step)
    for b in batches:
        b.prepare(ens)
    for i in range(quad.s_nodes.size):
        ens.advance_by(float(quad.gaps[i]), int(quad.gap_ids[i]))
        w = float(quad.weights[i])
        for b in batches:
            b.accumulate(ens, w)
    for b in batches:
        b.finalize(ens)
    return ens


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureOptions:
    tail_tol: float = 4e-18
    panel_width: float = 0.45
    panel_nodes: int = 6
    max_step: float = 0.12


@dataclass(frozen=True)
class ProjectionOptions:
    t_avg: float = 300.0
    lambda_proj: float = 1e-2
    proj_tol: float = 0.05
    check: bool = True
    check_tail_tol: float = 1e-4
    quad: QuadratureOptions = field(default_factory=QuadratureOptions)


def _as_batch(k, grid: PhaseGrid):
    if isinstance(k, PhaseFunction):
        return PhaseFunctionKernelBatch([k]), "phase"
    if callable(k):
        return CallableKernelBatch([k], grid.shape), "callable"
    arr = np.asarray(k, float)
    if arr.shape == (grid.n_x,):
        # x-only function: combine trig-mode averages with its coefficients
        return trig_coefficients(arr), "xseries"
    raise GridMismatch(f"cannot interpret kernel of shape {arr.shape}")


def _combine_xseries(coeffs, batch: TrigKernelBatch):
    acc = np.zeros(batch.acc1.shape[1:])
    for m in range(min(coeffs.shape[0], batch.n_modes + 1)):
        if coeffs[m] != 0.0:
            acc += (coeffs[m] * batch.acc1[m]).real
    return acc


def _apply_orbit_functional(k, quad: SQuadrature, fields, species, grid,
                            max_step):
    spec = _as_batch(k, grid)
    if spec[1] == "xseries":
        coeffs = spec[0]
        batch = TrigKernelBatch(coeffs.shape[0] - 1, grid.shape,
                                with_v2=False, with_v1=False)
        run_orbit_quadrature(fields, species, grid, quad, [batch], max_step)
        vals = _combine_xseries(coeffs, batch)
    else:
        batch = spec[0]
        run_orbit_quadrature(fields, species, grid, quad, [batch], max_step)
        vals = batch.acc[0]
    return PhaseFunction(vals, species, grid)


def apply_q_lambda(k, lam: float, fields: EquilibriumFields, species: str,
                   grid: PhaseGrid, opts: QuadratureOptions | None = None) -> PhaseFunction:
    """Exponentially weighted backward orbit average of k at rate lam > 0.

    k may be a PhaseFunction (tensor interpolation along orbits), an array of
    x-grid values (trigonometric interpolation), or a callable k(x, v1, v2).
    """
    opts = opts or QuadratureOptions()
    quad = exp_orbit_quadrature(lam, opts.tail_tol, opts.panel_width,
                                opts.panel_nodes)
    return _apply_orbit_functional(k, quad, fields, species, grid, opts.max_step)


def apply_projection(k, fields: EquilibriumFields, species: str, grid: PhaseGrid,
                     opts: ProjectionOptions | None = None) -> PhaseFunction:
    """Orthogonal projection onto the transport kernel via long-time averaging.

    Realized as the orbit average over [-T, 0]; cross-validated against the
    small-rate exponential average (Abel limit) and raises
    ProjectionDisagreement when the two differ by more than proj_tol in the
    weighted norm relative to ||k||.  Orbits are averaged individually, so
    disconnected level-set components with equal invariants are averaged
    separately, matching constancy on connected components.
    """
    opts = opts or ProjectionOptions()
    quad = average_orbit_quadrature(opts.t_avg, opts.quad.panel_width,
                                    opts.quad.panel_nodes)
    avg = _apply_orbit_functional(k, quad, fields, species, grid,
                                  opts.quad.max_step)
    if opts.check:
        qsm = apply_q_lambda(
            k, opts.lambda_proj, fields, species, grid,
            replace(opts.quad, tail_tol=opts.check_tail_tol))
        knorm = _reference_norm(k, grid, species)
        diff = PhaseFunction(avg.values - qsm.values, species, grid).norm()
        if diff > opts.proj_tol * max(knorm, 1e-30):
            raise ProjectionDisagreement(
                f"orbit average and Abel limit differ by {diff:.3e} "
                f"(relative {diff / max(knorm, 1e-30):.3e}, tol {opts.proj_tol})")
    return avg


def _reference_norm(k, grid: PhaseGrid, species: str) -> float:
    if isinstance(k, PhaseFunction):
        return k.norm()
    if callable(k):
        x0, v1, v2 = grid.start_arrays()
        vals = k(x0, v1, v2)
    else:
        vals = np.broadcast_to(np.asarray(k, float)[:, None, None], grid.shape)
    return PhaseFunction(np.array(vals, float), species, grid).norm()
