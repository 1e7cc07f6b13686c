"""Dense operator assembly in a real trigonometric basis.

The scalar-field operators obtained by substituting the orbit-integrated
linearized distribution into Maxwell's equations are, at rate lam > 0,

    A1 h = -h'' - sigma_e h + sum_s int mu_e Q^lam h dv
    A2 h = -h'' + lam^2 h - sigma_vp h - sum_s int mu_e v2hat Q^lam(v2hat h) dv
    B  h = sigma_p h + sum_s int mu_e Q^lam(v2hat h) dv
    C(b) = b sum_s int mu_e Q^lam(v1hat) dv
    D(b) = b sum_s int v2hat mu_e Q^lam(v1hat) dv
    l    = (1/P) sum_s int int v1hat mu_e Q^lam(v1hat) dv dx

with sigma_* the local velocity moments of mu_e, mu_p.  At lam = 0 the
orbit average projection replaces Q^lam and the lam^2 term drops.  All
matrices are real and symmetric because the basis

    { 1, sqrt2 cos(m k1 x), sqrt2 sin(m k1 x) }   (orthonormal in (1/P)int)

is real; the electric potential block drops the constant mode (only
derivatives of phi enter the field equations).  A single backward-orbit
quadrature pass per (species, lam) yields every block: the trig kernel
batch provides the averages of e^{i m k1 X(s)}, v2hat e^{i m k1 X(s)} and
v1hat(s), and the blocks are velocity moments of those arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .equilibrium import EquilibriumFields, coefficient_moments
from .errors import AsymmetryTooLarge, ProjectionDisagreement
from .kinetic import (PhaseGrid, ProjectionOptions, QuadratureOptions,
                      TrigKernelBatch, average_orbit_quadrature,
                      exp_orbit_quadrature, run_orbit_quadrature)
from .profiles import SPECIES, EquilibriumProfile

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class SpectralBasis:
    """Real Fourier basis on one period, orthonormal under (1/P) int_0^P.

    Index layout: [1,] cos(k1 x), sin(k1 x), cos(2 k1 x), sin(2 k1 x), ...
    with the constant dropped when mean_zero (the electric-potential slot).
    """

    period: float
    n_modes: int
    mean_zero: bool = False

    @property
    def dim(self) -> int:
        return 2 * self.n_modes + (0 if self.mean_zero else 1)

    def mode_of(self, j: int):
        """(m, kind) with kind in {'const','cos','sin'} for basis index j."""
        if not self.mean_zero:
            if j == 0:
                return 0, "const"
            j -= 1
        m = j // 2 + 1
        return m, ("cos" if j % 2 == 0 else "sin")

    def laplacian_eigenvalues(self) -> np.ndarray:
        """Diagonal of -d^2/dx^2 in this basis: (m k1)^2 per index."""
        k1 = 2.0 * np.pi / self.period
        return np.array([(self.mode_of(j)[0] * k1) ** 2 for j in range(self.dim)])

    def evaluate(self, x) -> np.ndarray:
        """(dim, len(x)) sample matrix."""
        x = np.asarray(x, float)
        k1 = 2.0 * np.pi / self.period
        rows = []
        for j in range(self.dim):
            m, kind = self.mode_of(j)
            if kind == "const":
                rows.append(np.ones_like(x))
            elif kind == "cos":
                rows.append(SQRT2 * np.cos(m * k1 * x))
            else:
                rows.append(SQRT2 * np.sin(m * k1 * x))
        return np.array(rows)

    def project_grid(self, values: np.ndarray) -> np.ndarray:
        """Coefficients <values, b_j> under (1/P) int, from uniform x samples.

        Exact for band-limited data (n_x > 2 n_modes).
        """
        n_x = values.shape[-1]
        if n_x <= 2 * self.n_modes:
            raise ValueError(f"{n_x} x-nodes cannot resolve {self.n_modes} modes")
        fh = np.fft.rfft(values) / n_x
        out = np.empty(values.shape[:-1] + (self.dim,))
        for j in range(self.dim):
            m, kind = self.mode_of(j)
            if kind == "const":
                out[..., j] = fh[..., 0].real
            elif kind == "cos":
                out[..., j] = SQRT2 * fh[..., m].real
            else:
                out[..., j] = -SQRT2 * fh[..., m].imag
        return out

    def synthesize(self, coeffs: np.ndarray, x) -> np.ndarray:
        return np.tensordot(np.asarray(coeffs), self.evaluate(x), axes=(-1, 0))


@dataclass(frozen=True)
class OperatorSet:
    """Assembled dense blocks at one rate lam (or their lam = 0 projections)."""

    lam: float
    a1: np.ndarray          # mean-zero basis
    a2: np.ndarray          # full basis
    b: np.ndarray           # full -> mean-zero
    c: np.ndarray           # R -> mean-zero
    d: np.ndarray           # R -> full
    l_scalar: float
    basis_phi: SpectralBasis
    basis_psi: SpectralBasis
    period: float
    diagnostics: dict = field(default_factory=dict)

    def dump_csv(self, path, grid_hash: str = ""):
        """Portable row-major CSV dump with a metadata header line."""
        with open(path, "w") as fh:
            fh.write(f"# lam={self.lam!r} modes={self.basis_psi.n_modes} "
                     f"period={self.period!r} grid={grid_hash}\n")
            for name, arr in (("a1", self.a1), ("a2", self.a2), ("b", self.b),
                              ("c", self.c.reshape(-1, 1)),
                              ("d", self.d.reshape(-1, 1))):
                fh.write(f"# block {name} shape={arr.shape[0]}x{arr.shape[1]}\n")
                for row in arr:
                    fh.write(",".join(repr(float(v)) for v in row) + "\n")
            fh.write(f"# block l 1x1\n{self.l_scalar!r}\n")


@dataclass(frozen=True)
class BlockMatrix:
    """Symmetric block arrangement of an OperatorSet, scaled by the period.

    Row blocks: mean-zero phi, full psi, scalar b.  The corner entry is
    -P (lam^2 - l) for lam > 0 assemblies and +P l for the lam = 0 form.
    """

    matrix: np.ndarray
    dim_phi: int
    dim_psi: int
    lam: float
    period: float

    @property
    def phi_slice(self):
        return slice(0, self.dim_phi)

    @property
    def psi_slice(self):
        return slice(self.dim_phi, self.dim_phi + self.dim_psi)

    @property
    def b_index(self):
        return self.dim_phi + self.dim_psi

    def block(self, row: str, col: str) -> np.ndarray:
        sl = {"phi": self.phi_slice, "psi": self.psi_slice,
              "b": slice(self.b_index, self.b_index + 1)}
        return self.matrix[sl[row], sl[col]]


class AssemblyContext:
    """Shared state for assembling operator sets at many rates.

    Holds the phase grid, the mu-derivative moment weights per species and a
    cache of assembled OperatorSets keyed by lam.  One orbit-quadrature pass
    per (species, lam) produces all blocks.
    """

    def __init__(self, profile: EquilibriumProfile, fields: EquilibriumFields,
                 grid: PhaseGrid, n_modes: int,
                 quad: QuadratureOptions | None = None,
                 proj: ProjectionOptions | None = None,
                 asym_tol: float = 1e-8, moment_tail_tol: float = 1e-6):
        self.profile = profile
        self.fields = fields
        self.grid = grid
        self.quad = quad or QuadratureOptions()
        self.proj = proj or ProjectionOptions()
        self.asym_tol = asym_tol
        self.basis_phi = SpectralBasis(profile.period, n_modes, mean_zero=True)
        self.basis_psi = SpectralBasis(profile.period, n_modes, mean_zero=False)
        self.coeff = coefficient_moments(profile, grid.vgrid, grid.phi_x,
                                         grid.psi_x, tail_tol=moment_tail_tol)
        self._ge = {}
        self._gev2 = {}
        self._gev1 = {}
        vg = grid.vgrid
        w2 = vg.weight2d[None, :, :]
        for s in SPECIES:
            e, p = grid.invariants(s)
            ge = profile.mu_e(s)(e, p) * w2
            self._ge[s] = ge
            self._gev2[s] = ge * vg.v2hat[None, :, :]
            self._gev1[s] = ge * vg.v1hat[None, :, :]
        self._cache: dict[float, OperatorSet] = {}

    # -- orbit moments ------------------------------------------------------

    def _trig_pass(self, species: str, quad) -> TrigKernelBatch:
        batch = TrigKernelBatch(self.basis_psi.n_modes, self.grid.shape,
                                with_v2=True, with_v1=True)
        run_orbit_quadrature(self.fields, species, self.grid, quad, [batch],
                             max_step=self.quad.max_step)
        return batch

    def _orbit_moments(self, quad):
        """Velocity moments of the orbit averages, summed over species.

        Returns dict with complex (n_modes+1, n_x) arrays qa1, qa2, qb, qba
        (adjoint-route b for consistency diagnostics), real qc, qd (n_x,)
        and scalar l.  Field-free equilibria have species-independent
        characteristics, so one orbit pass serves both species.
        """
        n_modes = self.basis_psi.n_modes
        n_x = self.grid.n_x
        qa1 = np.zeros((n_modes + 1, n_x), complex)
        qa2 = np.zeros_like(qa1)
        qb = np.zeros_like(qa1)
        qba = np.zeros_like(qa1)
        qc = np.zeros(n_x)
        qd = np.zeros(n_x)
        l_val = 0.0
        shared = self.fields.is_field_free
        batch = None
        for s in SPECIES:
            if batch is None or not shared:
                batch = self._trig_pass(s, quad)
            ge, gev2, gev1 = self._ge[s], self._gev2[s], self._gev1[s]
            qa1 += np.einsum("xij,mxij->mx", ge, batch.acc1, optimize=True)
            qa2 += np.einsum("xij,mxij->mx", gev2, batch.acc2, optimize=True)
            qb += np.einsum("xij,mxij->mx", ge, batch.acc2, optimize=True)
            qba += np.einsum("xij,mxij->mx", gev2, batch.acc1, optimize=True)
            qc += np.einsum("xij,xij->x", ge, batch.acc_v1, optimize=True)
            qd += np.einsum("xij,xij->x", gev2, batch.acc_v1, optimize=True)
            l_val += float(np.sum(gev1 * batch.acc_v1)) * self.grid.dx
        l_val /= self.profile.period
        return dict(qa1=qa1, qa2=qa2, qb=qb, qba=qba, qc=qc, qd=qd, l=l_val)

    def _moments_at(self, lam: float):
        if lam > 0.0:
            quad = exp_orbit_quadrature(lam, self.quad.tail_tol,
                                        self.quad.panel_width,
                                        self.quad.panel_nodes)
            return self._orbit_moments(quad), {}
        # lam = 0: time-average projection with Abel cross-check
        quad = average_orbit_quadrature(self.proj.t_avg, self.quad.panel_width,
                                        self.quad.panel_nodes)
        mom = self._orbit_moments(quad)
        diag = {}
        if self.proj.check:
            abel_quad = exp_orbit_quadrature(self.proj.lambda_proj,
                                             self.proj.check_tail_tol,
                                             self.quad.panel_width,
                                             self.quad.panel_nodes)
            abel = self._orbit_moments(abel_quad)
            # normalize by the kinetic-term bound sum_s int |mu_e| dv (both
            # realizations have unit operator norm, so entry errors propagate
            # relative to this scale, not to the moments themselves, which
            # vanish in the projection limit for nonzero modes)
            kin_scale = max(
                float(np.max(sum(np.sum(np.abs(self._ge[s]), axis=(1, 2))
                                 for s in SPECIES))), 1e-30)
            worst = 0.0
            for key in ("qa1", "qa2", "qb"):
                worst = max(worst, float(np.max(np.abs(mom[key] - abel[key]))
                                         / kin_scale))
            diag["projection_disagreement"] = worst
            if worst > self.proj.proj_tol:
                raise ProjectionDisagreement(
                    f"time-average and Abel-limit moments differ by {worst:.3e} "
                    f"of the kinetic scale (tol {self.proj.proj_tol})")
        return mom, diag

    # -- matrix assembly ----------------------------------------------------

    def _mode_series(self, qarr: np.ndarray, basis: SpectralBasis) -> np.ndarray:
        """x-space columns of the orbit term for every basis function."""
        cols = np.empty((basis.dim, qarr.shape[1]))
        for j in range(basis.dim):
            m, kind = basis.mode_of(j)
            if kind == "const":
                cols[j] = qarr[0].real
            elif kind == "cos":
                cols[j] = SQRT2 * qarr[m].real
            else:
                cols[j] = SQRT2 * qarr[m].imag
        return cols

    def _check_symmetry(self, mat: np.ndarray, label: str) -> np.ndarray:
        scale = max(float(np.max(np.abs(mat))), 1e-30)
        asym = float(np.max(np.abs(mat - mat.T))) / scale
        if asym > self.asym_tol:
            raise AsymmetryTooLarge(
                f"{label} asymmetry {asym:.3e} exceeds tol {self.asym_tol:.1e}")
        return 0.5 * (mat + mat.T), asym

    def operator_set(self, lam: float) -> OperatorSet:
        """Assemble (cached) dense blocks at rate lam >= 0."""
        key = float(lam)
        if key in self._cache:
            return self._cache[key]
        if lam < 0.0:
            raise ValueError("lam must be nonnegative")
        mom, diag = self._moments_at(lam)
        bp, bq = self.basis_phi, self.basis_psi
        x = self.grid.x
        phi_rows = bp.evaluate(x)      # (dim_phi, n_x)
        psi_rows = bq.evaluate(x)      # (dim_psi, n_x)
        lap_phi = bp.laplacian_eigenvalues()
        lap_psi = bq.laplacian_eigenvalues()
        sig_e = self.coeff.sigma_e
        sig_p = self.coeff.sigma_p
        sig_vp = self.coeff.sigma_vp

        # A1: columns over mean-zero basis, projected on mean-zero basis
        cols = (lap_phi[:, None] * phi_rows - sig_e[None, :] * phi_rows
                + self._mode_series(mom["qa1"], bp))
        a1_raw = bp.project_grid(cols).T     # [i, j] = <col_j, b_i>
        a1, asym1 = self._check_symmetry(a1_raw, "A1")

        # A2: full basis, + lam^2, minus the v2-weighted orbit term
        cols = ((lap_psi[:, None] + lam * lam) * psi_rows
                - sig_vp[None, :] * psi_rows
                - self._mode_series(mom["qa2"], bq))
        a2_raw = bq.project_grid(cols).T
        a2, asym2 = self._check_symmetry(a2_raw, "A2")

        # B: full basis -> mean-zero basis
        cols = sig_p[None, :] * psi_rows + self._mode_series(mom["qb"], bq)
        b = bp.project_grid(cols).T          # (dim_phi, dim_psi)
        # adjoint-route consistency: (B*)^T assembled from the other moments
        cols_adj = sig_p[None, :] * phi_rows + self._mode_series(mom["qba"], bp)
        b_adj = bq.project_grid(cols_adj).T  # (dim_psi, dim_phi)
        scale_b = max(float(np.max(np.abs(b))), 1e-30)
        adj_err = float(np.max(np.abs(b - b_adj.T))) / scale_b

        c = bp.project_grid(mom["qc"])
        d = bq.project_grid(mom["qd"])

        diag.update(dict(asym_a1=asym1, asym_a2=asym2, b_adjoint_error=adj_err,
                         coeff_tail=self.coeff.tail))
        opset = OperatorSet(lam=key, a1=a1, a2=a2, b=b, c=c, d=d,
                            l_scalar=mom["l"], basis_phi=bp, basis_psi=bq,
                            period=self.profile.period, diagnostics=diag)
        self._cache[key] = opset
        return opset

    def clear_cache(self):
        self._cache.clear()


def assemble_operator_set(lam, profile, fields, grid, n_modes,
                          quad: QuadratureOptions | None = None,
                          proj: ProjectionOptions | None = None,
                          **kwargs) -> OperatorSet:
    """One-shot assembly without a shared context."""
    ctx = AssemblyContext(profile, fields, grid, n_modes, quad, proj, **kwargs)
    return ctx.operator_set(lam)


def assemble_m(opset: OperatorSet) -> BlockMatrix:
    """Symmetric block matrix at lam > 0, scaled by the period.

    [  -A1   B    C  ]
    [  B^T   A2  -D  ]      corner: -P (lam^2 - l)
    [  C^T  -D^T  .  ]
    """
    if opset.lam <= 0.0:
        raise ValueError("assemble_m requires lam > 0; use assemble_m0")
    return _block_matrix(opset, opset.c, opset.d,
                         -(opset.lam**2 - opset.l_scalar))


def assemble_m0(opset: OperatorSet) -> BlockMatrix:
    """lam = 0 block matrix: coupling column/row zero, corner +P l0."""
    if opset.lam != 0.0:
        raise ValueError("assemble_m0 requires a lam = 0 operator set")
    zc = np.zeros_like(opset.c)
    zd = np.zeros_like(opset.d)
    return _block_matrix(opset, zc, zd, opset.l_scalar)


def _block_matrix(opset: OperatorSet, c, d, corner) -> BlockMatrix:
    np_, nq = opset.a1.shape[0], opset.a2.shape[0]
    dim = np_ + nq + 1
    m = np.zeros((dim, dim))
    m[:np_, :np_] = -opset.a1
    m[:np_, np_:np_ + nq] = opset.b
    m[np_:np_ + nq, :np_] = opset.b.T
    m[np_:np_ + nq, np_:np_ + nq] = opset.a2
    m[:np_, -1] = c
    m[-1, :np_] = c
    m[np_:np_ + nq, -1] = -d
    m[-1, np_:np_ + nq] = -d
    m[-1, -1] = corner
    m *= opset.period
    return BlockMatrix(matrix=m, dim_phi=np_, dim_psi=nq, lam=opset.lam,
                       period=opset.period)
