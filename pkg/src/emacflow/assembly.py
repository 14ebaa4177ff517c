"""Assembly of the mixed Navier-Stokes forms on a Taylor-Hood space.

All matrices are scipy CSR over the full mixed layout [u_x | u_y | p | lam].
Quadrature exactness defaults to 2k for bilinear forms and 3k for the
convective forms, which makes the EMAC/skew conservation identities hold
to machine precision on straight elements.
"""

import enum

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .quadrature import triangle_rule, MAX_DEGREE
from .spaces import MixedSpace, mesh_geometry


class ConvectiveForm(enum.IntEnum):
    CONVECTIVE = 0
    SKEW = 1
    CONSERVATIVE = 2
    EMAC = 3

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower()
        table = {
            "convective": cls.CONVECTIVE, "conv": cls.CONVECTIVE,
            "skew": cls.SKEW, "skew-symmetric": cls.SKEW,
            "conservative": cls.CONSERVATIVE, "cons": cls.CONSERVATIVE,
            "emac": cls.EMAC,
        }
        if key not in table:
            raise ValueError(f"unknown convective form {name!r}")
        return table[key]


class Assembler:
    """Precomputed tabulations, geometry and sparsity for one MixedSpace."""

    def __init__(self, space: MixedSpace, bilinear_degree=None, nonlinear_degree=None):
        self.space = space
        k = space.k
        self.deg_bil = min(bilinear_degree or 2 * k, MAX_DEGREE)
        self.deg_non = min(nonlinear_degree or 3 * k, MAX_DEGREE)
        self.rule_bil = triangle_rule(self.deg_bil)
        self.rule_non = triangle_rule(self.deg_non)
        self.invJT, self.detJ = mesh_geometry(space.mesh)

        self.phi_u_bil, self.dphi_u_bil = space.velocity.tabulate(self.rule_bil.xy)
        self.phi_p_bil, self.dphi_p_bil = space.pressure.tabulate(self.rule_bil.xy)
        self.phi_u_non, self.dphi_u_non = space.velocity.tabulate(self.rule_non.xy)
        self.phi_p_non, _ = space.pressure.tabulate(self.rule_non.xy)

        self.cdofs_u = np.ascontiguousarray(space.velocity.cell_dofs)
        self.cdofs_p = np.ascontiguousarray(space.pressure.cell_dofs)

        self._conv_pattern = None
        self._mass = None
        self._div = None
        self._domain_area = float(np.sum(self.detJ) * 0.5)

    # -- geometry helpers ---------------------------------------------------

    @property
    def domain_area(self):
        return self._domain_area

    def _grad_phys(self, dphi):
        """Physical basis gradients g[t,q,a,i] for given reference grads."""
        return np.einsum("qaj,tij->tqai", dphi, self.invJT)

    # -- constant bilinear forms --------------------------------------------

    def mass(self):
        """Velocity-block L2 Gram matrix (identical for both components)."""
        if self._mass is not None:
            return self._mass
        w = self.rule_bil.weights
        base = np.einsum("q,qa,qb->ab", w, self.phi_u_bil, self.phi_u_bil)
        Me = base[None, :, :] * self.detJ[:, None, None]
        n_u = self.space.n_u
        rows = np.repeat(self.cdofs_u, self.cdofs_u.shape[1], axis=1).ravel()
        cols = np.tile(self.cdofs_u, (1, self.cdofs_u.shape[1])).ravel()
        data = Me.ravel()
        total = self.space.total
        M = sp.coo_matrix((data, (rows, cols)), shape=(total, total)).tocsr()
        M = M + sp.coo_matrix(
            (data, (rows + n_u, cols + n_u)), shape=(total, total)
        ).tocsr()
        self._mass = M
        return M

    def viscous(self, nu):
        """Matrix of a(u,v) = (nu/2) int D(u):D(v), D(v) = grad v + grad v^T."""
        g = self._grad_phys(self.dphi_u_bil)
        w = self.rule_bil.weights
        wq = w[None, :] * self.detJ[:, None]
        # block (c,d): nu * (delta_cd grad.grad + d_d phi_a d_c phi_b)
        gg = np.einsum("tq,tqai,tqbi->tab", wq, g, g)
        n_u = self.space.n_u
        total = self.space.total
        rows0 = np.repeat(self.cdofs_u, self.cdofs_u.shape[1], axis=1).ravel()
        cols0 = np.tile(self.cdofs_u, (1, self.cdofs_u.shape[1])).ravel()
        blocks = []
        for c in range(2):
            for d in range(2):
                cross = np.einsum("tq,tqa,tqb->tab", wq, g[..., d], g[..., c])
                entry = nu * ((gg if c == d else 0.0) + cross)
                blocks.append(
                    sp.coo_matrix(
                        (entry.ravel(), (rows0 + c * n_u, cols0 + d * n_u)),
                        shape=(total, total),
                    )
                )
        return sum(blocks).tocsr()

    def div_blocks(self):
        """b(v,q) coupling, its transpose, and the pressure-mean
        multiplier row/column."""
        if self._div is not None:
            return self._div
        g = self._grad_phys(self.dphi_u_bil)
        w = self.rule_bil.weights
        wq = w[None, :] * self.detJ[:, None]
        # B[m, (a,c)] = -int psi_m d_c phi_a
        n_u = self.space.n_u
        total = self.space.total
        p_off = 2 * n_u
        nbp = self.cdofs_p.shape[1]
        nbu = self.cdofs_u.shape[1]
        rows_p = np.repeat(self.cdofs_p, nbu, axis=1).ravel()
        cols_u = np.tile(self.cdofs_u, (1, nbp)).ravel()
        mats = []
        for c in range(2):
            entry = -np.einsum("tq,qm,tqa->tma", wq, self.phi_p_bil, g[..., c])
            mats.append(sp.coo_matrix(
                (entry.ravel(), (rows_p + p_off, cols_u + c * n_u)),
                shape=(total, total)))
            mats.append(sp.coo_matrix(
                (entry.ravel(), (cols_u + c * n_u, rows_p + p_off)),
                shape=(total, total)))
        # multiplier: int p dx = 0
        pm = np.einsum("tq,qm->tm", wq, self.phi_p_bil)
        lam = np.full(pm.size, self.space.lam, dtype=np.int64)
        prow = (self.cdofs_p + p_off).ravel()
        mats.append(sp.coo_matrix((pm.ravel(), (lam, prow)), shape=(total, total)))
        mats.append(sp.coo_matrix((pm.ravel(), (prow, lam)), shape=(total, total)))
        self._div = sum(mats).tocsr()
        return self._div

    def pressure_moments(self):
        """Vector m with m_j = int psi_j dx (the multiplier row)."""
        w = self.rule_bil.weights
        wq = w[None, :] * self.detJ[:, None]
        pm = np.einsum("tq,qm->tm", wq, self.phi_p_bil)
        out = np.zeros(self.space.n_p)
        np.add.at(out, self.cdofs_p.ravel(), pm.ravel())
        return out

    # -- convective forms -----------------------------------------------------

    def convective(self, form, U):
        """Residual vector r_i = c_form(u, u, phi_i) over the mixed layout
        (velocity rows only)."""
        form = ConvectiveForm.parse(form)
        s = self.space
        out = np.zeros(s.total)
        rx = out[s.ux]
        ry = out[s.uy]
        _kernels.conv_residual(
            int(form), self.cdofs_u, np.ascontiguousarray(U[s.ux]),
            np.ascontiguousarray(U[s.uy]), self.phi_u_non, self.dphi_u_non,
            self.invJT, self.detJ, self.rule_non.weights, rx, ry,
        )
        return out

    def _pattern(self):
        if self._conv_pattern is None:
            nbu = self.cdofs_u.shape[1]
            n_u = self.space.n_u
            total = self.space.total
            r0 = np.repeat(self.cdofs_u, nbu, axis=1).ravel()
            c0 = np.tile(self.cdofs_u, (1, nbu)).ravel()
            rows = np.concatenate([r0, r0, r0 + n_u, r0 + n_u])
            cols = np.concatenate([c0, c0 + n_u, c0, c0 + n_u])
            pat = sp.coo_matrix(
                (np.ones(len(rows)), (rows, cols)), shape=(total, total)
            ).tocsr()
            pat.sum_duplicates()
            pat.sort_indices()
            self._conv_pattern = (pat.indptr.copy(), pat.indices.copy())
        return self._conv_pattern

    def convective_jacobian(self, form, U):
        """Gateaux derivative of the convective residual at U, as CSR."""
        form = ConvectiveForm.parse(form)
        s = self.space
        indptr, indices = self._pattern()
        data = np.zeros(len(indices))
        _kernels.conv_jacobian_into_csr(
            int(form), self.cdofs_u, np.ascontiguousarray(U[s.ux]),
            np.ascontiguousarray(U[s.uy]), self.phi_u_non, self.dphi_u_non,
            self.invJT, self.detJ, self.rule_non.weights, s.n_u,
            indptr, indices, data,
        )
        return sp.csr_matrix((data, indices, indptr), shape=(s.total, s.total))

    # -- pointwise evaluation -------------------------------------------------

    def velocity_at_qp(self, U, rule="nonlinear"):
        """(u [t,q,2], grad u [t,q,2,2]) at quadrature points."""
        phi, dphi = (
            (self.phi_u_non, self.dphi_u_non)
            if rule == "nonlinear"
            else (self.phi_u_bil, self.dphi_u_bil)
        )
        s = self.space
        cu = U[s.ux][self.cdofs_u]
        cv = U[s.uy][self.cdofs_u]
        g = self._grad_phys(dphi)
        u = np.stack([cu @ phi.T, cv @ phi.T], axis=-1)
        coeff = np.stack([cu, cv], axis=1)            # [t, 2, a]
        grad = np.einsum("tia,tqaj->tqij", coeff, g)
        return u, grad

    def pressure_at_qp(self, U, rule="nonlinear"):
        phi = self.phi_p_non if rule == "nonlinear" else self.phi_p_bil
        cp = U[self.space.p][self.cdofs_p]
        return cp @ phi.T

    def quad_points_physical(self, rule="nonlinear"):
        """Physical coordinates of quadrature points, (t, q, 2)."""
        r = self.rule_non if rule == "nonlinear" else self.rule_bil
        mesh = self.space.mesh
        v = mesh.vertices
        t = mesh.triangles
        a = v[t[:, 0]][:, None, :]
        e1 = (v[t[:, 1]] - v[t[:, 0]])[:, None, :]
        e2 = (v[t[:, 2]] - v[t[:, 0]])[:, None, :]
        xy = r.xy
        return a + xy[None, :, 0:1] * e1 + xy[None, :, 1:2] * e2

    def quad_weights(self, rule="nonlinear"):
        r = self.rule_non if rule == "nonlinear" else self.rule_bil
        return r.weights[None, :] * self.detJ[:, None]


# ---------------------------------------------------------------------------
# spec-level wrappers

def assemble_mass(asm: Assembler):
    return asm.mass()


def assemble_viscous(asm: Assembler, nu):
    return asm.viscous(nu)


def assemble_div(asm: Assembler):
    return asm.div_blocks()


def assemble_convective(form, asm: Assembler, U):
    return asm.convective(form, U)


def assemble_convective_jacobian(form, asm: Assembler, U):
    return asm.convective_jacobian(form, U)


# ---------------------------------------------------------------------------
# Dirichlet elimination

def eliminate(A, idx):
    """Zero the rows and columns in idx and put 1 on their diagonal."""
    A = A.tocsr().copy()
    n = A.shape[0]
    keep = np.ones(n)
    keep[idx] = 0.0
    rows = np.repeat(np.arange(n), np.diff(A.indptr))
    A.data *= keep[rows] * keep[A.indices]
    ident = sp.coo_matrix(
        (np.ones(len(idx)), (idx, idx)), shape=A.shape
    ).tocsr()
    out = (A + ident).tocsr()
    out.eliminate_zeros()
    return out


def apply_dirichlet(A, rhs, idx, vals):
    """Symmetric elimination: constrained values move to the right-hand
    side and the constrained equations become identities."""
    contrib = A @ _scatter(len(rhs), idx, vals)
    rhs = rhs - contrib
    A_out = eliminate(A, idx)
    rhs[idx] = vals
    return A_out, rhs


def _scatter(n, idx, vals):
    v = np.zeros(n)
    v[idx] = vals
    return v
