"""Hot assembly kernels: convective residuals and Gateaux-derivative
Jacobians for all four convective forms.

Two interchangeable backends share the same signatures:

* numba @njit element loops (default), serial and therefore bitwise
  deterministic;
* a pure-numpy vectorized fallback, selected with EMACFLOW_BACKEND=numpy
  (useful where numba is unavailable and as an independent cross-check).

Form ids: 0 convective, 1 skew-symmetric, 2 conservative (weak form,
tested against gradients of the test function), 3 EMAC.
"""

import os

import numpy as np

_env = os.environ.get("EMACFLOW_BACKEND", "").strip().lower()
if _env not in ("", "numba", "numpy"):
    raise ValueError(f"EMACFLOW_BACKEND must be 'numba' or 'numpy', got {_env!r}")

_HAVE_NUMBA = False
if _env != "numpy":
    try:
        from numba import njit
        _HAVE_NUMBA = True
    except ImportError:
        if _env == "numba":
            raise


def backend_name():
    return "numba" if _HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference implementations

def _conv_residual_numpy(form, cdofs, ux, uy, phi, dphi, invJT, detJ, w, rx, ry):
    nt = cdofs.shape[0]
    chunk = max(1, 2_000_000 // (phi.shape[0] * phi.shape[1] * 2))
    for lo in range(0, nt, chunk):
        hi = min(lo + chunk, nt)
        cd = cdofs[lo:hi]
        cu = ux[cd]
        cv = uy[cd]
        # physical gradients of the basis: g[t,q,a,i]
        g = np.einsum("qaj,tij->tqai", dphi, invJT[lo:hi])
        u1 = cu @ phi.T          # [t, q]
        u2 = cv @ phi.T
        G11 = np.einsum("ta,tqa->tq", cu, g[..., 0])
        G12 = np.einsum("ta,tqa->tq", cu, g[..., 1])
        G21 = np.einsum("ta,tqa->tq", cv, g[..., 0])
        G22 = np.einsum("ta,tqa->tq", cv, g[..., 1])
        div = G11 + G22
        wq = w[None, :] * detJ[lo:hi, None]
        if form == 2:
            lrx = -np.einsum(
                "tq,tqa->ta", wq * u1 * u1, g[..., 0]
            ) - np.einsum("tq,tqa->ta", wq * u1 * u2, g[..., 1])
            lry = -np.einsum(
                "tq,tqa->ta", wq * u1 * u2, g[..., 0]
            ) - np.einsum("tq,tqa->ta", wq * u2 * u2, g[..., 1])
        else:
            a1 = u1 * G11 + u2 * G12
            a2 = u1 * G21 + u2 * G22
            if form == 0:
                f1, f2 = a1, a2
            elif form == 1:
                f1 = a1 + 0.5 * div * u1
                f2 = a2 + 0.5 * div * u2
            else:
                f1 = 2.0 * G11 * u1 + (G12 + G21) * u2 + div * u1
                f2 = (G12 + G21) * u1 + 2.0 * G22 * u2 + div * u2
            lrx = (wq * f1) @ phi
            lry = (wq * f2) @ phi
        np.add.at(rx, cd, lrx)
        np.add.at(ry, cd, lry)


def _conv_jacobian_numpy(form, cdofs, ux, uy, phi, dphi, invJT, detJ, w):
    """Element Jacobians K[t, c, b, d, a] = d r_{b,c} / d u_{a,d}."""
    nt, nb = cdofs.shape
    nq = phi.shape[0]
    K = np.zeros((nt, 2, nb, 2, nb))
    chunk = max(1, 400_000 // (nq * nb * nb))
    for lo in range(0, nt, chunk):
        hi = min(lo + chunk, nt)
        cd = cdofs[lo:hi]
        cu = ux[cd]
        cv = uy[cd]
        g = np.einsum("qaj,tij->tqai", dphi, invJT[lo:hi])
        u = np.stack([cu @ phi.T, cv @ phi.T], axis=-1)       # [t,q,2]
        G = np.einsum("tia,tqaj->tqij", np.stack([cu, cv], axis=1), g)
        # G[t,q,i,j] = d_j u_i
        div = G[..., 0, 0] + G[..., 1, 1]
        wq = w[None, :] * detJ[lo:hi, None]                    # [t,q]
        Kc = np.zeros((hi - lo, 2, nb, 2, nb))
        eye = np.eye(2)
        if form == 2:
            # conservative, weak: r_{b,c} = -int u_c (u . grad phi_b)
            ugradb = np.einsum("tqj,tqbj->tqb", u, g)
            Kc -= np.einsum("tq,cd,qa,tqb->tcbda", wq, eye, phi, ugradb)
            Kc -= np.einsum("tq,tqc,qa,tqbd->tcbda", wq, u, phi, g)
        elif form == 3:
            gau = np.einsum("tqaj,tqj->tqa", g, u)
            Kc += np.einsum("tq,cd,tqa,qb->tcbda", wq, eye, gau, phi)
            Kc += np.einsum("tq,tqac,tqd,qb->tcbda", wq, g, u, phi)
            Gsym = G + G.swapaxes(-1, -2)
            Kc += np.einsum("tq,tqcd,qa,qb->tcbda", wq, Gsym, phi, phi)
            Kc += np.einsum("tq,tqad,tqc,qb->tcbda", wq, g, u, phi)
            Kc += np.einsum("tq,cd,qa,qb->tcbda", wq * div, eye, phi, phi)
        else:
            # convective core: phi_a G[c,d] phi_b + delta_cd (u . grad phi_a) phi_b
            Kc += np.einsum("tq,tqcd,qa,qb->tcbda", wq, G, phi, phi)
            ugrada = np.einsum("tqj,tqaj->tqa", u, g)
            Kc += np.einsum("tq,cd,tqa,qb->tcbda", wq, eye, ugrada, phi)
            if form == 1:
                Kc += 0.5 * np.einsum("tq,tqad,tqc,qb->tcbda", wq, g, u, phi)
                Kc += 0.5 * np.einsum("tq,cd,qa,qb->tcbda", wq * div, eye, phi, phi)
        K[lo:hi] = Kc
    return K


# ---------------------------------------------------------------------------
# numba backend

if _HAVE_NUMBA:

    @njit(cache=True)
    def _conv_residual_numba(form, cdofs, ux, uy, phi, dphi, invJT, detJ, w, rx, ry):
        nt, nb = cdofs.shape
        nq = w.shape[0]
        g = np.empty((nb, 2))
        cu = np.empty(nb)
        cv = np.empty(nb)
        lrx = np.empty(nb)
        lry = np.empty(nb)
        for t in range(nt):
            for a in range(nb):
                cu[a] = ux[cdofs[t, a]]
                cv[a] = uy[cdofs[t, a]]
                lrx[a] = 0.0
                lry[a] = 0.0
            for q in range(nq):
                for a in range(nb):
                    g[a, 0] = dphi[q, a, 0] * invJT[t, 0, 0] + dphi[q, a, 1] * invJT[t, 0, 1]
                    g[a, 1] = dphi[q, a, 0] * invJT[t, 1, 0] + dphi[q, a, 1] * invJT[t, 1, 1]
                u1 = 0.0
                u2 = 0.0
                G11 = 0.0
                G12 = 0.0
                G21 = 0.0
                G22 = 0.0
                for a in range(nb):
                    u1 += cu[a] * phi[q, a]
                    u2 += cv[a] * phi[q, a]
                    G11 += cu[a] * g[a, 0]
                    G12 += cu[a] * g[a, 1]
                    G21 += cv[a] * g[a, 0]
                    G22 += cv[a] * g[a, 1]
                div = G11 + G22
                wq = w[q] * detJ[t]
                if form == 2:
                    f11 = wq * u1 * u1
                    f12 = wq * u1 * u2
                    f22 = wq * u2 * u2
                    for bb in range(nb):
                        lrx[bb] -= f11 * g[bb, 0] + f12 * g[bb, 1]
                        lry[bb] -= f12 * g[bb, 0] + f22 * g[bb, 1]
                else:
                    if form == 0:
                        f1 = u1 * G11 + u2 * G12
                        f2 = u1 * G21 + u2 * G22
                    elif form == 1:
                        f1 = u1 * G11 + u2 * G12 + 0.5 * div * u1
                        f2 = u1 * G21 + u2 * G22 + 0.5 * div * u2
                    else:
                        f1 = 2.0 * G11 * u1 + (G12 + G21) * u2 + div * u1
                        f2 = (G12 + G21) * u1 + 2.0 * G22 * u2 + div * u2
                    f1 *= wq
                    f2 *= wq
                    for bb in range(nb):
                        lrx[bb] += f1 * phi[q, bb]
                        lry[bb] += f2 * phi[q, bb]
            for bb in range(nb):
                d = cdofs[t, bb]
                rx[d] += lrx[bb]
                ry[d] += lry[bb]

    @njit(cache=True, inline="always")
    def _csr_pos(indptr, indices, row, col):
        lo = indptr[row]
        hi = indptr[row + 1]
        while lo < hi:
            mid = (lo + hi) // 2
            if indices[mid] < col:
                lo = mid + 1
            else:
                hi = mid
        return lo

    @njit(cache=True)
    def _conv_jacobian_numba(
        form, cdofs, ux, uy, phi, dphi, invJT, detJ, w, n_u, indptr, indices, data
    ):
        nt, nb = cdofs.shape
        nq = w.shape[0]
        g = np.empty((nb, 2))
        cu = np.empty(nb)
        cv = np.empty(nb)
        Ke = np.empty((2, nb, 2, nb))
        u = np.empty(2)
        G = np.empty((2, 2))
        for t in range(nt):
            for a in range(nb):
                cu[a] = ux[cdofs[t, a]]
                cv[a] = uy[cdofs[t, a]]
            for c in range(2):
                for bb in range(nb):
                    for d in range(2):
                        for a in range(nb):
                            Ke[c, bb, d, a] = 0.0
            for q in range(nq):
                for a in range(nb):
                    g[a, 0] = dphi[q, a, 0] * invJT[t, 0, 0] + dphi[q, a, 1] * invJT[t, 0, 1]
                    g[a, 1] = dphi[q, a, 0] * invJT[t, 1, 0] + dphi[q, a, 1] * invJT[t, 1, 1]
                u[0] = 0.0
                u[1] = 0.0
                G[0, 0] = 0.0
                G[0, 1] = 0.0
                G[1, 0] = 0.0
                G[1, 1] = 0.0
                for a in range(nb):
                    u[0] += cu[a] * phi[q, a]
                    u[1] += cv[a] * phi[q, a]
                    G[0, 0] += cu[a] * g[a, 0]
                    G[0, 1] += cu[a] * g[a, 1]
                    G[1, 0] += cv[a] * g[a, 0]
                    G[1, 1] += cv[a] * g[a, 1]
                div = G[0, 0] + G[1, 1]
                wq = w[q] * detJ[t]
                if form == 2:
                    for a in range(nb):
                        wa = wq * phi[q, a]
                        for d in range(2):
                            for c in range(2):
                                for bb in range(nb):
                                    entry = -wa * u[c] * g[bb, d]
                                    if c == d:
                                        entry -= wa * (u[0] * g[bb, 0] + u[1] * g[bb, 1])
                                    Ke[c, bb, d, a] += entry
                else:
                    for a in range(nb):
                        ugrada = u[0] * g[a, 0] + u[1] * g[a, 1]
                        for d in range(2):
                            for c in range(2):
                                if form == 3:
                                    val = (G[c, d] + G[d, c]) * phi[q, a] + g[a, c] * u[d]
                                    val += g[a, d] * u[c]
                                    if c == d:
                                        val += ugrada + div * phi[q, a]
                                else:
                                    val = phi[q, a] * G[c, d]
                                    if c == d:
                                        val += ugrada
                                    if form == 1:
                                        val += 0.5 * g[a, d] * u[c]
                                        if c == d:
                                            val += 0.5 * div * phi[q, a]
                                wval = wq * val
                                for bb in range(nb):
                                    Ke[c, bb, d, a] += wval * phi[q, bb]
            for c in range(2):
                for bb in range(nb):
                    row = cdofs[t, bb] + c * n_u
                    for d in range(2):
                        for a in range(nb):
                            col = cdofs[t, a] + d * n_u
                            data[_csr_pos(indptr, indices, row, col)] += Ke[c, bb, d, a]


def conv_residual(form, cdofs, ux, uy, phi, dphi, invJT, detJ, w, rx, ry):
    if _HAVE_NUMBA:
        _conv_residual_numba(form, cdofs, ux, uy, phi, dphi, invJT, detJ, w, rx, ry)
    else:
        _conv_residual_numpy(form, cdofs, ux, uy, phi, dphi, invJT, detJ, w, rx, ry)


def conv_jacobian_into_csr(form, cdofs, ux, uy, phi, dphi, invJT, detJ, w, n_u,
                           indptr, indices, data):
    """Accumulate the convective Jacobian into preallocated CSR storage
    whose pattern covers the velocity block."""
    if _HAVE_NUMBA:
        _conv_jacobian_numba(
            form, cdofs, ux, uy, phi, dphi, invJT, detJ, w, n_u, indptr, indices, data
        )
        return
    K = _conv_jacobian_numpy(form, cdofs, ux, uy, phi, dphi, invJT, detJ, w)
    # rows[t,c,b,d,a], cols[t,c,b,d,a]
    offs = np.array([0, n_u], dtype=np.int64)
    rows = cdofs[:, None, :, None, None] + offs[None, :, None, None, None]
    cols = cdofs[:, None, None, None, :] + offs[None, None, None, :, None]
    rows = np.broadcast_to(rows, K.shape).ravel()
    cols = np.broadcast_to(cols, K.shape).ravel()
    # map (row, col) pairs to CSR positions via searchsorted per entry
    pos = np.empty(rows.shape[0], dtype=np.int64)
    start = indptr[rows]
    stop = indptr[rows + 1]
    for i in range(rows.shape[0]):
        pos[i] = start[i] + np.searchsorted(indices[start[i]:stop[i]], cols[i])
    np.add.at(data, pos, K.ravel())
