"""Primal-dual interior-point solver for separable convex QPs.

Problem form::

    minimise    1/2 x' diag(q) x + c' x
    subject to  A x  = b          (duals y)
                G x <= h          (duals z >= 0)
                lb <= x <= ub     (duals zl, zu >= 0; infinite bounds allowed)

Mehrotra predictor-corrector steps.  Small systems are solved through a dense
augmented KKT matrix; large ones without general inequalities use sparse
normal equations, which keeps per-device models with 1e5+ variables cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import nnls

DENSE_LIMIT = 300
AUG_LIMIT = 1500  # dense augmented system size before folding inequalities
POLISH_LIMIT = 600
SOFT_CURVATURE = 1e-10  # scaled problem; below this a column is kept out of H^-1
SOFT_MAX = 256  # border size cap; the flattest columns win


@dataclass
class QP:
    q: np.ndarray
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    @property
    def n(self) -> int:
        return len(self.c)

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.q * x) + self.c @ x)


@dataclass
class QPResult:
    status: str
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    zl: np.ndarray
    zu: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


class _KKT:
    """Factorised Newton system for one iteration.

    ``aug``: dense ``[H A' G'; A 0 0; G 0 -S/Z]``, robust when many
    inequalities are nearly active.  ``cond``: the inequality block folded
    into ``H + G' Z/S G``, for a few variables under very many rows.
    ``normal``: sparse ``A H^-1 A'`` for large problems without general
    inequalities.
    """

    def __init__(self, qp: QP, hdiag: np.ndarray, w: np.ndarray):
        self.qp = qp
        n, m, p = qp.n, qp.A.shape[0], qp.G.shape[0]
        self.n, self.m, self.p = n, m, p
        if p:
            self.mode = "aug" if n + m + p <= AUG_LIMIT else "cond"
        else:
            self.mode = "aug" if n + m <= DENSE_LIMIT else "normal"
        if self.mode == "cond":
            reg = 1e-12
            self.hdiag, self.w = hdiag, w
            G = qp.G.tocsr()
            Ad = qp.A.toarray()
            K = np.zeros((n + m, n + m))
            K[:n, :n] = (G.T @ sp.diags(1.0 / w) @ G).toarray() + np.diag(hdiag + reg)
            K[:n, n:] = Ad.T
            K[n:, :n] = Ad
            K[np.arange(n, n + m), np.arange(n, n + m)] -= reg
            self.lu = sla.lu_factor(K, check_finite=False)
        elif self.mode == "aug":
            N = n + m + p
            reg = 1e-12  # the problem is scaled to O(1); larger shifts swamp small pivots
            K = np.zeros((N, N))
            K[:n, :n] = np.diag(hdiag)
            Ad = qp.A.toarray()
            K[:n, n:n + m] = Ad.T
            K[n:n + m, :n] = Ad
            if p:
                Gd = qp.G.toarray()
                K[:n, n + m:] = Gd.T
                K[n + m:, :n] = Gd
                K[n + m:, n + m:] = -np.diag(w)
            self.K_exact = K
            Kr = K.copy()
            Kr[np.arange(n), np.arange(n)] += reg
            Kr[np.arange(n, n + m), np.arange(n, n + m)] -= reg
            self.lu = sla.lu_factor(Kr, check_finite=False)
        else:
            # columns with almost no curvature stay in a bordered block instead
            # of being inverted: [A_r H_r^-1 A_r'  A_s; A_s'  -H_s]
            self.hdiag = hdiag
            soft = np.flatnonzero(hdiag < SOFT_CURVATURE)
            if len(soft) > SOFT_MAX:
                soft = soft[np.argsort(hdiag[soft], kind="stable")[:SOFT_MAX]]
            self.soft = np.sort(soft)
            self.hinv = 1.0 / hdiag
            self.hinv[self.soft] = 0.0
            A = qp.A.tocsc()
            As = A[:, self.soft]
            M = (A @ sp.diags(self.hinv) @ A.T).tocsc()
            k = len(self.soft)
            B = sp.bmat([[M, As], [As.T, -sp.diags(hdiag[self.soft])]], format="csc")
            reg = 1e-12
            shift = sp.diags(np.concatenate([np.full(m, reg), np.full(k, -reg)]), format="csc")
            self.lu = spla.splu((B + shift).tocsc(), permc_spec="COLAMD")
            self.B_exact = B

    def solve(self, r1: np.ndarray, r2: np.ndarray, r3: np.ndarray | None = None):
        n, m = self.n, self.m
        if self.mode == "aug":
            rhs = np.concatenate([r1, r2, r3 if r3 is not None else np.zeros(self.p)])
            sol = sla.lu_solve(self.lu, rhs, check_finite=False)
            for _ in range(3):
                sol += sla.lu_solve(self.lu, rhs - self.K_exact @ sol, check_finite=False)
            return sol[:n], sol[n:n + m], sol[n + m:]
        if self.mode == "cond":
            return self._cond_refined(r1, r2, r3)
        A = self.qp.A
        dx, dy = self._normal(r1, r2)
        # refine against the full system: H^-1 spans many decades near the end
        for _ in range(3):
            ex, ey = self._normal(r1 - self.hdiag * dx - A.T @ dy, r2 - A @ dx)
            dx += ex
            dy += ey
        return dx, dy, np.zeros(0)

    def _cond(self, r1, r2, r3):
        G, n = self.qp.G, self.n
        sol = sla.lu_solve(self.lu, np.concatenate([r1 + G.T @ (r3 / self.w), r2]), check_finite=False)
        dx = sol[:n]
        return dx, sol[n:], (G @ dx - r3) / self.w

    def _cond_refined(self, r1, r2, r3):
        A, G = self.qp.A, self.qp.G
        dx, dy, dz = self._cond(r1, r2, r3)
        for _ in range(3):
            ex, ey, ez = self._cond(r1 - self.hdiag * dx - A.T @ dy - G.T @ dz, r2 - A @ dx,
                                    r3 - G @ dx + self.w * dz)
            dx += ex
            dy += ey
            dz += ez
        return dx, dy, dz

    def _normal(self, r1: np.ndarray, r2: np.ndarray):
        A, m = self.qp.A, self.m
        rhs = np.concatenate([A @ (self.hinv * r1) - r2, r1[self.soft]])
        sol = self.lu.solve(rhs)
        sol += self.lu.solve(rhs - self.B_exact @ sol)
        dy = sol[:m]
        dx = self.hinv * (r1 - A.T @ dy)
        dx[self.soft] = -sol[m:]
        return dx, dy


def _initial_point(qp: QP, L: np.ndarray, U: np.ndarray):
    """Least-squares start: minimise the objective plus squared inequality residuals.

    Bounds are treated as inequality rows; slacks and duals are then shifted
    into the positive orthant.
    """
    n, m, p = qp.n, qp.A.shape[0], qp.G.shape[0]
    hdiag = qp.q + L.astype(float) + U.astype(float)
    # bound rows: -x <= -lb and x <= ub contribute  lb  and  ub  to the right-hand side
    r1 = -qp.c + np.where(L, qp.lb, 0.0) + np.where(U, qp.ub, 0.0)
    if p:
        r1 = r1 + qp.G.T @ qp.h
    kkt = _KKT(qp, np.maximum(hdiag, 1.0), np.ones(p))
    x, y, _ = kkt.solve(r1, qp.b, qp.h if p else None)
    s = qp.h - qp.G @ x if p else np.zeros(0)
    sl = np.where(L, x - qp.lb, 1.0)
    su = np.where(U, qp.ub - x, 1.0)
    z = -s.copy()
    zl = -sl.copy()
    zu = -su.copy()

    def shift(parts):
        vals = np.concatenate([v for v in parts])
        if len(vals) == 0:
            return parts
        worst = -vals.min()
        if worst >= 0:
            parts = [v + (1.0 + worst) for v in parts]
        return parts

    s, slL, suU = shift([s, sl[L], su[U]])
    sl = np.ones(n); sl[L] = slL
    su = np.ones(n); su[U] = suU
    z, zlL, zuU = shift([z, zl[L], zu[U]])
    zl = np.zeros(n); zl[L] = zlL
    zu = np.zeros(n); zu[U] = zuU
    return x, y * 0.0, s, z, sl, zl, su, zu


def _scores(qp: QP, x, y, z, zl, zu, L, U, bnorm, cnorm):
    rd = qp.q * x + qp.c + qp.A.T @ y - zl + zu
    p = qp.G.shape[0]
    if p:
        rd = rd + qp.G.T @ z
    viol = [np.abs(qp.A @ x - qp.b).max(initial=0.0)]
    if p:
        slack = qp.h - qp.G @ x
        viol.append(np.maximum(-slack, 0.0).max(initial=0.0))
        comp = float(np.abs(z * slack).sum())
    else:
        comp = 0.0
    viol.append(np.maximum(qp.lb[L] - x[L], 0.0).max(initial=0.0))
    viol.append(np.maximum(x[U] - qp.ub[U], 0.0).max(initial=0.0))
    comp += float(np.abs(zl[L] * (x - qp.lb)[L]).sum() + np.abs(zu[U] * (qp.ub - x)[U]).sum())
    pres = max(viol) / bnorm
    dres = np.abs(rd).max(initial=0.0) / cnorm
    gap = comp / (1.0 + abs(qp.objective(x)))
    return pres, dres, gap


def _polish(qp: QP, x, z, s, zl, sl, zu, su, L, U):
    """Active-set refinement for degenerate problems.

    Constraints whose dual exceeds their slack are held with equality; the
    resulting equality QP is solved in the least-squares sense for the
    smallest correction of ``x`` (dependent active rows are allowed), and
    nonnegative duals are recovered by NNLS.
    """
    n, m, p = qp.n, qp.A.shape[0], qp.G.shape[0]
    act = np.flatnonzero(z > s) if p else np.zeros(0, dtype=int)
    lo = np.flatnonzero(L & (zl > sl))
    hi = np.flatnonzero(U & (zu > su))
    rows = [qp.A.toarray()]
    rhs = [qp.b]
    if len(act):
        rows.append(qp.G[act].toarray())
        rhs.append(qp.h[act])
    eye = np.eye(n)
    rows += [eye[lo], eye[hi]]
    rhs += [qp.lb[lo], qp.ub[hi]]
    C = np.vstack(rows)
    d = np.concatenate(rhs)
    k = C.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = np.diag(qp.q)
    K[:n, n:] = C.T
    K[n:, :n] = C
    # smallest correction to the current iterate, so inactive bounds stay satisfied
    # when the optimal face is not a single point
    rhs = np.concatenate([-(qp.q * x + qp.c), d - C @ x])
    sol = sla.lstsq(K, rhs, lapack_driver="gelsy", check_finite=False)[0]
    xp = x + sol[:n]
    grad = qp.q * xp + qp.c
    if not len(act):
        # bounds only: y from the stationarity rows of unpinned variables,
        # bound duals from what is left on the pinned ones
        pinned = np.zeros(n, dtype=bool)
        pinned[lo] = pinned[hi] = True
        At = qp.A.T.tocsr()
        y = sla.lstsq(At[~pinned].toarray(), -grad[~pinned], lapack_driver="gelsy", check_finite=False)[0]
        r = grad + At @ y
        zlp = np.zeros(n)
        zup = np.zeros(n)
        zlp[lo] = np.maximum(r[lo], 0.0)
        zup[hi] = np.maximum(-r[hi], 0.0)
        return xp, y, np.zeros(p), zlp, zup
    # duals: q x + c + A'y + G_act' z - zl + zu = 0 with z, zl, zu >= 0
    cols = [qp.A.toarray().T, -qp.A.toarray().T]
    if len(act):
        cols.append(qp.G[act].toarray().T)
    cols += [-eye[:, lo], eye[:, hi]]
    B = np.hstack(cols)
    scale = np.maximum(np.abs(B).max(axis=0), 1e-300)
    w, _ = nnls(B / scale, -grad, maxiter=50 * B.shape[1])
    w = w / scale
    y = w[:m] - w[m:2 * m]
    pos = 2 * m
    zp = np.zeros(p)
    zp[act] = w[pos:pos + len(act)]
    pos += len(act)
    zlp = np.zeros(n)
    zlp[lo] = w[pos:pos + len(lo)]
    pos += len(lo)
    zup = np.zeros(n)
    zup[hi] = w[pos:pos + len(hi)]
    return xp, y, zp, zlp, zup


def solve_qp(qp: QP, tol: float = 1e-12, accept_tol: float = 1e-8, max_iter: int = 200) -> QPResult:
    n = qp.n
    A, G = qp.A, qp.G
    m, p = A.shape[0], G.shape[0]
    L = np.isfinite(qp.lb)
    U = np.isfinite(qp.ub)
    if np.any(qp.lb[L & U] >= qp.ub[L & U]):
        raise ValueError("every bounded variable needs lb < ub; eliminate fixed variables first")

    x, y, s, z, sl, zl, su, zu = _initial_point(qp, L, U)
    ncomp = p + int(L.sum()) + int(U.sum())

    bnorm = 1.0 + max(np.abs(qp.b).max(initial=0.0), np.abs(qp.h).max(initial=0.0))
    cnorm = 1.0 + np.abs(qp.c).max(initial=0.0)
    status, it = "max_iterations", 0
    pres = dres = gap = np.inf
    best = None
    best_it = 0
    stall = 0

    for it in range(1, max_iter + 1):
        rd = qp.q * x + qp.c + A.T @ y - zl + zu
        if p:
            rd += G.T @ z
        rp = A @ x - qp.b
        rg = G @ x + s - qp.h if p else np.zeros(0)
        rl = np.where(L, x - qp.lb - sl, 0.0)
        ru = np.where(U, qp.ub - x - su, 0.0)
        comp = float(s @ z + sl[L] @ zl[L] + su[U] @ zu[U])
        mu = comp / max(ncomp, 1)
        obj = qp.objective(x)
        pres = max(np.abs(rp).max(initial=0.0), np.abs(rg).max(initial=0.0),
                   np.abs(rl).max(initial=0.0), np.abs(ru).max(initial=0.0)) / bnorm
        dres = np.abs(rd).max(initial=0.0) / cnorm
        gap = comp / (1.0 + abs(obj))
        score = max(pres, dres, gap)
        if not np.isfinite(score):
            break
        if best is None or score < best[0]:
            best_it = it
            best = (score, x.copy(), y.copy(), z.copy(), zl.copy(), zu.copy(), s.copy(), sl.copy(), su.copy())
        if score <= tol:
            status = "optimal"
            break
        if stall >= 5 or it - best_it >= 8:
            break

        hdiag = qp.q + np.where(L, zl / sl, 0.0) + np.where(U, zu / su, 0.0)
        hdiag = np.maximum(hdiag, 1e-14)
        kkt = _KKT(qp, hdiag, s / z if p else np.zeros(0))

        def direction(rc, rcl, rcu):
            r1 = -rd - np.where(L, (rcl + zl * rl) / sl, 0.0) + np.where(U, (rcu + zu * ru) / su, 0.0)
            dx, dy, dz = kkt.solve(r1, -rp, -rg + rc / z if p else None)
            if p:
                ds = -rg - G @ dx
            else:
                ds = dz = np.zeros(0)
            dsl = np.where(L, dx + rl, 0.0)
            dzl = np.where(L, (-rcl - zl * dsl) / sl, 0.0)
            dsu = np.where(U, -dx + ru, 0.0)
            dzu = np.where(U, (-rcu - zu * dsu) / su, 0.0)
            return dx, dy, ds, dz, dsl, dzl, dsu, dzu

        def step_length(d, frac):
            _, _, ds, dz, dsl, dzl, dsu, dzu = d
            a = min(1.0, _max_step(s, ds), _max_step(z, dz),
                    _max_step(sl[L], dsl[L]), _max_step(zl[L], dzl[L]),
                    _max_step(su[U], dsu[U]), _max_step(zu[U], dzu[U]))
            return min(1.0, frac * a) if frac < 1 else a

        aff = direction(s * z, sl * zl, su * zu)
        a_aff = step_length(aff, 1.0)
        _, _, ds_a, dz_a, dsl_a, dzl_a, dsu_a, dzu_a = aff
        comp_aff = float((s + a_aff * ds_a) @ (z + a_aff * dz_a)
                         + (sl + a_aff * dsl_a)[L] @ (zl + a_aff * dzl_a)[L]
                         + (su + a_aff * dsu_a)[U] @ (zu + a_aff * dzu_a)[U])
        sigma = (comp_aff / comp) ** 3 if comp > 0 else 0.0
        sigma = min(max(sigma, 0.0), 1.0)
        tgt = sigma * mu
        cor = direction(s * z + ds_a * dz_a - tgt,
                        np.where(L, sl * zl + dsl_a * dzl_a - tgt, 0.0),
                        np.where(U, su * zu + dsu_a * dzu_a - tgt, 0.0))
        alpha = step_length(cor, 0.995)
        dx, dy, ds, dz, dsl, dzl, dsu, dzu = cor
        x = x + alpha * dx
        y = y + alpha * dy
        if p:
            s = s + alpha * ds
            z = z + alpha * dz
        sl = np.where(L, sl + alpha * dsl, 1.0)
        zl = np.where(L, zl + alpha * dzl, 0.0)
        su = np.where(U, su + alpha * dsu, 1.0)
        zu = np.where(U, zu + alpha * dzu, 0.0)
        stall = stall + 1 if alpha < 1e-8 else 0

    score, x, y, z, zl, zu, s, sl, su = best
    if n + m + p <= POLISH_LIMIT and (p or L.any() or U.any()):
        # an interior iterate pins the objective but can leave directions of
        # nearly flat cost loose; snapping to the identified active set fixes them
        try:
            cand = _polish(qp, x, z, s, zl, sl, zu, su, L, U)
        except (np.linalg.LinAlgError, RuntimeError, ValueError):
            cand = None
        if cand is not None:
            sc = _scores(qp, *cand, L, U, bnorm, cnorm)
            if max(sc) < max(score, 1e-13):
                score = max(sc)
                x, y, z, zl, zu = cand
                pres, dres, gap = sc
    if status != "optimal":
        if score <= accept_tol:
            status = "optimal"
        elif pres > 1e-6:
            status = "infeasible"
    return QPResult(status, x, y, z, zl, zu, it, float(pres), float(dres), float(gap))
