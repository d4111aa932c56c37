"""
Local stability of the FLBR update at an equilibrium.

The update map φ(x, y) = (φ₁, φ₂) is

    ŷ ∝ y·e^{−ξ R^T x},  x̂ ∝ x·e^{ξ R y},
    φ₁ ∝ x·e^{η R ŷ},    φ₂ ∝ y·e^{−η R^T x̂}.

`jacobian_at_equilibrium` evaluates its exact Jacobian at (x*, y*) together
with the support blocks D^xx, D^xy, D^yx, D^yy. `certify_contraction` reports
the spectral radius, computed with an in-repo Hessenberg + Francis
double-shift QR eigensolver.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from zsd.equilibrium import EquilibriumResult
from zsd.errors import (
    ConvergenceError,
    DimensionError,
    IllConditionedSupportError,
    InputError,
    SizeError,
)
from zsd.game import PayoffMatrix

logger = logging.getLogger(__name__)

MAX_EIGEN_DIM = 200
DEFAULT_SUPPORT_TOL = 1e-6
# Largest ε certificate accepted as an equilibrium.
MAX_CERTIFICATE_EPS = 1e-6
MAX_POWER = 16


@dataclass(frozen=True, eq=False)
class EquilibriumJacobian:
    """
    Jacobian of the update map at an equilibrium.

    Coordinates are ordered as the n row-player coordinates followed by the m
    column-player coordinates. Supports are zero-based index tuples.

    Attributes:
        full: (n+m)×(n+m) Jacobian J.
        support_submatrix: J̃, the rows and columns of J on the supports.
        reduced: J′ = J̃ − A, where A holds −x*_i across the row-support
            block and −y*_i across the column-support block.
        dxx, dxy, dyx, dyy: Support blocks with
            J′ = [[I + ηξ·D^xx, η·D^xy], [η·D^yx, I + ηξ·D^yy]].
        row_support: supp(x*).
        col_support: supp(y*).
        value: Value of the game v.
    """

    full: np.ndarray
    support_submatrix: np.ndarray
    reduced: np.ndarray
    dxx: np.ndarray
    dxy: np.ndarray
    dyx: np.ndarray
    dyy: np.ndarray
    row_support: tuple[int, ...]
    col_support: tuple[int, ...]
    eta: float
    xi: float
    value: float

    @property
    def a_part(self) -> np.ndarray:
        """The A of J̃ = J′ + A."""
        return self.support_submatrix - self.reduced


@dataclass(frozen=True)
class ContractionReport:
    """
    Contraction check of the update map at an equilibrium.

    Attributes:
        spectral_radius: Largest eigenvalue modulus of the full Jacobian.
        support_radius: Largest eigenvalue modulus of J̃.
        is_contraction: spectral_radius < 1 − margin.
        pnorm_certificate: (p, ‖(J′)^p‖₂^{1/p}) for the first p ≤ 16 with a
            bound below one, or None.
        dxx_diag_negative: Every diagonal entry of D^xx is negative.
        dyy_diag_negative: Every diagonal entry of D^yy is negative.
    """

    spectral_radius: float
    support_radius: float
    is_contraction: bool
    pnorm_certificate: tuple[int, float] | None
    dxx_diag_negative: bool
    dyy_diag_negative: bool
    eta: float
    xi: float

    def to_dict(self) -> dict:
        certificate = None
        if self.pnorm_certificate is not None:
            p, bound = self.pnorm_certificate
            certificate = {"p": p, "bound": bound}
        return {
            "spectral_radius": self.spectral_radius,
            "support_radius": self.support_radius,
            "is_contraction": self.is_contraction,
            "pnorm_certificate": certificate,
            "dxx_diag_negative": self.dxx_diag_negative,
            "dyy_diag_negative": self.dyy_diag_negative,
            "eta": self.eta,
            "xi": self.xi,
        }


def _check_rates(eta: float, xi: float) -> None:
    if not (math.isfinite(eta) and 0.0 < eta < 1.0):
        raise InputError(f"eta must lie in (0, 1), got {eta!r}")
    if not (math.isfinite(xi) and xi >= 0.0):
        raise InputError(f"xi must be finite and non-negative, got {xi!r}")


def _split_support(p: np.ndarray, tol: float, player: str) -> np.ndarray:
    ambiguous = (p > tol * 1e-2) & (p <= tol)
    if np.any(ambiguous):
        index = int(np.flatnonzero(ambiguous)[0])
        raise IllConditionedSupportError(
            f"{player} coordinate {index} has probability {p[index]!r}, too close to the "
            f"support threshold {tol!r} to classify",
        )
    return p > tol


def jacobian_at_equilibrium(
        game: PayoffMatrix,
        ne: EquilibriumResult,
        eta: float,
        xi: float,
        support_tol: float = DEFAULT_SUPPORT_TOL,
    ) -> EquilibriumJacobian:
    """
    Exact Jacobian of the FLBR update map at `ne`.

    With r = Ry*, c = R^T x* and v the value, rows i of the row-player support read

        ∂φ₁ᵢ/∂x_j = δ_ij − x*_i·(ηξ(Σ_k R_ik R_jk y*_k − v·r_j) + e^{η(r_j − v)})
        ∂φ₁ᵢ/∂y_j = η·x*_i·e^{−ξ(c_j − v)}·(R_ij − c_j)

    and mirrored for the column player. A row outside the support has the
    single entry e^{η(r_i − v)} (resp. e^{−η(c_i − v)}) on the diagonal.

    Args:
        game: The payoff matrix.
        ne: An equilibrium with certificate_eps ≤ 1e-6.
        eta: Learning rate η in (0, 1).
        xi: IBR rate ξ ≥ 0.
        support_tol: Probabilities above this are in the support.

    Raises:
        DimensionError: If `ne` does not fit the game.
        InputError: If `ne` is not an equilibrium within 1e-6 or the rates are invalid.
        IllConditionedSupportError: If a probability lies in (support_tol·1e-2, support_tol].
    """
    ne.profile.check_against(game)
    _check_rates(eta, xi)
    if ne.certificate_eps > MAX_CERTIFICATE_EPS:
        raise InputError(
            f"Profile is only a {ne.certificate_eps!r}-Nash equilibrium; "
            f"the Jacobian needs certificate_eps <= {MAX_CERTIFICATE_EPS!r}",
        )
    R = game.entries
    n, m = game.shape
    px, py = ne.profile.probabilities()
    in_x = _split_support(px, support_tol, "Row")
    in_y = _split_support(py, support_tol, "Column")
    x = np.where(in_x, px, 0.0)
    y = np.where(in_y, py, 0.0)
    x /= x.sum()
    y /= y.sum()

    r = R @ y
    c = R.T @ x
    v = float(x @ r)
    kx = (R * y) @ R.T  # Σ_k R_ik R_jk y_k
    ky = R.T @ (x[:, None] * R)  # Σ_k R_ki R_kj x_k
    ex = np.exp(eta * (r - v))
    ey = np.exp(-eta * (c - v))
    gx = np.exp(xi * (r - v))
    gy = np.exp(-xi * (c - v))

    jxx = np.eye(n) - x[:, None] * (eta * xi * (kx - v * r[None, :]) + ex[None, :])
    jxy = eta * x[:, None] * gy[None, :] * (R - c[None, :])
    jyx = -eta * y[:, None] * gx[None, :] * (R.T - r[None, :])
    jyy = np.eye(m) - y[:, None] * (eta * xi * (ky - v * c[None, :]) + ey[None, :])
    off_x, off_y = np.flatnonzero(~in_x), np.flatnonzero(~in_y)
    jxx[off_x, :] = 0.0
    jxx[off_x, off_x] = ex[off_x]
    jxy[off_x, :] = 0.0
    jyx[off_y, :] = 0.0
    jyy[off_y, :] = 0.0
    jyy[off_y, off_y] = ey[off_y]
    full = np.block([[jxx, jxy], [jyx, jyy]])

    sx, sy = np.flatnonzero(in_x), np.flatnonzero(in_y)
    xs, ys = x[sx], y[sy]
    dxx = -xs[:, None] * (kx[np.ix_(sx, sx)] - v * v)
    dyy = -ys[:, None] * (ky[np.ix_(sy, sy)] - v * v)
    dxy = xs[:, None] * (R[np.ix_(sx, sy)] - c[sy][None, :]) * gy[sy][None, :]
    dyx = -ys[:, None] * (R.T[np.ix_(sy, sx)] - r[sx][None, :]) * gx[sx][None, :]
    k1, k2 = sx.size, sy.size
    reduced = np.block([
        [np.eye(k1) + eta * xi * dxx, eta * dxy],
        [eta * dyx, np.eye(k2) + eta * xi * dyy],
    ])
    a_part = np.zeros((k1 + k2, k1 + k2))
    a_part[:k1, :k1] = -xs[:, None]
    a_part[k1:, k1:] = -ys[:, None]
    return EquilibriumJacobian(
        full=full,
        support_submatrix=reduced + a_part,
        reduced=reduced,
        dxx=dxx,
        dxy=dxy,
        dyx=dyx,
        dyy=dyy,
        row_support=tuple(int(i) for i in sx),
        col_support=tuple(int(j) for j in sy),
        eta=eta,
        xi=xi,
        value=v,
    )


def hessenberg(matrix: np.ndarray) -> np.ndarray:
    """Upper Hessenberg form of a square matrix by Householder similarity transforms."""
    a = np.array(matrix, dtype=float)
    n = a.shape[0]
    for k in range(n - 2):
        column = a[k + 1:, k]
        norm = float(np.linalg.norm(column))
        if norm == 0.0:
            continue
        alpha = -math.copysign(norm, column[0])
        u = column.copy()
        u[0] -= alpha
        u /= np.linalg.norm(u)
        a[k + 1:, k:] -= 2.0 * np.outer(u, u @ a[k + 1:, k:])
        a[:, k + 1:] -= 2.0 * np.outer(a[:, k + 1:] @ u, u)
        a[k + 1, k] = alpha
        a[k + 2:, k] = 0.0
    return a


def _francis_qr(h: np.ndarray, max_sweeps: int) -> np.ndarray:
    """
    Eigenvalues of an upper Hessenberg matrix by Francis double-shift QR.

    `h` is overwritten. Each deflation gets `max_sweeps` sweeps; exceptional
    shifts are applied every tenth sweep.
    """
    n = h.shape[0]
    wr, wi = np.zeros(n), np.zeros(n)
    norm = sum(abs(h[i, j]) for i in range(n) for j in range(max(i - 1, 0), n))
    nn = n - 1
    shift = 0.0
    while nn >= 0:
        sweeps = 0
        while True:
            # Look for a negligible subdiagonal element.
            l = 0
            for cand in range(nn, 0, -1):
                s = abs(h[cand - 1, cand - 1]) + abs(h[cand, cand])
                if s == 0.0:
                    s = norm
                if abs(h[cand, cand - 1]) + s == s:
                    h[cand, cand - 1] = 0.0
                    l = cand
                    break
            x = h[nn, nn]
            if l == nn:
                wr[nn], wi[nn] = x + shift, 0.0
                nn -= 1
                break
            y = h[nn - 1, nn - 1]
            w = h[nn, nn - 1] * h[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += shift
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1], wi[nn] = -z, z
                nn -= 2
                break
            if sweeps == max_sweeps:
                found = np.hypot(wr[nn + 1:], wi[nn + 1:])
                raise ConvergenceError(
                    f"QR iteration did not converge for eigenvalue {nn} within {max_sweeps} sweeps",
                    partial=sorted(found.tolist(), reverse=True),
                )
            if sweeps > 0 and sweeps % 10 == 0:
                shift += x
                for i in range(nn + 1):
                    h[i, i] -= x
                s = abs(h[nn, nn - 1]) + abs(h[nn - 1, nn - 2])
                x = y = 0.75 * s
                w = -0.4375 * s * s
            sweeps += 1
            # Two consecutive small subdiagonal elements.
            for mm in range(nn - 2, l - 1, -1):
                z = h[mm, mm]
                r = x - z
                s = y - z
                p = (r * s - w) / h[mm + 1, mm] + h[mm, mm + 1]
                q = h[mm + 1, mm + 1] - z - r - s
                r = h[mm + 2, mm + 1]
                s = abs(p) + abs(q) + abs(r)
                p, q, r = p / s, q / s, r / s
                if mm == l:
                    break
                u = abs(h[mm, mm - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(h[mm - 1, mm - 1]) + abs(z) + abs(h[mm + 1, mm + 1]))
                if u + v == v:
                    break
            for i in range(mm + 2, nn + 1):
                h[i, i - 2] = 0.0
                if i != mm + 2:
                    h[i, i - 3] = 0.0
            # Double-shift QR sweep chasing the bulge from row mm to nn.
            for k in range(mm, nn):
                if k != mm:
                    p = h[k, k - 1]
                    q = h[k + 1, k - 1]
                    r = h[k + 2, k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p, q, r = p / x, q / x, r / x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == mm:
                    if l != mm:
                        h[k, k - 1] = -h[k, k - 1]
                else:
                    h[k, k - 1] = -s * x
                p += s
                x, y, z = p / s, q / s, r / s
                q, r = q / p, r / p
                for j in range(k, nn + 1):
                    p = h[k, j] + q * h[k + 1, j]
                    if k != nn - 1:
                        p += r * h[k + 2, j]
                        h[k + 2, j] -= p * z
                    h[k + 1, j] -= p * y
                    h[k, j] -= p * x
                for i in range(l, min(nn, k + 3) + 1):
                    p = x * h[i, k] + y * h[i, k + 1]
                    if k != nn - 1:
                        p += z * h[i, k + 2]
                        h[i, k + 2] -= p * r
                    h[i, k + 1] -= p * q
                    h[i, k] -= p
    return wr + 1j * wi


def eigenvalues(matrix: np.ndarray, max_sweeps: int = 30) -> np.ndarray:
    """
    All (complex) eigenvalues of a real square matrix of size at most 200.

    Raises:
        DimensionError: If the matrix is not square.
        SizeError: If it is larger than 200×200.
        InputError: If it holds non-finite entries.
        ConvergenceError: If QR runs out of sweeps; `partial` holds the moduli found.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"Expected a square matrix, got shape {a.shape}")
    if a.shape[0] > MAX_EIGEN_DIM:
        raise SizeError(f"Eigen solver handles matrices up to {MAX_EIGEN_DIM}x{MAX_EIGEN_DIM}, got {a.shape[0]}")  # noqa: E501
    if not np.all(np.isfinite(a)):
        raise InputError("Matrix entries must be finite")
    if a.shape[0] == 0:
        return np.zeros(0, dtype=complex)
    try:
        return _francis_qr(hessenberg(a), max_sweeps)
    except ConvergenceError as e:
        logger.warning("%s", e)
        raise


def eigen_moduli(matrix: np.ndarray, max_sweeps: int = 30) -> np.ndarray:
    """Moduli of all eigenvalues, in descending order; see `eigenvalues`."""
    return np.sort(np.abs(eigenvalues(matrix, max_sweeps)))[::-1]


def power_norm_certificate(matrix: np.ndarray, max_power: int = MAX_POWER) -> tuple[int, float] | None:  # noqa: E501
    """
    First p ≤ max_power with ‖M^p‖₂^{1/p} < 1, as (p, bound).

    Each bound is an upper bound on the spectral radius of M.
    """
    power = np.eye(matrix.shape[0])
    for p in range(1, max_power + 1):
        power = power @ matrix
        bound = float(np.linalg.norm(power, 2)) ** (1.0 / p)
        if bound < 1.0:
            return p, bound
    return None


def certify_contraction(
        game: PayoffMatrix,
        ne: EquilibriumResult,
        eta: float,
        xi: float,
        margin: float = 1e-9,
        support_tol: float = DEFAULT_SUPPORT_TOL,
    ) -> ContractionReport:
    """
    Decide whether the FLBR update is a local contraction at `ne`.

    Raises:
        Whatever `jacobian_at_equilibrium` and `eigen_moduli` raise.
    """
    jac = jacobian_at_equilibrium(game, ne, eta, xi, support_tol)
    spectral_radius = float(eigen_moduli(jac.full)[0])
    support_radius = float(eigen_moduli(jac.support_submatrix)[0])
    report = ContractionReport(
        spectral_radius=spectral_radius,
        support_radius=support_radius,
        is_contraction=spectral_radius < 1.0 - margin,
        pnorm_certificate=power_norm_certificate(jac.reduced),
        dxx_diag_negative=bool(np.all(np.diag(jac.dxx) < 0.0)),
        dyy_diag_negative=bool(np.all(np.diag(jac.dyy) < 0.0)),
        eta=eta,
        xi=xi,
    )
    logger.debug("Contraction check at eta=%r, xi=%r: radius %r", eta, xi, spectral_radius)
    return report


def _normalized_reweigh(p: np.ndarray, gain: np.ndarray, rate: float) -> np.ndarray:
    z = rate * gain
    weights = p * np.exp(z - z.max())
    return weights / weights.sum()


def update_map(
        R: np.ndarray,
        x: np.ndarray,
        y: np.ndarray,
        eta: float,
        xi: float,
    ) -> tuple[np.ndarray, np.ndarray]:
    """
    One FLBR update in plain coordinates.

    Unlike the step functions, x and y are arbitrary real vectors (they need
    not be probabilities), so the map can be differentiated numerically.
    """
    R = np.asarray(R, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    y_hat = _normalized_reweigh(y, R.T @ x, -xi)
    x_hat = _normalized_reweigh(x, R @ y, xi)
    return _normalized_reweigh(x, R @ y_hat, eta), _normalized_reweigh(y, R.T @ x_hat, -eta)


def finite_difference_jacobian(
        R: np.ndarray,
        x: np.ndarray,
        y: np.ndarray,
        eta: float,
        xi: float,
        step: float = 1e-6,
    ) -> np.ndarray:
    """Central-difference Jacobian of `update_map`, coordinates ordered (x, y)."""
    point = np.concatenate([np.asarray(x, dtype=float), np.asarray(y, dtype=float)])
    n = len(x)
    size = point.size
    jac = np.zeros((size, size))
    for j in range(size):
        forward, backward = point.copy(), point.copy()
        forward[j] += step
        backward[j] -= step
        fx, fy = update_map(R, forward[:n], forward[n:], eta, xi)
        bx, by = update_map(R, backward[:n], backward[n:], eta, xi)
        jac[:, j] = (np.concatenate([fx, fy]) - np.concatenate([bx, by])) / (2.0 * step)
    return jac
