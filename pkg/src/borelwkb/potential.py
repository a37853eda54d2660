"""Polynomial potentials, turning points, and the local amplitude kernel.

The model problem is psi'' = lambda^2 q(x) psi with q(x) = V(x) - E a
polynomial in one complex variable.  This module owns the polynomial type,
its root (turning point) finding, the kernel

    omega(x) = (1/4) [ q''/q^(3/2) - (5/4) q'^2/q^(5/2) ]
             = -q^(-1/4) (q^(-1/4))''

and the fractional-power expansion of omega/q^(1/2) around a turning point
in the action variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateExpansion, NonConvergence, TurningPointProximity

DEFAULT_ROOT_TOL = 1e-12
DEFAULT_CLUSTER_TOL = 1e-8
DEFAULT_EXCLUSION_RADIUS = 1e-6


@dataclass(frozen=True)
class Polynomial:
    """Complex-coefficient polynomial, coefficients lowest degree first."""

    coefficients: tuple

    def __post_init__(self):
        coeffs = tuple(complex(c) for c in self.coefficients)
        while len(coeffs) > 1 and coeffs[-1] == 0:
            coeffs = coeffs[:-1]
        if len(coeffs) < 2:
            raise ValueError("degree must be >= 1")
        if coeffs[-1] == 0:
            raise ValueError("leading coefficient must be nonzero")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, x):
        """Horner evaluation; accepts scalars or arrays."""
        x = np.asarray(x, dtype=complex)
        acc = np.full_like(x, self.coefficients[-1])
        for c in reversed(self.coefficients[:-1]):
            acc = acc * x + c
        if acc.ndim == 0:
            return complex(acc)
        return acc

    def deriv_coeffs(self, order: int = 1) -> tuple:
        """Derivative coefficients without the degree>=1 constraint."""
        coeffs = list(self.coefficients)
        for _ in range(order):
            coeffs = [k * c for k, c in enumerate(coeffs)][1:]
            if not coeffs:
                return (0j,)
        return tuple(coeffs)

    def eval_deriv(self, x, order: int = 1):
        coeffs = self.deriv_coeffs(order)
        x = np.asarray(x, dtype=complex)
        acc = np.full_like(x, coeffs[-1])
        for c in reversed(coeffs[:-1]):
            acc = acc * x + c
        if acc.ndim == 0:
            return complex(acc)
        return acc

    def shifted(self, offset: complex) -> "Polynomial":
        """Polynomial with the constant term shifted by +offset."""
        coeffs = list(self.coefficients)
        coeffs[0] = coeffs[0] + offset
        return Polynomial(tuple(coeffs))

    def to_json(self) -> list:
        return [[c.real, c.imag] for c in self.coefficients]

    @classmethod
    def from_json(cls, data) -> "Polynomial":
        return cls(tuple(complex(re, im) for re, im in data))


@dataclass(frozen=True)
class TurningPoint:
    location: complex
    multiplicity: int = 1


def eval_q(V: Polynomial, E: complex, x: complex):
    """q(x, E) = V(x) - E."""
    return V(x) - E


def q_at_energy(V: Polynomial, E: complex) -> Polynomial:
    return V.shifted(-E)


def turning_points(q: Polynomial, root_tol: float = DEFAULT_ROOT_TOL,
                   cluster_tol: float = DEFAULT_CLUSTER_TOL):
    """All complex roots of q with multiplicities.

    Companion-matrix eigenvalues seed Newton polishing.  Clustering for
    multiplicity detection is multiplicity-aware: an m-fold root comes out of
    the companion matrix split by O(eps^(1/m)), far wider than any fixed
    tolerance, so candidate clusters grow with a size-dependent radius and
    are then verified by checking that the lower derivatives actually vanish
    at the polished center.
    """
    coeffs_desc = list(reversed([complex(c) for c in q.coefficients]))
    raw = sorted(np.roots(coeffs_desc), key=lambda z: (z.real, z.imag))
    scale = max(1.0, max(abs(r) for r in raw)) if len(raw) else 1.0
    eps = np.finfo(float).eps

    def radius(mult):
        return max(cluster_tol, 100.0 * eps ** (1.0 / mult)) * scale

    # loose initial grouping at the widest plausible multiplicity split
    groups = []
    i = 0
    while i < len(raw):
        members = [raw[i]]
        j = i + 1
        while j < len(raw) and abs(raw[j] - members[-1]) < radius(q.degree):
            members.append(raw[j])
            j += 1
        groups.append(members)
        i = j

    result = []
    for members in groups:
        result.extend(_resolve_cluster(q, members, root_tol * scale, scale,
                                       radius))
    result.sort(key=lambda tp: (tp.location.real, tp.location.imag))
    return result


def _resolve_cluster(q, members, tol, scale, radius):
    """Accept a candidate multiple root only when the hypothesis verifies;
    otherwise split at the widest internal gap and recurse."""
    mult = len(members)
    if mult == 1:
        return [TurningPoint(location=_newton_polish(q, members[0], tol),
                             multiplicity=1)]
    center = sum(members) / mult
    diameter = max(abs(z - center) for z in members)
    if diameter < radius(mult):
        target = Polynomial(q.deriv_coeffs(mult - 1))
        x1 = _newton_polish(target, center, tol)
        coeff_norm = max(abs(c) for c in q.coefficients)
        vanish = coeff_norm * max(1.0, scale) ** q.degree
        if all(abs(q.eval_deriv(x1, j)) < 1e-8 * vanish * _factorial(j)
               for j in range(mult)):
            return [TurningPoint(location=x1, multiplicity=mult)]
    # split at the widest gap in the sorted member list
    gaps = [abs(b - a) for a, b in zip(members[:-1], members[1:])]
    k = int(np.argmax(gaps)) + 1
    return (_resolve_cluster(q, members[:k], tol, scale, radius)
            + _resolve_cluster(q, members[k:], tol, scale, radius))


def _newton_polish(p: Polynomial, x0: complex, tol: float,
                   max_iter: int = 80) -> complex:
    x = complex(x0)
    for _ in range(max_iter):
        f = p(x)
        df = p.eval_deriv(x)
        if df == 0:
            break
        step = f / df
        x -= step
        if abs(step) < tol:
            return x
    if abs(p(x)) > tol * 1e3 * max(1.0, abs(p.coefficients[-1])):
        raise NonConvergence(f"root polish stalled near {x}")
    return x


def omega(q: Polynomial, x: complex, sqrt_q: complex | None = None,
          exclusion_radius: float = DEFAULT_EXCLUSION_RADIUS):
    """The amplitude kernel omega(x); branch of q^(1/2) may be supplied.

    With ``sqrt_q`` given (from a branch tracker), the half-integer powers
    use that branch; otherwise the principal branch.  Raises if x sits inside
    the exclusion radius of a turning point.
    """
    qx = q(x)
    if abs(qx) == 0:
        raise TurningPointProximity(f"omega evaluated at turning point {x}")
    if exclusion_radius > 0:
        # cheap proximity proxy: |q| small compared to local derivative scale
        dq = q.eval_deriv(x)
        if abs(dq) > 0 and abs(qx) / abs(dq) < exclusion_radius:
            raise TurningPointProximity(
                f"omega within exclusion radius of a turning point near {x}")
    s = np.sqrt(qx) if sqrt_q is None else sqrt_q
    d1 = q.eval_deriv(x, 1)
    d2 = q.eval_deriv(x, 2)
    # q^(3/2) = qx*s, q^(5/2) = qx^2*s with the tracked branch
    return 0.25 * (d2 / (qx * s) - 1.25 * d1 * d1 / (qx * qx * s))


def omega_values(q: Polynomial, x, sqrt_q):
    """Vectorized omega on arrays given branch-consistent sqrt(q) values."""
    x = np.asarray(x, dtype=complex)
    qx = q(x)
    d1 = q.eval_deriv(x, 1)
    d2 = q.eval_deriv(x, 2)
    return 0.25 * (d2 / (qx * sqrt_q) - 1.25 * d1 * d1 / (qx * qx * sqrt_q))


# --- formal power series helpers (internal) ---------------------------------

def _ps_mul(a, b, n):
    out = np.zeros(n, dtype=complex)
    for i, ai in enumerate(a[:n]):
        if ai == 0:
            continue
        top = min(n - i, len(b))
        out[i:i + top] += ai * b[:top]
    return out


def _ps_inv(a, n):
    if a[0] == 0:
        raise DegenerateExpansion("series inversion with zero constant term")
    out = np.zeros(n, dtype=complex)
    out[0] = 1.0 / a[0]
    for k in range(1, n):
        s = sum(a[j] * out[k - j] for j in range(1, min(k, len(a) - 1) + 1))
        out[k] = -s / a[0]
    return out


def _ps_pow(a, alpha, n):
    """a(u)^alpha for series with a[0] != 0, alpha any complex."""
    if a[0] == 0:
        raise DegenerateExpansion("fractional power of series with zero "
                                  "constant term")
    a0 = a[0]
    e = np.zeros(n, dtype=complex)
    e[:min(n, len(a))] = a[:min(n, len(a))] / a0
    e[0] = 0.0
    out = np.zeros(n, dtype=complex)
    out[0] = 1.0
    term = np.zeros(n, dtype=complex)
    term[0] = 1.0
    coef = 1.0
    for j in range(1, n):
        coef *= (alpha - (j - 1)) / j
        term = _ps_mul(term, e, n)
        out += coef * term
        if not term.any():
            break
    return a0 ** alpha * out


def _ps_compose(a, b, n):
    """a(b(u)) with b[0] == 0."""
    out = np.zeros(n, dtype=complex)
    out[0] = a[0]
    bp = np.zeros(n, dtype=complex)
    bp[0] = 1.0
    for k in range(1, min(len(a), n)):
        bp = _ps_mul(bp, b, n)
        out += a[k] * bp
    return out


def _ps_revert(v, n):
    """u(v) for v(u) = u*(k0 + k1 u + ...), k0 != 0; returns series of u in v."""
    if v[0] != 0 or v[1] == 0:
        raise DegenerateExpansion("reversion needs v = k0*u + O(u^2)")
    u = np.zeros(n, dtype=complex)
    u[1] = 1.0 / v[1]
    for _ in range(n + 2):
        vu = _ps_compose(v, u, n)
        err = -vu
        err[1] += 1.0
        if not err.any():
            break
        # Newton-like correction: u <- u + err/v'(u)
        dv = np.array([k * v[k] for k in range(1, len(v))], dtype=complex)
        dvu = _ps_compose(dv, u, n)
        u = u + _ps_mul(err, _ps_inv(dvu, n), n)
        u[0] = 0.0
    return u


@dataclass
class LocalOmegaSeries:
    """Expansion of omega/q^(1/2) in v = (xi - xi_p)^(2/(m+2)) at a zero of
    multiplicity m; term k carries v^(k - (m+2)), so k = 0 is the universal
    (xi - xi_p)^(-2) term."""

    multiplicity: int
    coeffs: np.ndarray = field(repr=False)

    @property
    def exponent_step(self) -> float:
        return 2.0 / (self.multiplicity + 2)

    @property
    def leading(self) -> complex:
        """Coefficient of (xi - xi_p)^(-2)."""
        return complex(self.coeffs[0])

    def coefficient(self, k: int) -> complex:
        """Coefficient indexed so the most singular term is k = -3 for a
        simple zero (paper-independent rule: index -(m+2) maps to k=-3 only
        when m = 1; use ``leading`` for the universal term)."""
        idx = k + self.multiplicity + 2
        if idx < 0 or idx >= len(self.coeffs):
            raise IndexError(k)
        return complex(self.coeffs[idx])

    def __call__(self, dxi):
        """Evaluate the truncated series at xi - xi_p = dxi (principal v)."""
        dxi = np.asarray(dxi, dtype=complex)
        v = dxi ** self.exponent_step
        m2 = self.multiplicity + 2
        acc = np.zeros_like(dxi)
        for j, c in enumerate(self.coeffs):
            acc = acc + c * v ** (j - m2)
        return acc


def local_expansion(q: Polynomial, tp: TurningPoint,
                    order: int = 6) -> LocalOmegaSeries:
    """Fractional-power expansion of omega/q^(1/2) around a turning point.

    Returns coefficients of v^(k-(m+2)), k = 0..order, with
    v = (xi-xi_p)^(2/(m+2)).  The k = 0 coefficient is potential independent,
    -m(m+4)/(4(m+2)^2).
    """
    m = tp.multiplicity
    n_terms = order + 1
    nw = n_terms + m + 4  # working length in u

    # q(x_p + u) = u^m * h(u)
    taylor = np.array(
        [q.eval_deriv(tp.location, j) / _factorial(j)
         for j in range(q.degree + 1)], dtype=complex)
    if any(abs(taylor[j]) > 1e-9 * max(1.0, abs(taylor).max())
           for j in range(m)):
        raise DegenerateExpansion(
            f"point {tp.location} is not a zero of multiplicity {m}")
    h = np.zeros(nw, dtype=complex)
    top = min(nw, len(taylor) - m)
    h[:top] = taylor[m:m + top]
    if h[0] == 0:
        raise DegenerateExpansion("vanishing reduced leading coefficient")

    half = _ps_pow(h, 0.5, nw)             # sqrt(h)
    b = _ps_pow(h, -0.25, nw)              # h^(-1/4)
    db = np.array([k * b[k] for k in range(1, nw)] + [0j], dtype=complex)
    d2b = np.array([k * db[k] for k in range(1, nw)] + [0j], dtype=complex)

    # omega = u^(-m/2-2) * W(u),
    # W = -b*[ (m/4)(m/4+1) b - (m/2) u b' + u^2 b'' ]
    inner = (m / 4.0) * (m / 4.0 + 1.0) * b
    inner[1:] -= (m / 2.0) * db[:-1]
    inner[2:] += d2b[:-2]
    w_series = -_ps_mul(b, inner, nw)

    # omega~ = omega / sqrt(q) = u^(-(m+2)) * P(u), P = W * h^(-1/2)
    p_series = _ps_mul(w_series, _ps_pow(h, -0.5, nw), nw)

    # xi - xi_p = u^((m+2)/2) * G(u), G_j = half_j / ((m+2)/2 + j)
    g = np.array([half[j] / ((m + 2) / 2.0 + j) for j in range(nw)],
                 dtype=complex)

    # v = (xi-xi_p)^(2/(m+2)) = u * G(u)^(2/(m+2))
    kser = _ps_pow(g, 2.0 / (m + 2), nw)
    v_of_u = np.zeros(nw, dtype=complex)
    v_of_u[1:] = kser[:-1]
    u_of_v = _ps_revert(v_of_u, nw)

    # omega~ * u^(m+2) as a series in v, then divide by v^(m+2) via M(v)
    mv = np.zeros(nw, dtype=complex)       # u = v*M(v)
    mv[:-1] = u_of_v[1:]
    p_in_v = _ps_compose(p_series, u_of_v, nw)
    m_pow = _ps_pow(mv, -(m + 2), nw)
    c = _ps_mul(p_in_v, m_pow, nw)
    return LocalOmegaSeries(multiplicity=m, coeffs=c[:n_terms])


def _factorial(n: int) -> float:
    out = 1.0
    for k in range(2, n + 1):
        out *= k
    return out
