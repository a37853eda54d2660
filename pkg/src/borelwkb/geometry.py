"""Complex contours, action integrals, Stokes graphs, and the action chart.

Branch policy: q^(1/2) is tracked continuously along every path, seeded at
the first vertex (principal branch unless the path says otherwise).  The
useful identity omega/q^(1/2) = (4 q q'' - 5 q'^2)/(16 q^3) makes the
shifted kernel single valued; only the map x <-> xi carries the
two-sheetedness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (BranchDiscontinuity, NoCanonicalPath,
                     PathThroughTurningPoint, TraceStalled)
from .potential import Polynomial, TurningPoint, turning_points
from .quadrature import _rule, integrate_segment

DEFAULT_QUAD_TOL = 1e-10
DEFAULT_EXCLUSION = 1e-6


@dataclass
class ContourPath:
    """Oriented polyline in the complex plane with branch bookkeeping.

    ``branch_seed`` is the value of q^(1/2) at the first vertex (or at the
    first vertex where q != 0 when an endpoint is a declared turning point).
    ``start_tp``/``end_tp`` declare integrable turning-point endpoints.
    """

    vertices: list
    branch_seed: complex | None = None
    start_tp: bool = False
    end_tp: bool = False

    def __post_init__(self):
        self.vertices = [complex(v) for v in self.vertices]
        if len(self.vertices) < 2:
            raise ValueError("path needs at least two vertices")
        for a, b in zip(self.vertices[:-1], self.vertices[1:]):
            if a == b:
                raise ValueError("consecutive vertices must be distinct")

    def reversed(self) -> "ContourPath":
        return ContourPath(list(reversed(self.vertices)), None,
                           start_tp=self.end_tp, end_tp=self.start_tp)


# --- branch tracking ---------------------------------------------------------


class _CurveSqrt:
    """Continuous q^(1/2) along one parametric curve t in [0, 1].

    Stores sign flips of the principal square root; pointwise access then
    costs one searchsorted.  Refinement subdivides until the principal value
    rotates by less than ~pi/2 between samples.
    """

    def __init__(self, q: Polynomial, xfun, seed: complex | None,
                 allow_zero_start: bool = False, max_samples: int = 20000):
        self.q = q
        self.xfun = xfun
        ts = list(np.linspace(0.0, 1.0, 33))
        vals = [np.sqrt(q(xfun(t))) for t in ts]
        # adaptive refinement on principal-value rotation
        i = 0
        guard = 0
        while i < len(ts) - 1 and guard < max_samples:
            guard += 1
            a, b = vals[i], vals[i + 1]
            lo = min(abs(a), abs(b))
            if lo == 0.0:
                if (i == 0 and allow_zero_start) or \
                        (i + 2 == len(ts) and allow_zero_start):
                    i += 1
                    continue
                raise PathThroughTurningPoint(
                    f"path touches a zero of q near t={ts[i]}")
            rot = abs(np.angle((b * b) / (a * a)))
            if rot > 1.2 and ts[i + 1] - ts[i] > 1e-12:
                tm = 0.5 * (ts[i] + ts[i + 1])
                ts.insert(i + 1, tm)
                vals.insert(i + 1, np.sqrt(q(xfun(tm))))
            else:
                i += 1
        if guard >= max_samples:
            raise BranchDiscontinuity("branch tracking failed to settle")
        self.ts = np.array(ts)
        vals = np.array(vals)
        # chained signs relative to the principal branch
        signs = np.ones(len(ts))
        for i in range(1, len(ts)):
            a = signs[i - 1] * vals[i - 1]
            if abs(vals[i] - a) > abs(-vals[i] - a):
                signs[i] = -signs[i - 1]
            else:
                signs[i] = signs[i - 1]
        # seed fixes the overall sign at the first nonzero sample
        k0 = 0
        while k0 < len(vals) and abs(vals[k0]) == 0.0:
            k0 += 1
        if seed is not None and k0 < len(vals):
            ref = signs[k0] * vals[k0]
            if abs(seed - ref) > abs(seed + ref):
                signs = -signs
        self.signs = signs
        self._flip_ts = self.ts[1:][signs[1:] != signs[:-1]]
        self._sign0 = signs[0]

    def sign_at(self, t):
        t = np.asarray(t, dtype=float)
        flips = np.searchsorted(self._flip_ts, t, side="right")
        return self._sign0 * (-1.0) ** flips

    def value_at(self, t):
        x = self.xfun(np.asarray(t, dtype=float))
        return self.sign_at(t) * np.sqrt(self.q(x))

    @property
    def end_value(self):
        return self.signs[-1] * np.sqrt(self.q(self.xfun(1.0)))


def tracked_curves(q: Polynomial, path: ContourPath):
    """One _CurveSqrt per path segment, branch chained through the path."""
    seed = path.branch_seed
    curves = []
    verts = path.vertices
    n_seg = len(verts) - 1
    for i, (a, b) in enumerate(zip(verts[:-1], verts[1:])):
        tp_start = path.start_tp and i == 0
        tp_end = path.end_tp and i == n_seg - 1
        if tp_start:
            xfun = _tp_param(a, b, at_start=True)
        elif tp_end:
            xfun = _tp_param(a, b, at_start=False)
        else:
            xfun = _linear_param(a, b)
        curve = _CurveSqrt(q, xfun, seed, allow_zero_start=tp_start or tp_end)
        curves.append(curve)
        ev = curve.end_value
        if abs(ev) > 0:
            seed = ev
    return curves


def _linear_param(a, b):
    def xfun(t):
        return a + (np.asarray(t, dtype=float)) * (b - a)
    xfun.dxdt = lambda t: np.full_like(np.asarray(t, dtype=float),
                                       b - a, dtype=complex)
    return xfun


def _tp_param(a, b, at_start: bool):
    """Quadratic clustering of parameter points at a turning-point endpoint,
    making q^(1/2) dx ~ u^2 du integrable-smooth."""
    if at_start:
        def xfun(t):
            t = np.asarray(t, dtype=float)
            return a + t * t * (b - a)
        xfun.dxdt = lambda t: 2.0 * np.asarray(t, dtype=float) * (b - a)
    else:
        def xfun(t):
            t = np.asarray(t, dtype=float)
            u = 1.0 - t
            return b + u * u * (a - b)
        xfun.dxdt = lambda t: 2.0 * (1.0 - np.asarray(t, dtype=float)) * (b - a)
    return xfun


# --- action integrals --------------------------------------------------------


def action_integral(q: Polynomial, path: ContourPath,
                    tol: float = DEFAULT_QUAD_TOL) -> complex:
    """Integral of q^(1/2) along the path with continuous branch tracking.

    Endpoint segments declared as turning points use a quadratic parameter
    substitution so the (x - x_p)^(1/2) behavior is handled exactly by the
    Gauss panels.
    """
    curves = tracked_curves(q, path)
    total = 0.0 + 0.0j
    seg_tol = tol / max(1, len(curves))
    for curve in curves:
        def f(t, c=curve):
            return c.value_at(t) * c.xfun.dxdt(t)
        total += integrate_segment(f, 0.0, 1.0, seg_tol)
    return total


def omega_tilde(q: Polynomial, x):
    """omega * q^(-1/2) as the single-valued rational function of x."""
    x = np.asarray(x, dtype=complex)
    qx = q(x)
    d1 = q.eval_deriv(x, 1)
    d2 = q.eval_deriv(x, 2)
    out = (4.0 * qx * d2 - 5.0 * d1 * d1) / (16.0 * qx ** 3)
    if out.ndim == 0:
        return complex(out)
    return out


def omega_tilde_dx(q: Polynomial, x):
    """d/dx of omega_tilde (rational, used for off-path Taylor steps)."""
    x = np.asarray(x, dtype=complex)
    qx = q(x)
    d1 = q.eval_deriv(x, 1)
    d2 = q.eval_deriv(x, 2)
    d3 = q.eval_deriv(x, 3)
    num = 4.0 * qx * d2 - 5.0 * d1 * d1
    dnum = 4.0 * d1 * d2 + 4.0 * qx * d3 - 10.0 * d1 * d2
    out = dnum / (16.0 * qx ** 3) - 3.0 * num * d1 / (16.0 * qx ** 4)
    if out.ndim == 0:
        return complex(out)
    return out


def omega_dx_integral(q: Polynomial, vertices, tol: float = DEFAULT_QUAD_TOL,
                      tail_in: float | None = None,
                      tail_out: float | None = None) -> complex:
    """Integral of omega_tilde(x) * q^(1/2)(x) dx = omega(x) dx along a
    polyline, plus analytic 1/x-substituted tails to infinity.

    This realizes Omega(xi) = integral of the shifted kernel in the action
    variable; the integrand decays like |x|^(-(n+4)/2) * |x|^(n/2) = |x|^-2
    at worst, so the u = 1/x tail substitution is exact.
    """
    path = ContourPath(list(vertices))
    curves = tracked_curves(q, path)
    total = 0.0 + 0.0j
    for curve in curves:
        def f(t, c=curve):
            x = c.xfun(t)
            return omega_tilde(q, x) * c.value_at(t) * c.xfun.dxdt(t)
        total += integrate_segment(f, 0.0, 1.0, tol / max(1, len(curves)))

    # tails: branch at the outer ends continued from the adjacent segment
    if tail_in is not None:
        total += _omega_tail(q, vertices[0], tail_in, curves[0], at_start=True,
                             tol=tol)
    if tail_out is not None:
        total += _omega_tail(q, vertices[-1], tail_out, curves[-1],
                             at_start=False, tol=tol)
    return total


def _omega_tail(q, start, angle, curve, at_start, tol):
    direction = np.exp(1j * angle)
    r0 = abs(start)
    ref_val = curve.value_at(0.0) if at_start else curve.value_at(1.0)

    def f(u):
        u = np.asarray(u, dtype=float)
        x = direction / u
        s = np.sqrt(q(x))
        # align branch with the adjacent segment end (tail is radial, the
        # principal branch cannot flip along it except through arg(q) = pi,
        # which a sector tail avoids; one global sign suffices)
        return omega_tilde(q, x) * s * direction / u ** 2

    probe = np.sqrt(q(direction * r0))
    sign = 1.0 if abs(probe - ref_val) <= abs(probe + ref_val) else -1.0
    val = integrate_segment(f, 1.0 / r0, 0.0, tol)
    if at_start:
        val = -val  # tail runs infinity -> start when it feeds the path start
    return sign * val


def big_omega(q: Polynomial, vertices, tail_in_angle: float,
              tol: float = DEFAULT_QUAD_TOL) -> complex:
    """Omega at the path end: integral of the shifted kernel from effective
    infinity of the entry sector along the given polyline."""
    return omega_dx_integral(q, vertices, tol=tol, tail_in=tail_in_angle)


# --- Stokes graphs -----------------------------------------------------------


@dataclass
class StokesLine:
    source: int                      # index into StokesGraph.turning_points
    samples: np.ndarray = field(repr=False)
    terminal: str = "infinity"       # infinity | turning_point | capped
    target: int | None = None


@dataclass
class Sector:
    index: int                       # 1-based, counterclockwise
    lo_angle: float
    hi_angle: float

    @property
    def center(self) -> float:
        lo, hi = self.lo_angle, self.hi_angle
        if hi < lo:
            hi += 2.0 * math.pi
        c = 0.5 * (lo + hi)
        return math.atan2(math.sin(c), math.cos(c))


@dataclass
class StokesGraph:
    q: Polynomial
    turning_points: list
    lines: list
    sectors: list

    @property
    def p(self) -> int:
        return len(self.sectors)

    def sector_containing(self, angle: float) -> Sector:
        tau = 2.0 * math.pi
        a = angle % tau
        for sec in self.sectors:
            lo = sec.lo_angle % tau
            hi = sec.hi_angle % tau
            if lo <= hi:
                if lo <= a < hi:
                    return sec
            elif a >= lo or a < hi:
                return sec
        return self.sectors[-1]

    def to_json(self) -> dict:
        return {
            "degree": self.q.degree,
            "turning_points": [[t.location.real, t.location.imag,
                                t.multiplicity]
                               for t in self.turning_points],
            "lines": [{
                "source": ln.source,
                "terminal": ln.terminal,
                "target": ln.target,
                "samples": [[z.real, z.imag] for z in ln.samples],
            } for ln in self.lines],
            "sectors": [{"index": s.index, "lo_angle": s.lo_angle,
                         "hi_angle": s.hi_angle} for s in self.sectors],
        }


def _sector_wedges(q: Polynomial):
    n = q.degree
    cn = q.coefficients[-1]
    p = n + 2
    bounds = sorted(((math.pi * (2 * k + 1) - np.angle(cn)) / p) % (2 * math.pi)
                    for k in range(p))
    wedges = []
    for i in range(p):
        lo = bounds[i]
        hi = bounds[(i + 1) % p] if i + 1 < p else bounds[0] + 2 * math.pi
        wedges.append((lo, hi % (2 * math.pi) if i + 1 < p else
                       (bounds[0]) % (2 * math.pi)))
    # order so sector 1 contains (or is nearest to) direction 0, then CCW
    def wedge_center(w):
        lo, hi = w
        if hi < lo:
            hi += 2 * math.pi
        c = 0.5 * (lo + hi)
        return math.atan2(math.sin(c), math.cos(c))

    start = min(range(p), key=lambda i: abs(wedge_center(wedges[i])))
    ordered = [wedges[(start + i) % p] for i in range(p)]
    return [Sector(index=i + 1, lo_angle=lo, hi_angle=hi)
            for i, (lo, hi) in enumerate(ordered)]


def stokes_graph(q: Polynomial, trace_cap: float | None = None,
                 step: float = 2e-3) -> StokesGraph:
    """Trace the Stokes lines (Re of the action constant) from every turning
    point and enumerate the sectors at infinity (degree + 2 of them)."""
    tps = turning_points(q)
    scale = max(1.0, max(abs(t.location) for t in tps))
    r_stop = 6.0 * scale + 4.0
    cap = trace_cap if trace_cap is not None else 40.0 * r_stop
    lines = []
    for idx, tp in enumerate(tps):
        m = tp.multiplicity
        n_lines = m + 2
        dq = q.eval_deriv(tp.location, m) / math.factorial(m)
        base = (-np.angle(dq) + math.pi) / (m + 2)
        for k in range(n_lines):
            theta = base + 2.0 * math.pi * k / (m + 2)
            line = _trace_stokes_line(q, tps, idx, theta, r_stop, cap,
                                      step * scale)
            lines.append(line)
    return StokesGraph(q=q, turning_points=tps, lines=lines,
                       sectors=_sector_wedges(q))


def _trace_stokes_line(q, tps, source, theta, r_stop, cap, h0):
    x0 = tps[source].location
    h = h0
    x = x0 + h * np.exp(1j * theta)
    s = np.sqrt(q(x))
    # direction of travel: i/sqrt(q), sign chosen to move away from the source
    samples = [x0, x]
    length = h
    terminal = "capped"
    target = None
    sign = 1.0
    d0 = 1j * sign / s
    if (d0 / abs(d0) * np.conj(x - x0)).real < 0:
        sign = -1.0
    guard = 0
    while length < cap and guard < 200000:
        guard += 1
        qx = q(x)
        if abs(qx) == 0:
            terminal = "turning_point"
            break
        s = np.sqrt(qx)
        if abs(s - s_prev := None) if False else False:
            pass
        d = 1j * sign / s
        d = d / abs(d)
        # RK2 step along the level line, branch kept by direction continuity
        xm = x + 0.5 * h * d
        sm = np.sqrt(q(xm))
        dm = 1j * sign / sm
        dm = dm / abs(dm)
        if (dm * np.conj(d)).real < 0:
            dm, sign = -dm, -sign
        x_new = x + h * dm
        samples.append(x_new)
        length += h
        x = x_new
        if abs(x) > r_stop:
            terminal = "infinity"
            break
        hit = _nearest_tp(tps, x, exclude=None)
        if hit is not None and hit[1] < max(1e-6, 2 * h) and \
                abs(x - x0) > 10 * h0:
            terminal = "turning_point"
            target = hit[0]
            samples.append(tps[hit[0]].location)
            break
        # adaptive: slow down near turning points
        base = min(abs(x - t.location) for t in tps)
        h = min(max(h0, 0.2 * base), 0.05 * r_stop)
        if h < 1e-14:
            raise TraceStalled("stokes trace step underflow")
    return StokesLine(source=source, samples=np.array(samples),
                      terminal=terminal, target=target)


def _nearest_tp(tps, x, exclude=None):
    best = None
    for i, t in enumerate(tps):
        if i == exclude:
            continue
        d = abs(x - t.location)
        if best is None or d < best[1]:
            best = (i, d)
    return best


# --- canonical paths ---------------------------------------------------------


def anchor_point(g: StokesGraph, sector: int, radius: float | None = None):
    """Effective-infinity anchor of a sector (point on its bisector)."""
    sec = g.sectors[sector - 1]
    scale = max(1.0, max(abs(t.location) for t in g.turning_points))
    r = radius if radius is not None else 4.0 * scale + 3.0
    return r * np.exp(1j * sec.center)


def _segment_tp_clearance(a, b, tps):
    worst = None
    for t in tps:
        z = t.location
        ab = b - a
        lam = ((z - a) * np.conj(ab)).real / abs(ab) ** 2
        lam = min(1.0, max(0.0, lam))
        d = abs(a + lam * ab - z)
        if worst is None or d < worst[1]:
            worst = (t, d, lam)
    return worst


def _route(vertices, tps, clearance, detour_side=+1.0, max_pass=12):
    """Insert detour waypoints until every segment clears the turning points."""
    verts = list(vertices)
    for _ in range(max_pass):
        changed = False
        out = [verts[0]]
        for a, b in zip(verts[:-1], verts[1:]):
            hit = _segment_tp_clearance(a, b, tps)
            if hit is not None and hit[1] < clearance and 0.02 < hit[2] < 0.98:
                t, d, lam = hit
                ab = (b - a) / abs(b - a)
                normal = 1j * ab * detour_side
                foot = a + lam * (b - a)
                out.append(t.location + (foot - t.location + normal *
                                         clearance) * 1.35
                           if d > 1e-12 else t.location + normal * 1.6 *
                           clearance)
                changed = True
            out.append(b)
        verts = out
        if not changed:
            return verts
    return verts


def canonical_path(g: StokesGraph, from_sector: int, to: complex,
                   detour_side: float = +1.0,
                   stokes_clearance: float = 1e-6) -> ContourPath:
    """Path from effective infinity of ``from_sector`` to ``to`` that keeps
    the real part of the action effectively monotone.

    Targets sitting on a Stokes line (within ``stokes_clearance``) are
    rejected; the caller owns any deformation policy.
    """
    to = complex(to)
    for ln in g.lines:
        if len(ln.samples) > 1:
            d = np.min(np.abs(ln.samples - to))
            if d < stokes_clearance:
                raise NoCanonicalPath(f"target {to} lies on a Stokes line")
    a = anchor_point(g, from_sector)
    scale = max(1.0, max(abs(t.location) for t in g.turning_points))
    verts = _route([a, to], g.turning_points, clearance=0.35 * scale,
                   detour_side=detour_side)
    path = ContourPath(verts)
    _audit_monotone(g.q, path)
    return path


def sector_to_sector_vertices(g: StokesGraph, from_sector: int,
                              to_sector: int, waypoints=None,
                              detour_side: float = +1.0):
    """Polyline between two sector anchors, with optional fixed waypoints;
    automatic detours keep clear of turning points."""
    a = anchor_point(g, from_sector)
    b = anchor_point(g, to_sector)
    mid = list(waypoints) if waypoints else []
    scale = max(1.0, max(abs(t.location) for t in g.turning_points))
    return _route([a] + [complex(w) for w in mid] + [b], g.turning_points,
                  clearance=0.3 * scale, detour_side=detour_side)


def _audit_monotone(q, path, slack_ratio=0.08):
    """Check Re xi is essentially monotone along the path (canonicality)."""
    curves = tracked_curves(q, path)
    re_vals = []
    acc = 0.0 + 0.0j
    for curve in curves:
        ts = np.linspace(0, 1, 64)
        vals = curve.value_at(ts) * curve.xfun.dxdt(ts)
        step = np.concatenate([[0], np.cumsum(0.5 * (vals[1:] + vals[:-1])
                                              * np.diff(ts))])
        re_vals.extend((acc + step).real)
        acc += step[-1]
    re_vals = np.array(re_vals)
    drops = re_vals - np.minimum.accumulate(re_vals)
    span = re_vals.max() - re_vals.min() + 1e-30
    if np.max(drops) > slack_ratio * span:
        raise NoCanonicalPath("Re(xi) not monotone along candidate path")
    return re_vals


# --- turning-point action distances ------------------------------------------


@dataclass
class ActionDistances:
    anchors: list                    # zeta_k, action position of each tp
    pairwise: dict                   # (i, j) -> zeta_i - zeta_j
    minimal: float                   # d, smallest nonzero |zeta_ij|


def pair_action(q: Polynomial, a: complex, b: complex,
                tol: float = DEFAULT_QUAD_TOL,
                waypoint: complex | None = None) -> complex:
    """Action integral between two turning points along a straight (or one
    waypoint) reference path, branch seeded principally at the midpoint."""
    verts = [a, waypoint, b] if waypoint is not None else [a, b]
    path = ContourPath(verts, start_tp=True, end_tp=True)
    return action_integral(q, path, tol=tol)


def tp_distances(q: Polynomial, tol: float = DEFAULT_QUAD_TOL) -> ActionDistances:
    """First-sheet action positions zeta_k (anchored at the first turning
    point) and the antisymmetric pairwise table zeta_ij = zeta_i - zeta_j."""
    tps = turning_points(q)
    locs = [t.location for t in tps]
    anchors = [0.0 + 0.0j]
    scale = max(1.0, max(abs(z) for z in locs))
    for k in range(1, len(locs)):
        seg = _segment_tp_clearance(locs[0], locs[k],
                                    [t for i, t in enumerate(tps)
                                     if i not in (0, k)])
        way = None
        if seg is not None and seg[1] < 1e-3 * scale:
            mid = 0.5 * (locs[0] + locs[k])
            normal = 1j * (locs[k] - locs[0]) / abs(locs[k] - locs[0])
            way = mid + 0.25 * abs(locs[k] - locs[0]) * normal
        anchors.append(pair_action(q, locs[0], locs[k], tol=tol, waypoint=way))
    pairwise = {}
    minimal = math.inf
    for i in range(len(locs)):
        for j in range(len(locs)):
            if i == j:
                continue
            z = anchors[i] - anchors[j]
            pairwise[(i, j)] = z
            if abs(z) > 1e-13:
                minimal = min(minimal, abs(z))
    return ActionDistances(anchors=anchors, pairwise=pairwise,
                           minimal=minimal)


# --- action chart ------------------------------------------------------------


class XiChart:
    """Parametrized correspondence x <-> xi along a canonical path.

    Built once per (q, path); exposes batched evaluation of the shifted
    kernel and its antiderivative at points xi - eta displaced from the path
    image (the inversion is a short Newton run from the nearest table entry).
    Quadrature nodes along the path (including 1/x tails) are prebaked so
    path integrals of smooth functionals cost one vectorized sweep.
    """

    def __init__(self, q: Polynomial, vertices, tail_in: float | None = None,
                 tail_out: float | None = None, anchor_tp: complex | None = None,
                 nodes_per_seg: int = 12, samples_per_seg: int = 48,
                 tail_nodes: int = 160):
        self.q = q
        self.vertices = [complex(v) for v in vertices]
        self.tail_in = tail_in
        self.tail_out = tail_out
        path = ContourPath(self.vertices)
        self.curves = tracked_curves(q, path)

        xs, sq, dx = [], [], []
        gauss_x, gauss_w = _rule(nodes_per_seg)
        node_x, node_sq, node_w = [], [], []
        for curve in self.curves:
            ts = np.linspace(0.0, 1.0, samples_per_seg + 1)
            xs.append(curve.xfun(ts))
            sq.append(curve.value_at(ts))
            dx.append(curve.xfun.dxdt(ts))
            for t0, t1 in zip(ts[:-1], ts[1:]):
                tm = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * gauss_x
                node_x.append(curve.xfun(tm))
                node_sq.append(curve.value_at(tm))
                node_w.append(0.5 * (t1 - t0) * gauss_w
                              * curve.xfun.dxdt(tm))
        self.sample_x = np.concatenate(xs)
        self.sample_sq = np.concatenate(sq)
        self.node_x = np.concatenate(node_x)
        self.node_sq = np.concatenate(node_sq)
        self.node_w = np.concatenate(node_w)          # complex dx weights

        # tails: u = 1/r substitution nodes (exact for the decaying kernels)
        self.tail_nodes_in = self._bake_tail(tail_in, self.vertices[0],
                                             self.sample_sq[0], tail_nodes,
                                             incoming=True)
        self.tail_nodes_out = self._bake_tail(tail_out, self.vertices[-1],
                                              self.sample_sq[-1], tail_nodes,
                                              incoming=False)

        # cumulative xi and Omega along the samples
        self.sample_xi = self._cumulative(lambda x, s: s)
        self.sample_Omega = self._cumulative(
            lambda x, s: omega_tilde(q, x) * s)
        if tail_in is not None:
            om_in = self._tail_integral(self.tail_nodes_in,
                                        lambda x, s: omega_tilde(q, x) * s)
            self.sample_Omega += om_in
            self.Omega_start = om_in
        else:
            self.Omega_start = 0.0 + 0.0j
        if anchor_tp is not None:
            off = action_integral(
                q, ContourPath([anchor_tp, self.vertices[0]], start_tp=True,
                               branch_seed=None), tol=1e-11)
            ref = self.sample_sq[0]
            # choose the anchoring branch consistent with the chart branch
            self.xi_offset = off
        else:
            self.xi_offset = 0.0 + 0.0j
        self.sample_xi = self.sample_xi + self.xi_offset

        self.Omega_end = complex(self.sample_Omega[-1]
                                 + (self._tail_integral(
                                     self.tail_nodes_out,
                                     lambda x, s: omega_tilde(q, x) * s)
                                    if tail_out is not None else 0.0))

    # -- construction helpers

    def _bake_tail(self, angle, start, ref_sq, n, incoming):
        if angle is None:
            return None
        direction = np.exp(1j * angle)
        r0 = abs(start)
        u_nodes, u_w = _rule(n)
        a, b = 1.0 / r0, 0.0
        um = 0.5 * (a + b) + 0.5 * (b - a) * u_nodes
        x = direction / um
        w = 0.5 * (b - a) * u_w * direction / um ** 2
        s = np.sqrt(self.q(x))
        probe = np.sqrt(self.q(direction * r0))
        if abs(probe - ref_sq) > abs(probe + ref_sq):
            s = -s
        if incoming:
            w = -w    # tail traversed from infinity toward the path start
        return (x, s, w)

    def _tail_integral(self, tail, f):
        if tail is None:
            return 0.0 + 0.0j
        x, s, w = tail
        return complex(np.sum(f(x, s) * w))

    def _cumulative(self, f):
        vals = f(self.sample_x, self.sample_sq)
        mids = 0.5 * (vals[1:] + vals[:-1]) * np.diff(self.sample_x)
        # refine each interval with the baked gauss nodes for accuracy
        out = np.zeros(len(self.sample_x), dtype=complex)
        nseg = len(self.node_x) // (len(self.sample_x) - 1)
        fw = f(self.node_x, self.node_sq) * self.node_w
        fw = fw.reshape(len(self.sample_x) - 1, nseg)
        out[1:] = np.cumsum(fw.sum(axis=1))
        return out

    # -- evaluation

    @property
    def xi_end(self) -> complex:
        return complex(self.sample_xi[-1])

    def x_of_xi(self, w, max_iter: int = 30):
        """Invert xi -> x near the chart (batched Newton)."""
        w = np.atleast_1d(np.asarray(w, dtype=complex))
        idx = np.abs(w[:, None] - self.sample_xi[None, :]).argmin(axis=1)
        x = self.sample_x[idx].copy()
        s = self.sample_sq[idx].copy()
        target = w
        for _ in range(max_iter):
            xi_err = self._xi_at(x, idx) - target
            step = xi_err / s
            x = x - step
            s_new = np.sqrt(self.q(x))
            flip = np.abs(s_new - s) > np.abs(s_new + s)
            s = np.where(flip, -s_new, s_new)
            if np.max(np.abs(step)) < 1e-13 * max(1.0, np.max(np.abs(x))):
                break
        return x, s, idx

    def _xi_at(self, x, idx):
        """xi of points near table entries idx: table value + local panel."""
        x0 = self.sample_x[idx]
        s0 = self.sample_sq[idx]
        xi0 = self.sample_xi[idx]
        # 4-point Gauss on the straight hop x0 -> x with branch continuation
        gx, gw = _rule(6)
        h = (x - x0)
        pts = x0[:, None] + np.outer(h, 0.5 * (gx + 1.0))
        s_pts = np.sqrt(self.q(pts))
        # branch continuity along the hop, seeded at s0
        ref = s0[:, None]
        for k in range(pts.shape[1]):
            cur = s_pts[:, k]
            flip = np.abs(cur - ref[:, 0]) > np.abs(cur + ref[:, 0])
            cur = np.where(flip, -cur, cur)
            s_pts[:, k] = cur
            ref = cur[:, None]
        return xi0 + (h / 2.0)[:] * (s_pts @ gw)

    def omega_tilde_at_xi(self, w):
        """Shifted kernel at xi-plane points near the chart image."""
        x, s, _ = self.x_of_xi(w)
        return omega_tilde(self.q, x)

    def Omega_at_xi(self, w):
        """Antiderivative of the shifted kernel (from sector infinity) at
        xi-points near the chart: table value + short straight correction."""
        w = np.atleast_1d(np.asarray(w, dtype=complex))
        x, s, idx = self.x_of_xi(w)
        xi0 = self.sample_xi[idx]
        om0 = self.sample_Omega[idx]
        # correction along the straight xi-hop using Gauss in xi
        gx, gw = _rule(8)
        h = w - xi0
        xi_pts = xi0[:, None] + np.outer(h, 0.5 * (gx + 1.0))
        xp, sp, _ = self.x_of_xi(xi_pts.ravel())
        vals = omega_tilde(self.q, xp).reshape(xi_pts.shape)
        return om0 + (h / 2.0) * (vals @ gw)

    def path_quadrature(self, f, upto_xi: complex | None = None,
                        include_tail_out: bool = True):
        """Sum f(x, sqrt_q, xi) over the baked nodes (a path integral in xi:
        weights already carry dx; multiply by sqrt_q inside f for d(xi)).

        With ``upto_xi`` the sweep stops at the node nearest that xi value
        (plus a straight correction hop).
        """
        node_xi = self._node_xi()
        vals = f(self.node_x, self.node_sq, node_xi)
        w = self.node_w
        if upto_xi is None:
            total = np.sum(vals * w)
            if include_tail_out and self.tail_nodes_out is not None:
                x, s, tw = self.tail_nodes_out
                total += np.sum(f(x, s, None) * tw)
            if self.tail_nodes_in is not None:
                x, s, tw = self.tail_nodes_in
                total += np.sum(f(x, s, None) * tw)
            return complex(total)
        # partial sweep
        cut = int(np.abs(node_xi - upto_xi).argmin())
        total = np.sum(vals[:cut] * w[:cut])
        if self.tail_nodes_in is not None:
            x, s, tw = self.tail_nodes_in
            total += np.sum(f(x, s, None) * tw)
        # correction hop from the cut node to upto_xi
        x0 = self.node_x[cut]
        s0 = self.node_sq[cut]
        xi0 = node_xi[cut]
        gx, gw = _rule(8)
        h = upto_xi - xi0
        xi_pts = xi0 + h * 0.5 * (gx + 1.0)
        xp, sp, _ = self.x_of_xi(xi_pts)
        total += (h / 2.0) * np.sum(f(xp, sp, xi_pts) / sp * gw)
        return complex(total)

    def _node_xi(self):
        if not hasattr(self, "_node_xi_cache"):
            # nodes are ordered along the path; accumulate via samples
            x, s, idx = None, None, None
            w = np.empty(len(self.node_x), dtype=complex)
            nseg = len(self.node_x) // (len(self.sample_x) - 1)
            sq = self.node_sq.reshape(-1, nseg)
            nx = self.node_x.reshape(-1, nseg)
            nw = self.node_w.reshape(-1, nseg)
            xi_acc = self.sample_xi[:-1]
            out = np.empty_like(sq, dtype=complex)
            for k in range(nseg):
                # cumulative within the interval: integrate sqrt(q) measure
                pass
            # cheaper: xi at nodes via local hop from the left sample
            flat_idx = np.repeat(np.arange(len(self.sample_x) - 1), nseg)
            out = self._xi_at(self.node_x, flat_idx)
            self._node_xi_cache = out
        return self._node_xi_cache
