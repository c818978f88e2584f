"""Spectra of rational approximants, gap labeling and measurement campaigns.

For alpha = p/q the spectrum is the union over the phase theta of the q
Floquet bands; band edges are eigenvalues of the periodic and antiperiodic
q x q problems.  The per-theta band set is (1/q)-periodic in theta (cyclic
invariance of the transfer trace), so only theta in [0, 1/q) is ever sampled:
a grid of T distinct values there carries the same information as T*q values
around the whole circle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .arithmetic import Frequency
from .cocycle import rotation_number, schrodinger_cocycle

BISECT_TOL = 1e-13
MERGE_TOL = 10.0 * BISECT_TOL
WIDTH_FLOOR = 1e-12          # double-precision floor for trustworthy widths
RHO_SKIP_WIDTH = 1e-10       # gaps thinner than this skip the rotation check


@dataclass(frozen=True)
class BandStructure:
    approximant: tuple              # (p, q)
    lam: float
    potential: object               # FourierMap
    bands: tuple                    # ordered disjoint closed intervals (lo, hi)
    theta_grid: int                 # distinct theta values examined in [0, 1/q)
    ref_edges: tuple = ()           # the 2q elementary Floquet edges at theta = 0
    flagged: bool = False           # theta refinement budget exhausted

    @property
    def measure(self):
        return sum(b - a for a, b in self.bands)

    def e_min(self):
        return self.bands[0][0]

    def e_max(self):
        return self.bands[-1][1]

    def elementary_bands_below(self, energy):
        """Number of elementary (multiplicity-counted) bands below an energy
        in a gap.  Merged intervals may hide several elementary bands whose
        mutual gaps collapsed below tolerance; the theta = 0 edge list keeps
        the exact count."""
        count = int(np.searchsorted(np.asarray(self.ref_edges), energy))
        if count % 2 != 0:
            raise ValueError(f"E={energy} does not separate elementary bands cleanly")
        return count // 2

    def gaps(self):
        """Open gaps strictly inside [E_min, E_max] as (lo, hi, j) with j the
        elementary band count below."""
        out = []
        for i in range(len(self.bands) - 1):
            lo, hi = self.bands[i][1], self.bands[i + 1][0]
            out.append((lo, hi, self.elementary_bands_below(0.5 * (lo + hi))))
        return out

    def to_rows(self):
        return [(i, a, b) for i, (a, b) in enumerate(self.bands)]


def potential_sup(f):
    return float(np.abs(f.sample(1024)).max())


def bracket_interval(lam, f):
    s = abs(lam) * potential_sup(f)
    return (-2.0 - s - 1.0, 2.0 + s + 1.0)


def floquet_edges(lam, f, p, q, theta):
    """Sorted band edges at fixed theta: eigenvalues of the periodic and
    antiperiodic Bloch problems for the q-periodic approximant."""
    ns = np.arange(q)
    diag = lam * f((theta + ns * (p / q)) % 1.0).real
    edges = []
    for bc in (+1.0, -1.0):
        H = np.zeros((q, q))
        H[np.arange(q), np.arange(q)] = diag
        if q == 1:
            H[0, 0] += 2.0 * bc
        elif q == 2:
            H[0, 1] = 1.0 + bc
            H[1, 0] = 1.0 + bc
        else:
            idx = np.arange(q - 1)
            H[idx, idx + 1] = 1.0
            H[idx + 1, idx] = 1.0
            H[0, q - 1] = bc
            H[q - 1, 0] = bc
        edges.append(np.linalg.eigvalsh(H))
    return np.sort(np.concatenate(edges))


def _bands_at_theta(lam, f, p, q, theta):
    e = floquet_edges(lam, f, p, q, theta)
    return [(e[2 * i], e[2 * i + 1]) for i in range(q)]


def _merge(intervals, tol=MERGE_TOL):
    if not intervals:
        return []
    intervals = sorted(intervals)
    out = [list(intervals[0])]
    for lo, hi in intervals[1:]:
        if lo <= out[-1][1] + tol:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [tuple(b) for b in out]


def band_structure(lam, f, p_over_q, theta_samples=None, e_resolution=MERGE_TOL,
                   max_rounds=5):
    """Union of Floquet bands over the phase for the approximant p/q.

    theta_samples counts grid points around the full circle; after reduction
    by the (1/q)-periodicity, T = max(4, theta_samples/q) distinct phases are
    solved, then T doubles until the union is stable to e_resolution (band
    count and edge movement).  Bands still moving at the refinement cap are
    flagged rather than silently accepted.
    """
    p, q = p_over_q
    if q < 1 or math.gcd(p, q) != 1:
        raise ValueError("p/q must be a reduced fraction with q >= 1")
    t_count = max(4, -(-int(theta_samples) // q)) if theta_samples else 4
    cache = {}

    def union_at(T):
        for j in range(T):
            th = Fraction(j, T * q)
            if th not in cache:
                cache[th] = _bands_at_theta(lam, f, p, q, float(th))
        pool = []
        for th, bands in cache.items():
            pool.extend(bands)
        return _merge(pool, tol=max(e_resolution, MERGE_TOL))

    bands = union_at(t_count)
    flagged = False
    for _ in range(max_rounds):
        t_next = t_count * 2
        nxt = union_at(t_next)
        stable = len(nxt) == len(bands) and all(
            abs(a1 - a2) <= max(e_resolution, MERGE_TOL) and abs(b1 - b2) <= max(e_resolution, MERGE_TOL)
            for (a1, b1), (a2, b2) in zip(bands, nxt)
        )
        bands, t_count = nxt, t_next
        if stable:
            break
    else:
        flagged = True

    ref = cache[Fraction(0, 1)] if Fraction(0, 1) in cache else cache[min(cache)]
    bs = BandStructure(
        approximant=(p, q), lam=lam, potential=f,
        bands=tuple((float(a), float(b)) for a, b in bands),
        theta_grid=t_count,
        ref_edges=tuple(float(e) for pair in ref for e in pair),
        flagged=flagged,
    )
    cap = 4.0 + 2.0 * abs(lam) * potential_sup(f)
    if bs.measure > cap + 1e-6:
        raise AssertionError(f"band measure {bs.measure} exceeds the norm bound {cap}")
    return bs


def ids(bs, energy):
    """Integrated density of states j/q at an energy inside a gap."""
    p, q = bs.approximant
    for lo, hi in bs.bands:
        if lo <= energy <= hi:
            raise ValueError(f"E={energy} lies inside a band [{lo}, {hi}]")
    return Fraction(bs.elementary_bands_below(energy), q)


@dataclass(frozen=True)
class GapRecord:
    label: int
    e_minus: float
    e_plus: float
    ids: Fraction
    rho_resid: float = math.nan      # |{2 rho} - {m alpha}| at the midpoint
    flagged: bool = False            # rho residual above tolerance
    below_floor: bool = False        # width too small for the rotation check

    @property
    def width(self):
        return self.e_plus - self.e_minus

    def midpoint(self):
        return 0.5 * (self.e_minus + self.e_plus)

    def csv_row(self):
        return (
            f"{self.label},{self.e_minus!r},{self.e_plus!r},{self.width!r},"
            f"{self.ids.numerator},{self.ids.denominator},{self.rho_resid!r}"
        )

    def to_dict(self):
        return {
            "m": self.label,
            "E_minus": self.e_minus,
            "E_plus": self.e_plus,
            "width": self.width,
            "ids": [self.ids.numerator, self.ids.denominator],
            "rho_resid": None if math.isnan(self.rho_resid) else self.rho_resid,
            "flagged": self.flagged,
            "below_floor": self.below_floor,
        }


GAP_CSV_HEADER = "m,E_minus,E_plus,width,ids_num,ids_den,rho_resid"


def _label_from_ids(j, p, q, mirrored=False):
    """The unique |m| <= q/2 with m p = -j (mod q) under N(E) = 1 - 2 rho."""
    pinv = pow(p, -1, q)
    m = (pinv * j) % q if mirrored else (-pinv * j) % q
    if m > q / 2:
        m -= q
    return m


def _circle_dist(x, y):
    d = abs(x - y) % 1.0
    return min(d, 1.0 - d)


def label_gaps(bs, freq, rho_tol=1e-4, mirrored=False, rho_skip_width=RHO_SKIP_WIDTH,
               rho_target_err=None, rho_max_iterations=1 << 17):
    """Label every gap of bs by the integer m with 2 rho = m alpha (mod 1).

    The candidate label solves the index congruence at the approximant; the
    rotation number of the true-frequency cocycle at the gap midpoint then
    validates it (records failing the tolerance are flagged, never dropped).
    Gaps thinner than rho_skip_width keep a NaN residual.
    """
    p, q = bs.approximant
    if (p, q) not in set(freq.convergents):
        raise ValueError(f"approximant {p}/{q} is not a convergent of the frequency")
    records = []
    for e_minus, e_plus, j in bs.gaps():
        m = _label_from_ids(j, p, q, mirrored=mirrored)
        width = e_plus - e_minus
        if width <= rho_skip_width:
            records.append(GapRecord(m, e_minus, e_plus, Fraction(j, q), below_floor=True))
            continue
        mid = 0.5 * (e_minus + e_plus)
        c = schrodinger_cocycle(bs.lam, bs.potential, mid, freq)
        rr = rotation_number(c, target_err=rho_target_err or min(rho_tol / 20.0, 1e-5),
                             max_iterations=rho_max_iterations)
        target = (m * freq.value) % 1.0
        resid = _circle_dist(2.0 * rr.value, target)
        records.append(
            GapRecord(m, e_minus, e_plus, Fraction(j, q), rho_resid=resid,
                      flagged=resid > rho_tol)
        )
    labels = [r.label for r in records]
    if len(set(labels)) != len(labels):
        raise AssertionError("gap labels are not distinct")
    return records


@dataclass(frozen=True)
class DecayFit:
    gamma: float
    intercept: float
    residual: float                 # max |ln-width deviation| from the fit line
    rms_residual: float             # root-mean-square ln-width misfit
    used: tuple                     # (|m|, width) pairs entering the fit
    excluded: tuple = ()            # (|m|, reason)
    floored: bool = False           # some widths sat at the double-precision floor


def gap_decay_fit(records, m_max=None):
    """Least squares of ln(width) against |m|; gamma is minus the slope."""
    table = {}
    excluded = []
    floored = False
    for r in records:
        m = abs(r.label)
        if m_max is not None and m > m_max:
            continue
        if r.width <= 0.0:
            excluded.append((m, "collapsed"))
            continue
        if r.width < WIDTH_FLOOR:
            excluded.append((m, "below double-precision floor"))
            floored = True
            continue
        if m not in table or r.width > table[m]:
            table[m] = r.width
    if len(table) < 4:
        raise ValueError(f"need >= 4 nonzero-width labels, have {len(table)}")
    ms = np.array(sorted(table))
    ys = np.log([table[m] for m in ms])
    slope, intercept = np.polyfit(ms, ys, 1)
    dev = ys - (slope * ms + intercept)
    return DecayFit(
        gamma=-float(slope), intercept=float(intercept),
        residual=float(np.abs(dev).max()),
        rms_residual=float(np.sqrt((dev**2).mean())),
        used=tuple((int(m), float(table[m])) for m in ms),
        excluded=tuple(excluded), floored=floored,
    )


def _trace_mp(lam, f, p, q, theta, energy, dps):
    """Transfer trace tr A_q(E, theta) in mpmath arithmetic."""
    from mpmath import mp, mpf

    band = f.band_limit
    with mp.workdps(dps):
        E = mpf(energy)
        a11, a12, a21, a22 = mpf(1), mpf(0), mpf(0), mpf(1)
        for n in range(q):
            x = mpf(theta) + n * mpf(p) / q
            v = mpf(0)
            for k in range(-band, band + 1):
                c = f.coeff(k)
                v += mp.re(mp.mpc(c.real, c.imag) * mp.expjpi(2 * k * x))
            t = E - lam * v
            b11, b12 = t * a11 - a21, t * a12 - a22
            a21, a22 = a11, a12
            a11, a12 = b11, b12
        return a11 + a22


def refine_gap_extended(bs, record, dps=50, theta=0.0, max_steps=200):
    """Re-resolve a gap's edges by bisection on |trace| - 2 in extended precision.

    Double precision floors widths near 1e-12; the trace excursion past the
    band condition survives in higher precision, so both crossings of the
    relevant level +-2 are bisected to ~10^(5-dps) absolute.  Intended for
    per-theta-stable (large q) structures; theta picks the slice.
    """
    lam, f = bs.lam, bs.potential
    p, q = bs.approximant
    mid = record.midpoint()
    t_mid = _trace_mp(lam, f, p, q, theta, mid, dps)
    level = 2.0 if t_mid > 0 else -2.0
    outside = abs(float(t_mid)) > 2.0
    if not outside:
        raise ValueError("midpoint trace is inside the band condition; not a gap slice")

    from mpmath import mp, mpf

    def crossing(lo, hi):
        # sign change of |tr| - 2 between lo (inside gap) and hi (inside band)
        with mp.workdps(dps):
            a, b = mpf(lo), mpf(hi)
            fa = abs(_trace_mp(lam, f, p, q, theta, a, dps)) - 2
            for _ in range(max_steps):
                m = (a + b) / 2
                fm = abs(_trace_mp(lam, f, p, q, theta, m, dps)) - 2
                if (fm > 0) == (fa > 0):
                    a, fa = m, fm
                else:
                    b = m
                if abs(b - a) < mpf(10) ** (-(dps - 5)):
                    break
            return (a + b) / 2

    pad = max(record.width, 1e-11)
    lo_edge = crossing(mid, record.e_minus - pad)
    hi_edge = crossing(mid, record.e_plus + pad)
    return GapRecord(
        record.label, float(lo_edge), float(hi_edge), record.ids,
        rho_resid=record.rho_resid, flagged=record.flagged,
        below_floor=float(hi_edge) - float(lo_edge) < WIDTH_FLOOR,
    )


def window_band_measure(bands, center, sigma):
    lo, hi = center - sigma, center + sigma
    return sum(max(0.0, min(b, hi) - max(a, lo)) for a, b in bands)


def window_gap_sum(bs, center, sigma):
    """Total width of labeled-able gaps meeting the window (homogeneity diagnostic)."""
    lo, hi = center - sigma, center + sigma
    total = 0.0
    for g_lo, g_hi, _ in bs.gaps():
        if g_hi > lo and g_lo < hi:
            total += g_hi - g_lo
    return total


@dataclass(frozen=True)
class HomogeneityResult:
    sigma: float
    min_ratio: float
    argmin_energy: float
    samples: int


def homogeneity_scan(bs, sigma, e_samples=512):
    """min over E in the bands of Leb((E-s, E+s) cap bands) / s, exactly.

    Every band endpoint is sampled, plus interior points allocated by band
    length; the window measure is exact interval arithmetic.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    total = max(bs.measure, 1e-300)
    points = []
    for lo, hi in bs.bands:
        points.append(lo)
        points.append(hi)
        n_int = max(2, int(e_samples * (hi - lo) / total))
        points.extend(np.linspace(lo, hi, n_int).tolist())
    best = math.inf
    arg = points[0]
    for e in points:
        r = window_band_measure(bs.bands, e, sigma) / sigma
        if r < best:
            best, arg = r, e
    return HomogeneityResult(sigma=sigma, min_ratio=best, argmin_energy=arg,
                             samples=len(points))


@dataclass(frozen=True)
class SeparationReport:
    min_rescaled: float             # empirical small constant in the distance bound
    min_pair: tuple
    all_positive: bool
    pairs: tuple                    # ((m, m'), distance, rescaled)


def gap_separation_check(records, freq, beta=0.0):
    """Pairwise gap distances, rescaled by e^{8 beta |m'|} for |m'| >= |m|."""
    recs = [r for r in records if r.width > 0.0]
    if len(recs) < 2:
        raise ValueError("need at least two labeled gaps")
    rows = []
    best = math.inf
    best_pair = None
    ok = True
    for i, a in enumerate(recs):
        for b in recs[i + 1:]:
            lo_rec, hi_rec = (a, b) if abs(a.label) <= abs(b.label) else (b, a)
            dist = max(b.e_minus - a.e_plus, a.e_minus - b.e_plus, 0.0)
            if dist <= 0.0:
                ok = False
            rescaled = dist * math.exp(8.0 * beta * abs(hi_rec.label))
            rows.append(((a.label, b.label), dist, rescaled))
            if rescaled < best:
                best, best_pair = rescaled, (a.label, b.label)
    return SeparationReport(min_rescaled=best, min_pair=best_pair, all_positive=ok,
                            pairs=tuple(rows))


@dataclass(frozen=True)
class HolderReport:
    max_quotient: float
    argmax_pair: tuple
    pairs_used: int


def holder_check(lam, f, freq, e_pairs=64, seed=0, min_de=1e-10, de_range=(1e-7, 1e-1),
                 rho_target_err=1e-8):
    """Largest observed |d rho| / |dE|^(1/2) over sampled energy pairs.

    Pairs are drawn with log-uniform separations concentrated near the
    bracketing interval so the square-root modulus gets stressed at band
    edges; identical pairs are excluded by min_de.
    """
    rng = np.random.default_rng(seed)
    lo, hi = bracket_interval(lam, f)
    best = 0.0
    arg = (math.nan, math.nan)
    used = 0
    for _ in range(e_pairs):
        e1 = rng.uniform(lo, hi)
        de = 10.0 ** rng.uniform(math.log10(de_range[0]), math.log10(de_range[1]))
        if de < min_de:
            continue
        e2 = e1 + de * rng.choice((-1.0, 1.0))
        r1 = rotation_number(schrodinger_cocycle(lam, f, e1, freq), target_err=rho_target_err)
        r2 = rotation_number(schrodinger_cocycle(lam, f, e2, freq), target_err=rho_target_err)
        quot = abs(r1.value - r2.value) / math.sqrt(abs(e2 - e1))
        used += 1
        if quot > best:
            best, arg = quot, (e1, e2)
    return HolderReport(max_quotient=best, argmax_pair=arg, pairs_used=used)


def hausdorff_distance(bands_a, bands_b):
    """Hausdorff distance between two finite unions of closed intervals."""

    def dist_point(x, bands):
        return min(
            0.0 if lo <= x <= hi else min(abs(x - lo), abs(x - hi))
            for lo, hi in bands
        )

    def one_sided(a_bands, b_bands):
        worst = 0.0
        cuts = sorted({e for lo, hi in b_bands for e in (lo, hi)})
        for lo, hi in a_bands:
            cands = [lo, hi]
            for i in range(len(cuts) - 1):
                m = 0.5 * (cuts[i] + cuts[i + 1])
                if lo < m < hi:
                    cands.append(m)
            worst = max(worst, max(dist_point(x, b_bands) for x in cands))
        return worst

    return max(one_sided(bands_a, bands_b), one_sided(bands_b, bands_a))


def bands_to_csv(bs):
    lines = [f"# p={bs.approximant[0]} q={bs.approximant[1]} lambda={bs.lam!r}",
             "band,lower,upper"]
    lines += [f"{i},{a!r},{b!r}" for i, a, b in bs.to_rows()]
    return "\n".join(lines) + "\n"


def gaps_to_csv(records):
    return "\n".join([GAP_CSV_HEADER] + [r.csv_row() for r in records]) + "\n"


def gaps_to_jsonl(records):
    return "\n".join(json.dumps(r.to_dict(), sort_keys=True) for r in records) + "\n"
