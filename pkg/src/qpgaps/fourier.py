"""Truncated Fourier series for 1- or 2-periodic analytic maps.

Values may be scalar, 2-vector or 2x2-matrix; coefficients are stored densely
for k in [-N, N].  Evaluation extends to complex strips with an explicit tail
bound derived from the measured coefficient decay, so that nothing is ever
evaluated where the truncation error is out of control.  Products are exact
convolutions (direct O(N^2), fine at desk scale); optional truncation records
the dropped l1 mass instead of discarding it silently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import StripDomainError

DEFAULT_STRIP_TOL = 1e-8
STRIP_GRID = 2048
ZERO_FLOOR = 1e-280


@dataclass
class FourierMap:
    coeffs: np.ndarray          # shape (2N+1,) scalar, (2N+1,2) vector, (2N+1,2,2) matrix
    period: int = 1
    tail_l1: float = 0.0        # l1 mass dropped by an explicit truncation
    strip_tol: float = DEFAULT_STRIP_TOL
    entire: bool = True         # exact trig polynomial (no hidden tail) vs sampled truncation

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape[0] % 2 != 1:
            raise ValueError("coefficient array must have odd length 2N+1")
        if self.period not in (1, 2):
            raise ValueError("period must be 1 or 2")
        self._decay_cache = None

    # ---- basic structure -------------------------------------------------
    @property
    def band_limit(self):
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def value_shape(self):
        return self.coeffs.shape[1:]

    @property
    def is_matrix(self):
        return self.value_shape == (2, 2)

    @property
    def is_vector(self):
        return self.value_shape == (2,)

    def k_range(self):
        n = self.band_limit
        return np.arange(-n, n + 1)

    def coeff(self, k):
        n = self.band_limit
        if abs(k) > n:
            return np.zeros(self.value_shape, dtype=complex) if self.value_shape else 0j
        return self.coeffs[n + k]

    def magnitudes(self):
        c = self.coeffs
        if self.value_shape:
            c = np.abs(c).reshape(c.shape[0], -1).max(axis=1)
        else:
            c = np.abs(c)
        return c

    def is_real(self, tol=1e-13):
        """Whether coeff(-k) == conj(coeff(k)) holds to relative tol."""
        rev = self.coeffs[::-1].conj()
        scale = np.abs(self.coeffs).max()
        if scale == 0.0:
            return True
        return float(np.abs(self.coeffs - rev).max()) <= tol * scale

    # ---- constructors ----------------------------------------------------
    @staticmethod
    def zero(band_limit=0, shape=(), period=1):
        return FourierMap(np.zeros((2 * band_limit + 1,) + shape, dtype=complex), period)

    @staticmethod
    def constant(value, period=1):
        v = np.asarray(value, dtype=complex)
        return FourierMap(v[np.newaxis, ...], period)

    @staticmethod
    def from_coeff_dict(d, period=1, shape=()):
        n = max(abs(k) for k in d) if d else 0
        c = np.zeros((2 * n + 1,) + shape, dtype=complex)
        for k, v in d.items():
            c[n + k] = v
        return FourierMap(c, period)

    @staticmethod
    def harmonic(k, amplitude=1.0, period=1):
        """amplitude * e^{2 pi i k x / period}"""
        return FourierMap.from_coeff_dict({k: amplitude}, period)

    @staticmethod
    def cosine(period=1):
        """cos(2 pi x / period)"""
        return FourierMap.from_coeff_dict({1: 0.5, -1: 0.5}, period)

    @staticmethod
    def from_function(fn, band_limit, period=1, oversample=4, entire=False):
        """Coefficients of a smooth periodic function via an FFT on a fine grid.

        The result carries entire=False by default: it is a truncation of
        sampled data, so strip evaluation stays tail-checked.
        """
        m = 1
        while m < oversample * (2 * band_limit + 1):
            m *= 2
        x = np.arange(m) * (period / m)
        vals = np.asarray([fn(xi) for xi in x], dtype=complex)
        hat = np.fft.fft(vals, axis=0) / m
        n = band_limit
        c = np.zeros((2 * n + 1,) + vals.shape[1:], dtype=complex)
        for k in range(-n, n + 1):
            c[n + k] = hat[k % m]
        return FourierMap(c, period, entire=entire)

    @staticmethod
    def identity(period=1):
        return FourierMap.constant(np.eye(2), period)

    # ---- evaluation ------------------------------------------------------
    def _decay(self):
        """Fitted envelope |c_k| <= A e^{r |k|} over the outer half of the band."""
        if self._decay_cache is not None:
            return self._decay_cache
        n = self.band_limit
        mags = self.magnitudes()
        if n == 0:
            self._decay_cache = (float(mags[0]), -math.inf, True)
            return self._decay_cache
        ks = np.abs(np.arange(-n, n + 1))
        outer = ks >= max(1, n // 2)
        m_out = mags[outer]
        if m_out.max(initial=0.0) < ZERO_FLOOR:
            self._decay_cache = (0.0, -math.inf, True)   # band-limited: no tail
            return self._decay_cache
        mask = outer & (mags > ZERO_FLOOR)
        k_fit = ks[mask].astype(float)
        y_fit = np.log(mags[mask])
        if len(k_fit) < 2 or np.ptp(k_fit) == 0:
            self._decay_cache = (float(mags.max()) * 10.0, 0.0, False)
            return self._decay_cache
        slope, intercept = np.polyfit(k_fit, y_fit, 1)
        self._decay_cache = (10.0 * math.exp(intercept), float(slope), False)
        return self._decay_cache

    def tail_bound(self, y):
        """Bound on the discarded tail when evaluating at |Im z| = y."""
        if y == 0.0 or self.entire:
            return 0.0
        amp, rate, band_limited = self._decay()
        if band_limited:
            return 0.0
        g = rate + 2.0 * math.pi * abs(y) / self.period
        if g >= -1e-12:
            return math.inf
        n = self.band_limit
        return amp * math.exp(g * (n + 1)) / (1.0 - math.exp(g))

    def _check_strip(self, y):
        bound = self.tail_bound(y)
        scale = max(1.0, float(self.magnitudes().sum()))
        if not bound <= self.strip_tol * scale:
            raise StripDomainError(
                f"evaluation at |Im z|={y:.4g} unreliable: tail bound {bound:.3e} "
                f"exceeds {self.strip_tol:.1e} * scale {scale:.2e}",
                tail_bound=bound,
            )

    def __call__(self, z):
        z_in = np.asarray(z, dtype=complex)
        scalar_input = z_in.ndim == 0
        zs = np.atleast_1d(z_in)
        y = zs.imag
        ymax = float(np.abs(y).max()) if zs.size else 0.0
        if ymax > 0.0:
            self._check_strip(ymax)
        n = self.band_limit
        k = np.arange(-n, n + 1)
        ang = 2.0 * math.pi / self.period
        if ymax * ang * n < 650.0:
            phases = np.exp(1j * ang * np.multiply.outer(zs, k))
        else:
            # scaled path: keep per-term magnitudes bounded before summing
            expo = -ang * np.multiply.outer(y, k)
            shift = expo.max(axis=1, keepdims=True)
            phases = np.exp(expo - shift) * np.exp(1j * ang * np.multiply.outer(zs.real, k))
            out = np.tensordot(phases, self.coeffs, axes=(1, 0))
            out = out * np.exp(shift).reshape(shift.shape[0], *([1] * len(self.value_shape)))
            return out[0] if scalar_input else out.reshape(z_in.shape + self.value_shape)
        out = np.tensordot(phases, self.coeffs, axes=(1, 0))
        return out[0] if scalar_input else out.reshape(z_in.shape + self.value_shape)

    def sample(self, n_points, delta=0.0):
        """Values on the uniform grid x_j = j * period / n_points (+ i delta)."""
        x = np.arange(n_points) * (self.period / n_points)
        return self(x + 1j * delta if delta else x)

    # ---- algebra ---------------------------------------------------------
    def _aligned(self, other):
        if isinstance(other, FourierMap):
            if other.period != self.period:
                raise ValueError("period mismatch: lift one operand first")
            n = max(self.band_limit, other.band_limit)
            return _pad(self, n), _pad(other, n)
        raise TypeError("operand must be a FourierMap")

    def __add__(self, other):
        if isinstance(other, FourierMap):
            a, b = self._aligned(other)
            return FourierMap(a.coeffs + b.coeffs, self.period,
                              entire=self.entire and other.entire)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, FourierMap):
            a, b = self._aligned(other)
            return FourierMap(a.coeffs - b.coeffs, self.period,
                              entire=self.entire and other.entire)
        return NotImplemented

    def __mul__(self, scalar):
        if isinstance(scalar, (int, float, complex)):
            return FourierMap(self.coeffs * scalar, self.period, entire=self.entire)
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return FourierMap(-self.coeffs, self.period, entire=self.entire)

    def conj_map(self):
        """Complex conjugate of the map: coeff_k -> conj(coeff_{-k})."""
        return FourierMap(self.coeffs[::-1].conj(), self.period, entire=self.entire)

    def real_part(self):
        return 0.5 * (self + self.conj_map())

    def imag_part(self):
        return (-0.5j) * (self - self.conj_map())

    def shift(self, alpha, phase_fracs=None):
        """Composition with x -> x + alpha: coeff_k *= e^{2 pi i k alpha / period}.

        phase_fracs optionally supplies extended-precision signed fractional
        parts of k*alpha/period (index k + band_limit) for small-divisor work.
        """
        n = self.band_limit
        if phase_fracs is not None:
            ph = np.exp(2j * math.pi * np.asarray(phase_fracs))
        else:
            k = np.arange(-n, n + 1)
            ph = np.exp(2j * math.pi * k * (alpha / self.period))
        shaped = ph.reshape((2 * n + 1,) + (1,) * len(self.value_shape))
        return FourierMap(self.coeffs * shaped, self.period, entire=self.entire)

    def average(self):
        """Mean over one period: the k = 0 coefficient."""
        c0 = self.coeff(0)
        return c0 if self.value_shape else complex(c0)

    def trim(self, tol=1e-17):
        """Drop a negligible outer fringe of coefficients (relative tol)."""
        mags = self.magnitudes()
        peak = mags.max()
        if peak == 0.0:
            return FourierMap(self.coeffs[:1].copy() * 0, self.period)
        n = self.band_limit
        keep = n
        while keep > 0 and mags[n + keep] <= tol * peak and mags[n - keep] <= tol * peak:
            keep -= 1
        if keep == n:
            return self
        return FourierMap(self.coeffs[n - keep : n + keep + 1].copy(), self.period,
                          tail_l1=self.tail_l1, entire=self.entire)

    # ---- matrix structure ------------------------------------------------
    def entry(self, i, j):
        if not self.is_matrix:
            raise ValueError("not a matrix map")
        return FourierMap(self.coeffs[:, i, j].copy(), self.period, entire=self.entire)

    def component(self, i):
        if not self.is_vector:
            raise ValueError("not a vector map")
        return FourierMap(self.coeffs[:, i].copy(), self.period, entire=self.entire)

    def trace_map(self):
        return self.entry(0, 0) + self.entry(1, 1)

    def transpose_map(self):
        return FourierMap(np.swapaxes(self.coeffs, 1, 2).copy(), self.period, entire=self.entire)

    def adjugate(self):
        """[[d,-b],[-c,a]]; the pointwise inverse when det == 1."""
        c = np.empty_like(self.coeffs)
        c[:, 0, 0] = self.coeffs[:, 1, 1]
        c[:, 0, 1] = -self.coeffs[:, 0, 1]
        c[:, 1, 0] = -self.coeffs[:, 1, 0]
        c[:, 1, 1] = self.coeffs[:, 0, 0]
        return FourierMap(c, self.period, entire=self.entire)

    # ---- period changes ----------------------------------------------------
    def lift2(self):
        """Reinterpret a 1-periodic map on R/2Z (support on even indices)."""
        if self.period == 2:
            return self
        n = self.band_limit
        c = np.zeros((4 * n + 1,) + self.value_shape, dtype=complex)
        c[::2] = self.coeffs
        return FourierMap(c, 2, entire=self.entire)

    def collapse1(self, tol=1e-9):
        """Drop to period 1 when all odd coefficients vanish (relative tol)."""
        if self.period == 1:
            return self
        n = self.band_limit
        ks = np.arange(-n, n + 1)
        odd_mags = np.abs(self.coeffs[ks % 2 == 1])
        peak = max(np.abs(self.coeffs).max(), 1e-300)
        if odd_mags.size and odd_mags.max() > tol * peak:
            raise ValueError(
                f"map is genuinely 2-periodic (odd-coefficient mass {odd_mags.max():.2e})"
            )
        even = self.coeffs[ks % 2 == 0]
        return FourierMap(even, 1, entire=self.entire)

    # ---- norms -------------------------------------------------------------
    def l1_norm(self):
        return float(self.magnitudes().sum())

    def sup_norm(self, grid=STRIP_GRID):
        return strip_norm(self, 0.0, grid).value

    # ---- serialization -----------------------------------------------------
    def to_text(self):
        lines = [
            f"# period={self.period} shape={'x'.join(map(str, self.value_shape)) or 'scalar'}"
            f" entire={int(self.entire)}"
        ]
        n = self.band_limit
        for k in range(-n, n + 1):
            v = self.coeffs[n + k]
            flat = np.asarray(v, dtype=complex).reshape(-1)
            parts = []
            for z in flat:
                parts.append(float(z.real).hex())
                parts.append(float(z.imag).hex())
            lines.append(f"{k} " + " ".join(parts))
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text):
        period, shape, entire = 1, (), True
        rows = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("period="):
                        period = int(tok.split("=")[1])
                    elif tok.startswith("shape="):
                        s = tok.split("=")[1]
                        shape = () if s == "scalar" else tuple(int(t) for t in s.split("x"))
                    elif tok.startswith("entire="):
                        entire = bool(int(tok.split("=")[1]))
                continue
            toks = line.split()
            k = int(toks[0])
            vals = [float.fromhex(t) for t in toks[1:]]
            flat = np.array(vals[0::2]) + 1j * np.array(vals[1::2])
            rows[k] = flat.reshape(shape) if shape else complex(flat[0])
        out = FourierMap.from_coeff_dict(rows, period=period, shape=shape)
        out.entire = entire
        return out


def _pad(m, band_limit):
    n = m.band_limit
    if n == band_limit:
        return m
    c = np.zeros((2 * band_limit + 1,) + m.value_shape, dtype=complex)
    c[band_limit - n : band_limit + n + 1] = m.coeffs
    return FourierMap(c, m.period, entire=m.entire)


def add(a, b):
    return a + b


def _conv(ca, cb):
    return np.convolve(ca, cb)


def mul(a, b, band_limit=None):
    """Pointwise product as exact coefficient convolution.

    Scalar*scalar, scalar*any, matrix@matrix and matrix@vector are supported.
    If band_limit truncates the result, the dropped l1 mass is recorded in
    tail_l1 rather than lost silently.
    """
    if a.period != b.period:
        raise ValueError("period mismatch: lift one operand first")
    na, nb = a.band_limit, b.band_limit
    n_out = na + nb
    if not a.value_shape and not b.value_shape:
        res = FourierMap(_conv(a.coeffs, b.coeffs), a.period)
    elif not a.value_shape:
        flat = b.coeffs.reshape(b.coeffs.shape[0], -1)
        cols = [_conv(a.coeffs, flat[:, j]) for j in range(flat.shape[1])]
        out = np.stack(cols, axis=1).reshape((2 * n_out + 1,) + b.value_shape)
        res = FourierMap(out, a.period)
    elif not b.value_shape:
        return mul(b, a, band_limit)
    elif a.is_matrix and b.is_matrix:
        out = np.zeros((2 * n_out + 1, 2, 2), dtype=complex)
        for i in range(2):
            for j in range(2):
                out[:, i, j] = sum(_conv(a.coeffs[:, i, l], b.coeffs[:, l, j]) for l in range(2))
        res = FourierMap(out, a.period)
    elif a.is_matrix and b.is_vector:
        out = np.zeros((2 * n_out + 1, 2), dtype=complex)
        for i in range(2):
            out[:, i] = sum(_conv(a.coeffs[:, i, l], b.coeffs[:, l]) for l in range(2))
        res = FourierMap(out, a.period)
    else:
        raise ValueError(f"unsupported product shapes {a.value_shape} x {b.value_shape}")
    res.entire = a.entire and b.entire
    if band_limit is not None and band_limit < n_out:
        n = band_limit
        kept = res.coeffs[n_out - n : n_out + n + 1]
        dropped = res.magnitudes()
        mask = np.abs(np.arange(-n_out, n_out + 1)) > n
        res = FourierMap(kept.copy(), a.period, tail_l1=float(dropped[mask].sum()),
                         entire=a.entire and b.entire)
    return res


def matmul(*maps, band_limit=None):
    out = maps[0]
    for m in maps[1:]:
        out = mul(out, m, band_limit=band_limit)
    return out


def det_map(a):
    if not a.is_matrix:
        raise ValueError("det of a non-matrix map")
    return mul(a.entry(0, 0), a.entry(1, 1)) - mul(a.entry(0, 1), a.entry(1, 0))


def shift(a, alpha, phase_fracs=None):
    return a.shift(alpha, phase_fracs)


def average(a):
    return a.average()


def matrix_exp(a, tol=1e-17, max_terms=120, band_limit=None):
    """exp of a matrix map by plain series; caller keeps ||a|| comfortably < 1."""
    if not a.is_matrix:
        raise ValueError("matrix_exp needs a matrix map")
    acc = FourierMap.identity(a.period)
    term = FourierMap.identity(a.period)
    for j in range(1, max_terms + 1):
        term = mul(term, a, band_limit=band_limit) * (1.0 / j)
        term = term.trim(1e-18)
        acc = acc + term
        if term.l1_norm() < tol * max(1.0, acc.l1_norm()):
            return acc.trim(1e-18)
    raise ArithmeticError("matrix exponential series did not converge; norm too large")


@dataclass(frozen=True)
class StripNormReport:
    delta: float
    value: float
    grid: int


def _op_norm(vals):
    """Largest singular value for arrays of 2x2 matrices; abs for scalars/vectors."""
    if vals.ndim >= 2 and vals.shape[-2:] == (2, 2):
        g = np.abs(vals) ** 2
        tr = g.sum(axis=(-2, -1))
        det2 = np.abs(vals[..., 0, 0] * vals[..., 1, 1] - vals[..., 0, 1] * vals[..., 1, 0]) ** 2
        disc = np.sqrt(np.maximum(tr**2 - 4.0 * det2, 0.0))
        return np.sqrt(np.maximum((tr + disc) / 2.0, 0.0))
    if vals.ndim >= 1 and vals.shape[-1:] == (2,) and vals.ndim >= 2:
        return np.sqrt((np.abs(vals) ** 2).sum(axis=-1))
    return np.abs(vals)


def strip_norm(a, delta, grid=STRIP_GRID, rel_tol=1e-10, max_grid=1 << 16):
    """sup of ||a(z)|| over the strip |Im z| <= delta.

    By the maximum principle the sup sits on the boundary lines Im z = +-delta;
    both are sampled and the grid doubles until the result is stable.
    """
    m = grid
    prev = None
    while True:
        vals = _op_norm(a.sample(m, delta))
        best = float(vals.max())
        if delta != 0.0:
            best = max(best, float(_op_norm(a.sample(m, -delta)).max()))
        if prev is not None and abs(best - prev) <= rel_tol * max(best, 1e-300):
            return StripNormReport(delta=delta, value=best, grid=m)
        if m >= max_grid:
            return StripNormReport(delta=delta, value=best, grid=m)
        prev = best
        m *= 2
