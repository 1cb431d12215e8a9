"""Periodic signal frames and exact spectral operations.

Every signal in the laboratory is periodic with period ``N*T``.  Discrete-time
(DT) frames hold one complex sample per symbol; continuous-time (CT) frames
hold ``N*R`` samples on a uniform grid of step ``T/R``.  Because frames are
periodic, circular convolution is exact and ideal filters are realised by
masking DFT bins.

Transform convention: the forward DFT is unnormalised and the inverse carries
``1/len``, i.e. ``numpy.fft`` defaults.  Parseval therefore reads
``sum |X|^2 = len * sum |x|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# relative tolerance used when snapping times/frequencies onto grids
GRID_TOL = 1e-9


class FrameError(ValueError):
    """Invalid frame, parameter set or spectral request."""


class OffGridError(FrameError):
    """A time or frequency does not fall on the frame grid."""


@dataclass(frozen=True)
class ChainParams:
    """Symbol interval ``T``, carrier ratio ``M``, oversampling ``R``, frame length ``N``."""

    T: float = 1.0
    M: int = 10
    R: int = 200
    N: int = 1024

    def __post_init__(self):
        if not self.T > 0:
            raise FrameError(f"T must be positive, got {self.T}")
        for name in ("M", "R", "N"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise FrameError(f"{name} must be a positive integer, got {value}")
        if self.N < 2:
            raise FrameError("N must be at least 2")
        if self.R < 4 * self.M:
            raise FrameError(
                f"R={self.R} does not resolve the carrier: need R >= 4*M = {4 * self.M}"
            )

    @property
    def fc(self) -> float:
        return self.M / self.T

    @property
    def f_nyquist(self) -> float:
        return 0.5 / self.T

    @property
    def omega_c(self) -> float:
        return 2 * np.pi * self.M / self.T

    @property
    def dt(self) -> float:
        """CT grid step."""
        return self.T / self.R

    @property
    def ct_length(self) -> int:
        return self.N * self.R

    def time_axis(self) -> np.ndarray:
        return np.arange(self.ct_length) * self.dt

    def to_steps(self, seconds: float) -> int:
        """Convert a duration to an integer number of CT grid steps."""
        steps = seconds / self.dt
        nearest = round(steps)
        if abs(steps - nearest) > GRID_TOL * max(1.0, abs(steps)):
            raise OffGridError(
                f"{seconds!r} s is not a multiple of the grid step T/R={self.dt!r}"
            )
        return int(nearest)

    def ct_bins(self) -> np.ndarray:
        """Signed integer bin index of every CT DFT bin (bin spacing 1/(N*T) Hz)."""
        return np.fft.fftfreq(self.ct_length, d=1.0 / self.ct_length)

    def ct_freqs(self) -> np.ndarray:
        return self.ct_bins() / (self.N * self.T)


def dt_bins(N: int) -> np.ndarray:
    """Signed DFT bin indices of an N-point DT frame, Nyquist bin taken as +N/2."""
    k = np.fft.fftfreq(N, d=1.0 / N)
    if N % 2 == 0:
        k[N // 2] = N // 2
    return k


def dt_omegas(N: int) -> np.ndarray:
    """Normalised frequencies of the N DFT bins mapped into (-pi, pi]."""
    return 2 * np.pi * dt_bins(N) / N


def _frozen(samples, dtype=None) -> np.ndarray:
    arr = np.array(samples, dtype=dtype, copy=True)
    if arr.ndim != 1:
        raise FrameError(f"frame samples must be one-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DtFrame:
    """One period of a DT signal, one sample per symbol."""

    samples: np.ndarray
    params: ChainParams = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen(self.samples, complex))
        if len(self.samples) != self.params.N:
            raise FrameError(
                f"DT frame has {len(self.samples)} samples, params expect N={self.params.N}"
            )

    @property
    def i(self) -> np.ndarray:
        return self.samples.real

    @property
    def q(self) -> np.ndarray:
        return self.samples.imag

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class CtFrame:
    """One period of a CT signal sampled on the ``T/R`` grid."""

    samples: np.ndarray
    params: ChainParams = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.samples)
        dtype = complex if np.iscomplexobj(arr) else float
        object.__setattr__(self, "samples", _frozen(arr, dtype))
        if len(self.samples) != self.params.ct_length:
            raise FrameError(
                f"CT frame has {len(self.samples)} samples, "
                f"params expect N*R={self.params.ct_length}"
            )

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.samples)

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class SpectrumFrame:
    """DFT bins of a frame; ``domain`` records whether it came from a DT or CT frame."""

    bins: np.ndarray
    params: ChainParams = field(repr=False)
    domain: str = "dt"
    real_signal: bool = False

    def __post_init__(self):
        if self.domain not in ("dt", "ct"):
            raise FrameError(f"unknown spectrum domain {self.domain!r}")
        object.__setattr__(self, "bins", _frozen(self.bins, complex))


def transform(frame: DtFrame | CtFrame) -> SpectrumFrame:
    if len(frame.samples) < 2:
        raise FrameError("cannot transform a frame shorter than 2 samples")
    domain = "ct" if isinstance(frame, CtFrame) else "dt"
    real = isinstance(frame, CtFrame) and frame.is_real
    return SpectrumFrame(np.fft.fft(frame.samples), frame.params, domain, real)


def inverse_transform(spectrum: SpectrumFrame) -> DtFrame | CtFrame:
    if len(spectrum.bins) < 2:
        raise FrameError("cannot invert a spectrum shorter than 2 bins")
    samples = np.fft.ifft(spectrum.bins)
    if spectrum.domain == "dt":
        return DtFrame(samples, spectrum.params)
    if spectrum.real_signal:
        samples = samples.real
    return CtFrame(samples, spectrum.params)


def grid_delay(frame: CtFrame, delay: float) -> CtFrame:
    """Circularly delay a CT frame by an on-grid amount of seconds."""
    steps = frame.params.to_steps(delay)
    return CtFrame(np.roll(frame.samples, steps), frame.params)


def band_response(
    params: ChainParams, f_lo: float, f_hi: float, gain: float = 1.0, edge_gain: float = 0.0
) -> np.ndarray:
    """Per-bin gain of the ideal filter passing ``f_lo < |f| < f_hi``.

    ``f_lo == 0`` is read as the low-pass ``|f| < f_hi`` (DC passes).  Bins that
    land exactly on a band edge get ``gain * edge_gain``; the default 0 is the
    open-interval reading, 0.5 is the Fourier-midpoint value of an ideal filter
    acting on a line spectrum.
    """
    nyq = params.R / (2 * params.T)
    if not 0 <= f_lo < f_hi or f_hi > nyq * (1 + GRID_TOL):
        raise FrameError(f"need 0 <= f_lo < f_hi <= R/(2T), got ({f_lo}, {f_hi})")
    k = np.abs(params.ct_bins())
    scale = params.N * params.T
    lo, hi = f_lo * scale, f_hi * scale
    tol = GRID_TOL * max(1.0, hi)
    inside = k < hi - tol
    if f_lo > 0:
        inside &= k > lo + tol
    resp = np.where(inside, float(gain), 0.0)
    resp[np.abs(k - hi) <= tol] = gain * edge_gain
    if f_lo > 0:
        resp[np.abs(k - lo) <= tol] = gain * edge_gain
    return resp


def brickwall(
    frame: CtFrame, f_lo: float, f_hi: float, gain: float = 1.0, edge_gain: float = 0.0
) -> CtFrame:
    """Ideal band filter on a CT frame, see :func:`band_response`."""
    resp = band_response(frame.params, f_lo, f_hi, gain, edge_gain)
    out = np.fft.ifft(np.fft.fft(frame.samples) * resp)
    if frame.is_real:
        out = out.real
    return CtFrame(out, frame.params)


def mix(frame: CtFrame, f: float, sign: int = 1) -> CtFrame:
    """Multiply by ``exp(sign * j*2*pi*f*t)``; ``f`` must be a multiple of ``1/(N*T)``."""
    if sign not in (1, -1):
        raise FrameError(f"sign must be +1 or -1, got {sign}")
    p = frame.params
    shift = f * p.N * p.T
    nearest = round(shift)
    if abs(shift - nearest) > GRID_TOL * max(1.0, abs(shift)):
        raise OffGridError(f"mixing frequency {f!r} Hz breaks frame periodicity")
    # exact integer phase index keeps the mixer periodic to machine precision
    phase = (sign * int(nearest) * np.arange(p.ct_length)) % p.ct_length
    carrier = np.exp(2j * np.pi * phase / p.ct_length)
    return CtFrame(frame.samples * carrier, p)


def sample_to_dt(frame: CtFrame, phase_offset: float = 0.0) -> DtFrame:
    """Take ``dt[n] = ct(n*T + phase_offset)``."""
    p = frame.params
    steps = p.to_steps(phase_offset)
    if not 0 <= steps < p.R:
        raise FrameError(f"phase offset {phase_offset!r} outside [0, T)")
    return DtFrame(frame.samples[steps :: p.R], p)


def zoh(frame: DtFrame) -> CtFrame:
    """Hold every DT sample for one symbol interval (unit height)."""
    return CtFrame(np.repeat(frame.samples, frame.params.R), frame.params)
