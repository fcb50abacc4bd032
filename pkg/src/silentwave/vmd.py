"""Variational mode decomposition (ADMM in the Fourier domain).

Each iteration updates every mode spectrum with a Wiener filter centred on its
current frequency, moves that frequency to the mode's spectral centroid, and
takes a dual-ascent step on the reconstruction constraint.  Only the
non-negative half of the (mirror-extended) spectrum is iterated; modes are
real, so the negative half follows by conjugate symmetry.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .signal_core import RealSeries


@dataclass
class VmdResult:
    modes: np.ndarray  # (K, N)
    center_freqs_hz: np.ndarray  # (K,), ascending
    penalty: float
    iterations: int
    converged: bool
    residual: np.ndarray
    sample_rate_hz: float

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residual))


def vmd(x: RealSeries, K: int = 4, penalty: float = 2000.0, tol: float = 1e-6, max_iter: int = 500,
        tau: float = 0.0, init_freqs_hz=None) -> VmdResult:
    """Decompose ``x`` into ``K`` band-limited modes.

    ``penalty`` is the bandwidth weight (larger means narrower modes); ``tau``
    is the dual step, 0 for a noise-tolerant fit.  Initial centre frequencies
    default to ``0, fs/(2K), 2 fs/(2K), ...``.
    """
    f = np.asarray(x.values, dtype=np.float64)
    fs = x.sample_rate_hz
    if K < 1:
        raise ParameterError(f"K must be >= 1, got {K}")
    if not penalty > 0 or not tol > 0:
        raise ParameterError("penalty and tol must be positive")
    if not np.all(np.isfinite(f)):
        raise ParameterError("VMD input contains non-finite samples")
    n = f.size
    if n < 2:
        raise ParameterError("VMD needs at least two samples")

    # mirror-extend to suppress boundary effects
    half = n // 2
    ext = np.concatenate([f[:half][::-1], f, f[n - (n - half):][::-1]])
    T = ext.size
    spec = np.fft.fft(ext)
    freqs = np.fft.fftfreq(T)  # cycles/sample
    pos = np.arange(T // 2 + 1)
    fp = spec[pos].copy()
    w = freqs[pos].copy()
    w[-1] = abs(w[-1])

    if init_freqs_hz is None:
        omega = 0.5 / K * np.arange(K)
    else:
        omega = np.asarray(init_freqs_hz, dtype=np.float64) / fs
        if omega.shape != (K,):
            raise ParameterError(f"init_freqs_hz must have {K} entries")
    alpha = np.full(K, float(penalty))
    u = np.zeros((K, pos.size), dtype=np.complex128)
    lam = np.zeros(pos.size, dtype=np.complex128)

    converged = False
    it = 0
    while it < max_iter:
        it += 1
        prev = u.copy()
        total = u.sum(axis=0)
        for k in range(K):
            total = total - u[k]
            u[k] = (fp - total - lam / 2) / (1.0 + alpha[k] * (w - omega[k]) ** 2)
            total = total + u[k]
            p = np.abs(u[k]) ** 2
            s = p.sum()
            if s > 0:
                omega[k] = float(np.dot(w, p) / s)
        lam = lam + tau * (u.sum(axis=0) - fp)
        num = np.sum(np.abs(u - prev) ** 2)
        den = np.sum(np.abs(prev) ** 2)
        diff = 0.0 if num == 0 else (num / den if den > 0 else np.inf)
        if diff < tol:
            converged = True
            break

    # rebuild full Hermitian spectra and cut the mirrored margins away
    full = np.zeros((K, T), dtype=np.complex128)
    full[:, pos] = u
    neg = np.arange(1, (T + 1) // 2)
    full[:, T - neg] = np.conj(u[:, neg])
    modes = np.real(np.fft.ifft(full, axis=1))[:, half:half + n]

    order = np.argsort(omega, kind="stable")
    modes = modes[order]
    centers = omega[order] * fs
    residual = f - modes.sum(axis=0)
    return VmdResult(modes, centers, float(penalty), it, converged, residual, fs)
