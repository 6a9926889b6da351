"""OFDM baseband substrate: unitary DFT, block-fading circulant channels, QPSK, AWGN.

Vectors are plain complex numpy arrays. Frame-wise functions accept a
trailing subcarrier axis so that batches of frames ``(..., N)`` go through
unchanged; this is what keeps the Monte Carlo loops tolerable in pure numpy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

INV_SQRT2 = 1.0 / np.sqrt(2.0)


def _check_last_dim(x: np.ndarray, n: int, name: str = "x") -> None:
    if x.shape[-1] != n:
        raise ValueError(f"{name} has trailing dimension {x.shape[-1]}, expected {n}")


def dft_matrix(n: int) -> np.ndarray:
    """Normalized DFT matrix with entries exp(-2j*pi*k*m/n)/sqrt(n)."""
    if n < 1:
        raise ValueError("DFT size must be >= 1")
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


@dataclass(frozen=True)
class DftOperator:
    n: int
    F: np.ndarray = field(repr=False)

    @cached_property
    def Fh(self) -> np.ndarray:
        return self.F.conj().T


def dft_operator(n: int) -> DftOperator:
    return DftOperator(n, dft_matrix(n))


def dft(x: np.ndarray) -> np.ndarray:
    """Apply F along the last axis (fast path of ``dft_matrix(n) @ x``)."""
    return np.fft.fft(x, axis=-1, norm="ortho")


def idft(x: np.ndarray) -> np.ndarray:
    """Apply F^H along the last axis."""
    return np.fft.ifft(x, axis=-1, norm="ortho")


def circulant(first_column: np.ndarray) -> np.ndarray:
    c = np.asarray(first_column)
    n = c.size
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return c[idx]


def signed_frequencies(n: int) -> np.ndarray:
    """Baseband frequency of each DFT bin: 0..n/2-1, then -n/2..-1."""
    return np.fft.fftfreq(n, d=1.0 / n).astype(int)


@dataclass(frozen=True)
class ChannelRealization:
    """One block-fading interval: time taps h_l and the N-point frequency response."""

    taps: np.ndarray
    n: int

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=complex)
        if taps.ndim != 1 or taps.size < 1:
            raise ValueError("taps must be a non-empty vector")
        if taps.size > self.n:
            raise ValueError("more taps than subcarriers")
        object.__setattr__(self, "taps", taps)

    @property
    def n_taps(self) -> int:
        return self.taps.size

    @cached_property
    def lam(self) -> np.ndarray:
        # unnormalized FFT of zero-padded taps == sum_l h_l exp(-2j pi k l / N)
        return np.fft.fft(self.taps, self.n)

    @property
    def sigma_chn2_inst(self) -> float:
        return float(np.mean(np.abs(self.lam) ** 2))

    def matrix(self) -> np.ndarray:
        """Dense N x N circulant channel matrix H."""
        col = np.zeros(self.n, dtype=complex)
        col[: self.n_taps] = self.taps
        return circulant(col)

    def response_at(self, freqs: np.ndarray, grid: int | None = None) -> np.ndarray:
        """Continuous frequency response at (signed) bin indices on an N-point grid."""
        grid = self.n if grid is None else grid
        ell = np.arange(self.n_taps)
        return np.exp(-2j * np.pi * np.outer(freqs, ell) / grid) @ self.taps


def draw_channel(n_taps: int, n: int, rng: np.random.Generator) -> ChannelRealization:
    """Rayleigh taps with a uniform power delay profile (variance 1/L each)."""
    if n_taps < 1:
        raise ValueError("need at least one tap")
    if n_taps >= n:
        raise ValueError("L must be < N")
    h = (rng.standard_normal(n_taps) + 1j * rng.standard_normal(n_taps)) * np.sqrt(0.5 / n_taps)
    return ChannelRealization(h, n)


def freq_response(ch: ChannelRealization) -> np.ndarray:
    return ch.lam


def qpsk_map(bits: np.ndarray) -> np.ndarray:
    """Gray QPSK: (b0, b1) -> ((1 - 2 b0) + 1j (1 - 2 b1)) / sqrt(2).

    Bits are taken pairwise along the last axis.
    """
    bits = np.asarray(bits)
    if bits.shape[-1] % 2:
        raise ValueError("QPSK mapping needs an even number of bits")
    b = bits.reshape(bits.shape[:-1] + (-1, 2)).astype(float)
    return ((1 - 2 * b[..., 0]) + 1j * (1 - 2 * b[..., 1])) * INV_SQRT2


def qpsk_slice(z: np.ndarray) -> np.ndarray:
    """Minimum-distance QPSK decision back to bits; a zero component decides bit 0."""
    z = np.asarray(z)
    out = np.empty(z.shape + (2,), dtype=np.int8)
    out[..., 0] = z.real < 0
    out[..., 1] = z.imag < 0
    return out.reshape(z.shape[:-1] + (-1,))


def random_bits(shape, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=shape, dtype=np.int8)


def random_qpsk(shape, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform QPSK symbols of the given shape."""
    b = rng.integers(0, 2, size=tuple(np.atleast_1d(shape)) + (2,))
    return ((1 - 2 * b[..., 0]) + 1j * (1 - 2 * b[..., 1])) * INV_SQRT2


def awgn(shape, sigma_n2: float, rng: np.random.Generator) -> np.ndarray:
    """Circularly-symmetric complex Gaussian noise CN(0, sigma_n2)."""
    if sigma_n2 < 0:
        raise ValueError("noise variance must be non-negative")
    if sigma_n2 == 0:
        return np.zeros(shape, dtype=complex)
    s = np.sqrt(sigma_n2 / 2)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def apply_channel(
    ch: ChannelRealization,
    x_freq: np.ndarray,
    sigma_n2: float,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Received time samples y = H F^H x + n for frequency-domain frame(s) x."""
    if sigma_n2 < 0:
        raise ValueError("noise variance must be non-negative")
    x_freq = np.asarray(x_freq)
    _check_last_dim(x_freq, ch.n, "x_freq")
    y = idft(ch.lam * x_freq)
    if sigma_n2 > 0:
        if rng is None:
            raise ValueError("an rng is required when sigma_n2 > 0")
        y = y + awgn(y.shape, sigma_n2, rng)
    return y


@dataclass(frozen=True)
class PowerProfile:
    sigma_pilots2: float = 1.0
    sigma_chn2: float = 1.0
    sigma_n2: float = 0.1

    def __post_init__(self):
        for name in ("sigma_pilots2", "sigma_chn2", "sigma_n2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_snr_db(cls, snr_db: float, sigma_pilots2: float = 1.0, sigma_chn2: float = 1.0):
        return cls(sigma_pilots2, sigma_chn2, sigma_chn2 * sigma_pilots2 / 10 ** (snr_db / 10))

    @property
    def snr_db(self) -> float:
        return 10 * np.log10(self.sigma_chn2 * self.sigma_pilots2 / self.sigma_n2)


def noise_var(snr_db: float) -> float:
    """Noise variance for unit channel and symbol power at the given average SNR."""
    return 10 ** (-snr_db / 10)
