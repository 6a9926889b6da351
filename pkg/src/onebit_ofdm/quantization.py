"""One-bit complex quantizer and Bussgang decomposition utilities."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import INV_SQRT2, ChannelRealization, PowerProfile, apply_channel, dft, random_qpsk


def one_bit_quantize(y: np.ndarray) -> np.ndarray:
    """Sign of the in-phase and quadrature parts, scaled to unit modulus.

    ``sign(0)`` is taken as +1 so the output is deterministic.
    """
    y = np.asarray(y)
    re = np.where(y.real >= 0, INV_SQRT2, -INV_SQRT2)
    im = np.where(y.imag >= 0, INV_SQRT2, -INV_SQRT2)
    return re + 1j * im


def bussgang_gain(p: PowerProfile) -> float:
    """Scalar alpha with A = alpha * I for a circularly-symmetric Gaussian input.

    The per-sample input power is sigma_chn2 * sigma_pilots2 + sigma_n2, which
    gives alpha = sqrt(2 / (pi * power)).
    """
    power = p.sigma_chn2 * p.sigma_pilots2 + p.sigma_n2
    if power <= 0:
        raise ZeroDivisionError("Bussgang gain undefined for zero input power")
    return float(np.sqrt(2.0 / (np.pi * power)))


def empirical_cross_corr(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample mean of x y^H over rows of ``xs`` (S, n) and ``ys`` (S, m)."""
    xs = np.atleast_2d(xs)
    ys = np.atleast_2d(ys)
    if xs.shape[0] != ys.shape[0]:
        raise ValueError(f"sample counts differ: {xs.shape[0]} vs {ys.shape[0]}")
    if xs.shape[0] < 2:
        raise ValueError("need at least two samples")
    return xs.T @ ys.conj() / xs.shape[0]


def empirical_bussgang_gain(y: np.ndarray, r: np.ndarray | None = None) -> float:
    """E[r y*] / E[|y|^2] estimated from samples (real part; the imaginary part is noise)."""
    y = np.asarray(y).ravel()
    r = one_bit_quantize(y) if r is None else np.asarray(r).ravel()
    return float(np.real(np.vdot(y, r)) / np.vdot(y, y).real)


@dataclass
class BussgangDecomposition:
    """r = A y + d with A = gain * I."""

    gain: float
    c_yy_diag: float
    d_samples: np.ndarray = field(repr=False)

    @classmethod
    def from_observations(cls, y: np.ndarray, p: PowerProfile) -> "BussgangDecomposition":
        gain = bussgang_gain(p)
        r = one_bit_quantize(y)
        return cls(gain, p.sigma_chn2 * p.sigma_pilots2 + p.sigma_n2, r - gain * y)


@dataclass
class PilotFrames:
    """Frames drawn through the pilot pipeline: pilots s, received y, quantized r."""

    s: np.ndarray
    y: np.ndarray
    r: np.ndarray


def simulate_pilots(
    ch: ChannelRealization, sigma_n2: float, samples: int, rng: np.random.Generator
) -> PilotFrames:
    s = random_qpsk((samples, ch.n), rng)
    y = apply_channel(ch, s, sigma_n2, rng)
    return PilotFrames(s, y, one_bit_quantize(y))


def instantaneous_profile(ch: ChannelRealization, p: PowerProfile) -> PowerProfile:
    return PowerProfile(p.sigma_pilots2, ch.sigma_chn2_inst, p.sigma_n2)


@dataclass
class Theorem1Check:
    lhs: np.ndarray
    rhs: np.ndarray
    rel_err: float


def correlation_estimate(ch, p, samples, rng, batch=20_000):
    """Accumulate E[F Q(y_p) s_p^H] and E[d_p s_p^H] over i.i.d. QPSK pilot frames.

    Batches are reduced in a fixed order so the result depends only on the rng.
    """
    gain = bussgang_gain(instantaneous_profile(ch, p))
    fr_s = np.zeros((ch.n, ch.n), dtype=complex)
    d_s = np.zeros((ch.n, ch.n), dtype=complex)
    done = 0
    while done < samples:
        b = min(batch, samples - done)
        fr = simulate_pilots(ch, p.sigma_n2, b, rng)
        fr_s += dft(fr.r).T @ fr.s.conj()
        d_s += (fr.r - gain * fr.y).T @ fr.s.conj()
        done += b
    return fr_s / samples, d_s / samples


def verify_theorem1(
    ch: ChannelRealization,
    p: PowerProfile,
    samples: int,
    rng: np.random.Generator,
) -> Theorem1Check:
    """Compare the empirical E[F Q(y_p) s_p^H] with alpha * sigma_pilots2 * Lambda.

    alpha uses the realization's instantaneous channel power.
    """
    if samples < 1000:
        raise ValueError("theorem check needs at least 1000 frames")
    lhs, _ = correlation_estimate(ch, p, samples, rng)
    alpha = bussgang_gain(instantaneous_profile(ch, p))
    rhs = np.diag(alpha * p.sigma_pilots2 * ch.lam)
    rel = np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs)
    return Theorem1Check(lhs, rhs, float(rel))


def lemma1_residual(ch, p, samples, rng) -> np.ndarray:
    """Empirical E[d_p s_p^H]; vanishes when distortion and pilots are uncorrelated."""
    _, ds = correlation_estimate(ch, p, samples, rng)
    return ds
