"""Generative supervised channel estimation from one-bit pilot observations.

A small regression MLP learns pilot -> diag(F Q(y_p) s_p^H). Its outputs on
locally generated random QPSK frames are averaged, which by the Bussgang
argument approaches alpha * sigma_pilots^2 * Lambda; dividing out that constant
gives the frequency-domain channel estimate. LS baselines live here as well.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import ChannelRealization, PowerProfile, apply_channel, dft, random_qpsk
from .nn import MlpModel, MlpSpec, TrainingConfig, forward, train
from .quantization import bussgang_gain, one_bit_quantize

SCALE_MODES = ("raw", "nominal-rescaled", "oracle-rescaled")


def to_real(z: np.ndarray) -> np.ndarray:
    """Concatenate real and imaginary parts along the last axis."""
    return np.concatenate([z.real, z.imag], axis=-1)


def from_real(v: np.ndarray) -> np.ndarray:
    n = v.shape[-1] // 2
    return v[..., :n] + 1j * v[..., n:]


@dataclass
class PilotSet:
    pilots: np.ndarray  # (N_t, N) complex

    def __post_init__(self):
        self.pilots = np.atleast_2d(np.asarray(self.pilots, dtype=complex))

    @property
    def n_t(self) -> int:
        return self.pilots.shape[0]

    @property
    def n(self) -> int:
        return self.pilots.shape[1]

    def subset(self, k: int) -> "PilotSet":
        return PilotSet(self.pilots[:k])


def draw_pilots(n_t: int, n: int, rng: np.random.Generator) -> PilotSet:
    if n_t < 1:
        raise ValueError("need at least one pilot frame")
    return PilotSet(random_qpsk((n_t, n), rng))


@dataclass
class LabeledSet:
    """One example per pilot: input = [Re s_p, Im s_p], label = [Re, Im] of diag(F r_p s_p^H).

    The received samples are kept so LS baselines can reuse the very same pilots.
    """

    inputs: np.ndarray
    labels: np.ndarray
    received: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __iter__(self):
        return iter(zip(self.inputs, self.labels))

    def head(self, k: int) -> "LabeledSet":
        return LabeledSet(self.inputs[:k], self.labels[:k], self.received[:k])


def onebit_labels(r: np.ndarray, pilots: np.ndarray) -> np.ndarray:
    """diag(F r s^H) for each frame: (F r)_k * conj(s_k)."""
    return dft(r) * pilots.conj()


def build_labeled_set(
    ch: ChannelRealization, ps: PilotSet, sigma_n2: float, rng: np.random.Generator
) -> LabeledSet:
    if ps.n != ch.n:
        raise ValueError(f"pilot length {ps.n} does not match channel size {ch.n}")
    y = apply_channel(ch, ps.pilots, sigma_n2, rng)
    r = one_bit_quantize(y)
    return LabeledSet(to_real(ps.pilots), to_real(onebit_labels(r, ps.pilots)), y)


def channel_dnn_spec(n: int) -> MlpSpec:
    return MlpSpec((2 * n, 4 * n, 4 * n, 2 * n), ("relu", "relu", "linear"))


CHANEST_LR = 3e-4


CHANEST_EPOCHS = 50


def default_chanest_training(seed: int = 0) -> TrainingConfig:
    # With N_t <= 64 pilots every epoch is one full-batch Adam step. Starting from a
    # zeroed output layer, a short run stops while the network output is still a
    # shrunk version of the label mean, which is what the generative average wants.
    return TrainingConfig(batch_size=64, epochs=CHANEST_EPOCHS, seed=seed, lr=CHANEST_LR)


def train_channel_dnn(
    examples: LabeledSet,
    seed: int,
    cfg: TrainingConfig | None = None,
    zero_output: bool = True,
) -> MlpModel:
    """Fit the Table-I style regressor; a zeroed last layer makes the untrained
    network output exactly zero, so nothing from the init leaks into the average."""
    if len(examples) == 0:
        raise ValueError("empty labeled set")
    n2 = examples.inputs.shape[1]
    if n2 % 2 or examples.labels.shape[1] != n2:
        raise ValueError("inputs and labels must both have length 2N")
    cfg = cfg or default_chanest_training(seed)
    rng = np.random.default_rng(seed)
    model = MlpModel.init(channel_dnn_spec(n2 // 2), rng)
    if zero_output:
        model.weights[-1][:] = 0.0
    return train(model, examples.inputs, examples.labels, cfg).model


@dataclass
class ChannelEstimate:
    h_hat: np.ndarray
    scale_mode: str = "raw"
    meta: dict = field(default_factory=dict)
    compensated: "ChannelEstimate | None" = None

    def __post_init__(self):
        if self.scale_mode not in SCALE_MODES:
            raise ValueError(f"unknown scale mode {self.scale_mode!r}")
        if not np.all(np.isfinite(self.h_hat)):
            raise ValueError("non-finite channel estimate")


def theorem_scale(
    profile: PowerProfile, scale_mode: str, ch: ChannelRealization | None = None
) -> float:
    """The constant alpha * sigma_pilots^2 relating the label mean to Lambda."""
    if scale_mode == "raw":
        return 1.0
    if scale_mode == "nominal-rescaled":
        p = PowerProfile(profile.sigma_pilots2, 1.0, profile.sigma_n2)
    elif scale_mode == "oracle-rescaled":
        if ch is None:
            raise ValueError("oracle rescaling needs the channel realization")
        p = PowerProfile(profile.sigma_pilots2, ch.sigma_chn2_inst, profile.sigma_n2)
    else:
        raise ValueError(f"unknown scale mode {scale_mode!r}")
    return bussgang_gain(p) * p.sigma_pilots2


def generative_estimate(
    m: MlpModel,
    n_samples: int,
    rng: np.random.Generator,
    scale_mode: str = "nominal-rescaled",
    profile: PowerProfile | None = None,
    ch: ChannelRealization | None = None,
    batch: int = 5000,
) -> ChannelEstimate:
    """Average the network output over ``n_samples`` random QPSK frames."""
    if n_samples < 1:
        raise ValueError("M must be >= 1")
    n = m.spec.layer_sizes[0] // 2
    acc = np.zeros(2 * n)
    done = 0
    while done < n_samples:
        b = min(batch, n_samples - done)
        out, _ = forward(m, to_real(random_qpsk((b, n), rng)))
        acc += out.sum(axis=0)
        done += b
    h = from_real(acc / n_samples)
    if scale_mode != "raw":
        if profile is None:
            raise ValueError("rescaling needs the power profile")
        h = h / theorem_scale(profile, scale_mode, ch)
    return ChannelEstimate(h, scale_mode, {"M": n_samples})


def ls_estimate(
    observations: np.ndarray,
    ps: PilotSet,
    mode: str = "unquantized",
    profile: PowerProfile | None = None,
) -> ChannelEstimate:
    """Per-subcarrier LS averaged over pilots: (1/N_t) sum_p (F v_p)_k / s_{p,k}.

    In one-bit mode v_p = Q(y_p). Passing ``profile`` additionally attaches a
    Bussgang-gain compensated estimate (nominal channel power) as ``.compensated``.
    """
    y = np.atleast_2d(observations)
    if y.shape != ps.pilots.shape:
        raise ValueError("need one observation vector per pilot frame")
    if np.any(ps.pilots == 0):
        raise ZeroDivisionError("zero pilot entry")
    if mode == "unquantized":
        v = y
    elif mode == "onebit":
        v = one_bit_quantize(y)
    else:
        raise ValueError(f"unknown LS mode {mode!r}")
    h = np.mean(dft(v) / ps.pilots, axis=0)
    est = ChannelEstimate(h, "raw", {"N_t": ps.n_t, "mode": mode})
    if mode == "onebit" and profile is not None:
        scale = theorem_scale(profile, "nominal-rescaled")
        est.compensated = ChannelEstimate(h / scale, "nominal-rescaled", dict(est.meta))
    return est


def estimation_mse(e: ChannelEstimate | np.ndarray, ch: ChannelRealization) -> float:
    """Per-subcarrier mean squared error (1/N) sum_k |H_hat_k - Lambda_k|^2."""
    h = e.h_hat if isinstance(e, ChannelEstimate) else np.asarray(e)
    if h.shape[-1] != ch.n:
        raise ValueError("estimate length does not match the channel")
    return float(np.mean(np.abs(h - ch.lam) ** 2))
