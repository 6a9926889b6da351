"""Autoencoder OFDM detection with a learned precoder and a one-bit-input decoder.

Training runs in two steps because the quantizer has zero derivative almost
everywhere. First the decoder is fitted offline on a fixed surrogate encoder
(no channel). Its recorded (symbols, pre-noise samples) pairs then become the
regression targets for the channel-specific precoder.

Frequency bins are placed by signed frequency throughout: bin k with k >= N/2
is the negative frequency k - N. The oversampled maps then sample the
band-limited OFDM waveform, and time and frequency oversampling differ only by a
row permutation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chanest import from_real, to_real
from .dsp import (
    ChannelRealization,
    apply_channel,
    awgn,
    dft,
    qpsk_slice,
    random_qpsk,
    signed_frequencies,
)
from .nn import MlpModel, MlpSpec, TrainingConfig, forward, mse_loss, train
from .quantization import one_bit_quantize

OVERSAMPLING_MODES = ("time", "frequency", "combined")
SURROGATE_VARIANTS = ("mixing", "idft")
PRECODER_OBJECTIVES = ("power", "ls")
SUPPORTED_G = (1, 2, 4)


# -- subcarrier plan ---------------------------------------------------------


@dataclass(frozen=True)
class SubcarrierPlan:
    """Disjoint data / pilot / guard bin sets covering 0..N-1."""

    n: int
    data: np.ndarray
    pilots: np.ndarray
    guards: np.ndarray

    def __post_init__(self):
        for name in ("data", "pilots", "guards"):
            object.__setattr__(self, name, np.sort(np.asarray(getattr(self, name), dtype=int)))
        allb = np.concatenate([self.data, self.pilots, self.guards])
        if allb.size != self.n or not np.array_equal(np.sort(allb), np.arange(self.n)):
            raise ValueError("data, pilot and guard sets must partition 0..N-1")

    @property
    def used(self) -> np.ndarray:
        return np.sort(np.concatenate([self.data, self.pilots]))

    @classmethod
    def default(cls, n: int = 64) -> "SubcarrierPlan":
        """802.11a-style layout: +-1..+-26 used with pilots at +-7 and +-21 for N=64.

        Other sizes scale the band edge and pilot positions proportionally.
        """
        if n < 8 or n % 2:
            raise ValueError("plan needs an even N >= 8")
        half = (26 * n) // 64
        p1, p2 = max(1, round(7 * n / 64)), max(2, round(21 * n / 64))
        f = signed_frequencies(n)
        used = (f != 0) & (np.abs(f) <= half)
        pil = np.isin(np.abs(f), [p1, p2]) & used
        bins = np.arange(n)
        return cls(n, bins[used & ~pil], bins[pil], bins[~used])

    @classmethod
    def full(cls, n: int) -> "SubcarrierPlan":
        """Every bin carries data (handy for small-N checks)."""
        return cls(n, np.arange(n), np.array([], int), np.array([], int))


def plan_symbols(plan: SubcarrierPlan, shape: int, rng: np.random.Generator) -> np.ndarray:
    """Random QPSK frames on the used bins, zeros on guards; (shape, N)."""
    s = np.zeros((shape, plan.n), dtype=complex)
    s[:, plan.used] = random_qpsk((shape, plan.used.size), rng)
    return s


# -- oversampling ------------------------------------------------------------


def centered_gamma(n: int, g_f: int) -> np.ndarray:
    """Zero-padding selector (G_f N x N): positive bins stay low, negative bins go to the top."""
    if g_f < 1:
        raise ValueError("G_f must be >= 1")
    gam = np.zeros((g_f * n, n))
    k = np.arange(n)
    rows = np.where(signed_frequencies(n) >= 0, k, k + (g_f - 1) * n)
    gam[rows, k] = 1.0
    return gam


def phase_ramp(n_fine: int, g: int, total: int) -> np.ndarray:
    """Diagonal of E_g on an n_fine grid: exp(j 2 pi kappa g / total) with signed kappa."""
    return np.exp(2j * np.pi * signed_frequencies(n_fine) * g / total)


def _sample_times(n: int, g_t: int, g_f: int) -> np.ndarray:
    # fine-grid sample index (units of T_s / G) for each stacked output row
    m = np.arange(g_f * n)
    return np.concatenate([m * g_t + g for g in range(g_t)])


def oversampled_basis(n: int, g_t: int = 1, g_f: int = 1) -> np.ndarray:
    """Samples of each subcarrier waveform at the rows' time instants, (G N x N).

    Column norms are sqrt(G): G times as many samples of the same waveform.
    """
    g = g_t * g_f
    t = _sample_times(n, g_t, g_f)
    return np.exp(2j * np.pi * np.outer(t, signed_frequencies(n)) / (g * n)) / np.sqrt(n)


@dataclass(frozen=True)
class OversamplingOperator:
    """Maps precoded frequency symbols x (N) to received samples (G N).

    ``lifted`` equals sqrt(G_f) * [F_fos^H E_g Lambda_fos Gamma]_g stacked over
    g = 0..G_t-1, which is H F^H at G = 1.
    """

    mode: str
    g_t: int
    g_f: int
    lam: np.ndarray
    lifted: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.mode not in OVERSAMPLING_MODES:
            raise ValueError(f"unknown oversampling mode {self.mode!r}")
        if self.g_t < 1 or self.g_f < 1:
            raise ValueError("oversampling factors must be >= 1")
        if self.lifted.shape != (self.g * self.n, self.n):
            raise ValueError("lifted map has the wrong shape")

    @property
    def n(self) -> int:
        return self.lam.size

    @property
    def g(self) -> int:
        return self.g_t * self.g_f

    @property
    def gamma(self) -> np.ndarray:
        return centered_gamma(self.n, self.g_f)

    def e_g(self, g: int) -> np.ndarray:
        return np.diag(phase_ramp(self.g_f * self.n, g, self.g * self.n))

    @property
    def lam_fine(self) -> np.ndarray:
        """Channel response on the G_f N grid (zero on padded bins)."""
        return self.gamma @ self.lam

    def h_os(self) -> np.ndarray:
        """Stacked oversampled channel blocks F_fos^H E_g Lambda_fos F_fos, (G N x G_f N)."""
        m = self.g_f * self.n
        f = np.fft.fft(np.eye(m), axis=0, norm="ortho")
        blocks = []
        for g in range(self.g_t):
            diag = phase_ramp(m, g, self.g * self.n) * self.lam_fine
            blocks.append(np.fft.ifft(f * diag[:, None], axis=0, norm="ortho"))
        return np.vstack(blocks)


def build_oversampled(ch: ChannelRealization, g_t: int = 1, g_f: int = 1) -> OversamplingOperator:
    """Combined oversampling; the time- and frequency-only builders are special cases.

    The channel enters through its in-band response on the N data bins.
    """
    return operator_from_response(ch.lam, g_t, g_f)


def operator_from_response(lam: np.ndarray, g_t: int = 1, g_f: int = 1) -> OversamplingOperator:
    """Same as ``build_oversampled`` for a given (possibly estimated) response."""
    if g_t < 1 or g_f < 1:
        raise ValueError("oversampling factors must be >= 1")
    lam = np.asarray(lam, dtype=complex)
    n = lam.size
    m = g_f * n
    gam = centered_gamma(n, g_f)
    fh_gamma = np.fft.ifft(gam, axis=0, norm="ortho")  # F_fos^H Gamma
    blocks = []
    for g in range(g_t):
        # F_fos^H E_g Lambda_fos Gamma = F_fos^H Gamma diag(ramp_g on the used rows * lam)
        ramp = gam.T @ phase_ramp(m, g, g_t * m)
        blocks.append(fh_gamma * (ramp * lam)[None, :])
    lifted = np.sqrt(g_f) * np.vstack(blocks)
    mode = "combined" if g_t > 1 and g_f > 1 else ("time" if g_t > 1 else "frequency")
    return OversamplingOperator(mode, g_t, g_f, lam.copy(), lifted)


def build_time_oversampled(ch: ChannelRealization, g_t: int) -> OversamplingOperator:
    op = build_oversampled(ch, g_t, 1)
    return OversamplingOperator("time", op.g_t, op.g_f, op.lam, op.lifted)


def build_freq_oversampled(ch: ChannelRealization, g_f: int) -> OversamplingOperator:
    return build_oversampled(ch, 1, g_f)


def split_g(g: int, mode: str = "frequency") -> tuple[int, int]:
    """(G_t, G_f) for a total factor under a mode; combined splits as evenly as possible."""
    if g < 1:
        raise ValueError("G must be >= 1")
    if mode == "frequency":
        return 1, g
    if mode == "time":
        return g, 1
    if mode == "combined":
        g_t = int(np.sqrt(g))
        while g % g_t:
            g_t -= 1
        return g_t, g // g_t
    raise ValueError(f"unknown oversampling mode {mode!r}")


# -- surrogate encoder -------------------------------------------------------


def surrogate_encoder(
    g: int,
    seed: int = 0,
    variant: str = "mixing",
    n: int = 64,
    plan: SubcarrierPlan | None = None,
    g_t: int = 1,
) -> np.ndarray:
    """Fixed encoder standing in for precoder + IDFT + channel during decoder training.

    ``mixing``: a seeded random rotation of the real cosine/sine sample vectors of
    the used subcarriers. The matrix is real, so real and imaginary parts travel
    separately and one decoder serves both. Its range lies inside the range of
    every oversampled channel map, so a precoder can reproduce it.
    ``idft``: the oversampled IDFT itself.
    Both have column norms sqrt(G), matching the energy of the oversampled channel maps.
    """
    if variant not in SURROGATE_VARIANTS:
        raise ValueError(f"unknown surrogate variant {variant!r}")
    if g < 1 or g % g_t:
        raise ValueError("G must be a positive multiple of G_t")
    plan = plan or SubcarrierPlan.default(n)
    if plan.n != n:
        raise ValueError("plan size does not match N")
    basis = oversampled_basis(n, g_t, g // g_t)
    if variant == "idft":
        return basis
    f = signed_frequencies(n)
    used = plan.used
    pos = [k for k in used if f[k] > 0]
    if sorted(-f[k] for k in pos) != sorted(f[k] for k in used if f[k] < 0):
        raise ValueError("mixing surrogate needs a plan symmetric around DC")
    real_cols = []
    for k in pos:
        real_cols += [np.sqrt(2) * basis[:, k].real, np.sqrt(2) * basis[:, k].imag]
    r = np.array(real_cols).T
    rng = np.random.default_rng(seed)
    q, tri = np.linalg.qr(rng.standard_normal((used.size, used.size)))
    q = q * np.sign(np.diag(tri))
    w = np.zeros((g * n, n), dtype=complex)
    w[:, used] = r @ q
    return w


# -- decoder -----------------------------------------------------------------


def decoder_spec(n: int, g: int, k: int = 20) -> MlpSpec:
    """GN -> KN -> KN -> KN -> N, relu except for the linear output."""
    return MlpSpec((g * n, k * n, k * n, k * n, n), ("relu", "relu", "relu", "linear"))


def decode(model: MlpModel, r: np.ndarray) -> np.ndarray:
    """Run the shared real-valued decoder on the in-phase and quadrature halves."""
    r = np.atleast_2d(r)
    return forward(model, r.real)[0] + 1j * forward(model, r.imag)[0]


@dataclass
class SurrogatePairSet:
    """Stored (l1, l2) pairs: l1 = [Re s, Im s], l2 = [Re, Im] of the encoder output."""

    l1: np.ndarray
    l2: np.ndarray

    def __post_init__(self):
        self.l1 = np.atleast_2d(np.asarray(self.l1, dtype=float))
        self.l2 = np.atleast_2d(np.asarray(self.l2, dtype=float))
        if self.l1.shape[0] != self.l2.shape[0]:
            raise ValueError("pair counts differ")
        if self.l1.shape[1] % 2 or self.l2.shape[1] % self.l1.shape[1]:
            raise ValueError("l2 length must be a multiple G of the l1 length 2N")

    def __len__(self) -> int:
        return self.l1.shape[0]

    @property
    def n(self) -> int:
        return self.l1.shape[1] // 2

    @property
    def g(self) -> int:
        return self.l2.shape[1] // self.l1.shape[1]

    @property
    def symbols(self) -> np.ndarray:
        return from_real(self.l1)

    def scaled(self, tau: float) -> "SurrogatePairSet":
        """Same pairs with the l2 labels multiplied by ``tau`` (precoder target scale)."""
        if not tau > 0:
            raise ValueError("target scale must be positive")
        return SurrogatePairSet(self.l1, tau * self.l2)

    @property
    def targets(self) -> np.ndarray:
        return from_real(self.l2)


@dataclass(frozen=True)
class AeTrainingConfig:
    """Hyperparameters of the two-step training. Sample count and K follow the reference setup."""

    n_samples: int = 5000
    k: int = 20
    decoder_epochs: int = 5
    decoder_lr: float = 3e-5
    decoder_batch: int = 64
    warm_start: bool = True
    warm_start_draws: int = 4
    val_fraction: float = 0.1
    patience: int = 2
    precoder_steps: int = 3000
    precoder_lr: float = 0.01
    surrogate_seed: int = 0

    def __post_init__(self):
        for name in ("n_samples", "k", "decoder_epochs", "decoder_batch", "precoder_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.decoder_lr <= 0 or self.precoder_lr <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class DecoderBundle:
    model: MlpModel
    pairs: SurrogatePairSet
    surrogate: np.ndarray = field(repr=False)
    sigma_n2: float = 0.0
    losses: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")  # untrained network, before any fitting


def linear_warm_start(model: MlpModel, inputs: np.ndarray, labels: np.ndarray) -> None:
    """Make the ReLU stack compute the least-squares affine decoder exactly.

    The first 2N hidden units carry +(Dx + b) and -(Dx + b), pass through the
    next two layers unchanged and are recombined by the output layer. The other
    hidden units keep their random input weights but have zero outgoing weights,
    so they start silent and are recruited by training.
    """
    n_out = model.spec.layer_sizes[-1]
    if any(w < 2 * n_out for w in model.spec.layer_sizes[1:-1]):
        raise ValueError("hidden layers must be at least twice the output width")
    a = np.hstack([inputs, np.ones((inputs.shape[0], 1))])
    sol = np.linalg.lstsq(a, labels, rcond=None)[0].T  # (n_out, n_in + 1)
    first, *middle, last = model.weights
    first[:n_out] = sol
    first[n_out : 2 * n_out] = -sol
    for w in middle:
        w[: 2 * n_out] = 0.0
        w[: 2 * n_out, : 2 * n_out] = np.eye(2 * n_out)
        w[2 * n_out :, : 2 * n_out] = 0.0
    last[:] = 0.0
    last[:, :n_out] = np.eye(n_out)
    last[:, n_out : 2 * n_out] = -np.eye(n_out)


def noise_quantize_transform(sigma_n2: float, bypass_quantizer: bool = False):
    """Noise layer plus one-bit quantizer acting on one real half (variance sigma_n2 / 2)."""
    std = np.sqrt(sigma_n2 / 2)

    def tf(batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        y = batch + std * rng.standard_normal(batch.shape) if std > 0 else batch
        if bypass_quantizer:
            return y
        return np.where(y >= 0, 1.0, -1.0) / np.sqrt(2)

    return tf


def train_decoder_offline(
    g: int,
    snr_db: float,
    n_samples: int | None = None,
    seed: int = 0,
    *,
    n: int = 64,
    plan: SubcarrierPlan | None = None,
    variant: str = "mixing",
    g_t: int = 1,
    cfg: AeTrainingConfig | None = None,
    bypass_quantizer: bool = False,
    sigma_n2: float | None = None,
) -> DecoderBundle:
    """Fit the decoder behind a fixed surrogate encoder and record its (l1, l2) pairs.

    ``sigma_n2`` overrides the SNR-derived noise variance (unit channel and symbol power).
    """
    if g not in SUPPORTED_G:
        raise ValueError(f"unsupported G={g}; supported: {SUPPORTED_G}")
    if not np.isfinite(snr_db):
        raise ValueError("SNR must be finite")
    cfg = cfg or AeTrainingConfig()
    n_samples = n_samples or cfg.n_samples
    plan = plan or SubcarrierPlan.default(n)
    s2 = 10 ** (-snr_db / 10) if sigma_n2 is None else float(sigma_n2)

    w = surrogate_encoder(g, cfg.surrogate_seed, variant, n, plan, g_t)
    rng = np.random.default_rng(seed)
    s = plan_symbols(plan, n_samples, rng)
    l2 = s @ w.T
    inputs = np.vstack([l2.real, l2.imag])
    labels = np.vstack([s.real, s.imag])

    model = MlpModel.init(decoder_spec(n, g, cfg.k), rng)
    tf = noise_quantize_transform(s2, bypass_quantizer)
    initial = mse_loss(forward(model, tf(inputs, rng))[0], labels)[0]
    if cfg.warm_start:
        draws = cfg.warm_start_draws
        linear_warm_start(model, np.vstack([tf(inputs, rng) for _ in range(draws)]), np.vstack([labels] * draws))
    tcfg = TrainingConfig(
        batch_size=cfg.decoder_batch, epochs=cfg.decoder_epochs, seed=seed, lr=cfg.decoder_lr,
        val_fraction=cfg.val_fraction, patience=cfg.patience if cfg.val_fraction else None,
    )
    res = train(model, inputs, labels, tcfg, transform=tf)
    if not np.all(np.isfinite(res.losses)):
        raise FloatingPointError("non-finite decoder loss")
    pairs = SurrogatePairSet(to_real(s), to_real(l2))
    return DecoderBundle(res.model, pairs, w, s2, res.losses, initial)


# -- precoder ----------------------------------------------------------------


@dataclass(frozen=True)
class PrecoderParams:
    P: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.P, dtype=complex)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("precoder must be square")
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite precoder")
        if abs(np.linalg.norm(p) ** 2 - p.shape[0]) > 1e-8 * p.shape[0]:
            raise ValueError("precoder must satisfy ||P||_F^2 = N")
        object.__setattr__(self, "P", p)

    @classmethod
    def normalized(cls, p: np.ndarray) -> "PrecoderParams":
        p = np.asarray(p, dtype=complex)
        nrm = np.linalg.norm(p)
        if nrm == 0:
            raise ValueError("cannot normalize a zero precoder")
        return cls(p * np.sqrt(p.shape[0]) / nrm)


@dataclass(frozen=True)
class PairStatistics:
    """Second-order statistics of the pairs; the quadratic loss depends on nothing else."""

    c_ss: np.ndarray  # mean s s^H
    c_ls: np.ndarray  # mean l2 s^H
    c0: float  # mean ||l2||^2

    @classmethod
    def from_pairs(cls, pairs: SurrogatePairSet) -> "PairStatistics":
        s, l2 = pairs.symbols, pairs.targets
        k = len(pairs)
        return cls(s.T @ s.conj() / k, l2.T @ s.conj() / k, float(np.sum(np.abs(l2) ** 2) / k))


def _check_pairs(op: OversamplingOperator, pairs: SurrogatePairSet) -> None:
    if pairs.n != op.n or pairs.g != op.g:
        raise ValueError(
            f"pairs (N={pairs.n}, G={pairs.g}) do not match the operator (N={op.n}, G={op.g})"
        )


def precoder_loss(p: np.ndarray, op: OversamplingOperator, pairs: SurrogatePairSet | PairStatistics) -> float:
    """Mean over pairs of ||lifted P s - l2||^2."""
    st = pairs if isinstance(pairs, PairStatistics) else PairStatistics.from_pairs(pairs)
    a = op.lifted.conj().T @ op.lifted
    d = op.lifted.conj().T @ st.c_ls
    p = np.asarray(p)
    val = np.trace(p.conj().T @ a @ p @ st.c_ss).real - 2 * np.trace(p.conj().T @ d).real + st.c0
    return float(max(val, 0.0))


def _require_full_rank(op: OversamplingOperator) -> None:
    rank = np.linalg.matrix_rank(op.lifted)
    if rank < op.n:
        raise np.linalg.LinAlgError(
            f"lifted map of the {op.mode} oversampling operator is rank deficient ({rank} < {op.n})"
        )


def closed_form_precoder(
    op: OversamplingOperator, pairs: SurrogatePairSet, objective: str = "power"
) -> PrecoderParams:
    """Exact minimizer of the pair loss.

    ``ls``: pinv(lifted) times the least-squares l1 -> l2 map, normalized afterwards.
    ``power``: minimizer over the sphere ||P||_F^2 = N, i.e. the loss seen through
    the power normalization. Stationarity gives A P C + mu P = D, solved in the
    eigenbases of A and C with mu found by bisection on the norm.
    """
    if objective not in PRECODER_OBJECTIVES:
        raise ValueError(f"unknown precoder objective {objective!r}")
    _check_pairs(op, pairs)
    _require_full_rank(op)
    st = PairStatistics.from_pairs(pairs)
    n = op.n
    if objective == "ls":
        m_eff = st.c_ls @ np.linalg.pinv(st.c_ss, rcond=1e-10, hermitian=True)
        return PrecoderParams.normalized(np.linalg.pinv(op.lifted) @ m_eff)

    a_val, u_a = np.linalg.eigh(op.lifted.conj().T @ op.lifted)
    c_val, u_c = np.linalg.eigh(st.c_ss)
    dt = u_a.conj().T @ (op.lifted.conj().T @ st.c_ls) @ u_c
    mag2 = np.abs(dt) ** 2
    active = mag2 > 1e-20 * mag2.max()
    ac = np.outer(a_val, c_val)

    def norm2(mu: float) -> float:
        return float(np.sum(mag2[active] / (ac[active] + mu) ** 2))

    lo = -ac[active].min()
    hi = max(1.0, abs(lo))
    while norm2(hi) > n:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if norm2(mid) > n:
            lo = mid
        else:
            hi = mid
    mu = hi
    pt = np.where(active, dt / (ac + mu), 0)
    return PrecoderParams.normalized(u_a @ pt @ u_c.conj().T)


@dataclass
class PrecoderResult:
    params: PrecoderParams
    losses: list[float]
    objective: str


def train_precoder_online(
    op: OversamplingOperator,
    pairs: SurrogatePairSet,
    seed: int = 0,
    cfg: AeTrainingConfig | None = None,
    objective: str = "power",
) -> PrecoderResult:
    """Adam on the pair loss using the stored l2 outputs as labels.

    ``power`` trains V with P = sqrt(N) V / ||V||_F inside the loss, so the
    power normalization is part of the model being fitted. ``ls`` fits P from
    zero and normalizes afterwards. The loss is quadratic in P, so each step uses
    the pair statistics instead of touching the 5000 pairs again.
    """
    if objective not in PRECODER_OBJECTIVES:
        raise ValueError(f"unknown precoder objective {objective!r}")
    _check_pairs(op, pairs)
    cfg = cfg or AeTrainingConfig()
    st = PairStatistics.from_pairs(pairs)
    n = op.n
    a = op.lifted.conj().T @ op.lifted
    d = op.lifted.conj().T @ st.c_ls

    def loss_grad(p):
        ap = a @ p
        loss = np.trace(p.conj().T @ ap @ st.c_ss).real - 2 * np.trace(p.conj().T @ d).real + st.c0
        return float(loss), 2 * (ap @ st.c_ss - d)

    rng = np.random.default_rng(seed)
    if objective == "power":
        v = d.copy()
        if np.linalg.norm(v) == 0:
            v = rng.standard_normal((n, n)) + 0j
        v *= np.sqrt(n) / np.linalg.norm(v)
    else:
        v = np.zeros((n, n), dtype=complex)
    params = [v.real.copy(), v.imag.copy()]
    m1 = [np.zeros_like(x) for x in params]
    m2 = [np.zeros_like(x) for x in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    losses = []
    for step in range(1, cfg.precoder_steps + 1):
        v = params[0] + 1j * params[1]
        if objective == "power":
            nv = np.linalg.norm(v)
            p = np.sqrt(n) * v / nv
            loss, gp = loss_grad(p)
            ph = v / nv
            gv = np.sqrt(n) / nv * (gp - np.real(np.vdot(ph, gp)) * ph)
        else:
            loss, gv = loss_grad(v)
        losses.append(loss)
        grads = [gv.real, gv.imag]
        for x, g, mm, vv in zip(params, grads, m1, m2):
            mm *= b1
            mm += (1 - b1) * g
            vv *= b2
            vv += (1 - b2) * g * g
            x -= cfg.precoder_lr * (mm / (1 - b1**step)) / (np.sqrt(vv / (1 - b2**step)) + eps)
    v = params[0] + 1j * params[1]
    return PrecoderResult(PrecoderParams.normalized(v), losses, objective)


# -- end-to-end detection ----------------------------------------------------


@dataclass
class Detection:
    symbols: np.ndarray  # soft decoder output, (frames, N)
    bits: np.ndarray  # hard decisions on data bins, (frames, 2 * n_data)


def ae_transmit_receive(
    s: np.ndarray,
    p: PrecoderParams | np.ndarray,
    op: OversamplingOperator,
    decoder: MlpModel,
    sigma_n2: float,
    rng: np.random.Generator,
    plan: SubcarrierPlan | None = None,
    bypass_quantizer: bool = False,
) -> Detection:
    pm = p.P if isinstance(p, PrecoderParams) else np.asarray(p)
    s = np.atleast_2d(s)
    plan = plan or SubcarrierPlan.default(op.n)
    if s.shape[1] != op.n or pm.shape != (op.n, op.n):
        raise ValueError("frame, precoder and operator sizes disagree")
    y = (s @ pm.T) @ op.lifted.T
    y = y + awgn(y.shape, sigma_n2, rng)
    r = y if bypass_quantizer else one_bit_quantize(y)
    z = decode(decoder, r)
    return Detection(z, qpsk_slice(z[:, plan.data]))


def conventional_equalize(
    ch: ChannelRealization,
    s: np.ndarray,
    sigma_n2: float,
    quantized: bool,
    rng: np.random.Generator,
    bins: np.ndarray | None = None,
) -> np.ndarray:
    """Single-tap zero-forcing equalizer output on ``bins`` (all bins by default)."""
    bins = np.arange(ch.n) if bins is None else np.asarray(bins)
    if np.any(ch.lam[bins] == 0):
        raise ZeroDivisionError("zero channel coefficient on an equalized subcarrier")
    y = apply_channel(ch, np.atleast_2d(s), sigma_n2, rng)
    v = one_bit_quantize(y) if quantized else y
    return dft(v)[:, bins] / ch.lam[bins]


def conventional_detect(
    ch: ChannelRealization,
    s: np.ndarray,
    sigma_n2: float,
    quantized: bool,
    rng: np.random.Generator,
    plan: SubcarrierPlan | None = None,
) -> np.ndarray:
    """Bits on the data subcarriers after one-tap equalization and minimum-distance slicing."""
    plan = plan or SubcarrierPlan.default(ch.n)
    return qpsk_slice(conventional_equalize(ch, s, sigma_n2, quantized, rng, plan.data))


def theoretical_rayleigh_qpsk_ber(snr_db: float) -> float:
    """Average QPSK bit error rate over Rayleigh fading, 0.5 (1 - sqrt(g / (1 + g)))."""
    if not np.isfinite(snr_db):
        raise ValueError("SNR must be finite")
    g = 10 ** (snr_db / 10)
    return float(0.5 * (1 - np.sqrt(g / (1 + g))))


def data_bits(s: np.ndarray, plan: SubcarrierPlan) -> np.ndarray:
    return qpsk_slice(np.atleast_2d(s)[:, plan.data])
