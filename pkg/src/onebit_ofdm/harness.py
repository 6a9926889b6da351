"""Experiment configs, seeded Monte Carlo sweeps, CSV metrics and checkpoints."""
from __future__ import annotations

import dataclasses
import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import aeofdm as ae
from .chanest import (
    PilotSet,
    build_labeled_set,
    draw_pilots,
    estimation_mse,
    generative_estimate,
    ls_estimate,
    train_channel_dnn,
)
from .dsp import PowerProfile, draw_channel, noise_var
from .nn import TrainingConfig, save_checkpoint, save_matrix
from .quantization import bussgang_gain, correlation_estimate, instantaneous_profile

log = logging.getLogger("onebit_ofdm")

EXPERIMENTS = ("bussgang", "chanest", "detect", "constellation")
CSV_HEADER = "experiment,snr_db,method,metric,value,trials,seed,config_hash,wall_ms"
MAX_FAILED_FRACTION = 0.01
# keys that change where or how fast results are produced but never the results
_NON_RESULT_KEYS = ("out", "threads", "save_checkpoints")


class ConfigError(ValueError):
    pass


class ExperimentAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "detect"
    N: int = 64
    L: int = 10
    N_t: tuple[int, ...] = (10, 20, 25)
    M: int = 10_000
    G: tuple[int, ...] = (1, 2, 4)
    G_t: int = 0  # 0: not given; then G lists total factors under ``oversampling``
    G_f: int = 0
    K: int = 20
    snr_db: tuple[float, ...] = (0.0, 4.0, 8.0, 12.0, 16.0)
    trials: int = 100
    base_seed: int = 0
    scale_mode: str = "nominal-rescaled"
    surrogate: str = "mixing"
    oversampling: str = "frequency"
    channel_knowledge: str = "true"
    detect_snr: str = "ebn0"  # detect axis: per-bit (ebn0) or per-symbol (esn0) SNR
    precoder_objective: str = "power"
    precoder_solver: str = "adam"
    cp: int = 16
    sigma_pilots2: float = 1.0
    chanest_epochs: int = 50
    chanest_lr: float = 3e-4
    chanest_batch: int = 64
    n_samples: int = 5000
    decoder_epochs: int = 5
    decoder_lr: float = 3e-5
    decoder_batch: int = 64
    decoder_warm_start: bool = True
    precoder_steps: int = 1000
    precoder_lr: float = 0.01
    precoder_target_scale: float = 0.7
    surrogate_seed: int = 0
    frames: int = 21
    detect_nt: int = 20
    bussgang_samples: tuple[int, ...] = (1000, 10_000, 100_000)
    scatter_frames: int = 20
    out: str = "out"
    threads: int = 1
    save_checkpoints: bool = True

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        for name in ("N", "L", "M", "K", "trials", "n_samples", "decoder_epochs", "decoder_batch",
                     "chanest_epochs", "chanest_batch", "precoder_steps", "frames", "detect_nt",
                     "scatter_frames", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("N_t", "G", "bussgang_samples"):
            if not getattr(self, name) or min(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a non-empty list of positive counts")
        if not self.snr_db:
            raise ConfigError("snr_db grid must be non-empty")
        if not all(np.isfinite(self.snr_db)):
            raise ConfigError("snr_db values must be finite")
        if self.L >= self.N:
            raise ConfigError("L must be < N")
        if self.G_t < 0 or self.G_f < 0:
            raise ConfigError("G_t and G_f must be positive")
        if self.G_t or self.G_f:
            g = max(self.G_t, 1) * max(self.G_f, 1)
            object.__setattr__(self, "G", (g,))
        for g in self.G:
            if g not in ae.SUPPORTED_G:
                raise ConfigError(f"G={g} unsupported; choose from {ae.SUPPORTED_G}")
        choices = {
            "scale_mode": ("raw", "nominal-rescaled", "oracle-rescaled"),
            "surrogate": ae.SURROGATE_VARIANTS,
            "oversampling": ae.OVERSAMPLING_MODES,
            "channel_knowledge": ("true", "estimated"),
            "detect_snr": ("ebn0", "esn0"),
            "precoder_objective": ae.PRECODER_OBJECTIVES,
            "precoder_solver": ("adam", "closed-form"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.sigma_pilots2 <= 0 or self.chanest_lr <= 0 or self.decoder_lr <= 0 or self.precoder_lr <= 0:
            raise ConfigError("powers and learning rates must be positive")
        if not self.precoder_target_scale > 0:
            raise ConfigError("precoder_target_scale must be positive")

    def g_split(self, g: int) -> tuple[int, int]:
        if self.G_t or self.G_f:
            return max(self.G_t, 1), max(self.G_f, 1)
        return ae.split_g(g, self.oversampling)

    def canonical(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            if f.name in _NON_RESULT_KEYS:
                continue
            lines.append(f"{f.name}={_render(getattr(self, f.name))}")
        return "\n".join(lines)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    def ae_training(self) -> ae.AeTrainingConfig:
        return ae.AeTrainingConfig(
            n_samples=self.n_samples, k=self.K, decoder_epochs=self.decoder_epochs,
            decoder_lr=self.decoder_lr, decoder_batch=self.decoder_batch,
            precoder_steps=self.precoder_steps, precoder_lr=self.precoder_lr,
            surrogate_seed=self.surrogate_seed, warm_start=self.decoder_warm_start,
        )


def _render(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_render(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_FIELD_TYPES = {
    f.name: f.type for f in dataclasses.fields(ExperimentConfig)
}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "tuple[int, ...]":
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if kind == "tuple[float, ...]":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}") from None


def parse_pairs(text: str) -> dict[str, str]:
    """Flat ``key=value`` text; '#' starts a comment, pairs may share a line."""
    out: dict[str, str] = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        for tok in line.split():
            if "=" not in tok:
                raise ConfigError(f"expected key=value, got {tok!r}")
            k, v = tok.split("=", 1)
            out[k.strip()] = v
    return out


def parse_config(
    path: str | Path | None = None,
    flags: dict[str, str] | Iterable[str] | None = None,
    **overrides,
) -> ExperimentConfig:
    """Defaults, then the file, then ``flags`` ("k=v" strings or a dict), then keyword overrides."""
    raw: dict[str, str] = {}
    if path is not None:
        raw.update(parse_pairs(Path(path).read_text(encoding="utf-8")))
    if flags:
        raw.update(flags if isinstance(flags, dict) else parse_pairs(" ".join(flags)))
    values = {}
    for k, v in raw.items():
        if k not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {k!r}")
        values[k] = _convert(k, v) if isinstance(v, str) else v
    for k, v in overrides.items():
        if k not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {k!r}")
        values[k] = v
    return ExperimentConfig(**values)


# -- records and CSV ---------------------------------------------------------


@dataclass(frozen=True)
class MetricRecord:
    experiment: str
    snr_db: float
    method: str
    metric: str
    value: float
    trials: int
    seed: int
    config_hash: str
    wall_ms: float = 0.0
    aggregate: bool = field(default=True, compare=False)

    def __post_init__(self):
        if not np.isfinite(self.value) or self.value < 0:
            raise ValueError(f"metric value must be finite and >= 0, got {self.value}")

    def row(self) -> str:
        return ",".join([
            self.experiment, f"{self.snr_db:g}", self.method, self.metric,
            f"{self.value:#.10g}", str(self.trials), str(self.seed), self.config_hash,
            f"{self.wall_ms:.0f}",
        ])


def write_csv(records: Iterable[MetricRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [CSV_HEADER] + [r.row() for r in records]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


# -- seeds and trial execution -----------------------------------------------


def trial_seed(base_seed: int, *keys: int) -> int:
    """Counter-based child seed: depends only on (base_seed, keys), never on scheduling."""
    ss = np.random.SeedSequence(base_seed, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def trial_rng(base_seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(base_seed, spawn_key=tuple(int(k) for k in keys)))


_TRIAL_ERRORS = (ValueError, ZeroDivisionError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError)


def run_trials(fn: Callable[[int], dict], trials: int, threads: int = 1) -> tuple[list[dict | None], int]:
    """Run ``fn(trial)`` for every trial and return the results in trial order.

    A trial raising a module error is logged and returned as None. More than
    1% failures aborts the run.
    """

    def safe(t: int):
        try:
            return fn(t)
        except _TRIAL_ERRORS as exc:  # counted, logged, excluded
            log.warning("trial %d failed: %s", t, exc)
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(safe, range(trials)))
    else:
        results = [safe(t) for t in range(trials)]
    failed = sum(r is None for r in results)
    if failed > MAX_FAILED_FRACTION * trials:
        raise ExperimentAborted(f"{failed} of {trials} trials failed")
    return results, failed


def ckpt_path(cfg: ExperimentConfig, snr_db: float, role: str) -> Path:
    return Path(cfg.out) / cfg.experiment / f"{snr_db:g}" / f"{role}.ckpt"


def _aggregate(cfg, snr, results, seeds, metric_of: dict[str, str], wall_ms, per_trial_wall):
    """Aggregate rows (mean over successful trials) followed by per-trial rows."""
    ok = [(t, r) for t, r in enumerate(results) if r is not None]
    agg, per = [], []
    for method, metric in metric_of.items():
        vals = [r[method] for _, r in ok]
        agg.append(MetricRecord(cfg.experiment, snr, method, metric, float(np.mean(vals)),
                                len(ok), cfg.base_seed, cfg.config_hash, wall_ms))
    for t, r in ok:
        for method, metric in metric_of.items():
            per.append(MetricRecord(cfg.experiment, snr, method, metric, float(r[method]), 1,
                                    seeds[t], cfg.config_hash, per_trial_wall[t], aggregate=False))
    return agg, per


def _timed(fn):
    def wrapped(t):
        t0 = time.perf_counter()
        out = fn(t)
        if out is not None:
            out = dict(out)
            out["_wall"] = 1000 * (time.perf_counter() - t0)
        return out

    return wrapped


# -- experiments -------------------------------------------------------------


def _bussgang(cfg: ExperimentConfig, isnr: int, snr: float):
    p = PowerProfile.from_snr_db(snr, cfg.sigma_pilots2)

    def trial(t):
        rng = trial_rng(cfg.base_seed, isnr, t)
        ch = draw_channel(cfg.L, cfg.N, rng)
        out = {}
        for s in cfg.bussgang_samples:
            lhs, ds = correlation_estimate(ch, p, s, rng)
            alpha = bussgang_gain(instantaneous_profile(ch, p))
            rhs = np.diag(alpha * p.sigma_pilots2 * ch.lam)
            out[f"theorem1-S{s}"] = float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs))
            out[f"lemma1-S{s}"] = float(np.abs(ds).max())
        return out

    metrics = {}
    for s in cfg.bussgang_samples:
        metrics[f"theorem1-S{s}"] = "rel_err"
        metrics[f"lemma1-S{s}"] = "max_abs"
    return trial, metrics


def _chanest(cfg: ExperimentConfig, isnr: int, snr: float):
    p = PowerProfile.from_snr_db(snr, cfg.sigma_pilots2)
    nts = sorted(set(cfg.N_t))

    def trial(t):
        rng = trial_rng(cfg.base_seed, isnr, t)
        ch = draw_channel(cfg.L, cfg.N, rng)
        ps = draw_pilots(max(nts), cfg.N, rng)
        ex = build_labeled_set(ch, ps, p.sigma_n2, rng)
        out = {}
        for nt in nts:
            tcfg = TrainingConfig(batch_size=cfg.chanest_batch, epochs=cfg.chanest_epochs,
                                  seed=trial_seed(cfg.base_seed, isnr, t, nt), lr=cfg.chanest_lr)
            model = train_channel_dnn(ex.head(nt), tcfg.seed, tcfg)
            if t == 0 and cfg.save_checkpoints:
                path = ckpt_path(cfg, snr, f"chanest-nt{nt}")
                path.parent.mkdir(parents=True, exist_ok=True)
                save_checkpoint(model, path)
            est = generative_estimate(model, cfg.M, rng, cfg.scale_mode, p, ch)
            out[f"dnn-nt{nt}"] = estimation_mse(est, ch)
            sub, obs = ps.subset(nt), ex.received[:nt]
            # one pilot at a time, as a receiver without pilot averaging would do
            frame = [estimation_mse(ls_estimate(obs[i:i + 1], PilotSet(sub.pilots[i:i + 1])), ch)
                     for i in range(nt)]
            out[f"ls-unquantized-nt{nt}"] = float(np.mean(frame))
            out[f"ls-unquantized-avg-nt{nt}"] = estimation_mse(ls_estimate(obs, sub), ch)
            one = ls_estimate(obs, sub, "onebit", p)
            out[f"ls-onebit-nt{nt}"] = estimation_mse(one, ch)
            out[f"ls-onebit-gain-nt{nt}"] = estimation_mse(one.compensated, ch)
        return out

    metrics = {}
    for nt in nts:
        for m in ("dnn", "ls-unquantized", "ls-unquantized-avg", "ls-onebit", "ls-onebit-gain"):
            metrics[f"{m}-nt{nt}"] = "mse"
    return trial, metrics


def detect_noise_var(cfg: ExperimentConfig, snr: float) -> float:
    """Noise variance for a detect grid point; QPSK carries 2 bits per unit-energy symbol."""
    s2 = noise_var(snr)
    return s2 / 2 if cfg.detect_snr == "ebn0" else s2


def bit_snr_db(sigma_n2: float) -> float:
    return float(10 * np.log10(1 / (2 * sigma_n2)))


def _detect(cfg: ExperimentConfig, isnr: int, snr: float):
    s2 = detect_noise_var(cfg, snr)
    p = PowerProfile(cfg.sigma_pilots2, 1.0, s2)
    plan = ae.SubcarrierPlan.default(cfg.N)
    tcfg = cfg.ae_training()
    decoders = {}
    for g in cfg.G:
        g_t, _ = cfg.g_split(g)
        seed = trial_seed(cfg.base_seed, isnr, 1_000_000 + g)
        t0 = time.perf_counter()
        decoders[g] = ae.train_decoder_offline(
            g, snr, seed=seed, n=cfg.N, plan=plan, variant=cfg.surrogate, g_t=g_t, cfg=tcfg,
            sigma_n2=s2,
        )
        log.info("decoder G=%d at %g dB trained in %.1fs", g, snr, time.perf_counter() - t0)
        if cfg.save_checkpoints:
            path = ckpt_path(cfg, snr, f"decoder-g{g}")
            path.parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(decoders[g].model, path)

    targets = {g: b.pairs.scaled(cfg.precoder_target_scale) for g, b in decoders.items()}

    def trial(t):
        rng = trial_rng(cfg.base_seed, isnr, t)
        ch = draw_channel(cfg.L, cfg.N, rng)
        s = ae.plan_symbols(plan, cfg.frames, rng)
        ref = ae.data_bits(s, plan)
        out = {}
        lam_hat = ch.lam
        if cfg.channel_knowledge == "estimated":
            ps = draw_pilots(cfg.detect_nt, cfg.N, rng)
            ex = build_labeled_set(ch, ps, s2, rng)
            model = train_channel_dnn(ex, trial_seed(cfg.base_seed, isnr, t, cfg.detect_nt), TrainingConfig(
                batch_size=cfg.chanest_batch, epochs=cfg.chanest_epochs,
                seed=trial_seed(cfg.base_seed, isnr, t, cfg.detect_nt), lr=cfg.chanest_lr))
            lam_hat = generative_estimate(model, cfg.M, rng, cfg.scale_mode, p, ch).h_hat
        for g in cfg.G:
            g_t, g_f = cfg.g_split(g)
            op_true = ae.build_oversampled(ch, g_t, g_f)
            op_known = op_true if lam_hat is ch.lam else ae.operator_from_response(lam_hat, g_t, g_f)
            pairs = targets[g]
            if cfg.precoder_solver == "adam":
                prec = ae.train_precoder_online(op_known, pairs, trial_seed(cfg.base_seed, isnr, t, g),
                                                tcfg, cfg.precoder_objective).params
            else:
                prec = ae.closed_form_precoder(op_known, pairs, cfg.precoder_objective)
            if t == 0 and cfg.save_checkpoints:
                path = ckpt_path(cfg, snr, f"precoder-g{g}")
                path.parent.mkdir(parents=True, exist_ok=True)
                save_matrix(prec.P, path)
            det = ae.ae_transmit_receive(s, prec, op_true, decoders[g].model, s2, rng, plan)
            out[f"ae-ofdm-g{g}"] = float(np.mean(det.bits != ref))
        out["conventional-unquantized"] = float(np.mean(ae.conventional_detect(ch, s, s2, False, rng, plan) != ref))
        out["conventional-onebit"] = float(np.mean(ae.conventional_detect(ch, s, s2, True, rng, plan) != ref))
        return out

    metrics = {f"ae-ofdm-g{g}": "ber" for g in cfg.G}
    metrics["conventional-unquantized"] = "ber"
    metrics["conventional-onebit"] = "ber"
    return trial, metrics


def scatter_spread(z: np.ndarray, s: np.ndarray) -> float:
    """RMS distance of equalized points from their class centroid, relative to the centroid radius."""
    z, s = np.ravel(z), np.ravel(s)
    spread, radius = 0.0, 0.0
    classes = np.unique(s)
    for c in classes:
        pts = z[s == c]
        mu = pts.mean()
        spread += np.sum(np.abs(pts - mu) ** 2)
        radius += abs(mu) * pts.size
    return float(np.sqrt(spread / z.size) / (radius / z.size))


def _constellation(cfg: ExperimentConfig, isnr: int, snr: float):
    s2 = noise_var(snr)
    plan = ae.SubcarrierPlan.default(cfg.N)
    dumps: dict[int, dict] = {}

    def trial(t):
        rng = trial_rng(cfg.base_seed, isnr, t)
        ch = draw_channel(cfg.L, cfg.N, rng)
        s = ae.plan_symbols(plan, cfg.scatter_frames, rng)
        zu = ae.conventional_equalize(ch, s, s2, False, rng, plan.data)
        zq = ae.conventional_equalize(ch, s, s2, True, rng, plan.data)
        dumps[t] = {"s": s[:, plan.data], "unquantized": zu, "onebit": zq}
        sd = s[:, plan.data]
        return {"conventional-unquantized": scatter_spread(zu, sd), "conventional-onebit": scatter_spread(zq, sd)}

    trial.dumps = dumps  # type: ignore[attr-defined]
    return trial, {"conventional-unquantized": "spread", "conventional-onebit": "spread"}


def write_scatter(path: Path, dumps: dict[int, dict]) -> None:
    lines = ["trial,method,tx_re,tx_im,re,im"]
    for t in sorted(dumps):
        d = dumps[t]
        tx = d["s"].ravel()
        for method in ("unquantized", "onebit"):
            for a, b in zip(tx, d[method].ravel()):
                lines.append(f"{t},{method},{a.real:#.10g},{a.imag:#.10g},{b.real:#.10g},{b.imag:#.10g}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


_BUILDERS = {"bussgang": _bussgang, "chanest": _chanest, "detect": _detect, "constellation": _constellation}


@dataclass
class ExperimentResult:
    records: list[MetricRecord]
    csv_path: Path
    failed_trials: int = 0
    extra_files: list[Path] = field(default_factory=list)


def run_experiment(cfg: ExperimentConfig, csv_path: str | Path | None = None) -> ExperimentResult:
    """Sweep the SNR grid; write ``<out>/<experiment>/metrics.csv`` (or ``csv_path``)."""
    log.info("experiment %s, config %s, scale mode %s", cfg.experiment, cfg.config_hash, cfg.scale_mode)
    records: list[MetricRecord] = []
    extra: list[Path] = []
    failed_total = 0
    for isnr, snr in enumerate(cfg.snr_db):
        t0 = time.perf_counter()
        fn, metrics = _BUILDERS[cfg.experiment](cfg, isnr, float(snr))
        results, failed = run_trials(_timed(fn), cfg.trials, cfg.threads)
        failed_total += failed
        wall = 1000 * (time.perf_counter() - t0)
        seeds = [trial_seed(cfg.base_seed, isnr, t) for t in range(cfg.trials)]
        per_wall = [r["_wall"] if r else 0.0 for r in results]
        agg, per = _aggregate(cfg, float(snr), results, seeds, metrics, wall, per_wall)
        if cfg.experiment == "detect":
            agg.append(MetricRecord(cfg.experiment, float(snr), "theoretical", "ber",
                                    ae.theoretical_rayleigh_qpsk_ber(bit_snr_db(detect_noise_var(cfg, snr))), 0,
                                    cfg.base_seed, cfg.config_hash, 0.0))
        records += agg + per
        if cfg.experiment == "constellation":
            path = Path(cfg.out) / cfg.experiment / f"{snr:g}" / "scatter.csv"
            write_scatter(path, fn.dumps)  # type: ignore[attr-defined]
            extra.append(path)
        log.info("%s %g dB done in %.1fs", cfg.experiment, snr, wall / 1000)
    out = Path(csv_path) if csv_path else Path(cfg.out) / cfg.experiment / "metrics.csv"
    write_csv(records, out)
    return ExperimentResult(records, out, failed_total, extra)


def summary(records: Iterable[MetricRecord]) -> dict[tuple[float, str], float]:
    """(snr, method) -> aggregate value."""
    return {(r.snr_db, r.method): r.value for r in records if r.aggregate}
