"""Command line entry point: ``onebit-ofdm <subcommand> [key=value ...]``."""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import harness
from .dsp import ChannelRealization, dft_matrix, draw_channel, PowerProfile
from .nn import MlpModel, MlpSpec, gradient_check
from .quantization import bussgang_gain, empirical_bussgang_gain, verify_theorem1

EXPERIMENT_COMMANDS = harness.EXPERIMENTS


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="onebit-ofdm", description="One-bit OFDM receiver experiments")
    ap.add_argument("--config", help="key=value config file")
    ap.add_argument("--seed", type=int, help="base seed (overrides the config)")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--threads", type=int, help="worker threads for Monte Carlo trials")
    ap.add_argument("--quiet", action="store_true", help="only print errors")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENT_COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("overrides", nargs="*", metavar="key=value")
    gp = sub.add_parser("gradcheck", help="backprop vs central differences on random MLPs")
    gp.add_argument("--nets", type=int, default=10)
    sub.add_parser("selftest", help="fast numerical sanity checks")
    return ap


def _gradcheck(nets: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(nets):
        sizes = (int(rng.integers(2, 129)), int(rng.integers(2, 257)), int(rng.integers(1, 65)))
        acts = tuple(rng.choice(["relu", "linear"], size=2))
        m = MlpModel.init(MlpSpec(sizes, acts), rng)
        for w in m.weights:
            w[:, -1] = 0.1 * rng.standard_normal(w.shape[0])
        x = rng.standard_normal((3, sizes[0]))
        y = rng.standard_normal((3, sizes[-1]))
        worst = max(worst, gradient_check(m, x, y, n_probe=40, rng=rng))
    return worst


def _selftest(seed: int) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    out = []
    f = dft_matrix(64)
    err = float(np.abs(f.conj().T @ f - np.eye(64)).max())
    out.append(("dft unitary", err < 1e-12, f"{err:.2e}"))
    ch = draw_channel(10, 64, rng)
    res = float(np.abs(ch.matrix() - f.conj().T @ np.diag(ch.lam) @ f).max())
    out.append(("circulant eigendecomposition", res < 1e-10, f"{res:.2e}"))
    g = bussgang_gain(PowerProfile(1, 1, 0))
    out.append(("bussgang gain", abs(g - np.sqrt(2 / np.pi)) < 1e-12, f"{g:.12f}"))
    y = (rng.standard_normal(200_000) + 1j * rng.standard_normal(200_000)) * np.sqrt(0.5)
    ge = empirical_bussgang_gain(y)
    out.append(("empirical gain", abs(ge / g - 1) < 0.01, f"{ge:.4f}"))
    small = ChannelRealization(draw_channel(3, 16, rng).taps, 16)
    chk = verify_theorem1(small, PowerProfile.from_snr_db(10), 20_000, rng)
    out.append(("correlation identity", chk.rel_err < 0.1, f"{chk.rel_err:.3f}"))
    gc = _gradcheck(2, seed)
    out.append(("gradient check", gc < 1e-5, f"{gc:.2e}"))
    return out


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s")
    seed = args.seed if args.seed is not None else 0
    say = (lambda *a: None) if args.quiet else print

    if args.command == "gradcheck":
        worst = _gradcheck(args.nets, seed)
        ok = worst < 1e-5
        print(f"gradcheck max relative error {worst:.3e} {'PASS' if ok else 'FAIL'}")
        return 0 if ok else 1
    if args.command == "selftest":
        results = _selftest(seed)
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'} {name} ({detail})")
        return 0 if all(ok for _, ok, _ in results) else 1

    extra = {"experiment": args.command}
    if args.seed is not None:
        extra["base_seed"] = args.seed
    if args.out is not None:
        extra["out"] = args.out
    if args.threads is not None:
        extra["threads"] = args.threads
    try:
        cfg = harness.parse_config(args.config, args.overrides, **extra)
        result = harness.run_experiment(cfg)
    except (harness.ConfigError, harness.ExperimentAborted, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    say(f"wrote {result.csv_path} ({len(result.records)} records, config {cfg.config_hash})")
    for (snr, method), value in harness.summary(result.records).items():
        say(f"{snr:6g} dB  {method:28s} {value:.5g}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
