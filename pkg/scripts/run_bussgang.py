"""Correlation-identity and distortion residuals vs number of pilot frames (N=16, 3 taps)."""
import sys

from onebit_ofdm.cli import main

DEFAULTS = ["N=16", "L=3", "snr_db=0,10,20", "trials=10", "bussgang_samples=1000,10000,100000"]

if __name__ == "__main__":
    raise SystemExit(main(["bussgang"] + DEFAULTS + sys.argv[1:]))
