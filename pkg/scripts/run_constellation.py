"""Equalized constellation scatter, unquantized vs one-bit, 10-tap channel at 20 dB.

Writes out/constellation/20/scatter.csv plus the spread summary in metrics.csv.
Extra key=value arguments override the defaults below.
"""
import sys

from onebit_ofdm.cli import main

DEFAULTS = ["snr_db=20", "L=10", "trials=5", "scatter_frames=20"]

if __name__ == "__main__":
    raise SystemExit(main(["constellation"] + DEFAULTS + sys.argv[1:]))
