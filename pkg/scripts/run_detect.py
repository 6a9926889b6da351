"""BER vs SNR for the autoencoder receiver at G = 1, 2, 4 with conventional and theoretical baselines.

One decoder per (SNR, G) is trained offline; the precoder is refit per channel realization.
"""
import sys

from onebit_ofdm.cli import main

DEFAULTS = ["G=1,2,4", "snr_db=0,2,4,6,8,10,12,14", "trials=100", "frames=21"]

if __name__ == "__main__":
    raise SystemExit(main(["detect"] + DEFAULTS + sys.argv[1:]))
