"""Channel-estimation MSE vs SNR for N_t in {10, 20, 25}: generative DNN and LS baselines.

Full protocol: 100 realizations per SNR point. Pass e.g. trials=20 for a quicker run.
"""
import sys

from onebit_ofdm.cli import main

DEFAULTS = ["N_t=10,20,25", "snr_db=0,4,8,12,16", "trials=100", "M=10000"]

if __name__ == "__main__":
    raise SystemExit(main(["chanest"] + DEFAULTS + sys.argv[1:]))
