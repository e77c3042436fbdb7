"""TNMSE and TAER against SNR for HyGAMP-DCS, forward-only DCS and per-frame GAMP."""
from _sweep import parser, run

if __name__ == "__main__":
    ap = parser(__doc__, "snr_sweep.csv", trials=200)
    ap.add_argument("--em", action="store_true", help="also run EM-HyGAMP-DCS")
    args = ap.parse_args()
    algos = ["hygamp_dcs", "forward_only", "gamp"] + (["em_hygamp_dcs"] if args.em else [])
    run({"system": {"N": 1000, "p_a": 0.2},
         "axes": {"snr_db": [-10, -5, 0, 5, 10], "L": [300], "T": [4], "p_11": [0.75]},
         "algorithms": algos}, args)
