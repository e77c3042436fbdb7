"""Activity detection against the persistence probability p_11 of the activity chain."""
from _sweep import parser, run

if __name__ == "__main__":
    args = parser(__doc__, "correlation_sweep.csv", trials=200).parse_args()
    run({"system": {"N": 1000, "p_a": 0.1},
         "axes": {"snr_db": [-10], "L": [200], "T": [4], "p_11": [0.5, 0.7, 0.9, 0.99]},
         "algorithms": ["hygamp_dcs", "forward_only", "gamp"]}, args)
