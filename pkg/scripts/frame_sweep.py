"""Activity detection as the number of jointly processed frames grows."""
from _sweep import parser, run

if __name__ == "__main__":
    args = parser(__doc__, "frame_sweep.csv", trials=200).parse_args()
    run({"system": {"N": 1000, "p_a": 0.1},
         "axes": {"snr_db": [-10], "L": [200], "T": [1, 2, 4, 6, 8], "p_11": [0.75]},
         "algorithms": ["hygamp_dcs", "forward_only"]}, args)
