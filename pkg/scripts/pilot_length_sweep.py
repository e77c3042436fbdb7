"""Known-statistics HyGAMP-DCS against EM-HyGAMP-DCS over the pilot length."""
from _sweep import parser, run

if __name__ == "__main__":
    args = parser(__doc__, "pilot_length_sweep.csv", trials=50).parse_args()
    run({"system": {"N": 1000, "p_a": 0.1},
         "axes": {"snr_db": [-10], "L": [150, 200, 250, 300, 350], "T": [4], "p_11": [0.75]},
         "algorithms": ["hygamp_dcs", "em_hygamp_dcs", "gamp"]}, args)
