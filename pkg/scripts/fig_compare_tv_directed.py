"""Accelerated against constant steps on the time-varying directed network."""

from _figure import figure

if __name__ == "__main__":
    figure(["compare-tv-directed"],
           ["relative_error_last", "relative_error_ergodic", "consensus_violation"],
           "fig_compare_tv_directed.png", "accelerated vs constant, time-varying directed")
