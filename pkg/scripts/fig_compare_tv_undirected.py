"""Accelerated against constant steps on a time-varying undirected network."""

from _figure import figure

if __name__ == "__main__":
    figure(["compare-tv-undirected"],
           ["relative_error_last", "relative_error_ergodic", "consensus_violation"],
           "fig_compare_tv_undirected.png", "accelerated vs constant, time-varying undirected")
