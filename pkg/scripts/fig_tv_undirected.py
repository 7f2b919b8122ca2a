"""Time-varying undirected networks with inexact Metropolis averaging."""

from _figure import figure

if __name__ == "__main__":
    figure(["tv-undirected-10-45", "tv-undirected-10-15"],
           ["relative_error_last", "relative_error_ergodic", "consensus_violation", "infeasibility"],
           "fig_tv_undirected.png", "time-varying undirected networks")
