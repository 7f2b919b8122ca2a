"""Time-varying directed network built on the bundled 12-node digraph."""

from _figure import figure

if __name__ == "__main__":
    figure(["tv-directed-fig7"],
           ["relative_error_last", "relative_error_ergodic", "consensus_violation", "infeasibility"],
           "fig_tv_directed.png", "time-varying directed network")
