"""Accelerated against constant steps on the static (10,45) network."""

from _figure import figure

if __name__ == "__main__":
    figure(["compare-static"],
           ["relative_error_last", "relative_error_ergodic", "suboptimality"],
           "fig_compare_static.png", "accelerated vs constant, static")
