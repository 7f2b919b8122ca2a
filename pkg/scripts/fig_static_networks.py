"""Static networks of two sizes and two densities, accelerated steps."""

from _figure import figure

if __name__ == "__main__":
    figure(["static-10-15", "static-10-45", "static-40-60", "static-40-180"],
           ["relative_error_last", "relative_error_ergodic", "suboptimality", "infeasibility"],
           "fig_static_networks.png", "static networks")
