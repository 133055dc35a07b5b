"""Hyper-parameter grids: the default preset, the generators behind it, and sub-grids.

Run:  python3 demos/01_grids.py
"""

from hyperdp.analysis import (REFERENCE_GRID, build_grid, formula_grid, grid_dimensions,
                              preset, subgrid_around_best)

# The default preset lists the values verbatim.
spec = preset("paper-default", "BprMf")
for name, values in spec.resolved().items():
    print(f"{name:>13}: {len(values)} values, {values[0]:g} .. {values[-1]:g}")
grid = build_grid(spec)
print("BPR-MF configurations:", len(grid))

# The same lists come from base-2 exponent ranges.  The factors range also
# produces 1279, which the default list leaves out.
generated = formula_grid("BprMf").resolved()
extra = sorted(set(generated["factors"]) - set(REFERENCE_GRID["factors"]))
print("generator-only factor values:", extra)
print("iterations agree:", generated["iterations"] == REFERENCE_GRID["iterations"])

# A sub-grid keeps the best value of each dimension plus its grid neighbours.
best = next(c for c in grid if (c.factors, c.iterations) == (80, 16)
            and c.learning_rate == REFERENCE_GRID["learning_rate"][4])
sub = subgrid_around_best(grid, best, {"factors": 2, "iterations": 1, "learning_rate": 1})
print("sub-grid around", best.label())
for name, values in grid_dimensions(sub).items():
    print(f"  {name}: {values}")
print("  size:", len(sub))
