"""Curvature of closed-form charts evaluated at a point.

The round sphere in stereographic coordinates is the calibration case: every
member is known exactly, so the printed errors measure the finite-difference
pipeline alone.  A product of two 2-spheres is Einstein only when the radii
agree; the Bach tensor tells the two cases apart.
"""

from obflow.chartlab import ChartMetric, chart_eval

sphere = chart_eval(ChartMetric.sphere_stereographic(1.0), (0.0, 0.0, 0.0, 0.0))
print("unit sphere at the chart origin")
print(f"  R = {float(sphere.R):.12f}   (exact 12)")
print(f"  Q = {float(sphere.Q):.12f}   (exact 6)")
print(f"  |W| = {sphere.norm('W'):.2e}  |C| = {sphere.norm('C'):.2e}  |B| = {sphere.norm('B'):.2e}")

point = (1.5707963267948966, 0.3, 1.5707963267948966, 1.0)
for r1, r2 in [(1.0, 1.0), (1.0, 2.0)]:
    b = chart_eval(ChartMetric.product_spheres(r1, r2), point)
    print(f"S2({r1}) x S2({r2}): |B| = {b.norm('B'):.3e}, Q = {float(b.Q):.6f}")
