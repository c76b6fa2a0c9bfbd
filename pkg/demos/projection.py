"""Geometry of the gradient projection in two dimensions.

A new-data gradient ``g`` that disagrees with a remembered gradient is
replaced by the closest direction that does not increase the memory loss
to first order.  Run: ``python demos/projection.py``.
"""

import numpy as np

from gemstream.qp import QpConfig, project_multi, project_single, single_dual

g = np.array([1.0, -1.0])
r = np.array([0.0, 1.0])

print("single constraint, g =", g, " r =", r)
print(f"  <g, r> = {g @ r:+.3f}  (negative: conflict)")
w = project_single(g, r)
print(f"  v = {single_dual(g, r):.3f}, w = {w}, <w, r> = {w @ r:+.3f}")

xi = 0.5
w = project_single(g, r, QpConfig(slack=xi))
print(f"  with slack xi = {xi}: w = {w}, <w, r> = {w @ r:+.3f} (allowed down to -{xi})")

refs = [np.array([0.0, 1.0]), np.array([-0.2, 1.0])]
w = project_multi(g, refs)
print("\ntwo constraints, refs =", [r.tolist() for r in refs])
print("  inner products before:", np.round([g @ r for r in refs], 3))
print("  w =", np.round(w, 6), " inner products after:", np.round([w @ r for r in refs], 6) + 0.0)
print(f"  |w - g| = {np.linalg.norm(w - g):.4f}")

aligned = [np.array([1.0, 0.0])]
print("\nno conflict: w is g unchanged ->", project_multi(g, aligned))
