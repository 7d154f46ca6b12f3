"""Gagliardo seminorms on a polygon and a sphere, and how they scale under dilation.

Run: python3 demos/norms_and_dilation.py
"""
from lipext.geometry import dilate
from lipext.meshes import circle_polygon, icosphere
from lipext.sobolev import ScalarField, SobolevParams, gagliardo_seminorms, lp_power

# the first coordinate on a 64-gon (k=1) and on an icosphere (k=2)
for mesh in (circle_polygon(64), icosphere(1)):
    u = ScalarField.from_function(mesh, lambda P: P[:, 0])
    print(f"\nk={mesh.k}: {mesh.n_simplices} simplices, |M| = {mesh.total_measure:.4f}")
    for s in (0.25, 0.5, 0.75):
        prm = SobolevParams(s, 2.0)
        (r,) = gagliardo_seminorms([u], params=prm)
        print(f"  s={s:4}: |u|_s^p = {r.power:.6f}  (depth-truncation estimate {r.error:.1e}, "
              f"{r.unresolved} pairs stopped at the depth limit)")

    # dilating M by lambda multiplies the L^p power by lambda^k and the seminorm
    # power by lambda^(k - sp); the values ride along unchanged
    s = 0.5
    base_lp = lp_power(u)
    base_sem = gagliardo_seminorms([u], s=s)[0].power
    for lam in (0.5, 2.0, 10.0):
        v = ScalarField(dilate(mesh, lam), u.values)
        lp_ratio = lp_power(v) / base_lp
        sem_ratio = gagliardo_seminorms([v], s=s)[0].power / base_sem
        print(f"  lambda={lam:5}: L^p ratio {lp_ratio:.6g} (expect {lam ** mesh.k:.6g}), "
              f"seminorm ratio {sem_ratio:.6g} (expect {lam ** (mesh.k - 2 * s):.6g})")

# constants have zero seminorm, so on small regions only the L^p part
# of the norm carries them
m = circle_polygon(64)
print("\nconstant field:", gagliardo_seminorms([ScalarField.constant(m, 3.0)], s=0.5)[0].power)
print("L^p power of the constant 3 on the 64-gon:", lp_power(ScalarField.constant(m, 3.0)),
      "=", 9 * m.total_measure)
