"""Exact error probabilities and exponents on a two-letter alphabet.

With the delta kernel the simple test only looks at the empirical type, so
its errors can be summed exactly over all types instead of simulated.

Run: python3 demos/finite_alphabet_exponents.py
"""

from kuht import harness
from kuht.large_deviations import dstar, extended_sanov_check, kl, sanov_sandwich_check

P, Q = (0.5, 0.5), (0.9, 0.1)
print(f"D(P||Q) = {float(kl(P, Q)):.6f}   D*(c=1/2) = {dstar(P, Q, 0.5):.6f}")

curve = harness.exact_delta_curve(P, Q, range(20, 101, 10))
print("\n  n   gamma_n   type-I     type-II")
for r in curve.rows:
    print(f"{r.n:4d}  {r.threshold_mean:.4f}   {r.type1_hat:.2e}   {r.type2_hat:.3e}")
fit = harness.fit_exponent(curve)
print(f"fitted exponent {fit.slope:.4f} (r2 {fit.r2:.3f}), below D(P||Q) as it must be")

rep = sanov_sandwich_check(P, Q, 0.2, [20, 40, 60, 80])
print(f"\nSanov ball gamma=0.2: I_min = {rep.rows[0].inf_grid:.4f}")
for r in rep.rows:
    print(f"  n={r.n:3d} rate={r.rate:.4f}  [{r.inf_grid - r.slack:.4f}, {r.inf_types + r.slack:.4f}]")
ext = extended_sanov_check(P, Q, 0.2, 20, 20).rows[0]
print(f"two-sample m=n=20: rate={ext.rate:.4f}  [{ext.inf_grid - ext.slack:.4f}, {ext.inf_types + ext.slack:.4f}]")
