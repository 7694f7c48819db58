"""Recovering the weights of one output coordinate from its even moments.

G(w) = 1.0 * w_1^3 + 2.0 * w_2^3 with w standard Gaussian. Its moments
E G^2 and E G^4 are polynomials in the power sums F[n] = sum_i alpha_i^(2n);
inverting that map and solving the Newton identities gives the weights back.

    python demos/01_weights_from_moments.py
"""
import numpy as np

from polymom.sampling import GeneratorSpec, empirical_moment_table, exact_moment_table
from polymom.recovery import recover_weights
from polymom.symmetric import moment_expansion_coeffs, moments_to_power_sums

G = GeneratorSpec(D=1, d=3, r=2, p=3, alpha=[[1.0, 2.0]], V=[np.eye(3)[:2]])

# the expansion behind E G^4: one coefficient per integer partition of 2
for pc in moment_expansion_coeffs(2, 2, 3):
    print(f"partition {pc.partition}: coefficient {pc.multiplier}")

exact = exact_moment_table(G)
print("exact moments  E G^2, E G^4:", [str(m) for m in exact.intra[0]])
F = moments_to_power_sums(exact.intra[0], 2, 3)
print("power sums     F[1], F[2]:  ", F[1], F[2])          # 5 and 17
print("weights (exact table):     ", recover_weights(exact, 0))

# with samples the fourth moment is noisy, and so are the weights
for N in (10**4, 10**5, 10**6):
    table = empirical_moment_table(G, N, seed=1)
    m2, m4 = table.intra[0]
    se2, se4 = table.intra_stderr[0]
    est = recover_weights(table, 0)
    print(f"N={N:>8d}  E G^2 = {m2:7.2f} +- {se2:5.2f}  E G^4 = {m4:9.0f} +- {se4:6.0f}"
          f"  weights {np.round(est, 3)}")
