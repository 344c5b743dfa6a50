"""Walk the piecewise structure of the two-threshold prox.

For a fixed reference v > 0 and thresholds (gamma1, gamma2), sweep the
input u and report which closed-form case fires, where the output is
pinned exactly to 0 or exactly to v, and where it moves linearly with u.
The same sweep cross-checks every point against the six-candidate direct
search, so the table doubles as a worked correctness argument.
"""

import numpy as np

from l1l1rnn.prox import ProxParams, l1l1_prox, prox_oracle

V = 1.0
PARAMS = ProxParams(gamma1=0.5, gamma2=0.3)


def describe(h, u):
    if h == 0.0:
        return "pinned at 0"
    if h == V:
        return "pinned at v"
    return f"u {'-' if h < u else '+'} {abs(h - u):.1f}"


def main():
    print(f"v = {V}, gamma1 = {PARAMS.gamma1}, gamma2 = {PARAMS.gamma2}")
    print(f"{'u':>6}  {'prox':>6}  behavior")
    previous = None
    worst = 0.0
    for u in np.round(np.arange(-1.6, 2.81, 0.05), 10):
        h = l1l1_prox(float(u), V, PARAMS)
        worst = max(worst, abs(h - prox_oracle(float(u), V, PARAMS)))
        label = describe(h, float(u))
        if label != previous:
            print(f"{u:6.2f}  {h:6.2f}  {label}")
            previous = label
    print(f"\nevery sampled point matches the direct search (max diff {worst:.1e})")
    print("the flat stretches are exact: the prox returns 0.0 and v, not approximations,")
    print("which is where reconstructed codes get their zero entries from.")


if __name__ == "__main__":
    main()
