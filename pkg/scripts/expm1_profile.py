"""Single-precision error of exp(x) - 1 against expm1 near zero (float64 expm1 as reference).

    python3 scripts/expm1_profile.py --out expm1.csv
"""

import argparse

import numpy as np

from vdmkit.diffusion import expm1_error_profile


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", default=None)
    p.add_argument("--half-width", type=float, default=1e-4)
    p.add_argument("--points", type=int, default=2001)
    a = p.parse_args()

    x = np.linspace(-a.half_width, a.half_width, a.points)
    naive, stable = expm1_error_profile(x)
    print(f"max abs error: exp(x)-1 {naive.max():.3e}, expm1 {stable.max():.3e}, ratio {naive.max() / stable.max():.1f}")
    if a.out:
        np.savetxt(a.out, np.column_stack([x, naive, stable]), delimiter=",", header="x,naive_err,expm1_err",
                   comments="")


if __name__ == "__main__":
    main()
