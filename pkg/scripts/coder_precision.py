"""Why the default coder keeps precision below log2 of the head lower bound.

Pops from a uniformly random message should follow the table.  With precision
equal to log2(L) (the 32/16/16 layout) they do not; at 64/32/28 they do.

    python3 scripts/coder_precision.py
"""

import numpy as np
from scipy.stats import chi2

from vdmkit import ans
from vdmkit.ans import DEFAULT_CODER, COMPACT_CODER


def pop_counts(cfg, pmf, lanes=1000, calls=100, seed=0):
    rng = np.random.default_rng(seed)
    state = ans.random_state(lanes, 20 * lanes, rng, cfg)
    counts = np.zeros(pmf.size)
    for _ in range(calls):
        sym, state = ans.ans_pop(state, pmf)
        counts += np.bincount(sym, minlength=pmf.size)
    return counts


def main():
    for cfg in (COMPACT_CODER, DEFAULT_CODER):
        p = np.array([0.5, 0.2, 0.15, 0.1, 0.05])
        pmf = np.floor(p * (1 << cfg.precision)).astype(np.int64)
        pmf[0] += (1 << cfg.precision) - pmf.sum()
        counts = pop_counts(cfg, pmf)
        expected = pmf / pmf.sum() * counts.sum()
        stat = ((counts - expected) ** 2 / expected).sum()
        print(f"{cfg.state_bits}/{cfg.word_bits}/{cfg.precision}: chi2 {stat:.1f} "
              f"(5% critical {chi2.ppf(0.95, pmf.size - 1):.1f}); empirical {np.round(counts / counts.sum(), 4)}")


if __name__ == "__main__":
    main()
