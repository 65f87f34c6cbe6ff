"""The numerical core of self-supervised training, on toy tensors.

Shows the masked regression loss ignoring padding exactly, the variance
and covariance penalties diagnosing a collapsed representation, the
three training schedules at a glance, and the padding saved by
length-sorted re-binning.

Run with:  python3 demos/03_training_math.py
"""

import numpy as np

from geotile import training


def main():
    rng = np.random.default_rng(0)

    print("-- masked regression loss --")
    pred = rng.normal(size=(2, 6, 4))
    target = rng.normal(size=(2, 6, 4))
    valid = np.array([[True] * 4 + [False] * 2, [True] * 6])
    base = training.huber_masked(pred, target, valid)
    padded = training.huber_masked(
        np.pad(pred, ((0, 0), (0, 3), (0, 0))),
        np.pad(target, ((0, 0), (0, 3), (0, 0))),
        np.pad(valid, ((0, 0), (0, 3))),
    )
    print(f"  loss {base:.6f}; after padding three extra slots {padded:.6f} "
          f"(difference {padded - base!r})")

    print("\n-- collapse diagnosis --")
    healthy = rng.normal(size=(1, 64, 16))
    collapsed = np.broadcast_to(rng.normal(size=16), (1, 64, 16)).copy()
    all_valid = np.ones((1, 64), dtype=bool)
    for label, tok in (("healthy", healthy), ("collapsed", collapsed)):
        var, cov = training.vicreg_var_cov(tok, all_valid)
        print(f"  {label:9s} variance hinge {var:.4f}  covariance penalty {cov:.6f}")

    print("\n-- schedules --")
    cfg = training.ScheduleConfig(total_steps=1000)
    for step in (0, 100, 500, 1000):
        print(f"  step {step:4d}: lr {training.lr_at(step, cfg):.2e}  "
              f"wd {training.wd_at(step, cfg):.4f}  "
              f"momentum {training.momentum_at(step, cfg):.5f}")

    print("\n-- length-sorted re-binning --")
    lengths = [int(v) for v in rng.integers(1, 200, size=64)]
    naive = [list(range(i, min(i + 8, 64))) for i in range(0, 64, 8)]
    batches, groups = training.length_sorted_rebin(lengths, 8, 4, seed=3)
    before = training.padded_cells(naive, lengths)
    after = training.padded_cells(batches, lengths)
    print(f"  64 samples, batch size 8: {before} padded cells arrival order, "
          f"{after} after re-binning ({100 * (before - after) / before:.0f}% saved)")
    print(f"  accumulation groups: {groups}")


if __name__ == "__main__":
    main()
