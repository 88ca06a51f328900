"""Split-conformal PICP over seeds, and learned vs fixed scale on the two-regime synthetic."""
import argparse

import numpy as np

from delta_adapt.calibrators import (ConformalCalibrator, conformal_calibrate, conformal_interval,
                                     fit_conformal_scale, predict_np)
from delta_adapt.data import SyntheticSpec, generate, windows_from_array
from delta_adapt.forecaster import linear_ar
from delta_adapt.training import TrainConfig


def coverage(iv, Y):
    return float(np.mean((Y >= iv.lower) & (Y <= iv.upper)))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha", type=float, default=0.1)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--n-cal", type=int, default=500)
    ap.add_argument("--n-test", type=int, default=2000)
    ap.add_argument("--scale-loss", choices=["ratio", "nll"], default="ratio")
    args = ap.parse_args()
    L, H, n_fit = 4, 1, 1000
    spec = linear_ar(np.zeros((1, L)), np.zeros(1), L, 1, H, 1)
    cfg = dict(lr=1e-2, batch_size=64, early_stop_patience=0)
    n = n_fit + args.n_cal + args.n_test
    print("# exchangeable gaussian: seed,picp,mean_width")
    picps = []
    for seed in range(args.seeds):
        fr, _ = generate(SyntheticSpec("exchangeable_gaussian", {}, seed), (L + H) * n)
        blocks = fr.values.reshape(n, L + H, 1)          # disjoint windows stay exchangeable
        X, Y = blocks[:, :L], blocks[:, L:]
        cc = ConformalCalibrator(L, 1, H, 1, alpha=args.alpha, seed=seed, scale_loss=args.scale_loss)
        fit_conformal_scale(cc, spec, X[:n_fit], Y[:n_fit], TrainConfig(epochs=20, seed=seed, **cfg))
        conformal_calibrate(cc, spec, X[n_fit:n_fit + args.n_cal], Y[n_fit:n_fit + args.n_cal])
        Xt, Yt = X[n_fit + args.n_cal:], Y[n_fit + args.n_cal:]
        iv = conformal_interval(cc, Xt, predict_np(spec, Xt))
        picps.append(coverage(iv, Yt))
        print(f"{seed},{picps[-1]:.4f},{iv.width.mean():.4f}")
    print(f"# mean picp {np.mean(picps):.4f}, range {min(picps):.4f}..{max(picps):.4f}")
    print("# heteroscedastic: seed,fixed_picp,learned_picp,width_ratio")
    hspec = linear_ar(np.zeros((1, 2 * L)), np.zeros(1), L, 2, H, 1)
    for seed in range(5):
        fr, _ = generate(SyntheticSpec("heteroscedastic", {}, seed), 6000)
        X, Y = windows_from_array(fr.values, L, H, [0, 1], [1])
        res = []
        for learned in (False, True):
            cc = ConformalCalibrator(L, 2, H, 1, alpha=args.alpha, seed=seed, scale_loss=args.scale_loss)
            if learned:
                fit_conformal_scale(cc, hspec, X[:2000], Y[:2000], TrainConfig(epochs=30, seed=seed, **cfg))
            conformal_calibrate(cc, hspec, X[2000:2500], Y[2000:2500])
            iv = conformal_interval(cc, X[2500:], predict_np(hspec, X[2500:]))
            res.append((coverage(iv, Y[2500:]), float(iv.width.mean())))
        print(f"{seed},{res[0][0]:.4f},{res[1][0]:.4f},{res[1][1] / res[0][1]:.4f}")


if __name__ == "__main__":
    main()
