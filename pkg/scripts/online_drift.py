"""Cumulative post-shift MSE of a frozen, a batch-adapted and an online-adapted forecaster."""
import argparse
import copy

from delta_adapt.adapters import AdapterNet
from delta_adapt.data import SyntheticSpec, generate, windows_from_array
from delta_adapt.forecaster import fit_backbone
from delta_adapt.training import TrainConfig, run_online, train_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--T", type=int, default=4000)
    ap.add_argument("--t0", type=int, default=1500, help="shift time")
    ap.add_argument("--shift", type=float, default=1.0)
    ap.add_argument("--warm", type=int, default=300, help="labelled post-shift rows for the batch adapter")
    ap.add_argument("--L", type=int, default=16)
    ap.add_argument("--H", type=int, default=4)
    ap.add_argument("--delta", type=float, default=0.5)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()
    L, H, t0 = args.L, args.H, args.t0
    print("seed,frozen,batch,online,attestation")
    for seed in range(args.seeds):
        fr, _ = generate(SyntheticSpec("regime_shift", {"t0": t0, "shift": args.shift, "phi": 0.7}, seed), args.T)
        Z = fr.values
        X, Y = windows_from_array(Z[:t0], L, H, [0], [0])
        spec = fit_backbone("linear_ar", X, Y)
        Xb, Yb = windows_from_array(Z[t0:t0 + args.warm], L, H, [0], [0])
        net = AdapterNet("output", "additive", L, 1, H, 1, delta=args.delta, seed=seed)
        train_batch(net, spec, Xb, Yb, TrainConfig(epochs=20, lr=args.lr, seed=seed, early_stop_patience=0))
        ev = Z[t0 + args.warm - L - H:]
        fro = run_online(None, spec, ev, TrainConfig(mode="online", lr=0.0))
        bat = run_online(net, spec, ev, TrainConfig(mode="online", lr=0.0))
        onl = run_online(copy.deepcopy(net), spec, ev, TrainConfig(mode="online", lr=args.lr, seed=seed))
        print(f"{seed},{fro.cumulative_mse():.4f},{bat.cumulative_mse():.4f},{onl.cumulative_mse():.4f},"
              f"{onl.attestation}")


if __name__ == "__main__":
    main()
