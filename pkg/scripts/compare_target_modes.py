"""Train the transformer denoiser with each decoder target mode and compare test MSE.

    python3 scripts/compare_target_modes.py --epochs 10 --pairs 600

The clean mode feeds the clean reference to the decoder and is an upper bound,
not a deployable denoiser.
"""

import argparse

from artdenoise.experiments import DeskConfig, identity_mse
from artdenoise.synth import generate_pairset
from artdenoise.train import TrainConfig, build_model, evaluate, train


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--pairs", type=int, default=600)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    cfg = DeskConfig(pairs=args.pairs, epochs=args.epochs, seed=args.seed)
    data = generate_pairset(cfg.synth(), cfg.seed)
    print(f"identity test mse {identity_mse(data):.4f}")
    for mode in ("null", "noise", "clean"):
        model = build_model("art", dict(channels=cfg.channels, length=cfg.t, target_mode=mode, **cfg.art),
                            seed=cfg.seed)
        result = train(model, data, TrainConfig(epochs=cfg.epochs, lr_decay_every=cfg.lr_decay_every), seed=cfg.seed)
        test = evaluate(model, *data.subset("test"))
        print(f"{mode:>5}: best epoch {result.best_epoch:3d}  val {result.best_val:.4f}  test {test:.4f}")


if __name__ == "__main__":
    main()
