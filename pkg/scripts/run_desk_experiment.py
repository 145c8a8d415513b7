"""Train the desk-scale models and run every downstream scenario.

    python3 scripts/run_desk_experiment.py --out runs/desk

Writes checkpoints, loss curves and a summary.json into --out. With
--checkpoint the training step is skipped and only the scenarios run.
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from artdenoise.experiments import (DeskConfig, bci_summary, component_summary, identity_mse,
                                    ssvep_summary, train_models)
from artdenoise.train import load_checkpoint, save_checkpoint


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", help="reuse a trained ART checkpoint instead of training")
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = DeskConfig(epochs=args.epochs, seed=args.seed)
    summary = {"config": cfg.to_dict()}

    if args.checkpoint:
        art = load_checkpoint(args.checkpoint)
    else:
        data, runs = train_models(cfg, log=print)
        summary["identity_test_mse"] = identity_mse(data)
        for name, run in runs.items():
            run.result.curve.save(out / f"{name}_losscurve.csv")
            save_checkpoint(run.model, out / f"{name}.artc", seed=cfg.seed, epoch=run.result.best_epoch)
            summary[name] = dict(test_mse=run.test_mse, seconds=run.seconds,
                                 first_train=run.result.curve.train_mse[0],
                                 last_train=run.result.curve.train_mse[-1])
        art = runs["art"].model

    start = time.perf_counter()
    ssvep = ssvep_summary(art, cfg)
    summary["ssvep"] = {k: v for k, v in ssvep.items() if k != "per_trial"}
    comp = component_summary(art, cfg)
    summary["components"] = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in comp.items()}
    summary["bci"] = bci_summary(art, cfg)
    summary["scenario_seconds"] = time.perf_counter() - start
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    print(json.dumps(summary, indent=2, default=float))


if __name__ == "__main__":
    main()
