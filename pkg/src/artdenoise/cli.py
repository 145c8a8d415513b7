"""Command line: synth, train, denoise, eval, gradcheck, attn-export.

Every run writes a flat key=value manifest of its resolved arguments;
``artdenoise --manifest PATH`` replays it. Exit codes: 0 success, 2 usage or
input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluation as ev
from . import io
from .art import MissingTargetError
from .gradcheck import TOLERANCE, run_table
from .ops import ShapeError
from .synth import SynthConfig, generate_pairset
from .train import (CorruptCheckpoint, ShapeMismatch, TrainConfig, TrainingDiverged,
                    UnsupportedVersion, build_model, denoise_array, load_checkpoint,
                    save_checkpoint, train)

EXIT_USAGE = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).replace(" ", ",").split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="artdenoise", description=__doc__.splitlines()[0])
    p.add_argument("--manifest", help="replay a previous run from its manifest file")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("synth", help="generate a noisy/clean segment dataset")
    s.add_argument("--channels", type=int, default=8)
    s.add_argument("--fs", type=float, default=256.0)
    s.add_argument("--seconds", type=float, default=4.0)
    s.add_argument("--pairs", type=int, default=2000)
    s.add_argument("--subjects", type=int, default=8)
    s.add_argument("--ratio-low", type=float, default=0.5)
    s.add_argument("--ratio-high", type=float, default=3.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a denoiser")
    t.add_argument("--model", choices=["icunet", "icunetpp", "icunet-attn", "art"], required=True)
    t.add_argument("--target", choices=["clean", "null", "noise"], default="noise")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=60)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--momentum", type=float, default=0.0)
    t.add_argument("--no-clip", action="store_true")
    t.add_argument("--lr-decay-every", type=int, default=0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--width", type=int, default=32, help="U-Net base width")
    t.add_argument("--depth", type=int, default=4, help="U-Net levels")
    t.add_argument("--d-model", type=int, default=128)
    t.add_argument("--d-ff", type=int)
    t.add_argument("--heads", type=int, default=8)
    t.add_argument("--layers", type=int, default=2)
    t.add_argument("--jobs", type=int, default=1, help="accepted; results never depend on it")

    d = sub.add_parser("denoise", help="denoise an EEGT file with a checkpoint")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--target", choices=["clean", "null", "noise"])
    d.add_argument("--reference")

    e = sub.add_parser("eval", help="compute an evaluation metric")
    e.add_argument("--metric", required=True,
                   choices=["mse", "snr-ssvep", "snr-erp", "components", "bci", "spider"])
    e.add_argument("--in", dest="inp", nargs="*", default=[])
    e.add_argument("--ref")
    e.add_argument("--tags", help="tags.csv whose tag column holds class labels (bci)")
    e.add_argument("--stim", type=_floats, default=[10.0])
    e.add_argument("--event-offset", type=float, default=0.5, help="event time within each segment (s)")
    e.add_argument("--counts", help="components.csv for the spider metric")
    e.add_argument("--fs", type=float, default=256.0)
    e.add_argument("--runs", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference check of every primitive and model")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-probes", type=int, default=20)
    g.add_argument("--corrupt", help="fixture: scale the backward pass of this case by 1.1")
    g.add_argument("--out")

    a = sub.add_parser("attn-export", help="dump attention matrices of an ART checkpoint")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--in", dest="inp", required=True)
    a.add_argument("--index", type=int, default=0)
    a.add_argument("--layers", default=None, help="'all' or comma-separated layer indices")
    a.add_argument("--out", required=True)
    return p


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

RUN_INFO_KEYS = ("version", "duration_s")


def _manifest_entries(args: argparse.Namespace, duration: float) -> dict:
    out = {"command": args.command, "version": __version__, "duration_s": f"{duration:.3f}"}
    for k, v in sorted(vars(args).items()):
        if k in ("command", "manifest") or v is None:
            continue
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        out[k] = v
    return out


def _manifest_path(args) -> Path:
    out = Path(args.out)
    if args.command == "denoise":
        return out.with_name(out.name + ".manifest")
    return out / "manifest.txt"


def argv_from_manifest(path, parser: argparse.ArgumentParser) -> list[str]:
    entries = io.read_manifest(path)
    command = entries.pop("command", None)
    if command is None:
        raise UsageError(f"{path}: manifest has no command entry")
    sub = parser._subparsers._group_actions[0].choices[command]  # noqa: SLF001
    flags = {a.dest: a for a in sub._actions if a.option_strings}  # noqa: SLF001
    argv = [command]
    for k, v in entries.items():
        if k in RUN_INFO_KEYS:
            continue
        action = flags.get(k)
        if action is None:
            raise UsageError(f"{path}: unknown manifest key {k!r}")
        opt = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
            if v == "True":
                argv.append(opt)
        elif action.nargs == "*":
            argv += [opt, *[x for x in v.split(",") if x]]
        else:
            argv += [opt, v]
    return argv


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> None:
    if args.pairs < 1:
        raise UsageError("--pairs must be at least 1")
    cfg = SynthConfig(channels=args.channels, fs=args.fs, seconds=args.seconds, pairs=args.pairs,
                      subjects=args.subjects, ratio_low=args.ratio_low, ratio_high=args.ratio_high)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ds = generate_pairset(cfg, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_eegt(out / "noisy.eegt", ds.noisy)
    io.write_eegt(out / "clean.eegt", ds.clean)
    io.write_tags(out / "tags.csv", ds.tags, ds.split)


class _FileDataset:
    def __init__(self, root: Path):
        for name in ("noisy.eegt", "clean.eegt", "tags.csv"):
            if not (root / name).exists():
                raise UsageError(f"dataset {root} lacks {name}")
        self.noisy = io.read_eegt(root / "noisy.eegt")
        self.clean = io.read_eegt(root / "clean.eegt")
        self.tags, self.split = io.read_tags(root / "tags.csv")
        if self.noisy.shape != self.clean.shape or len(self.tags) != len(self.noisy):
            raise UsageError(f"dataset {root}: noisy, clean and tags disagree")

    def subset(self, name):
        idx = np.flatnonzero(self.split == name)
        return self.noisy[idx], self.clean[idx]


def cmd_train(args) -> None:
    data = _FileDataset(Path(args.data))
    _, c, t = data.noisy.shape
    if args.model == "art":
        config = dict(channels=c, length=t, d_model=args.d_model, heads=args.heads,
                      layers=args.layers, target_mode=args.target,
                      d_ff=args.d_ff if args.d_ff else 4 * args.d_model)
    else:
        config = dict(channels=c, length=t, width=args.width, depth=args.depth)
    try:
        model = build_model(args.model, config, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size,
                      momentum=args.momentum, clip_norm=None if args.no_clip else 5.0,
                      lr_decay_every=args.lr_decay_every)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = train(model, data, cfg, seed=args.seed,
                       log=lambda msg: print(msg, file=sys.stderr))
    except (ShapeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    result.curve.save(out / "losscurve.csv")
    save_checkpoint(model, out / "model.artc", seed=args.seed, epoch=result.best_epoch)


def _load(path):
    try:
        return load_checkpoint(path)
    except (OSError, CorruptCheckpoint, UnsupportedVersion, ShapeMismatch) as exc:
        raise UsageError(f"cannot load checkpoint {path}: {exc}") from exc


def _read(path):
    try:
        return io.read_eegt(path)
    except (OSError, io.FormatError) as exc:
        raise UsageError(str(exc)) from exc


def cmd_denoise(args) -> None:
    model = _load(args.checkpoint)
    x = _read(args.inp)
    if model.model_id == "art" and args.target:
        model.config.target_mode = args.target
    reference = _read(args.reference) if args.reference else None
    if reference is not None and reference.shape != x.shape:
        raise UsageError(f"reference shape {reference.shape} != input shape {x.shape}")
    try:
        if x.shape[1] != model.config.channels:
            raise ShapeError(f"input has {x.shape[1]} channels, model expects {model.config.channels}")
        z = denoise_array(model, x, reference=reference)
    except MissingTargetError as exc:
        raise UsageError(f"{exc} (pass --reference)") from exc
    except ShapeError as exc:
        raise UsageError(str(exc)) from exc
    io.write_eegt(args.out, z)


def _concat_time(x: np.ndarray) -> np.ndarray:
    """(n, c, t) segments -> (c, n*t) continuous signal."""
    return np.concatenate(list(x), axis=-1)


def cmd_eval(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    m = args.metric
    if m != "spider" and not args.inp:
        raise UsageError(f"--metric {m} needs --in")
    if m == "mse":
        if not args.ref:
            raise UsageError("--metric mse needs --ref")
        z, y = _read(args.inp[0]), _read(args.ref)
        if z.shape != y.shape:
            raise UsageError(f"shape mismatch {z.shape} vs {y.shape}")
        io.write_csv(out / "mse.csv", ["channel", "value"], enumerate(ev.channel_mse(z, y)))
    elif m == "snr-ssvep":
        x = _concat_time(_read(args.inp[0]))
        rows = [(f, ev.ssvep_snr(x, args.fs, f)) for f in args.stim]
        io.write_csv(out / "snr.csv", ["stim_hz", "snr_db"], rows)
    elif m == "snr-erp":
        segs = _read(args.inp[0])
        t = segs.shape[-1]
        events = [k * t + int(round(args.event_offset * args.fs)) for k in range(len(segs))]
        value = ev.erp_snr(_concat_time(segs), args.fs, events, baseline=args.event_offset)
        io.write_csv(out / "snr.csv", ["event", "snr_db"], [("erp", value)])
    elif m == "components":
        rows = []
        for path in args.inp:
            x = _concat_time(_read(path))
            rows.append((Path(path).stem, "ica-heuristic", ev.count_nonbrain(x, args.fs, args.seed)))
        io.write_csv(out / "components.csv", ["dataset", "method", "count"], rows)
    elif m == "bci":
        if not args.tags:
            raise UsageError("--metric bci needs --tags with class labels")
        x = _read(args.inp[0])
        labels, _ = io.read_tags(args.tags)
        if len(labels) != len(x):
            raise UsageError("tags and trials disagree in count")
        labels = np.array(labels)
        classes = sorted(set(labels))
        if len(classes) != 2:
            raise UsageError("bci needs exactly two class labels in --tags")
        try:
            accs = ev.bci_holdout(x[labels == classes[0]], x[labels == classes[1]],
                                  runs=args.runs, seed=args.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        io.write_csv(out / "bci.csv", ["run", "accuracy"], enumerate(accs))
    elif m == "spider":
        if not args.counts:
            raise UsageError("--metric spider needs --counts")
        rows = [line.split(",") for line in Path(args.counts).read_text().splitlines()[1:] if line]
        values = [float(r[2]) for r in rows]
        area = ev.shoelace_area(ev.spider_points(values))
        io.write_csv(out / "spider.csv", ["axis", "value"], [(r[0], float(r[2])) for r in rows],
                     footer=[f"area,{io.fmt(area)}"])


def cmd_gradcheck(args) -> int:
    rows = run_table(seed=args.seed, max_probes=args.max_probes, corrupt_name=args.corrupt)
    width = max(len(r[0]) for r in rows)
    for name, err, ok in rows:
        print(f"{name:<{width}}  {err:.3e}  {'ok' if ok else 'FAIL'}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_csv(out / "gradcheck.csv", ["case", "max_rel_err", "passed"],
                     [(n, float(e), int(ok)) for n, e, ok in rows])
    failed = [n for n, _, ok in rows if not ok]
    if failed:
        print(f"{len(failed)} case(s) above {TOLERANCE:g}: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_attn_export(args) -> None:
    model = _load(args.checkpoint)
    if model.model_id != "art":
        raise UsageError(f"checkpoint holds {model.model_id!r}, attention export needs an ART model")
    x = _read(args.inp)
    if not 0 <= args.index < len(x):
        raise UsageError(f"--index {args.index} out of range for {len(x)} segments")
    n_layers = model.config.layers
    if args.layers in (None, ""):
        layers = list(range(min(2, n_layers)))
    elif args.layers == "all":
        layers = list(range(n_layers))
    else:
        layers = [int(v) for v in args.layers.split(",")]
        if any(not 0 <= v < n_layers for v in layers):
            raise UsageError(f"layer index out of range (model has {n_layers})")
    try:
        mats = model.export_attention(x[args.index])
    except (ShapeError, MissingTargetError) as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for (layer, head, site), a in sorted(mats.items()):
        if layer in layers:
            lines = [",".join(io.fmt(v) for v in row) for row in a]
            (out / f"attn_L{layer}_H{head}_{site}.csv").write_text("\n".join(lines) + "\n")


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "denoise": cmd_denoise, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "attn-export": cmd_attn_export}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.manifest:
            args = parser.parse_args(argv_from_manifest(args.manifest, parser))
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        start = time.perf_counter()
        code = COMMANDS[args.command](args) or 0
        if getattr(args, "out", None):
            io.write_manifest(_manifest_path(args),
                              _manifest_entries(args, time.perf_counter() - start))
        return code
    except UsageError as exc:
        print(f"artdenoise: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"artdenoise: training diverged: {exc} (epoch={exc.epoch} batch={exc.batch} "
              f"lr={exc.lr:g})", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"artdenoise: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
