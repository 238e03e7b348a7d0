"""Command-line entry point: selftest, train, infer, eval, synth, viz.

Exit codes: 0 success, 1 check or runtime failure, 2 usage error.
Logs go to stdout as ``key=value`` lines.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import no_grad
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .flowio import FlowFile, FlowFormatError, flow_to_color, read_flow, read_image, read_mask, write_flo, write_image, write_mask, write_png
from .metrics import EmptyRegionError, band_aux, evaluate_flow, format_report, occlusion_distance, parse_bands, partition_residual
from .model import VARIANTS, WARM_START_MODES, ConfigError, ModelConfig, parse_key_values, run, warm_start_init
from .synth import SceneDistribution, sample_at
from .training import TOY_ITERS, TOY_WIDTH_DIVISOR, TrainConfig, train

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 by default; keep that, route text to stderr
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def emit(key: str, value) -> None:
    if isinstance(value, float):
        value = f"{value:.6f}"
    print(f"{key}={value}", flush=True)


def log_config(prefix: str, obj) -> None:
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, bool):
            v = str(v).lower()
        elif isinstance(v, tuple):
            v = ",".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v)
        emit(f"{prefix}.{f.name}", v)


def _read_config_file(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    try:
        return dict(parse_key_values(text.splitlines()))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _coerce(raw: str, like):
    raw = raw.strip()
    if isinstance(like, bool):
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(like, tuple):
        parts = [p for p in raw.split(",") if p.strip()]
        if like and isinstance(like[0], str):
            return tuple(p.strip() for p in parts)
        return tuple(float(p) for p in parts)
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def _apply(obj, values: dict[str, str]):
    """Dataclass copy with ``values`` (text) applied; unknown keys are an error."""
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, raw in values.items():
        if key not in names:
            raise UsageError(f"unknown key {key!r} for {type(obj).__name__}")
        try:
            changes[key] = _coerce(raw, getattr(obj, key))
        except ValueError as exc:
            raise UsageError(f"{key}: {exc}") from None
    return dataclasses.replace(obj, **changes)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_selftest(args) -> int:
    from .checks import format_table, run_suite

    emit("command", "selftest")
    emit("suite", args.suite)
    emit("tol", "default" if args.tol is None else args.tol)
    results = run_suite(args.suite, tol=args.tol, cases=args.cases)
    print(format_table(results))
    failed = sum(not r.passed for r in results)
    emit("checks", len(results))
    emit("failed", failed)
    return EXIT_FAIL if failed else EXIT_OK


def resolve_train_configs(args) -> tuple[ModelConfig, TrainConfig]:
    """File values first, then command-line flags; keys route to the model or the trainer by name."""
    values = _read_config_file(args.config)
    model_keys = {f.name for f in dataclasses.fields(ModelConfig)}
    train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
    scale = int(values.pop("width_divisor", TOY_WIDTH_DIVISOR))
    variant = args.variant or values.pop("variant", "sstm++")
    values.pop("variant", None)
    if variant not in VARIANTS:
        raise UsageError(f"variant must be one of {VARIANTS}")
    unknown = set(values) - model_keys - train_keys
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    if args.seed is not None:
        values["seed"] = str(args.seed)

    try:
        base = ModelConfig.for_variant(variant, iters=TOY_ITERS).scaled(scale)
        mcfg = ModelConfig.from_mapping({k: v for k, v in values.items() if k in model_keys}, base=base)
    except ConfigError as exc:
        raise UsageError(f"config conflict: {exc}") from None
    tcfg = _apply(TrainConfig(), {k: v for k, v in values.items() if k in train_keys})
    if args.steps is not None:
        tcfg = dataclasses.replace(tcfg, steps=args.steps)
    if tcfg.steps < 1 or tcfg.batch < 1:
        raise UsageError("steps and batch must be >= 1")
    if tcfg.loss not in ("loss1", "loss2"):
        raise UsageError("loss must be loss1 or loss2")
    return mcfg, tcfg


def cmd_train(args) -> int:
    mcfg, tcfg = resolve_train_configs(args)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        raise UsageError(f"output directory {out.parent} does not exist")
    emit("command", "train")
    log_config("model", mcfg)
    log_config("train", tcfg)
    weights, log = train(mcfg, tcfg, log=print)
    save_checkpoint(weights, mcfg, out)
    emit("loss_initial", log.initial_loss)
    emit("loss_final", log.final_loss())
    emit("seconds", log.seconds)
    emit("checkpoint", out)
    return EXIT_OK


def _flow_stem(a: int, b: int) -> str:
    return f"flow_{a:04d}_{b:04d}"


def _write_flow_outputs(out: Path, stem: str, flow: np.ndarray) -> None:
    write_flo(out / f"{stem}.flo", FlowFile(flow))
    write_png(out / f"{stem}.png", flow_to_color(flow))
    emit("wrote", out / f"{stem}.flo")


def cmd_infer(args) -> int:
    if len(args.frames) < 3:
        raise UsageError("--frames needs at least three images")
    weights, config = load_checkpoint(args.ckpt)
    if args.iters is not None and args.iters < 1:
        raise UsageError("--iters must be >= 1")
    frames = [read_image(p) for p in args.frames]
    if any(f.shape != frames[0].shape for f in frames):
        raise ValueError(f"frames differ in size: {[f.shape for f in frames]}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit("command", "infer")
    log_config("model", config)
    emit("warm_start", args.warm_start)
    emit("seed", args.seed)

    prev = None
    with no_grad():
        for k in range(len(frames) - 2):
            init = None
            if prev is not None:
                init = warm_start_init(prev, args.warm_start)
            emit(f"window{k}.init", "zeros" if init is None or args.warm_start == "none" else args.warm_start)
            res = run(frames[k : k + 3], weights, config, init=init, iters=args.iters)
            prev = res.low
            final = res.final
            if k == 0:
                _write_flow_outputs(out, _flow_stem(k + 1, k + 2), final.f1.data)
            _write_flow_outputs(out, _flow_stem(k + 2, k + 3), final.f2.data)
    return EXIT_OK


def _covers(bands) -> bool:
    spans = sorted((b.lo, b.hi) for b in bands)
    if not spans or spans[0][0] > 0:
        return False
    for (_, hi), (lo, _) in zip(spans, spans[1:]):
        if hi != lo:
            return False
    return math.isinf(spans[-1][1])


def cmd_eval(args) -> int:
    try:
        bands = parse_bands(args.bands or "")
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    needs_occ = any(b.kind == "occ_distance" for b in bands)
    if needs_occ and not args.occ:
        raise UsageError("d-bands need an occlusion mask (--occ)")
    pred = read_flow(args.pred)
    gt = read_flow(args.gt)
    if pred.flow.shape != gt.flow.shape:
        raise ValueError(f"resolution mismatch: pred {pred.flow.shape[1:]} vs gt {gt.flow.shape[1:]}")
    occ = read_mask(args.occ) if args.occ else None
    if occ is not None and occ.shape != gt.flow.shape[1:]:
        raise ValueError(f"resolution mismatch: occlusion mask {occ.shape} vs gt {gt.flow.shape[1:]}")
    emit("command", "eval")
    emit("bands", ",".join(b.label for b in bands) or "none")
    report = evaluate_flow(pred.flow, gt.flow, gt.valid, bands, occ)
    print(format_report(report))
    dist = occlusion_distance(occ) if occ is not None else None
    for kind, tag in (("occ_distance", "d"), ("speed", "s")):
        group = [b for b in bands if b.kind == kind]
        if not group:
            continue
        if _covers(group):
            aux = band_aux(group[0], gt.flow, dist)
            emit(f"partition_{tag}_residual", partition_residual(pred.flow, gt.flow, group, aux, gt.valid))
        else:
            emit(f"partition_{tag}", "not_a_cover")
    return EXIT_OK


def resolve_distribution(args) -> SceneDistribution:
    return _apply(SceneDistribution(), _read_config_file(args.spec))


def cmd_synth(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    dist = resolve_distribution(args)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory: {exc}") from None
    emit("command", "synth")
    emit("seed", args.seed)
    log_config("scene", dist)
    for i in range(args.count):
        s = sample_at(dist, args.seed, i)
        d = out / f"{i:04d}"
        d.mkdir(exist_ok=True)
        for t, frame in enumerate(s.frames, start=1):
            write_image(d / f"frame{t}.png", frame)
        write_flo(d / "flow_0001_0002.flo", FlowFile(s.gt.gt_f1, s.gt.valid1))
        write_flo(d / "flow_0002_0003.flo", FlowFile(s.gt.gt_f2, s.gt.valid2))
        write_mask(d / "occ.png", s.gt.occlusion_mask)
        print(f"sample={i} dir={d} checksum={s.checksum()}", flush=True)
    return EXIT_OK


def cmd_viz(args) -> int:
    ff = read_flow(args.flow)
    if args.max_rad is not None and not args.max_rad > 0:
        raise UsageError("--max-rad must be positive")
    write_png(args.out, flow_to_color(ff.flow, args.max_rad))
    emit("command", "viz")
    emit("wrote", args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sstm", description="Multi-frame optical flow: self-test, toy training, inference and evaluation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("selftest", help="run property suites")
    s.add_argument("--suite", choices=("gradcheck", "oracle", "invariants", "all"), default="all")
    s.add_argument("--tol", type=float, default=None, help="override the suite tolerance")
    s.add_argument("--cases", type=int, default=100, help="random cases per oracle check")
    s.set_defaults(fn=cmd_selftest)

    s = sub.add_parser("train", help="train on synthetic scenes and write a checkpoint")
    s.add_argument("--config", help="key=value file of model and training settings")
    s.add_argument("--steps", type=int)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--variant", choices=VARIANTS)
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("infer", help="estimate flows for a frame sequence")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--frames", nargs="+", required=True, metavar="PNG")
    s.add_argument("--warm-start", choices=WARM_START_MODES, default="none")
    s.add_argument("--iters", type=int, help="refinement steps (default: checkpoint config)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_infer)

    s = sub.add_parser("eval", help="EPE, Fl and banded EPE of a prediction")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--occ", help="occlusion mask PNG (needed for d-bands)")
    s.add_argument("--bands", default="", help="e.g. d0-10,d10-60,d60+,s0-10,s10-40,s40+")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("synth", help="export synthetic samples")
    s.add_argument("--spec", help="key=value file of scene distribution settings")
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("viz", help="color-code a flow file")
    s.add_argument("--flow", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--max-rad", type=float, help="saturation radius (default: max magnitude)")
    s.set_defaults(fn=cmd_viz)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"sstm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, CheckpointError, FlowFormatError, EmptyRegionError, FloatingPointError) as exc:
        print(f"sstm {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
