"""Command-line interface: ``dualpath-av <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import numerics as nx
from .config import ModelConfig
from .datasets import gen_synthetic_visual, read_avf, read_wav, synth_mixture, write_avf, write_wav
from .metrics import si_snr, trim_to_shortest
from .model import DualPathAVModel

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def cmd_synth(args) -> int:
    interf = [p for p in args.interf.split(",") if p]
    if not 1 <= len(interf) <= 4:
        raise UsageError(f"--interf takes 1 to 4 files, got {len(interf)}")
    if args.sisnr is None and not args.draw:
        raise UsageError("one of --sisnr or --draw is required")
    target, rate = read_wav(args.target, None)
    interferers = [read_wav(p, rate)[0] for p in interf]
    mix = synth_mixture(target, interferers, seed=args.seed,
                        sisnr_db=None if args.draw else args.sisnr)
    out = Path(args.out)
    ref_path = out.with_name(out.stem + ".ref.wav")
    write_wav(out, mix.mixture, rate)
    write_wav(ref_path, mix.reference, rate)
    sidecar = {**mix.spec.as_dict(), "scale": mix.scale, "reference": ref_path.name,
               "target": str(args.target), "interferers": interf}
    out.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    _emit({"mixture": str(out), "reference": str(ref_path), **mix.spec.as_dict()})
    return 0


def cmd_gen_visual(args) -> int:
    x, rate = read_wav(args.wav, None)
    vis = gen_synthetic_visual(x, args.fps, args.dim, args.seed, rate)
    write_avf(args.out, vis)
    _emit({"out": args.out, "rows": vis.n_frames, "dim": vis.dim, "fps": vis.fps})
    return 0


def cmd_train(args) -> int:
    from .trainer import train_from_manifest

    cfg_dict = json.loads(Path(args.config).read_text()) if args.config else {}
    config = ModelConfig.from_dict(cfg_dict)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train_from_manifest(
        config, args.manifest, args.epochs, seed=args.seed, out_dir=out,
        val_manifest=args.val_manifest, log_path=out / "log.jsonl", lr=args.lr,
        clip_norm=args.clip_norm, max_steps=args.max_steps)
    _emit({"steps": len(result.losses), "final_loss": result.losses[-1] if result.losses else None,
           "best_val_sisnri": result.best_val, "out": str(out)})
    return 0


def cmd_extract(args) -> int:
    model = DualPathAVModel.load(args.ckpt)
    cfg = model.config
    mix, rate = read_wav(args.mix, cfg.sample_rate, allow_any_rate=args.allow_any_rate)
    visual = read_avf(args.visual)
    if visual.dim != cfg.D_v:
        raise ValueError(f"D_v mismatch: visual file has {visual.dim}, checkpoint expects {cfg.D_v}")
    with nx.no_grad():
        est, mask = model.forward(mix, visual.values)
    write_wav(args.out, est.data, rate)
    m = mask.data
    _emit({"out": args.out, "length": int(est.shape[0]), "mask_mean": float(m.mean()),
           "mask_min": float(m.min()), "mask_max": float(m.max())})
    return 0


def cmd_eval(args) -> int:
    est, _ = read_wav(args.est, None)
    ref, _ = read_wav(args.ref, None)
    if args.mix:
        mix, _ = read_wav(args.mix, None)
        est, ref, mix = trim_to_shortest(est, ref, mix)
        base = si_snr(est, ref)
        _emit({"si_snr": base, "si_snr_mix": si_snr(mix, ref), "si_snri": base - si_snr(mix, ref)})
    else:
        est, ref = trim_to_shortest(est, ref)
        _emit({"si_snr": si_snr(est, ref)})
    return 0


def cmd_gradcheck(args) -> int:
    from .selftest import tiny_gradcheck

    report = tiny_gradcheck(seed=args.seed, tol=args.tol, step=args.step)
    _emit(report.as_dict())
    return 0 if report.passed else EXIT_RUNTIME


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest(args.sabotage)
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name} ({r.seconds:.1f}s): {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"selftest failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dualpath-av", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="mix a target with 1-4 interferers at a set SI-SNR")
    p.add_argument("--target", required=True)
    p.add_argument("--interf", required=True, help="comma-separated interferer WAVs")
    p.add_argument("--sisnr", type=float, help="mixture SI-SNR in dB")
    p.add_argument("--draw", action="store_true", help="draw SI-SNR from U(mu-5, mu+5)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gen-visual", help="synthetic target-correlated visual features")
    p.add_argument("--wav", required=True)
    p.add_argument("--fps", type=int, default=25)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_visual)

    p = sub.add_parser("train", help="train on a JSON-lines manifest")
    p.add_argument("--config", help="JSON file with ModelConfig overrides")
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="run a checkpoint on a mixture")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mix", required=True)
    p.add_argument("--visual", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--allow-any-rate", action="store_true")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", help="SI-SNR / SI-SNRi of an estimate")
    p.add_argument("--est", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--mix")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of a tiny model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--step", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest", help="run the built-in invariant suites")
    p.add_argument("--sabotage", help="corrupt one primitive's gradient (negative control)")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dualpath-av {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"dualpath-av {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
