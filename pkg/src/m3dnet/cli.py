"""Command-line entry point: ``m3dnet <verb> [options] [--section.key value ...]``.

Verbs: synth, pretrain, train, eval, ablate, embed. Configuration comes from
defaults, then ``--config FILE`` (or ``$M3D_CONFIG``), then dotted flags such
as ``--mfm.heads 8``. Exit status is 0 on success, 1 on a domain error and 2
on a usage error. Every verb writes a configuration snapshot into its output
location before doing any work.
"""
from __future__ import annotations

import argparse
import difflib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .config import CONFIG_ENV_VAR, Config, describe_schema, load_config, schema, write_config_file
from .errors import M3DError

VERBS = ("synth", "pretrain", "train", "eval", "ablate", "embed")
log = logging.getLogger("m3dnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parser() -> _Parser:
    p = _Parser(prog="m3dnet", allow_abbrev=False,
                description="Dual-stream deepfake detector with a self-supervised 3D branch.",
                epilog=f"Config keys can be set with --section.key VALUE; see --help-config. "
                       f"${CONFIG_ENV_VAR} names a default config file.")
    p.add_argument("--help-config", action="store_true", help="print every config key and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", parser_class=_Parser)

    def verb(name, help_):
        s = sub.add_parser(name, help=help_, allow_abbrev=False)
        s.add_argument("--config", help=f"key = value config file (default: ${CONFIG_ENV_VAR})")
        return s

    s = verb("synth", "generate a synthetic face dataset with ground truth")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--image-size", type=int, default=None)
    s.add_argument("--tamper", choices=("region_paste", "local_warp"), default="region_paste")

    s = verb("pretrain", "pretrain the reconstruction network")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="run directory")
    s.add_argument("--resume", action="store_true")

    s = verb("train", "train the detector on top of a frozen reconstruction network")
    s.add_argument("--manifest", required=True)
    s.add_argument("--recon-checkpoint")
    s.add_argument("--out", required=True, help="run directory")
    s.add_argument("--resume", action="store_true")

    s = verb("eval", "evaluate a detector checkpoint on a manifest")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--recon-checkpoint")
    s.add_argument("--split", default="test")
    s.add_argument("--out", required=True, help="report directory")

    s = verb("ablate", "run an ablation grid")
    s.add_argument("--manifest", required=True)
    s.add_argument("--recon-checkpoint")
    s.add_argument("--out", required=True)
    s.add_argument("--axes", default="heads,pfm,attention",
                   help="comma-separated axes from: heads, pfm, attention, backbone, tier")
    s.add_argument("--axis-values", action="append", default=[], metavar="AXIS=V1,V2",
                   help="override the values of one axis (repeatable)")

    s = verb("embed", "export embeddings for visualisation")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--recon-checkpoint")
    s.add_argument("--layer", default="fused", choices=("fused", "rgb_branch"))
    s.add_argument("--split", default="test")
    s.add_argument("--out", required=True, help="embedding file")
    return p


def split_overrides(rest: Sequence[str]) -> dict[str, str]:
    """Turn leftover ``--section.key value`` / ``--section.key=value`` pairs into a dict."""
    keys = schema()
    out: dict[str, str] = {}
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        name, eq, value = tok[2:].partition("=")
        if name not in keys:
            close = difflib.get_close_matches(name, list(keys), n=1)
            hint = f" (did you mean --{close[0]}?)" if close else ""
            raise UsageError(f"unknown option --{name}{hint}")
        if not eq:
            if i + 1 >= len(rest):
                raise UsageError(f"--{name} needs a value")
            value = rest[i + 1]
            i += 1
        out[name] = value
        i += 1
    return out


def snapshot(cfg: Config, target: Path, extra: dict | None = None) -> Path:
    """Write config.json (+ config.txt and invocation.json) into ``target``."""
    target.mkdir(parents=True, exist_ok=True)
    (target / "config.json").write_text(cfg.to_json() + "\n")
    write_config_file(cfg, target / "config.txt")
    if extra is not None:
        (target / "invocation.json").write_text(json.dumps(extra, indent=2, sort_keys=True) + "\n")
    return target


def _require(value, flag: str) -> str:
    if not value:
        raise M3DError(f"missing required input {flag}")
    return value


def _load_data(manifest: str, cfg: Config):
    from .datakit import FaceSet

    return FaceSet.from_manifest(manifest, cfg.recon.image_size)


def run(args, cfg: Config, argv: Sequence[str]) -> int:
    invocation = {"argv": list(argv), "seed": cfg.train.seed}
    if args.verb == "synth":
        from .datakit import SynthFaceSpec, synth_faces

        out = snapshot(cfg, Path(args.out), invocation)
        size = args.image_size or cfg.recon.image_size
        ds = synth_faces(SynthFaceSpec(args.count, size, args.tamper, args.seed))
        manifest = ds.write(out)
        print(f"wrote {len(ds)} images and {len(ds.depth)} sidecars; manifest {manifest}")
    elif args.verb == "pretrain":
        from .trainer import pretrain_recon

        out = snapshot(cfg, Path(args.out), invocation)
        res = pretrain_recon(cfg.with_overrides({"train.phase": "pretrain"}).validate(),
                             _load_data(args.manifest, cfg), out, resume=args.resume,
                             on_epoch=lambda r: log.info("epoch %d  L_rec %.4f", r["epoch"], r["l_rec_mean"]))
        print(f"recon checkpoint {res.checkpoint}")
    elif args.verb == "train":
        from .trainer import train_detector

        out = snapshot(cfg, Path(args.out), invocation)
        recon = _require(args.recon_checkpoint, "--recon-checkpoint")
        res = train_detector(cfg, _load_data(args.manifest, cfg), recon, out, resume=args.resume,
                             on_epoch=lambda r: log.info("epoch %d  loss %.4f  train AUC %s  val AUC %s",
                                                         r["epoch"], r["loss_mean"], r["train_auc"],
                                                         r["val_auc"]))
        print(f"detector checkpoint {res.checkpoint} (best: {res.best_checkpoint})")
    elif args.verb == "eval":
        from .evalkit import evaluate

        out = snapshot(cfg, Path(args.out), invocation)
        report = evaluate(args.checkpoint, args.manifest, args.split, args.recon_checkpoint,
                          cfg.recon.image_size)
        report.write(out)
        print(report.table(), end="")
    elif args.verb == "ablate":
        from .evalkit.ablation import AXES, DEFAULT_AXES, run_ablation

        out = snapshot(cfg, Path(args.out), invocation)
        recon = _require(args.recon_checkpoint, "--recon-checkpoint")
        axes = {}
        for name in (a.strip() for a in args.axes.split(",") if a.strip()):
            if name not in AXES:
                raise UsageError(f"unknown ablation axis {name!r}; choose from {sorted(AXES)}")
            axes[name] = DEFAULT_AXES.get(name)
        for spec in args.axis_values:
            name, _, values = spec.partition("=")
            if name not in axes:
                raise UsageError(f"--axis-values names axis {name!r} which is not in --axes")
            axes[name] = [v for v in values.split(",") if v]
        missing = [n for n, v in axes.items() if not v]
        if missing:
            raise UsageError(f"axes {missing} have no default values; give them with --axis-values")
        grid = run_ablation(axes, cfg, _load_data(args.manifest, cfg), recon, out)
        print(grid.table(), end="")
        failed = [c for c in grid.cells if c.status != "ok"]
        if failed:
            print(f"{len(failed)} cell(s) failed; see {out / 'grid.json'}", file=sys.stderr)
    elif args.verb == "embed":
        from .evalkit import export_embeddings
        from .trainer import load_detector

        target = Path(args.out)
        snapshot(cfg, target.parent / f"{target.stem}_run", invocation)
        model = load_detector(args.checkpoint, args.recon_checkpoint)
        data = _load_data(args.manifest, model.cfg)
        path = export_embeddings(model, data, args.layer, target, args.split or None)
        print(f"wrote embeddings to {path}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _parser()
    try:
        if argv and not argv[0].startswith("-") and argv[0] not in VERBS:
            close = difflib.get_close_matches(argv[0], VERBS, n=1)
            hint = f"; did you mean {close[0]!r}?" if close else ""
            raise UsageError(f"unknown command {argv[0]!r}{hint} (choose from {', '.join(VERBS)})")
        args, rest = parser.parse_known_args(argv)
        if args.help_config:
            print(describe_schema())
            return 0
        if not args.verb:
            parser.print_help(sys.stderr)
            return 2
        overrides = split_overrides(rest)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, overrides)
        return run(args, cfg, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (M3DError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
