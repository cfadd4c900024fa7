"""``cffont`` command-line tool.

Exit status: 0 on success, 1 for invalid input (arguments, config, files),
2 for runtime or numerical failures.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .errors import (CFFontError, DimensionMismatchError, ImageFormatError, ValidationError)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
INPUT_ERRORS = (ValidationError, ImageFormatError, DimensionMismatchError, FileNotFoundError)

log = logging.getLogger("cffont")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _parse_sets(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _config(args, **extra):
    overrides = _parse_sets(args.set)
    overrides.update({k: v for k, v in extra.items() if v is not None})
    return load_config(args.config, overrides)


def _context(args, **extra):
    from .pipeline import RunContext
    return RunContext(_config(args, **extra))


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p


# --- subcommands -----------------------------------------------------------------

def cmd_gen_dataset(args) -> int:
    from .glyphgen import build_dataset, default_alphabet
    cfg = _config(args)
    out = Path(args.out) if args.out else Path(cfg.out_dir) / "dataset"
    manifest = build_dataset(cfg.n_fonts, default_alphabet(), out, seed=cfg.seed, size=cfg.image_size,
                             overwrite=args.overwrite, ranges=cfg.font_ranges())
    print(f"wrote {len(manifest.rows)} glyphs for {len(manifest.fonts())} fonts to {out}")
    return EXIT_OK


def cmd_project(args) -> int:
    from .glyphgen import read_pgm
    from .projection import make_plan, project
    img = read_pgm(_require_file(args.image))
    plan = make_plan(img.height, img.width, args.directions)
    dist = project(img, plan)
    hist = dist.normalized if args.normalized else dist.hist
    lines = ["direction\ttheta\tbin\tvalue"]
    for p, theta in enumerate(plan.thetas):
        lines += [f"{p}\t{float(theta)!r}\t{b}\t{float(hist[p, b])!r}" for b in range(plan.n_bins)]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_pcl(args) -> int:
    if args.grad_check:
        from .gradcheck import check_model, check_pcl
        results = [check_pcl(v, n_cases=args.cases, seed=args.seed) for v in ("wdl", "kl")]
        if args.model:
            results += [check_model(n_cases=args.cases, variant=v, seed=args.seed) for v in ("wdl", "kl")]
        print("check\tcoords\tfraction_ok\tworst_rel_err\tstatus")
        ok = True
        for r in results:
            passed = r.passed()
            ok &= passed
            print(f"{r.name}\t{r.n_coords}\t{r.fraction_ok:.6f}\t{r.worst:.3e}\t{'PASS' if passed else 'FAIL'}")
        return EXIT_OK if ok else EXIT_RUNTIME
    if not (args.generated and args.truth):
        raise ValidationError("pcl needs GENERATED and TRUTH images (or --grad-check)")
    from .glyphgen import read_pgm
    from .pcl import PclConfig, pcl
    gen = read_pgm(_require_file(args.generated))
    gt = read_pgm(_require_file(args.truth), expected_shape=gen.shape)
    cfg = PclConfig.for_size(gen.height, gen.width, args.variant, args.directions)
    print(repr(pcl(gen, gt, cfg).value))
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import run_stage
    ctx = _context(args)
    stage = f"stage{args.stage}"
    ctx.require("dataset")
    if args.stage == 2:
        ctx.require("stage1")
        ctx.require("weights")
    run_stage(ctx, stage, force=True)
    print(f"{stage}: {ctx.iterations_run} iterations, checkpoint {ctx.path(stage)}, "
          f"log {ctx.root / (stage + '_log.tsv')}")
    return EXIT_OK


def cmd_basis(args) -> int:
    from .pipeline import run_stage
    ctx = _context(args)
    ctx.require("stage1")
    run_stage(ctx, "profiles", force=True)
    run_stage(ctx, "basis", force=True)
    sys.stdout.write(ctx.path("basis").read_text())
    return EXIT_OK


def cmd_fuse_weights(args) -> int:
    from .fusion import weight_report
    from .pipeline import compute_weights
    ctx = _context(args, tau=args.tau)
    ctx.require("profiles")
    ctx.require("basis")
    text = weight_report(compute_weights(ctx), ctx.basis_ids())
    if args.out:
        Path(args.out).write_text(text)
    else:
        ctx.path("weights").write_text(text)
        sys.stdout.write(text)
    return EXIT_OK


def cmd_isr(args) -> int:
    from .isr import save_style
    from .pipeline import refine_font, run_stage
    ctx = _context(args)
    for stage in ("stage2", "weights"):
        ctx.require(stage)
    if args.font is None:
        run_stage(ctx, "isr", force=True)
        sys.stdout.write(ctx.path("isr").read_text())
        return EXIT_OK
    if args.font not in ctx.manifest.fonts():
        raise ValidationError(f"unknown font {args.font!r}")
    run = refine_font(ctx, args.font)
    if args.out:
        save_style(run.refined, args.out)
    sys.stdout.write("epoch\tloss\n" + "".join(f"{e}\t{v!r}\n" for e, v in enumerate(run.trace)))
    return EXIT_OK


def read_pairs(path) -> list[tuple[str, Path, Path]]:
    """``generated<TAB>truth`` rows (header optional); relative paths resolve
    against the pairs file's directory."""
    path = _require_file(path)
    base = path.parent
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cells = line.split("\t")
        if len(cells) != 2:
            raise ValidationError(f"{path}:{lineno}: expected 2 tab-separated columns")
        if lineno == 1 and cells == ["generated", "truth"]:
            continue
        gen, truth = (base / c if not Path(c).is_absolute() else Path(c) for c in cells)
        rows.append((cells[0], _require_file(gen), _require_file(truth)))
    if not rows:
        raise ValidationError(f"{path}: no image pairs")
    return rows


def cmd_eval(args) -> int:
    if args.pairs is None:
        from .pipeline import run_stage
        ctx = _context(args)
        ctx.require("isr")
        run_stage(ctx, "eval", force=True)
        _emit(ctx.path("eval").read_text(), args.out)
        return EXIT_OK
    from .glyphgen import read_pgm
    from .metrics import MetricReport
    rows = read_pairs(args.pairs)
    report = MetricReport()
    for name, gen_path, truth_path in rows:
        gen = read_pgm(gen_path)
        report.add(name, gen, read_pgm(truth_path, expected_shape=gen.shape))
    _emit(report.to_tsv(), args.out)
    return EXIT_OK


def _candidates(spec) -> tuple[list, list]:
    from .glyphgen import read_pgm
    p = Path(spec)
    if p.is_dir():
        files = sorted(p.glob("*.pgm"))
        ids = [f.stem for f in files]
    else:
        ids, files = [], []
        base = _require_file(p).parent
        for lineno, line in enumerate(p.read_text().splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            cells = line.split("\t")
            if len(cells) != 2:
                raise ValidationError(f"{p}:{lineno}: expected 'id<TAB>path'")
            ids.append(cells[0])
            files.append(_require_file(base / cells[1]))
    return ids, [read_pgm(f) for f in files]


def cmd_retrieve(args) -> int:
    from .experiments import RETRIEVAL_METRICS, RetrievalBenchmark, format_ranking, retrieve
    if args.benchmark:
        rates = RetrievalBenchmark(n_trials=args.trials, seed=args.seed).run()
        _emit("metric\ttop1_same_skeleton\n" + "".join(f"{m}\t{rates[m]:.4f}\n" for m in RETRIEVAL_METRICS),
              args.out)
        return EXIT_OK
    if not (args.query and args.candidates):
        raise ValidationError("retrieve needs --query and --candidates (or --benchmark)")
    from .glyphgen import read_pgm
    query = read_pgm(_require_file(args.query))
    ids, cands = _candidates(args.candidates)
    if not cands:
        raise ValidationError("empty candidate set")
    for cid, c in zip(ids, cands):
        if c.shape != query.shape:
            raise ValidationError(f"candidate {cid} is {c.shape}, query is {query.shape}")
    ranking = retrieve(query, cands, ids, args.metric, args.k, args.directions)
    _emit(format_ranking(ranking, args.metric), args.out)
    return EXIT_OK


def cmd_ablation(args) -> int:
    from .pipeline import run_ablation
    ctx = _context(args)
    for stage in ("stage2", "profiles", "basis", "weights"):
        ctx.require(stage)
    if args.use_isr:
        ctx.require("isr")
    if args.tau is not None and not args.tau > 0:
        raise ValidationError("--tau must be positive")
    text = run_ablation(ctx, tau=args.tau, use_isr=args.use_isr).to_tsv()
    (ctx.root / "ablation.tsv").write_text(text)
    _emit(text, args.out)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    from .pipeline import STAGES, run_pipeline
    if args.until is not None and args.until not in STAGES:
        raise ValidationError(f"--until must be one of {STAGES}")
    ctx = run_pipeline(_config(args), force=args.force, until=args.until)
    print(f"pipeline complete in {ctx.root} ({ctx.iterations_run} training iterations run)")
    return EXIT_OK


# --- parser -------------------------------------------------------------------------

def _add_common(parser, default) -> None:
    parser.add_argument("--config", default=default, help="key = value config file")
    parser.add_argument("--set", action="append", default=default, metavar="KEY=VALUE",
                        help="override one config key (repeatable; wins over file and CFK_* env vars)")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=False if default is None else default, help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    # accepted before or after the subcommand; the subcommand copy only sets
    # values that were actually given
    common = argparse.ArgumentParser(add_help=False)
    _add_common(common, argparse.SUPPRESS)

    parser = _Parser(prog="cffont", description="Content-fusion few-shot glyph toolkit on synthetic fonts.")
    _add_common(parser, None)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-dataset", parents=[common], help="render the synthetic font dataset")
    p.add_argument("--out", help="dataset directory (default: <out_dir>/dataset)")
    p.add_argument("--overwrite", action="store_true", help="allow writing into a non-empty directory")
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("project", parents=[common], help="dump projection histograms of a PGM as TSV")
    p.add_argument("image")
    p.add_argument("--directions", type=int, default=12)
    p.add_argument("--normalized", action="store_true", help="divide each direction by its mass")
    p.add_argument("--out", help="write TSV here instead of stdout")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("pcl", parents=[common], help="projected character loss between two PGMs")
    p.add_argument("generated", nargs="?")
    p.add_argument("truth", nargs="?")
    p.add_argument("--variant", choices=("wdl", "kl"), default="wdl")
    p.add_argument("--directions", type=int, default=12)
    p.add_argument("--grad-check", action="store_true", help="run the finite-difference gradient suite")
    p.add_argument("--model", action="store_true", help="with --grad-check, also check the toy model")
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pcl)

    p = sub.add_parser("train", parents=[common], help="run one training stage")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("basis", parents=[common], help="content profiles and K-Medoids basis fonts")
    p.set_defaults(func=cmd_basis)

    p = sub.add_parser("fuse-weights", parents=[common], help="fusion weights for every font")
    p.add_argument("--tau", type=float, help="softmax temperature (default: config tau)")
    p.add_argument("--out", help="write TSV here instead of <out_dir>/weights.tsv")
    p.set_defaults(func=cmd_fuse_weights)

    p = sub.add_parser("isr", parents=[common], help="iterative style-vector refinement")
    p.add_argument("--font", help="refine one font and print its loss trace (default: all held-out fonts)")
    p.add_argument("--out", help="with --font, write the refined style vector here")
    p.set_defaults(func=cmd_isr)

    p = sub.add_parser("eval", parents=[common], help="L1 / RMSE / SSIM report")
    p.add_argument("--pairs", help="TSV of generated<TAB>truth PGM paths (default: evaluate the run)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", parents=[common], help="rank candidate glyphs by distance to a query")
    p.add_argument("--query")
    p.add_argument("--candidates", help="directory of PGMs or TSV of id<TAB>path")
    p.add_argument("--metric", choices=("l1", "pc-wdl", "pc-kl"), default="pc-wdl")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--directions", type=int, default=12)
    p.add_argument("--benchmark", action="store_true", help="run the constructed retrieval benchmark")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("ablation", parents=[common], help="source vs retrieval vs fusion on held-out fonts")
    p.add_argument("--tau", type=float)
    p.add_argument("--use-isr", action="store_true", help="use refined style vectors instead of the mean init")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("pipeline", parents=[common], help="run every stage, skipping finished ones")
    p.add_argument("--force", action="store_true", help="rerun every stage")
    p.add_argument("--until", help="stop after this stage")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"cffont: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (CFFontError, OSError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"cffont: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
