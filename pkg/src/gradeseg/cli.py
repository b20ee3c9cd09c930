"""Command-line interface: ``gradeseg generate|run|report|compare|curves``.

All outputs live under the output directory (``-o``)::

    config.json                resolved configuration, every seed included
    cohort/manifest.tsv        <id> TAB <relative path> TAB <grade>
    cohort/subjects/<id>/      meta, image.f32, labels.u8
    folds.tsv                  subject -> fold
    runs/index.tsv             train/test ids of every (regime, fold) run
    runs/<regime>/<fold>/      epoch_<e>.ckpt, losses.csv
    report/                    scores.csv, table.txt, table.csv, curves/
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cfgmod
from .dataset import MANIFEST_NAME, Grade, PhantomConfig, generate_cohort, read_cohort, write_cohort
from .errors import ConfigurationError, GradesegError, ManifestError
from .report import curve_table, plot_curves, render_curve_csv, format_cell, write_report
from .stats import REGIONS, STRATIFIED, Comparison, ScoreTable, compare, score_runs
from .training import FoldPlan, Regime, make_folds, read_manifest, run_all, write_fold_plan

log = logging.getLogger("gradeseg")

COHORT_DIR = "cohort"
RUNS_DIR = "runs"
REPORT_DIR = "report"
SCORES_NAME = "scores.csv"
FOLDS_NAME = "folds.tsv"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-o", "--output", default="gradeseg-out", type=Path,
                   help="output directory; every other path is relative to it (default: %(default)s)")
    p.add_argument("-c", "--config", type=Path, help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed; derives data, fold, init and batch seeds")
    p.add_argument("--epochs", type=int, help="training epochs per run")
    p.add_argument("--folds", type=int, help="number of cross-validation folds")
    p.add_argument("--size", type=int,
                   help="phantom image size in pixels (square); lesion radii scale along")
    p.add_argument("--n-hgg", type=int, help="number of HGG subjects")
    p.add_argument("--n-lgg", type=int, help="number of LGG subjects")
    p.add_argument("-v", "--verbose", action="store_true")


def _variant_choices() -> list[str]:
    return [r.value for r in Regime] + [STRATIFIED]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradeseg", description=(
        "Compare grade-stratified and grade-injected segmentation training against a "
        "pooled baseline on a synthetic two-grade tumour cohort."))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate the phantom cohort")
    _add_common(p)

    p = sub.add_parser("run", help="train all regimes on all folds (resumable)")
    _add_common(p)
    p.add_argument("--jobs", type=int, help="parallel (regime, fold) training jobs")

    p = sub.add_parser("report", help="score every checkpoint, write table and curves")
    _add_common(p)
    p.add_argument("--epoch", type=int, help="epoch for the headline table (default: last)")

    for name, text in (("compare", "ad-hoc paired comparison of two regimes"),
                       ("curves", "per-epoch better-ratio curves for two regimes")):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        p.add_argument("--variant", required=True, choices=_variant_choices())
        p.add_argument("--baseline", default=Regime.BASELINE.value, choices=_variant_choices())
        p.add_argument("--grade", choices=["HGG", "LGG"], help="restrict to subjects of one grade")
        if name == "compare":
            p.add_argument("--epoch", type=int, help="epoch to compare (default: last)")
    return parser


def rescale_phantom(phantom: PhantomConfig, size: int) -> PhantomConfig:
    """Change the image size, scaling the lesion radius ranges along with it."""
    f = size / phantom.image_size
    return replace(phantom, image_size=size,
                   edema_radius_range=tuple(r * f for r in phantom.edema_radius_range),
                   core_radius_range=tuple(r * f for r in phantom.core_radius_range))


def resolve_config(args: argparse.Namespace) -> cfgmod.ExperimentConfig:
    """defaults < saved config.json in the output dir < --config < flags."""
    cfg = cfgmod.ExperimentConfig()
    saved = args.output / cfgmod.CONFIG_NAME
    if saved.exists():
        cfg = cfgmod.load(saved, cfg)
    if args.config is not None:
        cfg = cfgmod.load(args.config, cfg)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.folds is not None:
        cfg = replace(cfg, folds=args.folds)
    if args.n_hgg is not None:
        cfg = replace(cfg, n_hgg=args.n_hgg)
    if args.n_lgg is not None:
        cfg = replace(cfg, n_lgg=args.n_lgg)
    if args.epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    if args.size is not None:
        cfg = replace(cfg, phantom=rescale_phantom(cfg.phantom, args.size))
    if getattr(args, "jobs", None) is not None:
        cfg = replace(cfg, jobs=args.jobs)
    cfg.validate()
    return cfg


def _write_config(cfg: cfgmod.ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out)


def _load_cohort(out: Path):
    if not (out / COHORT_DIR / MANIFEST_NAME).exists():
        raise ManifestError(f"no cohort at {out / COHORT_DIR}; run `gradeseg generate -o {out}` first")
    return read_cohort(out / COHORT_DIR)


def cmd_generate(cfg: cfgmod.ExperimentConfig, out: Path) -> Path:
    _write_config(cfg, out)
    r = cfg.resolved()
    cohort = generate_cohort(r.phantom, r.n_hgg, r.n_lgg)
    manifest = write_cohort(cohort, out / COHORT_DIR)
    log.info("wrote %d subjects (%d HGG, %d LGG) to %s", len(cohort), r.n_hgg, r.n_lgg, manifest)
    return manifest


def cmd_run(cfg: cfgmod.ExperimentConfig, out: Path):
    cohort = _load_cohort(out)
    _write_config(cfg, out)
    r = cfg.resolved()
    plan = make_folds(cohort, r.folds, r.seeds()["folds"])
    write_fold_plan(plan, out / FOLDS_NAME)
    return run_all(cohort, cfg.spec(4), cfg.spec(5), r.train, plan, out / RUNS_DIR, jobs=cfg.jobs)


def _scores(out: Path, cohort) -> ScoreTable:
    manifest = read_manifest(out / RUNS_DIR)
    table = score_runs(manifest, cohort)
    (out / REPORT_DIR).mkdir(parents=True, exist_ok=True)
    table.to_csv(out / REPORT_DIR / SCORES_NAME)
    return table


def _cached_scores(out: Path, cohort) -> ScoreTable:
    path = out / REPORT_DIR / SCORES_NAME
    if path.exists():
        return ScoreTable.from_csv(path)
    return _scores(out, cohort)


def cmd_report(cfg: cfgmod.ExperimentConfig, out: Path, epoch: int | None = None) -> dict[str, Path]:
    cohort = _load_cohort(out)
    table = _scores(out, cohort)
    if epoch is not None and epoch not in table.epochs:
        raise ConfigurationError(f"epoch {epoch} not in 1..{table.epochs[-1]}")
    grades = {s.id: s.grade.value for s in cohort}
    written = write_report(table, grades, out / REPORT_DIR, epoch)
    written["scores"] = out / REPORT_DIR / SCORES_NAME
    return written


def _adhoc(args: argparse.Namespace) -> Comparison:
    grade = args.grade
    if args.variant == Regime.HGG_ONLY.value or args.baseline == Regime.HGG_ONLY.value:
        grade = grade or Grade.HGG.value
    if args.variant == Regime.LGG_ONLY.value or args.baseline == Regime.LGG_ONLY.value:
        grade = grade or Grade.LGG.value
    slug = f"{args.variant}_vs_{args.baseline}".lower() + (f"_{grade.lower()}" if grade else "")
    return Comparison(f"{args.variant} vs. {args.baseline}", slug, args.variant, grade)


def cmd_compare(out: Path, args: argparse.Namespace) -> str:
    cohort = _load_cohort(out)
    table = _cached_scores(out, cohort)
    comparison = _adhoc(args)
    grades = {s.id: s.grade.value for s in cohort}
    epoch = args.epoch or table.epochs[-1]
    results = compare(table, comparison.variant, args.baseline, comparison.subjects(grades), epoch)
    lines = [f"{comparison.label} (epoch {epoch}, {comparison.grade or 'all'} subjects)"]
    for region in REGIONS:
        r = results[region]
        lines.append(f"  {region.value:<6} n={r.n:<4} W={r.w_statistic:<8g} {format_cell(r)}")
    return "\n".join(lines)


def cmd_curves(out: Path, args: argparse.Namespace) -> str:
    cohort = _load_cohort(out)
    table = _cached_scores(out, cohort)
    comparison = _adhoc(args)
    grades = {s.id: s.grade.value for s in cohort}
    curves = curve_table(table, comparison, grades, baseline=args.baseline)
    directory = out / REPORT_DIR / "curves"
    directory.mkdir(parents=True, exist_ok=True)
    text = render_curve_csv(curves)
    (directory / f"{comparison.slug}.csv").write_text(text, encoding="utf-8")
    plot_curves(curves, comparison.label, directory / f"{comparison.slug}.svg")
    return text


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    out = args.output
    try:
        cfg = resolve_config(args)
        if args.command == "generate":
            print(cmd_generate(cfg, out))
        elif args.command == "run":
            manifest = cmd_run(cfg, out)
            print(f"{len(manifest.records)} runs complete under {out / RUNS_DIR}")
        elif args.command == "report":
            written = cmd_report(cfg, out, args.epoch)
            print((out / REPORT_DIR / "table.txt").read_text(encoding="utf-8"), end="")
            log.info("wrote %d report files under %s", len(written), out / REPORT_DIR)
        elif args.command == "compare":
            print(cmd_compare(out, args))
        elif args.command == "curves":
            print(cmd_curves(out, args), end="")
    except (GradesegError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        where = f" {exc.filename}" if exc.filename else ""
        print(f"error:{where}: {exc.strerror or exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
