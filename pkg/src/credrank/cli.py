"""Command-line entry point: one subcommand per pipeline stage.

Stages and the artifacts they leave in the workdir::

    synth      synth/*.{txt,jsonl,csv}        generated input files
    ingest     ingest.v1.json                 bags of words, mentions, date window
    lda        lda.v1.bin                     topic model dump and keyword grid
    featurize  features.v1.csv                data1, data2, data3 per company
    train      train.v1.bin, train.v1.loss.txt, train.v1.weights.pgm
    rank       rank.v1.csv
    verify     verify.v1.json

Every artifact records the hash of the config sections that produced it.
A stage refuses an upstream artifact whose hash differs from the current
config unless ``--force`` is given. Exit status is 0 on success, 1 on a user
error (bad input, missing or stale artifact, bad config) and 2 otherwise.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as dt
import fcntl
import json
import os
import sys
import traceback
from dataclasses import replace

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config, resolve
from .corpus import load_articles, load_companies
from .errors import ArtifactError, CredrankError
from .features import dump_features, export_pgm, featurize_companies, load_features, rescale_unit
from .lda import fit_lda, keyword_grid, load_model, save_model
from .lexicon import BagOfWords, load_lexicon
from .network import gradient_check, init_params, load_checkpoint, save_checkpoint, sum_first_layer_weights
from .pipeline import Featurized, Ingested, images_from, ingest, negative_targets, verification_report
from .synth import generate
from .training import Ranking, TrainedScorer, fit_scorer, load_ranking, load_ratings, rank_with
from .verify import load_investigations, report_json

ENV_WORKDIR = "CREDRANK_WORKDIR"
LOCK_NAME = ".credrank.lock"
GRADCHECK_TOLERANCE = 1e-4

ARTIFACTS = {
    "ingest": "ingest.v1.json",
    "lda": "lda.v1.bin",
    "featurize": "features.v1.csv",
    "train": "train.v1.bin",
    "rank": "rank.v1.csv",
    "verify": "verify.v1.json",
}
LOSS_FILE = "train.v1.loss.txt"
WEIGHTS_FILE = "train.v1.weights.pgm"

# config sections each stage's output depends on
STAGE_SECTIONS = {
    "ingest": ("paths",),
    "lda": ("paths", "lda"),
    "featurize": ("paths", "lda", "features"),
    "train": ("paths", "lda", "features", "network", "train"),
    "rank": ("paths", "lda", "features", "network", "train"),
    "verify": ("paths", "lda", "features", "network", "train", "verify"),
}


class UsageError(CredrankError):
    pass


class Context:
    def __init__(self, cfg: PipelineConfig, workdir: str, force: bool):
        self.cfg = cfg
        self.workdir = workdir
        self.force = force

    def path(self, stage_or_name: str) -> str:
        return os.path.join(self.workdir, ARTIFACTS.get(stage_or_name, stage_or_name))

    def input(self, kind: str) -> str:
        path = resolve(self.workdir, getattr(self.cfg.paths, kind))
        if not os.path.exists(path):
            raise UsageError(f"{kind} file not found: {path}")
        return path

    def hash(self, stage: str) -> str:
        return self.cfg.stage_hash(*STAGE_SECTIONS[stage])

    def need(self, stage: str, upstream: str) -> str:
        path = self.path(upstream)
        if not os.path.exists(path):
            raise ArtifactError(stage, f"missing upstream artifact {os.path.basename(path)} "
                                       f"(run the '{upstream}' stage first)")
        return path

    def check_hash(self, stage: str, upstream: str, found: str | None) -> None:
        expected = self.hash(upstream)
        if found != expected and not self.force:
            raise ArtifactError(stage, f"{ARTIFACTS[upstream]} was built with config hash {found}, the current "
                                       f"config gives {expected}; rerun '{upstream}' or pass --force")


def _write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _comment_header(stage: str, **fields) -> str:
    parts = " ".join(f"{k}={v}" for k, v in fields.items())
    return f"# credrank {stage} v1 {parts}\n"


def _parse_comment_header(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first.startswith("# credrank "):
        return {}
    return dict(p.split("=", 1) for p in first.split()[4:] if "=" in p)


# ---- artifact readers -------------------------------------------------------

def read_ingested(ctx: Context, stage: str) -> Ingested:
    path = ctx.need(stage, "ingest")
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    ctx.check_hash(stage, "ingest", data.get("config_hash"))
    first, last = (dt.date.fromisoformat(d) for d in data["date_window"])
    return Ingested(data["article_ids"], [BagOfWords(b) for b in data["bags"]],
                    data["mentions"], (first, last))


def read_topics(ctx: Context, stage: str):
    path = ctx.need(stage, "lda")
    model, extra = load_model(path)
    ctx.check_hash(stage, "lda", extra.get("config_hash"))
    return model, extra["keywords"]


def read_features(ctx: Context, stage: str) -> Featurized:
    path = ctx.need(stage, "featurize")
    meta = _parse_comment_header(path)
    ctx.check_hash(stage, "featurize", meta.get("hash"))
    with open(path, encoding="utf-8") as fh:
        feats = load_features(fh.read(), int(meta.get("K", ctx.cfg.lda.K)))
    return images_from(feats, ctx.cfg.features)


def read_scorer(ctx: Context, stage: str) -> TrainedScorer:
    path = ctx.need(stage, "train")
    params, extra = load_checkpoint(path)
    ctx.check_hash(stage, "train", extra.get("config_hash"))
    return TrainedScorer(params, int(extra["data1_ref"]), [])


def read_ranking(ctx: Context, stage: str) -> Ranking:
    path = ctx.need(stage, "rank")
    ctx.check_hash(stage, "rank", _parse_comment_header(path).get("hash"))
    with open(path, encoding="utf-8") as fh:
        return load_ranking(fh.read())


def _company_ids(ctx: Context) -> list:
    return [c.id for c in load_companies(ctx.input("companies"))]


# ---- stages -----------------------------------------------------------------

def cmd_synth(ctx: Context, args) -> str:
    synth_cfg = ctx.cfg.synth
    if args.signal is not None:
        synth_cfg = replace(synth_cfg, credibility_signal_strength=args.signal)
    world = generate(synth_cfg)
    for kind, (_, method) in world.FILES.items():
        path = resolve(ctx.workdir, getattr(ctx.cfg.paths, kind))
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        _write_text(path, getattr(world, method)())
    return (f"synth: {len(world.articles)} articles, {len(world.companies)} companies, "
            f"{len(world.rated_ids)} rated, {len(world.investigation_rows)} investigations")


def cmd_ingest(ctx: Context, args) -> str:
    lexicon = load_lexicon(ctx.input("lexicon"))
    articles = load_articles(ctx.input("articles"))
    companies = load_companies(ctx.input("companies"))
    ing = ingest(lexicon, articles, companies)
    payload = {
        "stage": "ingest", "version": 1, "config_hash": ctx.hash("ingest"),
        "article_ids": ing.article_ids,
        "bags": [dict(sorted(b.counts.items())) for b in ing.bags],
        "mentions": ing.mentions,
        "date_window": [d.isoformat() for d in ing.date_window],
    }
    _write_text(ctx.path("ingest"), json.dumps(payload, sort_keys=True, ensure_ascii=False) + "\n")
    unmentioned = sum(1 for ids in ing.mentions.values() if not ids)
    return (f"ingest: {len(ing.bags)} articles, {sum(b.total for b in ing.bags)} tokens, "
            f"{len(ing.mentions)} companies ({unmentioned} unmentioned)")


def cmd_lda(ctx: Context, args) -> str:
    ing = read_ingested(ctx, "lda")
    model = fit_lda(ing.bags, ctx.cfg.lda)
    keywords = keyword_grid(model)
    save_model(model, ctx.path("lda"), extra={"config_hash": ctx.hash("lda"), "keywords": keywords})
    return f"lda: K={model.K}, V={model.V}, {model.words.size} tokens, {model.iterations} sweeps"


def cmd_featurize(ctx: Context, args) -> str:
    ing = read_ingested(ctx, "featurize")
    model, keywords = read_topics(ctx, "featurize")
    feats = featurize_companies(ing.mentions, model, keywords, ing.bags)
    header = _comment_header("featurize", hash=ctx.hash("featurize"), K=model.K)
    _write_text(ctx.path("featurize"), header + dump_features(feats))
    return f"featurize: {len(feats)} companies, images {model.K}x11"


def cmd_train(ctx: Context, args) -> str:
    fz = read_features(ctx, "train")
    ratings = load_ratings(ctx.input("ratings"), _company_ids(ctx))
    scorer = fit_scorer(fz.images, fz.data1, ratings.ratings, ctx.cfg.network, ctx.cfg.train)
    save_checkpoint(scorer.params, ctx.path("train"),
                    extra={"config_hash": ctx.hash("train"), "data1_ref": scorer.data1_ref})
    _write_text(ctx.path(LOSS_FILE), "".join(f"{v!r}\n" for v in scorer.loss_history))
    export_pgm(rescale_unit(sum_first_layer_weights(scorer.params)), ctx.path(WEIGHTS_FILE))
    h = scorer.loss_history
    return f"train: {len(ratings)} rated companies, loss {h[0]:.6f} -> {h[-1]:.6f} over {len(h)} epochs"


def cmd_rank(ctx: Context, args) -> str:
    scorer = read_scorer(ctx, "rank")
    fz = read_features(ctx, "rank")
    ranking = rank_with(scorer, fz.images, fz.data1)
    _write_text(ctx.path("rank"), _comment_header("rank", hash=ctx.hash("rank")) + ranking.to_csv())
    top = ranking.entries[0] if len(ranking) else ("-", float("nan"))
    return f"rank: {len(ranking)} companies ranked, top {top[0]} ({top[1]:.6f})"


def cmd_verify(ctx: Context, args) -> str:
    ing = read_ingested(ctx, "verify")
    fz = read_features(ctx, "verify")
    ranking = read_ranking(ctx, "verify")
    ids = _company_ids(ctx)
    ratings = load_ratings(ctx.input("ratings"), ids)
    records = load_investigations(ctx.input("investigations"), ids)
    negatives = negative_targets(records, fz, ing.date_window)
    report = verification_report(fz, ratings, negatives, ctx.cfg, ranking)
    report["config_hash"] = ctx.hash("verify")
    _write_text(ctx.path("verify"), report_json(report))
    return (f"verify: cv agreement {report['cv_mean']:.4f} (window {report['window']}, "
            f"{report['folds']} folds), spearman {report['spearman']:.4f}, "
            f"uniform baseline {report['uniform_baseline']:.4f}")


def cmd_gradcheck(ctx: Context, args) -> str:
    hyper = ctx.cfg.network
    rng = np.random.default_rng(hyper.seed)
    worst = 0.0
    for i in range(args.samples):
        params = init_params(replace(hyper, seed=hyper.seed + i))
        image = rng.random((hyper.image_rows, hyper.image_cols))
        worst = max(worst, gradient_check(params, image, float(rng.random()), float(rng.random())))
    line = f"gradcheck: max relative error {worst:.3e} over {args.samples} samples"
    if worst > GRADCHECK_TOLERANCE:
        raise GradcheckFailure(line + f" exceeds {GRADCHECK_TOLERANCE:g}")
    return line


class GradcheckFailure(CredrankError):
    pass


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic world into the configured input paths"),
    "ingest": (cmd_ingest, "extract bags of words and company mentions"),
    "lda": (cmd_lda, "fit the topic model"),
    "featurize": (cmd_featurize, "aggregate per-company features"),
    "train": (cmd_train, "train the credibility scorer on ratings"),
    "rank": (cmd_rank, "score and rank every company"),
    "verify": (cmd_verify, "train the negative scorer and measure rank agreement"),
    "gradcheck": (cmd_gradcheck, "compare backpropagation with finite differences"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI config file (flags override its values)")
    common.add_argument("--workdir", metavar="PATH",
                        help=f"artifact directory (default: ${ENV_WORKDIR} or the current directory)")
    common.add_argument("--seed", type=int, help="override every seed in the config")
    common.add_argument("--force", action="store_true", help="accept upstream artifacts built with another config")
    parser = argparse.ArgumentParser(prog="credrank", description="Company credibility ranking pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "synth":
            p.add_argument("--signal", type=float, help="credibility signal strength in [0, 1]")
        if name == "gradcheck":
            p.add_argument("--samples", type=int, default=3, help="random (params, input) draws")
    return parser


@contextlib.contextmanager
def workdir_lock(workdir: str):
    os.makedirs(workdir, exist_ok=True)
    with open(os.path.join(workdir, LOCK_NAME), "w") as fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise UsageError(f"another credrank command is running in {workdir}") from None
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        workdir = args.workdir or os.environ.get(ENV_WORKDIR) or os.getcwd()
        ctx = Context(cfg, os.path.abspath(workdir), args.force)
        handler = COMMANDS[args.command][0]
        with workdir_lock(ctx.workdir):
            summary = handler(ctx, args)
    except (CredrankError, OSError, ValueError) as exc:
        print(f"credrank {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2
    print(summary)
    return 0
