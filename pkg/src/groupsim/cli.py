"""Command-line driver.

Stages write artifacts under ``output_dir``::

    split.json                  held-out items and candidate lists
    metapaths.json, alignment.json
    profiles/<user>.json
    groups/<group>.json         topics, neighbours, leader
    results/<strategy>.jsonl    one record per group
    results/<strategy>.telemetry.json
    transcripts/<group>.json    dynamic discussions
    report.json, report.txt

Exit codes: 0 success, 1 usage, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import yaml

from . import dataset as ds
from .config import ConfigError, RunConfig, load_config
from .evaluation import MetricReport, evaluate, render_table
from .grouping import (
    NO_TOPIC,
    GroupContext,
    GroupContextStore,
    HashEmbedder,
    HttpEmbedder,
    assign_leaders,
    recognize_topics,
)
from .jsonio import read_json, safe_name, write_json, write_text
from .llm import BackendError, HttpBackend, LLMClient, MockBackend, ResponseCache, UnparseableReply
from .llm.http import API_KEY_ENV
from .metapath import MemberAlignment, MetaPathSet, build_metapaths, build_selected_members, rate_all_members
from .profiling import ProfileStore, profile_users
from .simulation import STRATEGIES, build_inputs, error_record, recommend_all, result_record
from .synthetic import make_synthetic

logger = logging.getLogger("groupsim")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3
PIPELINE_STAGES = ("metapath", "profile", "topics", "leaders")


class UsageError(Exception):
    pass


class MissingStage(ds.DataError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2, which we reserve for data errors
        self.print_usage(sys.stderr)
        raise UsageError(message)


@dataclass
class Context:
    cfg: RunConfig
    paths: ds.DataPaths
    digest: str

    @property
    def out(self) -> Path:
        return self.cfg.output_dir

    @property
    def fingerprint(self) -> str:
        return self.cfg.pipeline_fingerprint(self.digest)

    def stamp(self) -> dict:
        return {"fingerprint": self.fingerprint}

    def require(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise MissingStage(f"{stage} artifacts missing (run that stage first): {path}")
        return path

    def load_store(self) -> ds.InteractionStore:
        catalog = ds.load_catalog(self.paths)
        return ds.load_interactions(catalog, self.paths)

    def load_split(self) -> ds.EvaluationSplit:
        manifest = read_json(self.require(self.out / "split.json", "ingest"))
        return ds.apply_manifest(self.load_store(), manifest)

    def client(self) -> LLMClient:
        c = self.cfg.llm
        if c.backend == "mock":
            backend = MockBackend(seed=c.mock_seed)
        else:
            backend = HttpBackend(c.endpoint, c.model)
        cache = ResponseCache(self.cfg.cache_dir) if self.cfg.cache_dir is not None else ResponseCache()
        return LLMClient(
            backend, cache, token_budget=c.token_budget, max_retries=c.max_retries, backoff=c.backoff,
            temperature=c.temperature, max_tokens=c.max_tokens, in_flight_limit=c.in_flight_limit,
        )

    def embedder(self):
        e = self.cfg.embedder
        if e.kind == "http":
            return HttpEmbedder(e.endpoint, e.model, os.environ.get(API_KEY_ENV, ""))
        return HashEmbedder(dim=e.dim, seed=e.seed)


def make_context(args: argparse.Namespace) -> Context:
    overrides = {}
    if getattr(args, "backend", None):
        overrides["llm.backend"] = args.backend
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key] = yaml.safe_load(raw)
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    paths = ds.DataPaths.from_dir(cfg.data_dir)
    for p in paths.all():
        if not p.exists():
            raise ds.DataError(f"missing file: {p}")
    return Context(cfg, paths, ds.data_digest(paths))


# -- commands ---------------------------------------------------------------

def cmd_ingest(ctx: Context) -> int:
    store = ctx.load_store()
    cfg = ctx.cfg
    split = ds.sample_candidates(ds.leave_one_out_split(store), cfg.eval.n_negatives, cfg.seed)
    manifest = {
        **ctx.stamp(),
        "seed": cfg.seed,
        "n_negatives": cfg.eval.n_negatives,
        "data_digest": ctx.digest,
        "counts": {
            "users": len(store.catalog.users), "items": len(store.catalog.items),
            "groups": len(store.catalog.groups), "user_item": int(store.X.nnz),
            "group_item": int(store.Y.nnz), "test_cases": len(split.test_cases),
        },
        **split.manifest(),
    }
    write_json(ctx.out / "split.json", manifest)
    logger.info("split: %d test groups", len(split.test_cases))
    return EXIT_OK


def stage_metapath(ctx: Context) -> None:
    split = ctx.load_split()
    store = split.train
    client = ctx.client()
    ratings = rate_all_members(store, client, workers=ctx.cfg.llm.in_flight_limit)
    selected = build_selected_members(store.catalog, store.B, ratings)
    mps = build_metapaths(store, selected, ctx.cfg.metapath.max_order)
    write_json(ctx.out / "alignment.json", {**ctx.stamp(), **MemberAlignment(ratings, selected).to_json(store.catalog)})
    write_json(ctx.out / "metapaths.json", {**ctx.stamp(), **mps.to_json()})


def profiled_users(store: ds.InteractionStore) -> list[str]:
    return sorted({u for g in store.catalog.groups for u in store.members(g)})


def stage_profile(ctx: Context) -> None:
    mps = MetaPathSet.from_json(read_json(ctx.require(ctx.out / "metapaths.json", "metapath")))
    split = ctx.load_split()
    client = ctx.client()
    profiles = profile_users(
        profiled_users(split.train), mps, split.train.catalog, client,
        keyword_cap=ctx.cfg.profiling.keyword_cap, top_k=ctx.cfg.metapath.top_k,
        workers=ctx.cfg.llm.in_flight_limit,
    )
    store = ProfileStore(ctx.out / "profiles")
    for p in profiles.values():
        store.save(p, **ctx.stamp())


def stage_topics(ctx: Context) -> None:
    split = ctx.load_split()
    if ctx.cfg.topics.enabled:
        contexts = recognize_topics(
            split.train, ctx.client(), top_k=ctx.cfg.neighbors.top_k,
            min_shared=ctx.cfg.neighbors.min_shared, workers=ctx.cfg.llm.in_flight_limit,
        )
    else:
        contexts = {g: GroupContext(g, NO_TOPIC, NO_TOPIC, NO_TOPIC, ()) for g in split.train.catalog.groups}
    store = GroupContextStore(ctx.out / "groups")
    for c in contexts.values():
        store.save(c, **ctx.stamp())


def stage_leaders(ctx: Context) -> None:
    split = ctx.load_split()
    groups = GroupContextStore(ctx.require(ctx.out / "groups", "topics"))
    profiles = ProfileStore(ctx.require(ctx.out / "profiles", "profile"))
    catalog = split.train.catalog
    contexts = {g: groups.load(g) for g in catalog.groups}
    if ctx.cfg.leadership.enabled:
        members = {g: split.train.members(g) for g in catalog.groups}
        keyword_texts = {u: profiles.load(u).keyword_text for u in profiled_users(split.train)}
        contexts = assign_leaders(contexts, members, keyword_texts, ctx.embedder())
    else:
        contexts = {g: GroupContext(c.group_id, c.intra_topic, c.inter_topic, c.topic, c.neighbors)
                    for g, c in contexts.items()}
    for c in contexts.values():
        groups.save(c, **ctx.stamp())
    write_json(ctx.out / "leaders.json", {
        **ctx.stamp(), "enabled": ctx.cfg.leadership.enabled,
        "leaders": {g: c.leader for g, c in sorted(contexts.items())},
    })


STAGE_FUNCS = {
    "metapath": stage_metapath,
    "profile": stage_profile,
    "topics": stage_topics,
    "leaders": stage_leaders,
}


def cmd_pipeline(ctx: Context, stage: str) -> int:
    stages = PIPELINE_STAGES if stage == "all" else (stage,)
    for s in stages:
        logger.info("stage %s", s)
        STAGE_FUNCS[s](ctx)
    return EXIT_OK


def cmd_recommend(ctx: Context, strategy: str | None, out: Path | None = None) -> int:
    cfg = ctx.cfg
    if strategy is not None:
        cfg.simulation.strategy = strategy
    strategy = cfg.simulation.strategy
    split = ctx.load_split()
    profiles_store = ProfileStore(ctx.require(ctx.out / "profiles", "profile"))
    groups_store = GroupContextStore(ctx.require(ctx.out / "groups", "topics"))
    ctx.require(ctx.out / "leaders.json", "leaders")
    if not split.test_cases:
        raise ds.DataError("no test cases in split")

    members = {u for c in split.test_cases for u in split.train.members(c.group)}
    profiles = {u: profiles_store.load(u) for u in sorted(members)}
    contexts = {c.group: groups_store.load(c.group) for c in split.test_cases}
    inputs = build_inputs(split, profiles, contexts, leadership=cfg.leadership.enabled)
    client = ctx.client() if strategy != "heuristic" else None
    batch = recommend_all(
        inputs, strategy, split.train.catalog, client, max_rounds=cfg.dynamic.max_rounds,
        workers=cfg.llm.in_flight_limit, embedder=ctx.embedder(),
    )

    stamp = {**ctx.stamp(), "run_fingerprint": cfg.run_fingerprint(ctx.digest)}
    results_path = out or ctx.out / "results" / f"{strategy}.jsonl"
    lines = [json.dumps(result_record(r, batch.telemetry[r.group_id], **stamp), sort_keys=True)
             for r in batch.results]
    lines += [json.dumps(error_record(e, **stamp), sort_keys=True) for e in batch.errors]
    write_text(results_path, "".join(line + "\n" for line in lines))
    for g, transcript in batch.transcripts.items():
        write_json(ctx.out / "transcripts" / f"{safe_name(g)}.json", transcript.to_json())
    total = batch.total_telemetry()
    write_json(results_path.with_suffix(".telemetry.json"), {
        **stamp, "strategy": strategy, "groups": len(batch.results), "errors": len(batch.errors),
        "totals": total.as_dict(), "batch_wall_time": batch.wall_time,
        "per_group": {g: t.as_dict() for g, t in sorted(batch.telemetry.items())},
    })
    logger.info("%s: %d groups ok, %d failed", strategy, len(batch.results), len(batch.errors))
    if batch.results:
        return EXIT_OK
    return EXIT_BACKEND if any(e.backend_failure for e in batch.errors) else EXIT_DATA


def read_results(path: Path) -> tuple[dict[str, list[str]], int, set[str], str]:
    rankings: dict[str, list[str]] = {}
    errors = 0
    fingerprints: set[str] = set()
    strategy = ""
    if not path.exists():
        raise ds.DataError(f"missing file: {path}")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                group = rec["group_id"]
                if "error" in rec:
                    errors += 1
                else:
                    rankings[group] = [str(i) for i in rec["ranked_items"]]
                    strategy = strategy or rec.get("strategy", "")
                if rec.get("fingerprint"):
                    fingerprints.add(rec["fingerprint"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ds.DataError(f"{path}:{lineno}: malformed results line ({exc})") from None
    return rankings, errors, fingerprints, strategy


def cmd_evaluate(ctx: Context, result_paths: Sequence[Path], force: bool = False,
                 labels: Sequence[str] | None = None) -> int:
    split = read_json(ctx.require(ctx.out / "split.json", "ingest"))
    positives = {c["group"]: c["positive"] for c in split["test_cases"]}
    reports: list[MetricReport] = []
    seen_fps: set[str] = set()
    for n, path in enumerate(result_paths):
        rankings, errors, fps, strategy = read_results(Path(path))
        seen_fps |= fps
        if not rankings:
            raise ds.DataError(f"{path}: no evaluable groups")
        label = labels[n] if labels and n < len(labels) else (strategy or Path(path).stem)
        reports.append(evaluate(rankings, positives, ctx.cfg.eval.k_values, label, errors,
                                fingerprint=",".join(sorted(fps)) or None))
    if len(seen_fps) > 1 and not force:
        raise UsageError(f"results come from different configurations {sorted(seen_fps)}; pass --force to compare")
    table = render_table(reports)
    write_json(ctx.out / "report.json", {"reports": [r.to_json() for r in reports]})
    write_text(ctx.out / "report.txt", table)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    out = make_synthetic(args.out, n_users=args.users, n_items=args.items, n_groups=args.groups, seed=args.seed)
    print(out)
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", type=Path, help="YAML run configuration")
    common.add_argument("--backend", choices=("mock", "http"), help="override llm.backend")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. --set metapath.max_order=1")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="groupsim", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("ingest", parents=[common], help="load data, write the leave-one-out split")
    p = sub.add_parser("pipeline", parents=[common], help="build profile/topic/leader artifacts")
    p.add_argument("--stage", required=True, choices=PIPELINE_STAGES + ("all",))
    p = sub.add_parser("recommend", parents=[common], help="simulate group decisions")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--out", type=Path)
    p = sub.add_parser("evaluate", parents=[common], help="HR@K / NDCG@K report")
    p.add_argument("results", nargs="+", type=Path)
    p.add_argument("--force", action="store_true", help="compare results from different configurations")
    p.add_argument("--label", action="append", dest="labels")
    p = sub.add_parser("run", parents=[common], help="ingest, all stages, recommend and evaluate")
    p.add_argument("--strategy", choices=STRATEGIES)
    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--users", type=int, default=60)
    p.add_argument("--items", type=int, default=120)
    p.add_argument("--groups", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    return parser


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "synth":
        return cmd_synth(args)
    ctx = make_context(args)
    if args.command == "ingest":
        return cmd_ingest(ctx)
    if args.command == "pipeline":
        return cmd_pipeline(ctx, args.stage)
    if args.command == "recommend":
        return cmd_recommend(ctx, args.strategy, args.out)
    if args.command == "evaluate":
        return cmd_evaluate(ctx, args.results, args.force, args.labels)
    if args.command == "run":
        cmd_ingest(ctx)
        cmd_pipeline(ctx, "all")
        strategy = args.strategy or ctx.cfg.simulation.strategy
        code = cmd_recommend(ctx, strategy)
        if code != EXIT_OK:
            return code
        return cmd_evaluate(ctx, [ctx.out / "results" / f"{strategy}.jsonl"])
    raise UsageError(f"unknown command {args.command}")


def _is_backend_failure(exc: BaseException) -> bool:
    while exc is not None:
        if isinstance(exc, (BackendError, UnparseableReply)):
            return True
        exc = exc.__cause__
    return False


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"groupsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return dispatch(args)
    except UsageError as exc:
        print(f"groupsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ds.DataError as exc:
        print(f"groupsim: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        if _is_backend_failure(exc):
            print(f"groupsim: backend error: {exc}", file=sys.stderr)
            return EXIT_BACKEND
        raise


if __name__ == "__main__":
    sys.exit(main())
