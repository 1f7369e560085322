"""Command-line entry point: gen, import, index, match, eval, plot, bench.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
import xml.etree.ElementTree as ET
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import io as dio
from .datagen import DatasetConfig, DatasetError, make_dataset
from .evaluation import (NO_MATCH, QualityScore, classify, ground_truth_assignment, prf, top_x)
from .maps import MapSequence
from .matcher import ALGORITHMS, MatchConfig, match
from .retrieval import Retriever

logger = logging.getLogger("defmatch")

CONFIG_ENV = "DEFMATCH_CONFIG_DIR"
DEFAULT_X = (1, 2, 5, 10)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- config ------------------------------------------------------------------


def resolve_config(name: str | None) -> Path | None:
    """Find a config file: literal path, then $DEFMATCH_CONFIG_DIR, then bundled configs.

    With no name, ``default.json`` in the config directory is used if present.
    """
    env_dir = os.environ.get(CONFIG_ENV)
    if name is None:
        if env_dir and (Path(env_dir) / "default.json").is_file():
            return Path(env_dir) / "default.json"
        return None
    dirs = [Path(env_dir)] if env_dir else []
    dirs.append(Path(str(resources.files("defmatch") / "configs")))
    p = Path(name)
    if p.is_file():
        return p
    for d in dirs:
        for cand in (d / name, d / f"{name}.json"):
            if cand.is_file():
                return cand
    raise UsageError(f"config {name!r} not found (looked in ., ${CONFIG_ENV}, bundled configs)")


def load_config(name: str | None) -> dict:
    path = resolve_config(name)
    if path is None:
        doc = {}
    else:
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc.msg})") from None
    unknown = set(doc) - {"dataset", "match", "bench"}
    if unknown:
        raise DataError(f"unknown config sections: {sorted(unknown)}")
    try:
        ds = DatasetConfig.from_dict(doc.get("dataset", {}))
        mc = MatchConfig(**doc.get("match", {}))
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid config: {exc}") from None
    bench = {"n_envs": 1, "x_list": list(DEFAULT_X), "algorithms": list(ALGORITHMS)}
    bench.update(doc.get("bench", {}))
    return {"path": None if path is None else str(path), "dataset": ds, "match": mc, "bench": bench}


def parse_x_list(s: str | None) -> list[int]:
    if s is None:
        return list(DEFAULT_X)
    try:
        xs = [int(t) for t in s.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--x-list must be comma-separated integers, got {s!r}") from None
    if not xs or min(xs) < 1:
        raise UsageError("--x-list values must be positive")
    return xs


# -- manifest ----------------------------------------------------------------


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Config snapshot, seeds, inputs/outputs with checksums and stage timings for one run."""

    def __init__(self, command: str, config: dict | None = None, seeds=None):
        self.doc = {
            "tool": "defmatch",
            "version": __version__,
            "command": command,
            "config": config or {},
            "seeds": list(seeds or []),
            "inputs": {},
            "outputs": {},
            "timing_s": {},
        }
        self._t = time.perf_counter()

    def stage(self, name: str) -> None:
        now = time.perf_counter()
        self.doc["timing_s"][name] = round(now - self._t, 6)
        logger.info("%s: %.2f s", name, now - self._t)
        self._t = now

    def add_input(self, path) -> None:
        self.doc["inputs"][str(path)] = _sha256(path)

    def add_output(self, path) -> None:
        self.doc["outputs"][str(path)] = _sha256(path)

    def write(self, path) -> None:
        self.doc["created_unix"] = round(time.time(), 3)
        dio.atomic_write_text(path, json.dumps(self.doc, indent=2, sort_keys=True) + "\n")


def _config_snapshot(cfg: dict) -> dict:
    return {"source": cfg["path"], "dataset": cfg["dataset"].to_dict(),
            "match": cfg["match"].to_dict(), "bench": cfg["bench"]}


def _read_map(path) -> MapSequence:
    try:
        return dio.read_map(path)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None


# -- gen ---------------------------------------------------------------------


def generate_tasks(cfg: dict, seed: int):
    tasks = []
    for s in range(seed, seed + int(cfg["bench"]["n_envs"])):
        tasks.extend(make_dataset(cfg["dataset"], s))
    return tasks


def write_tasks(tasks, out_dir: Path, man: Manifest) -> list[dict]:
    index = []
    for t in tasks:
        d = out_dir / "tasks" / t.task_id
        qp, rp = d / "query.jsonl", d / "ref.jsonl"
        dio.write_map(qp, t.query)
        dio.write_map(rp, t.ref)
        man.add_output(qp)
        man.add_output(rp)
        index.append({"task_id": t.task_id, "query": str(qp.relative_to(out_dir)),
                      "ref": str(rp.relative_to(out_dir)), "overlap": t.overlap, "info": t.info})
    ip = out_dir / "tasks.json"
    dio.atomic_write_text(ip, json.dumps(index, indent=2, sort_keys=True) + "\n")
    man.add_output(ip)
    return index


def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    man = Manifest("gen", _config_snapshot(cfg), range(args.seed, args.seed + cfg["bench"]["n_envs"]))
    try:
        tasks = generate_tasks(cfg, args.seed)
    except DatasetError as exc:
        raise DataError(str(exc)) from None
    man.stage("generate")
    write_tasks(tasks, out, man)
    man.stage("write")
    man.write(out / "manifest.json")
    print(f"wrote {len(tasks)} task pairs to {out}")
    return EXIT_OK


# -- import / index -------------------------------------------------------------


def cmd_import(args) -> int:
    m = _read_map(args.map)
    try:
        desc = dio.read_descriptors(args.descriptors)
    except FileNotFoundError:
        raise DataError(f"no such file: {args.descriptors}") from None
    m = dio.attach_descriptors(m, desc)
    dio.write_map(args.out, m)
    print(f"attached {m.descriptors.shape[1]}-dim descriptors to {len(m)} poses -> {args.out}")
    return EXIT_OK


def cmd_index(args) -> int:
    cfg = load_config(args.config)
    mc = cfg["match"]
    man = Manifest("index", _config_snapshot(cfg), [mc.code_seed])
    m = _read_map(args.map)
    man.add_input(args.map)
    if m.descriptors is None:
        raise DataError(f"{args.map}: map has no descriptors")
    seed = mc.code_seed if args.seed is None else args.seed
    r = Retriever(m.descriptors, mc.pca_dim, mc.n_bits, mc.bucket_cap, seed)
    man.stage("fit")
    dio.write_model(args.out, r.pca, r.codes, mc.bucket_cap)
    man.add_output(args.out)
    man.write(f"{args.out}.manifest.json")
    print(f"model: D={r.pca.D} d={r.pca.d} bits={r.codes.n_bits} -> {args.out}")
    return EXIT_OK


# -- match -------------------------------------------------------------------


def _retrieval_from_model(path, ref: MapSequence, query: MapSequence, mc: MatchConfig):
    try:
        pca, codes, cap = dio.read_model(path)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    if pca.D != ref.descriptors.shape[1]:
        raise DataError(f"model expects {pca.D}-dim descriptors, map has {ref.descriptors.shape[1]}")
    r = Retriever(ref.descriptors, bucket_cap=cap, rerank_raw=mc.rerank_raw, pca=pca, codes=codes)
    return r.match(query.descriptors, mc.Nr, mc.Nb)


def run_match(query_path, ref_path, algorithm: str, mc: MatchConfig, out_path,
              model_path=None, poses_top: int = 1, man: Manifest | None = None) -> int:
    q, r = _read_map(query_path), _read_map(ref_path)
    if q.descriptors is None or r.descriptors is None:
        raise DataError("both maps need descriptors")
    if q.descriptors.shape[1] != r.descriptors.shape[1]:
        raise DataError("query and reference descriptors differ in length")
    if man:
        man.add_input(query_path)
        man.add_input(ref_path)
        man.stage("load")
    retrieval = None
    if model_path is not None:
        retrieval = _retrieval_from_model(model_path, r, q, mc)
        if man:
            man.add_input(model_path)
            man.stage("retrieve")
    res = match(q, r, algorithm, mc, retrieval)
    if man:
        man.stage("match")
    if not res.hypotheses:
        logger.warning("no correspondences between %s and %s", query_path, ref_path)
    tid = q.meta.get("task_id", "")
    dio.write_hypotheses(out_path, res.hypotheses, tid, algorithm, poses_top)
    if man:
        man.add_output(out_path)
        man.stage("write")
    return len(res.hypotheses)


def cmd_match(args) -> int:
    cfg = load_config(args.config)
    mc = cfg["match"]
    man = Manifest("match", _config_snapshot(cfg), [mc.code_seed, mc.rel_noise_seed])
    man.doc["algorithm"] = args.algorithm
    n = run_match(args.query, args.ref, args.algorithm, mc, args.out, args.model, args.poses_top, man)
    man.write(f"{args.out}.manifest.json")
    print(f"{args.algorithm}: {n} hypotheses -> {args.out}")
    return EXIT_OK


# -- eval --------------------------------------------------------------------


def hypothesis_scores(records: list[dict], q: MapSequence, r: MapSequence, thresh: float) -> list[QualityScore]:
    ga = ground_truth_assignment(q.gt_poses, r.gt_poses, thresh)
    out = []
    for rec in records:
        ha = np.asarray(rec["assignment"], dtype=int)
        if len(ha) != len(q):
            raise DataError(f"hypothesis rank {rec['rank']} has {len(ha)} assignments for {len(q)} query poses")
        if ha.max(initial=NO_MATCH) >= len(r):
            raise DataError(f"hypothesis rank {rec['rank']} refers past the reference map")
        out.append(prf(classify(ha, None, ga, (q.gt_poses, r.gt_poses), thresh)))
    return out


def metric_rows(task_id: str, algorithm: str, scores: list[QualityScore], xs) -> list[dict]:
    rows = []
    for X in xs:
        s = top_x(scores, X) if scores else QualityScore(0.0, 0.0, 0.0)
        rows.append({"task_id": task_id, "algorithm": algorithm, "X": X, "mean_precision": s.precision,
                     "mean_recall": s.recall, "mean_f": s.f_measure})
    return rows


def evaluate_file(hyp_path, query_path, ref_path, xs, thresh: float) -> list[dict]:
    q, r = _read_map(query_path), _read_map(ref_path)
    if not (q.has_ground_truth and r.has_ground_truth):
        missing = [p for p, m in ((query_path, q), (ref_path, r)) if not m.has_ground_truth]
        raise DataError(f"cannot evaluate: no ground truth in {', '.join(map(str, missing))}")
    try:
        recs = dio.read_hypotheses(hyp_path)
    except FileNotFoundError:
        raise DataError(f"no such file: {hyp_path}") from None
    tid = (recs[0].get("task_id") if recs else "") or q.meta.get("task_id", "") or Path(query_path).parent.name
    alg = (recs[0].get("algorithm") if recs else "") or ""
    return metric_rows(tid, alg, hypothesis_scores(recs, q, r, thresh), xs)


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    xs = parse_x_list(args.x_list)
    rows = evaluate_file(args.hypotheses, args.query, args.ref, xs, cfg["match"].consist_thresh)
    text = dio.metrics_to_csv(rows)
    if args.out:
        dio.atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- plot --------------------------------------------------------------------

_STYLE = {
    "gt": ("#000000", "none"),
    "dead_reckoned": ("#888888", "4 3"),
    "deformed": ("#1f77b4", "none"),
}
_SEG = {"tp": "#2ca02c", "fp": "#d62728", "fn": "#ff7f0e", "match": "#9467bd"}


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def render_svg(q: MapSequence, r: MapSequence, hyp: dict | None = None, thresh: float = 10.0,
               width: int = 800) -> str:
    """SVG with trajectories as polylines and correspondence segments as lines.

    Ground truth (when present) and dead-reckoned poses of both maps are
    always drawn; the hypothesis adds its deformed trajectories and one
    segment per correspondence, classified TP/FP/FN when ground truth exists.
    """
    tracks = []
    for role, m in (("query", q), ("ref", r)):
        if m.gt_poses is not None:
            tracks.append((f"{role}-gt", "gt", m.gt_poses))
        tracks.append((f"{role}-dead_reckoned", "dead_reckoned", m.poses))
    segments = []
    if hyp is not None and hyp.get("poses") is not None:
        P = np.asarray(hyp["poses"], dtype=float)
        tracks.append(("query-deformed", "deformed", P[: len(q)]))
        tracks.append(("ref-deformed", "deformed", P[len(q):]))
    if hyp is not None:
        ha = np.asarray(hyp["assignment"], dtype=int)
        if q.has_ground_truth and r.has_ground_truth:
            ga = ground_truth_assignment(q.gt_poses, r.gt_poses, thresh)
            for i in range(len(q)):
                ok = ha[i] != NO_MATCH and np.linalg.norm(q.gt_poses[i, :2] - r.gt_poses[ha[i], :2]) < thresh
                if ha[i] != NO_MATCH:
                    segments.append(("tp" if ok else "fp", q.gt_poses[i], r.gt_poses[ha[i]]))
                if ga[i] != NO_MATCH and not ok:
                    segments.append(("fn", q.gt_poses[i], r.gt_poses[ga[i]]))
        elif hyp.get("poses") is not None:
            P = np.asarray(hyp["poses"], dtype=float)
            for i in np.flatnonzero(ha != NO_MATCH):
                segments.append(("match", P[i], P[len(q) + ha[i]]))

    pts = np.vstack([t[2][:, :2] for t in tracks])
    lo, hi = pts.min(0), pts.max(0)
    span = max(float((hi - lo).max()), 1.0)
    pad = 0.05 * span
    scale = (width - 2 * 10) / (span + 2 * pad)
    w = (hi[0] - lo[0] + 2 * pad) * scale + 20
    h = (hi[1] - lo[1] + 2 * pad) * scale + 20

    def xy(p):
        return (10 + (p[0] - lo[0] + pad) * scale, 10 + (hi[1] - p[1] + pad) * scale)

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", version="1.1",
                     width=_fmt(w), height=_fmt(h), viewBox=f"0 0 {_fmt(w)} {_fmt(h)}")
    ET.SubElement(svg, "rect", width="100%", height="100%", fill="#ffffff")
    seg_g = ET.SubElement(svg, "g", id="correspondences")
    for kind, a, b in segments:
        (x1, y1), (x2, y2) = xy(a), xy(b)
        ET.SubElement(seg_g, "line", {"class": kind, "x1": _fmt(x1), "y1": _fmt(y1), "x2": _fmt(x2),
                                      "y2": _fmt(y2), "stroke": _SEG[kind], "stroke-width": "0.8"})
    trk_g = ET.SubElement(svg, "g", id="trajectories")
    for name, kind, poses in tracks:
        color, dash = _STYLE[kind]
        attrs = {"id": name, "class": kind, "fill": "none", "stroke": color, "stroke-width": "1.5",
                 "points": " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in map(xy, poses))}
        if dash != "none":
            attrs["stroke-dasharray"] = dash
        ET.SubElement(trk_g, "polyline", attrs)
    ET.indent(svg)
    return ET.tostring(svg, encoding="unicode") + "\n"


def cmd_plot(args) -> int:
    cfg = load_config(args.config)
    q, r = _read_map(args.query), _read_map(args.ref)
    hyp = None
    if args.hypotheses:
        try:
            recs = dio.read_hypotheses(args.hypotheses)
        except FileNotFoundError:
            raise DataError(f"no such file: {args.hypotheses}") from None
        if recs:
            hyp = recs[min(args.rank, len(recs)) - 1]
    dio.atomic_write_text(args.out, render_svg(q, r, hyp, cfg["match"].consist_thresh))
    print(f"wrote {args.out}")
    return EXIT_OK


# -- bench -------------------------------------------------------------------


def _bench_task(job):
    out_dir, entry, algorithms, mc_dict, xs, poses_top = job
    mc = MatchConfig(**mc_dict)
    d = Path(out_dir)
    qp, rp = d / entry["query"], d / entry["ref"]
    rows, timing = [], {}
    for alg in algorithms:
        hp = qp.parent / f"hyp_{alg}.jsonl"
        t0 = time.perf_counter()
        run_match(qp, rp, alg, mc, hp, poses_top=poses_top)
        timing[alg] = round(time.perf_counter() - t0, 6)
        rows.extend(evaluate_file(hp, qp, rp, xs, mc.consist_thresh))
    return entry["task_id"], rows, timing


def summarize(rows: list[dict], algorithms, xs) -> list[dict]:
    out = []
    for alg in algorithms:
        for X in xs:
            sel = [r for r in rows if r["algorithm"] == alg and r["X"] == X]
            if not sel:
                continue
            out.append({"task_id": f"mean({len(sel)})", "algorithm": alg, "X": X,
                        **{k: float(np.mean([r[k] for r in sel]))
                           for k in ("mean_precision", "mean_recall", "mean_f")}})
    return out


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    xs = parse_x_list(args.x_list) if args.x_list else [int(x) for x in cfg["bench"]["x_list"]]
    algorithms = [args.algorithm] if args.algorithm else list(cfg["bench"]["algorithms"])
    bad = [a for a in algorithms if a not in ALGORITHMS]
    if bad:
        raise UsageError(f"unknown algorithm(s) {bad}")
    out = Path(args.out)
    man = Manifest("bench", _config_snapshot(cfg), range(args.seed, args.seed + cfg["bench"]["n_envs"]))
    try:
        tasks = generate_tasks(cfg, args.seed)
    except DatasetError as exc:
        raise DataError(str(exc)) from None
    man.stage("generate")
    index = write_tasks(tasks, out, man)
    man.stage("write_maps")
    jobs = [(str(out), e, algorithms, cfg["match"].to_dict(), xs, 1) for e in index]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_bench_task, jobs))
    else:
        results = [_bench_task(j) for j in jobs]
    man.stage("match_eval")
    results.sort(key=lambda t: t[0])
    rows = [row for _, rs, _ in results for row in rs]
    man.doc["task_timing_s"] = {tid: t for tid, _, t in results}
    for e in index:
        for alg in algorithms:
            man.add_output(out / Path(e["query"]).parent / f"hyp_{alg}.jsonl")
    mp, sp = out / "metrics.csv", out / "summary.csv"
    summary = summarize(rows, algorithms, xs)
    dio.atomic_write_text(mp, dio.metrics_to_csv(rows))
    dio.atomic_write_text(sp, dio.metrics_to_csv(summary))
    man.add_output(mp)
    man.add_output(sp)
    man.write(out / "manifest.json")
    sys.stdout.write(dio.metrics_to_csv(summary))
    return EXIT_OK


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="defmatch", description="Deformable map matching for loop-less 2D maps.")
    p.add_argument("--version", action="version", version=f"defmatch {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log stage timings to stderr")
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[verbose], **kw)

    sub.add_parser = add_parser

    def common(sp, out_help):
        sp.add_argument("--config", help=f"config JSON (path, or name under ${CONFIG_ENV})")
        sp.add_argument("--out", required=True, help=out_help)

    g = sub.add_parser("gen", help="generate synthetic query/reference task pairs")
    common(g, "output directory")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    im = sub.add_parser("import", help="attach externally computed descriptors to a map file")
    im.add_argument("map")
    im.add_argument("descriptors", help="JSON-lines {pose_id, values}")
    im.add_argument("--out", required=True)
    im.set_defaults(func=cmd_import)

    ix = sub.add_parser("index", help="fit PCA and binary-code models on a reference map")
    ix.add_argument("map")
    common(ix, "model JSON path")
    ix.add_argument("--seed", type=int, default=None, help="hyperplane seed (default: match.code_seed)")
    ix.set_defaults(func=cmd_index)

    m = sub.add_parser("match", help="match a query map against a reference map")
    m.add_argument("query")
    m.add_argument("ref")
    common(m, "hypotheses JSON-lines path")
    m.add_argument("--algorithm", choices=ALGORITHMS, default="multiple")
    m.add_argument("--model", help="retrieval model from 'defmatch index'")
    m.add_argument("--poses-top", type=int, default=1, help="store merged poses for this many top ranks")
    m.set_defaults(func=cmd_match)

    e = sub.add_parser("eval", help="score a hypotheses file against ground truth")
    e.add_argument("hypotheses")
    e.add_argument("query")
    e.add_argument("ref")
    e.add_argument("--config")
    e.add_argument("--x-list", help="comma-separated X values (default 1,2,5,10)")
    e.add_argument("--out", help="metrics CSV path (default stdout)")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="render trajectories and correspondences as SVG")
    pl.add_argument("query")
    pl.add_argument("ref")
    pl.add_argument("hypotheses", nargs="?")
    common(pl, "SVG path")
    pl.add_argument("--rank", type=int, default=1, help="which hypothesis to draw")
    pl.set_defaults(func=cmd_plot)

    b = sub.add_parser("bench", help="gen, match with each algorithm, and eval in one run")
    common(b, "output directory")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--algorithm", choices=ALGORITHMS, help="run only this algorithm")
    b.add_argument("--x-list")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"defmatch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, dio.FormatError) as exc:
        print(f"defmatch: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal error", exc_info=True)
        print(f"defmatch: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
