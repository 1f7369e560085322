"""File formats: JSON-lines maps, descriptors and hypotheses; JSON retrieval models; CSV metrics."""

from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from .maps import MapSequence
from .retrieval import CodeModel, Correspondence, PcaModel


class FormatError(ValueError):
    """A file does not follow the expected schema."""


def _dump(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    return out


# -- maps --------------------------------------------------------------------


def map_to_jsonl(m: MapSequence, include_ground_truth: bool = True) -> str:
    meta = dict(m.meta or {})
    header = {
        "session_id": m.session_id,
        "spacing_m": meta.pop("spacing_m", None),
        "noise_frac": meta.pop("noise_frac", None),
        "seed": meta.pop("seed", None),
        "descriptor_dim": None if m.descriptors is None else int(m.descriptors.shape[1]),
        "n_poses": len(m),
    }
    if meta:
        header["meta"] = meta
    lines = [_dump(header)]
    has_gt = include_ground_truth and m.gt_poses is not None
    for k in range(len(m)):
        rec = {"id": k, "pose": m.poses[k].tolist()}
        if has_gt:
            rec["gt_pose"] = m.gt_poses[k].tolist()
        rec["travel"] = float(m.travel[k])
        rec["odom"] = [0.0, 0.0, 0.0] if k == 0 else m.odometry[k - 1].tolist()
        if m.descriptors is not None:
            rec["descriptor"] = m.descriptors[k].tolist()
        lines.append(_dump(rec))
    return "\n".join(lines) + "\n"


def write_map(path, m: MapSequence, include_ground_truth: bool = True) -> None:
    atomic_write_text(path, map_to_jsonl(m, include_ground_truth))


def read_map(path) -> MapSequence:
    """Read a map file. Odometry of record 0 is ignored (it has no predecessor)."""
    recs = _read_jsonl(path)
    if not recs:
        raise FormatError(f"{path}: empty map file")
    header, rows = recs[0], recs[1:]
    if "session_id" not in header or "id" in header:
        raise FormatError(f"{path}: first record must be a header with session_id")
    if not rows:
        raise FormatError(f"{path}: map has no poses")
    try:
        rows.sort(key=lambda r: int(r["id"]))
        if [int(r["id"]) for r in rows] != list(range(len(rows))):
            raise FormatError(f"{path}: pose ids must be 0..N-1")
        poses = np.array([r["pose"] for r in rows], dtype=float)
        odom = np.array([r["odom"] for r in rows[1:]], dtype=float).reshape(-1, 3)
        travel = np.array([r["travel"] for r in rows], dtype=float) if all("travel" in r for r in rows) else None
        gt = np.array([r["gt_pose"] for r in rows], dtype=float) if all("gt_pose" in r for r in rows) else None
        desc = np.array([r["descriptor"] for r in rows], dtype=float) if all("descriptor" in r for r in rows) else None
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: malformed pose record ({exc})") from None
    if poses.shape != (len(rows), 3):
        raise FormatError(f"{path}: poses must be [x, y, theta]")
    if desc is not None and desc.ndim != 2:
        raise FormatError(f"{path}: descriptors must all have the same length")
    meta = dict(header.get("meta") or {})
    for key in ("spacing_m", "noise_frac", "seed"):
        if header.get(key) is not None:
            meta[key] = header[key]
    try:
        return MapSequence(poses, odom, desc, gt, travel, str(header["session_id"]), meta)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def read_descriptors(path) -> dict[int, np.ndarray]:
    """Descriptor import: one ``{"pose_id": k, "values": [...]}`` record per line."""
    out = {}
    dim = None
    for r in _read_jsonl(path):
        try:
            k, v = int(r["pose_id"]), np.asarray(r["values"], dtype=float)
        except (KeyError, TypeError, ValueError):
            raise FormatError(f"{path}: records need pose_id and values") from None
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise FormatError(f"{path}: descriptor for pose {k} is not a finite vector")
        if dim is None:
            dim = len(v)
        elif len(v) != dim:
            raise FormatError(f"{path}: descriptor for pose {k} has length {len(v)}, expected {dim}")
        out[k] = v
    return out


def attach_descriptors(m: MapSequence, descriptors: dict[int, np.ndarray]) -> MapSequence:
    missing = [k for k in range(len(m)) if k not in descriptors]
    if missing:
        raise FormatError(f"no descriptor for poses {missing[:5]}{'...' if len(missing) > 5 else ''}")
    from dataclasses import replace

    return replace(m, descriptors=np.array([descriptors[k] for k in range(len(m))]))


def write_descriptors(path, descriptors) -> None:
    atomic_write_text(path, "".join(_dump({"pose_id": k, "values": list(map(float, v))}) + "\n"
                                    for k, v in enumerate(descriptors)))


# -- retrieval models ----------------------------------------------------------


def model_to_dict(pca: PcaModel, codes: CodeModel, bucket_cap: int = 100) -> dict:
    return {"seed": codes.seed, "mean": pca.mean.tolist(), "basis": pca.basis.tolist(),
            "hyperplanes": codes.hyperplanes.tolist(), "bucket_cap": bucket_cap}


def model_from_dict(d: dict) -> tuple[PcaModel, CodeModel, int]:
    try:
        pca = PcaModel(np.asarray(d["mean"], dtype=float), np.asarray(d["basis"], dtype=float))
        codes = CodeModel(np.asarray(d["hyperplanes"], dtype=float), d.get("seed"))
    except KeyError as exc:
        raise FormatError(f"model document lacks {exc}") from None
    if pca.basis.shape[1] != pca.mean.shape[0] or codes.hyperplanes.shape[1] != pca.basis.shape[0]:
        raise FormatError("model dimensions are inconsistent")
    return pca, codes, int(d.get("bucket_cap", 100))


def write_model(path, pca: PcaModel, codes: CodeModel, bucket_cap: int = 100) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(pca, codes, bucket_cap)) + "\n")


def read_model(path) -> tuple[PcaModel, CodeModel, int]:
    with open(path, encoding="utf-8") as fh:
        try:
            return model_from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc.msg})") from None


# -- hypotheses ------------------------------------------------------------------


def _corr(c: Correspondence) -> list:
    return [int(c.query_index), int(c.ref_index), float(c.l2)]


def hypothesis_record(h, task_id: str = "", algorithm: str = "", with_poses: bool = False) -> dict:
    q = h.quality
    return {
        "task_id": task_id,
        "algorithm": algorithm,
        "rank": h.rank,
        "id": h.id,
        "parent": h.parent,
        "score": h.score,
        "seed": _corr(h.seed),
        "constraints": [_corr(c) for c in h.constraints],
        "transform": list(h.transform.as_array().tolist()),
        "assignment": [int(a) for a in h.assignment],
        "precision": None if q is None else q.precision,
        "recall": None if q is None else q.recall,
        "f_measure": None if q is None else q.f_measure,
        "n_query": h.n_query,
        "poses": h.poses.tolist() if with_poses else None,
    }


def hypotheses_to_jsonl(hyps: Iterable, task_id: str = "", algorithm: str = "", poses_top: int = 1) -> str:
    return "".join(
        _dump(hypothesis_record(h, task_id, algorithm, with_poses=(h.rank or 0) <= poses_top)) + "\n"
        for h in hyps
    )


def write_hypotheses(path, hyps, task_id: str = "", algorithm: str = "", poses_top: int = 1) -> None:
    atomic_write_text(path, hypotheses_to_jsonl(hyps, task_id, algorithm, poses_top))


def read_hypotheses(path) -> list[dict]:
    recs = _read_jsonl(path)
    for r in recs:
        for key in ("rank", "score", "assignment"):
            if key not in r:
                raise FormatError(f"{path}: hypothesis record lacks {key!r}")
    recs.sort(key=lambda r: r["rank"])
    return recs


# -- metrics -----------------------------------------------------------------------

METRIC_COLUMNS = ("task_id", "algorithm", "X", "mean_precision", "mean_recall", "mean_f")


def metrics_to_csv(rows: Iterable[dict]) -> str:
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{r[k]:.6f}" if isinstance(r[k], float) else r[k]) for k in METRIC_COLUMNS})
    return buf.getvalue()


def read_metrics(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["X"] = int(r["X"])
        for k in ("mean_precision", "mean_recall", "mean_f"):
            r[k] = float(r[k])
    return rows
