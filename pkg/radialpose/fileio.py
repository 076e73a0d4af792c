"""
File formats: ASCII PLY, JSON sidecars and CSV tables.

Floats are written with 9 significant digits and a '.' decimal separator,
independent of locale.
"""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .errors import EmptyCloudError, PlyParseError
from .geometry import NormalizationRecord, PointCloud, RigidTransform
from .keypoints import KeypointSet
from .losses import FitStep
from .simulator import Scene

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "{:.9g}"


def fmt(value: Any) -> str:
    """CSV/PLY cell text: floats at 9 significant digits, everything else via str."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT.format(float(value))
    if value is None:
        return ""
    return str(value)


def write_ply(path: str | Path, cloud: PointCloud) -> None:
    """ASCII PLY with float x, y, z and, when the cloud is labelled, a uchar label."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if cloud.labels is not None:
        lines.append("property uchar label")
    lines.append("end_header")
    for i, p in enumerate(cloud.points):
        row = [fmt(v) for v in p]
        if cloud.labels is not None:
            row.append(str(int(cloud.labels[i])))
        lines.append(" ".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_ply(path: str | Path) -> PointCloud:
    """
    Read an ASCII PLY vertex element with x, y, z (and optionally label).

    Raises:
        PlyParseError: malformed header or body, with the offending line number
        EmptyCloudError: the file declares zero vertices
    """
    lines = Path(path).read_text(encoding="ascii", errors="replace").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PlyParseError("missing 'ply' magic", line=1)
    count = None
    properties: List[str] = []
    in_vertex = False
    body_start = None
    for lineno, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0] == "comment" or tokens[0] == "obj_info":
            continue
        keyword = tokens[0]
        if keyword == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise PlyParseError(f"unsupported format {' '.join(tokens[1:])!r}", line=lineno)
        elif keyword == "element":
            if len(tokens) != 3:
                raise PlyParseError("malformed element line", line=lineno)
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                try:
                    count = int(tokens[2])
                except ValueError:
                    raise PlyParseError(f"bad vertex count {tokens[2]!r}", line=lineno) from None
                if count < 0:
                    raise PlyParseError("negative vertex count", line=lineno)
        elif keyword == "property":
            if len(tokens) < 3:
                raise PlyParseError("malformed property line", line=lineno)
            if in_vertex:
                properties.append(tokens[-1])
        elif keyword == "end_header":
            body_start = lineno
            break
        else:
            raise PlyParseError(f"unexpected header keyword {keyword!r}", line=lineno)
    if body_start is None:
        raise PlyParseError("missing end_header", line=len(lines))
    if count is None:
        raise PlyParseError("no vertex element declared", line=body_start)
    for axis in ("x", "y", "z"):
        if axis not in properties:
            raise PlyParseError(f"vertex element lacks property {axis!r}", line=body_start)
    if count == 0:
        raise EmptyCloudError("PLY file holds zero vertices")

    cols = [properties.index(a) for a in ("x", "y", "z")]
    label_col = properties.index("label") if "label" in properties else None
    points = np.empty((count, 3), dtype=np.float64)
    labels = np.empty(count, dtype=np.int64) if label_col is not None else None
    for k in range(count):
        lineno = body_start + 1 + k
        if lineno > len(lines):
            raise PlyParseError(f"expected {count} vertices, found {k}", line=lineno)
        tokens = lines[lineno - 1].split()
        if len(tokens) < len(properties):
            raise PlyParseError(f"expected {len(properties)} values, found {len(tokens)}", line=lineno)
        try:
            points[k] = [float(tokens[c]) for c in cols]
            if labels is not None:
                labels[k] = int(tokens[label_col])
        except ValueError as e:
            raise PlyParseError(f"bad number: {e}", line=lineno) from None
    return PointCloud(points, labels)


def write_json(path: str | Path, data: Any) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def save_scene(scene: Scene, ply_path: str | Path, recipe: Optional[Mapping[str, Any]] = None) -> Path:
    """
    Points and labels to PLY, everything else to a ``.json`` sidecar next to it.
    ``recipe`` (the scene config the model was built from) is stored with it.
    """
    ply_path = Path(ply_path)
    write_ply(ply_path, scene.cloud)
    sidecar = ply_path.with_suffix(".json")
    meta = scene.metadata()
    meta["labels"] = [int(v) for v in scene.labels]
    meta["source_index"] = [int(v) for v in scene.source_index]
    if recipe is not None:
        meta["recipe"] = dict(recipe)
    write_json(sidecar, meta)
    logger.info(f"Scene written: {ply_path} (+ {sidecar.name})")
    return sidecar


def load_scene(ply_path: str | Path) -> Scene:
    ply_path = Path(ply_path)
    cloud = read_ply(ply_path)
    meta = read_json(ply_path.with_suffix(".json"))
    return Scene(
        cloud.with_labels(meta["labels"]),
        RigidTransform.from_dict(meta["gt_pose"]),
        meta["model_id"],
        np.asarray(meta["scene_keypoints"], dtype=np.float64),
        NormalizationRecord.from_dict(meta["normalization"]),
        np.asarray(meta["source_index"], dtype=np.int64),
    )


def read_scene_recipe(ply_path: str | Path) -> Optional[Dict[str, Any]]:
    return read_json(Path(ply_path).with_suffix(".json")).get("recipe")


def save_keypoints(path: str | Path, keypoints: KeypointSet) -> None:
    write_json(path, keypoints.to_dict())


def load_keypoints(path: str | Path) -> KeypointSet:
    return KeypointSet.from_dict(read_json(path))


def save_pose(path: str | Path, pose: RigidTransform) -> None:
    write_json(path, pose.to_dict())


def load_pose(path: str | Path) -> RigidTransform:
    return RigidTransform.from_dict(read_json(path))


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Mapping[str, Any] | Sequence[Any]]) -> int:
    """Write rows (dicts keyed by header or plain sequences); returns the row count."""
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            values = [row[h] for h in header] if isinstance(row, Mapping) else list(row)
            writer.writerow([fmt(v) for v in values])
            n += 1
    return n


def read_csv(path: str | Path) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


TRACE_HEADER = ("step", "loss_value", "alpha", "beta")


def write_trace_csv(path: str | Path, trace: Sequence[FitStep]) -> int:
    return write_csv(path, TRACE_HEADER, ((s.step, s.loss, s.alpha, s.beta) for s in trace))
