"""
IO - Point cloud, correspondence, transform and trace file formats

Point clouds: ASCII PLY (vertex x/y/z, other properties ignored) and
whitespace-delimited XYZ text, chosen by extension. Correspondences: CSV
`src_index,dst_index`. Transforms: 4x4 row-major homogeneous matrix in JSON.
"""

from pathlib import Path
from typing import Dict, List, Tuple, Union
import csv
import json
import logging

import numpy as np

from .errors import InvalidGeometry, ParseError, UnsupportedFormat
from .evaluation import GroundTruth
from .geometry import CorrespondenceSet, PointCloud, RigidTransform
from .regeneration import RegenerationTrace


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PLY_EXTENSIONS = (".ply",)
XYZ_EXTENSIONS = (".xyz", ".txt")
CORRESPONDENCE_HEADER = ["src_index", "dst_index"]


def _parse_float(token: str, path: Path, line: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"not a number: {token!r}", str(path), line) from None


def _read_ply_header(lines: List[str], path: Path):
    """Returns (data start line index, elements [(name, count, properties)])"""
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic line", str(path), 1)
    elements: List[Tuple[str, int, List[str]]] = []
    for i, raw in enumerate(lines[1:], start=1):
        tokens = raw.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        keyword = tokens[0]
        if keyword == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise UnsupportedFormat(
                    f"PLY format {' '.join(tokens[1:]) or '?'} is not supported (ASCII only)", str(path)
                )
        elif keyword == "element":
            if len(tokens) != 3:
                raise ParseError("malformed element line", str(path), i + 1)
            try:
                count = int(tokens[2])
            except ValueError:
                raise ParseError(f"element count is not an integer: {tokens[2]!r}", str(path), i + 1) from None
            elements.append((tokens[1], count, []))
        elif keyword == "property":
            if not elements:
                raise ParseError("property declared before any element", str(path), i + 1)
            if len(tokens) >= 2 and tokens[1] == "list":
                elements[-1][2].append("<list>")
            else:
                elements[-1][2].append(tokens[-1])
        elif keyword == "end_header":
            return i + 1, elements
        else:
            raise ParseError(f"unexpected header keyword {keyword!r}", str(path), i + 1)
    raise ParseError("header has no end_header line", str(path), len(lines))


def _read_ply(path: Path) -> PointCloud:
    lines = path.read_text().splitlines()
    start, elements = _read_ply_header(lines, path)
    cursor = start
    for name, count, properties in elements:
        if name != "vertex":
            cursor += count
            continue
        if "<list>" in properties:
            raise UnsupportedFormat("list properties on vertices are not supported", str(path))
        try:
            columns = [properties.index(axis) for axis in ("x", "y", "z")]
        except ValueError:
            raise ParseError("vertex element lacks x/y/z properties", str(path)) from None
        points = np.empty((count, 3))
        for row in range(count):
            line_number = cursor + row + 1
            if cursor + row >= len(lines):
                raise ParseError(f"expected {count} vertices, file ended after {row}", str(path), line_number)
            tokens = lines[cursor + row].split()
            if len(tokens) < len(properties):
                raise ParseError(
                    f"expected {len(properties)} values, got {len(tokens)}", str(path), line_number
                )
            points[row] = [_parse_float(tokens[c], path, line_number) for c in columns]
        return PointCloud(points)
    raise ParseError("PLY file has no vertex element", str(path))


def _read_xyz(path: Path) -> PointCloud:
    points = []
    for line_number, raw in enumerate(path.read_text().splitlines(), start=1):
        tokens = raw.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if len(tokens) < 3:
            raise ParseError(f"expected at least 3 values, got {len(tokens)}", str(path), line_number)
        points.append([_parse_float(t, path, line_number) for t in tokens[:3]])
    return PointCloud(np.array(points, dtype=np.float64).reshape(-1, 3))


def load_point_cloud(path: PathLike) -> PointCloud:
    """
    Load a point cloud, format chosen by extension

    Raises:
        FileNotFoundError: missing file
        UnsupportedFormat: unknown extension or binary PLY
        ParseError: malformed content (carries the line number)
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in PLY_EXTENSIONS:
        cloud = _read_ply(path)
    elif suffix in XYZ_EXTENSIONS:
        cloud = _read_xyz(path)
    else:
        raise UnsupportedFormat(f"unsupported point cloud extension {suffix!r}", str(path))
    logger.debug(f"Loaded {len(cloud)} points from {path}")
    return cloud


def save_point_cloud(path: PathLike, cloud: PointCloud):
    """Write ASCII PLY or XYZ (by extension) with round-trip float precision"""
    path = Path(path)
    suffix = path.suffix.lower()
    rows = "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in cloud.points.tolist())
    if suffix in PLY_EXTENSIONS:
        header = (
            "ply\nformat ascii 1.0\ncomment written by pcregen\n"
            f"element vertex {len(cloud)}\n"
            "property double x\nproperty double y\nproperty double z\nend_header\n"
        )
        path.write_text(header + rows)
    elif suffix in XYZ_EXTENSIONS:
        path.write_text(rows)
    else:
        raise UnsupportedFormat(f"unsupported point cloud extension {suffix!r}", str(path))


def load_correspondences(path: PathLike) -> CorrespondenceSet:
    """CSV `src_index,dst_index` with optional header; duplicate rows collapse"""
    path = Path(path)
    pairs = []
    with open(path, newline="") as f:
        for line_number, row in enumerate(csv.reader(f), start=1):
            cells = [cell.strip() for cell in row]
            if not cells or all(cell == "" for cell in cells):
                continue
            if line_number == 1 and cells == CORRESPONDENCE_HEADER:
                continue
            if len(cells) != 2:
                raise ParseError(f"expected 2 columns, got {len(cells)}", str(path), line_number)
            try:
                source, target = int(cells[0]), int(cells[1])
            except ValueError:
                raise ParseError(f"indices must be integers: {row}", str(path), line_number) from None
            if source < 0 or target < 0:
                raise ParseError("indices must be non-negative", str(path), line_number)
            pairs.append((source, target))
    return CorrespondenceSet.from_pairs(np.array(pairs, dtype=np.int64).reshape(-1, 2))


def save_correspondences(path: PathLike, correspondences: CorrespondenceSet):
    with open(Path(path), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CORRESPONDENCE_HEADER)
        writer.writerows(correspondences.pairs.tolist())


def transform_to_dict(transform: RigidTransform) -> Dict:
    return {"matrix": transform.as_matrix().tolist()}


def save_transform(path: PathLike, transform: RigidTransform):
    """4x4 homogeneous matrix, row-major, meters"""
    Path(path).write_text(json.dumps(transform_to_dict(transform), indent=2))


def _transform_from_document(document, path: Path) -> RigidTransform:
    matrix = document.get("matrix") if isinstance(document, dict) else document
    try:
        array = np.asarray(matrix, dtype=np.float64)
        return RigidTransform.from_matrix(array)
    except (TypeError, ValueError, InvalidGeometry) as e:
        raise ParseError(f"not a rigid 4x4 transform: {e}", str(path)) from e


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", str(path), e.lineno) from e


def load_transform(path: PathLike) -> RigidTransform:
    path = Path(path)
    return _transform_from_document(_read_json(path), path)


def save_ground_truth(path: PathLike, gt: GroundTruth):
    document = transform_to_dict(gt.transform)
    document["inlier_tolerance"] = gt.inlier_tolerance
    Path(path).write_text(json.dumps(document, indent=2))


def load_ground_truth(path: PathLike, default_tolerance: float = 0.1) -> GroundTruth:
    """Transform JSON with an optional `inlier_tolerance` field"""
    path = Path(path)
    document = _read_json(path)
    tolerance = document.get("inlier_tolerance", default_tolerance) if isinstance(document, dict) else default_tolerance
    try:
        return GroundTruth(_transform_from_document(document, path), float(tolerance))
    except (TypeError, ValueError) as e:
        raise ParseError(f"invalid inlier_tolerance: {e}", str(path)) from e


def save_trace(path: PathLike, trace: RegenerationTrace):
    Path(path).write_text(trace.to_json())
