"""Polygon annotation parsing and annotator-concordance resolution.

Annotation files are JSON: either a single per-slide object or a list of
them, each shaped as::

    {"wsi_id": str, "magnification": 20|40,
     "annotations": [{"annotator": str, "class": "Normal"|"NPI"|"NPC",
                      "polygon": [[x, y], ...]}]}

Coordinates are level-0 pixels. Two annotations agree when their class
labels match and their polygons overlap with IoU at or above a threshold;
agreeing annotations are merged into one considered region whose polygon
is the intersection of the supporting polygons.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from shapely.geometry import MultiPolygon, Polygon as ShapelyPolygon
from shapely.geometry.base import BaseGeometry

from histodense.errors import ParseError, ValidationError
from histodense.labels import ClassLabel, parse_class

VALID_MAGNIFICATIONS = (20, 40)


@dataclass(frozen=True)
class RegionAnnotation:
    """One pathologist's labeled polygon on one slide."""

    wsi_id: str
    annotator: str
    class_label: ClassLabel
    polygon: tuple[tuple[float, float], ...]
    magnification: int

    def shapely(self) -> ShapelyPolygon:
        return ShapelyPolygon(self.polygon)


@dataclass
class ConsideredRegion:
    """A concordance-resolved region with its supporting annotators."""

    wsi_id: str
    class_label: ClassLabel
    polygon: tuple[tuple[float, float], ...]
    magnification: int
    concordant: bool
    supporting_annotators: frozenset[str] = field(default_factory=frozenset)


def _validate_polygon(points, where: str) -> tuple[tuple[float, float], ...]:
    if not isinstance(points, (list, tuple)) or len(points) < 3:
        raise ValidationError(f"{where}: polygon needs at least 3 vertices")
    coords = []
    for pt in points:
        if not isinstance(pt, (list, tuple)) or len(pt) != 2:
            raise ValidationError(f"{where}: polygon vertices must be [x, y] pairs")
        x, y = float(pt[0]), float(pt[1])
        if x < 0 or y < 0:
            raise ValidationError(f"{where}: vertex ({x}, {y}) has negative coordinate")
        coords.append((x, y))
    shape = ShapelyPolygon(coords)
    if not shape.is_valid:
        raise ValidationError(f"{where}: polygon is not simple (self-intersecting)")
    if shape.area <= 0:
        raise ValidationError(f"{where}: polygon has zero area")
    return tuple(coords)


def parse_annotations(document: str) -> list[RegionAnnotation]:
    """Parse annotation file content into validated RegionAnnotations.

    Raises ParseError on malformed JSON or schema violations (with the
    offending record index) and ValidationError on bad polygons.
    """
    try:
        payload = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc

    if isinstance(payload, dict):
        payload = [payload]
    if not isinstance(payload, list):
        raise ParseError("annotation document must be an object or list of objects")

    result: list[RegionAnnotation] = []
    for wi, wsi_obj in enumerate(payload):
        if not isinstance(wsi_obj, dict):
            raise ParseError(f"record {wi}: expected an object")
        try:
            wsi_id = str(wsi_obj["wsi_id"])
            magnification = wsi_obj["magnification"]
            records = wsi_obj["annotations"]
        except KeyError as exc:
            raise ParseError(f"record {wi}: missing key {exc.args[0]!r}") from None
        if magnification not in VALID_MAGNIFICATIONS:
            raise ValidationError(
                f"record {wi} ({wsi_id}): magnification must be 20 or 40, "
                f"got {magnification!r}"
            )
        if not isinstance(records, list):
            raise ParseError(f"record {wi} ({wsi_id}): 'annotations' must be a list")
        for ai, rec in enumerate(records):
            where = f"record {wi} ({wsi_id}) annotation {ai}"
            if not isinstance(rec, dict):
                raise ParseError(f"{where}: expected an object")
            try:
                annotator = str(rec["annotator"])
                class_name = rec["class"]
                points = rec["polygon"]
            except KeyError as exc:
                raise ParseError(f"{where}: missing key {exc.args[0]!r}") from None
            try:
                label = parse_class(class_name)
            except ValueError as exc:
                raise ValidationError(f"{where}: {exc}") from None
            polygon = _validate_polygon(points, where)
            result.append(
                RegionAnnotation(
                    wsi_id=wsi_id,
                    annotator=annotator,
                    class_label=label,
                    polygon=polygon,
                    magnification=int(magnification),
                )
            )
    return result


def polygon_iou(a, b) -> float:
    """Intersection-over-union of two simple polygons.

    Touch-only overlaps (zero intersection area) give 0.
    """
    pa = a if isinstance(a, BaseGeometry) else ShapelyPolygon(a)
    pb = b if isinstance(b, BaseGeometry) else ShapelyPolygon(b)
    inter = pa.intersection(pb).area
    union = pa.area + pb.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def _intersection_polygon(shapes: list[ShapelyPolygon]) -> tuple[tuple[float, float], ...]:
    geom: BaseGeometry = shapes[0]
    for other in shapes[1:]:
        geom = geom.intersection(other)
    if isinstance(geom, MultiPolygon):
        # a non-convex overlap can split; keep the largest piece
        geom = max(geom.geoms, key=lambda g: g.area)
    if geom.is_empty or not isinstance(geom, ShapelyPolygon):
        raise ValidationError("supporting polygons have empty intersection")
    coords = list(geom.exterior.coords)
    if coords[0] == coords[-1]:
        coords = coords[:-1]
    return tuple((float(x), float(y)) for x, y in coords)


def _canonical_key(ann: RegionAnnotation):
    return (ann.annotator, ann.class_label.value, ann.polygon)


def resolve_concordance(
    annotations: list[RegionAnnotation], iou_threshold: float = 0.5
) -> list[ConsideredRegion]:
    """Group annotations into considered regions by class and overlap.

    Two annotations support the same region when their labels match and
    their polygon IoU is at or above ``iou_threshold``; agreement groups
    are the connected components of that relation. A region is concordant
    when at least two distinct annotators support it; its polygon is then
    the intersection of the supporting polygons. Unmatched annotations
    are emitted as their own non-concordant regions.
    """
    if not 0 < iou_threshold <= 1:
        raise ValidationError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    if not annotations:
        return []

    regions: list[ConsideredRegion] = []
    by_wsi: dict[str, list[RegionAnnotation]] = {}
    for ann in annotations:
        by_wsi.setdefault(ann.wsi_id, []).append(ann)

    for wsi_id in sorted(by_wsi):
        group = sorted(by_wsi[wsi_id], key=_canonical_key)
        shapes = [ann.shapely() for ann in group]
        n = len(group)
        # union-find over pairwise agreement
        parent = list(range(n))

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i in range(n):
            for j in range(i + 1, n):
                if group[i].class_label != group[j].class_label:
                    continue
                if polygon_iou(shapes[i], shapes[j]) >= iou_threshold:
                    parent[find(i)] = find(j)

        components: dict[int, list[int]] = {}
        for i in range(n):
            components.setdefault(find(i), []).append(i)

        for members in components.values():
            anns = [group[i] for i in members]
            supporters = frozenset(a.annotator for a in anns)
            concordant = len(supporters) >= 2
            if len(members) > 1:
                polygon = _intersection_polygon([shapes[i] for i in members])
            else:
                polygon = anns[0].polygon
            regions.append(
                ConsideredRegion(
                    wsi_id=wsi_id,
                    class_label=anns[0].class_label,
                    polygon=polygon,
                    magnification=anns[0].magnification,
                    concordant=concordant,
                    supporting_annotators=supporters,
                )
            )

    regions.sort(
        key=lambda r: (r.wsi_id, r.class_label.value, sorted(r.supporting_annotators), r.polygon)
    )
    return regions
