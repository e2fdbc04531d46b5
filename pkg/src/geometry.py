import functools
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import shapely.affinity
import shapely.geometry
from shapely.geometry import LineString
from shapely.geometry import Point as ShapelyPoint
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.ops import unary_union

from config_types import (
    ClassPenalty, DistanceConfig, Metric, Point, Polygon2D, Region, Sector, Transform, TransformKind, YawPeriod,
)
from custom_types import CostBreakdown, GeometryError, ObjectObservation
from utils import wrap_angle

logger = logging.getLogger(__name__)

SINGULAR_CONDITION = 1e12
PSD_TOLERANCE = 1e-12
REGION_EPS = 1e-9
CONF_FLOOR = 1e-12
"""Smallest class confidence fed to the log in the NLL penalty."""

PairMetric = Callable[[ObjectObservation, ObjectObservation], float]


# ---------------------------------------------------------------------------
# Footprints and polygons
# ---------------------------------------------------------------------------

def box_polygon(obs: ObjectObservation) -> ShapelyPolygon:
    """Yaw-oriented BEV footprint of *obs*. Raises GeometryError for a zero-area box."""
    if not (obs.length > 0.0 and obs.width > 0.0):
        raise GeometryError(
            f"Degenerate box for id {obs.track_id} at t={obs.timestamp}: l={obs.length}, w={obs.width}"
        )
    contour = shapely.geometry.box(-obs.length / 2.0, -obs.width / 2.0, obs.length / 2.0, obs.width / 2.0)
    rotated = shapely.affinity.rotate(contour, obs.yaw, origin=(0.0, 0.0), use_radians=True)
    return shapely.affinity.translate(rotated, obs.x, obs.y)


def footprint_corners(obs: ObjectObservation) -> List[Point]:
    c, s = math.cos(obs.yaw), math.sin(obs.yaw)
    hl, hw = obs.length / 2.0, obs.width / 2.0
    return [
        (obs.x + c * dx - s * dy, obs.y + s * dx + c * dy)
        for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    ]


@functools.lru_cache(maxsize=256)
def _shape(poly: Polygon2D) -> ShapelyPolygon:
    return ShapelyPolygon(poly.vertices)


def point_in_polygon(p: Point, poly: Polygon2D) -> bool:
    """Even-odd membership; points on the boundary count as inside."""
    return bool(_shape(poly).covers(ShapelyPoint(p)))


def distance_to_boundary(p: Point, poly: Polygon2D) -> float:
    """Shortest distance from *p* to the polygon's boundary, whichever side *p* is on."""
    return float(_shape(poly).exterior.distance(ShapelyPoint(p)))


def in_sector(p: Point, sector: Sector) -> bool:
    dx, dy = p[0] - sector.origin[0], p[1] - sector.origin[1]
    rng = math.hypot(dx, dy)
    if rng > sector.range_m + REGION_EPS:
        return False
    if rng == 0.0 or sector.fov_rad >= 2.0 * math.pi:
        return True
    return abs(wrap_angle(math.atan2(dy, dx) - sector.heading)) <= sector.fov_rad / 2.0 + REGION_EPS


def in_region(p: Point, region: Optional[Region]) -> bool:
    """Membership in a polygon or sector. None is the unbounded region."""
    if region is None:
        return True
    if isinstance(region, Sector):
        return in_sector(p, region)
    return point_in_polygon(p, region)


# ---------------------------------------------------------------------------
# Distance functions
# ---------------------------------------------------------------------------

def _pair_name(a: ObjectObservation, b: ObjectObservation) -> str:
    return f"({a.track_id}@{a.timestamp}, {b.track_id}@{b.timestamp})"


def _cov(obs: ObjectObservation) -> np.ndarray:
    if obs.pos_cov is None:
        return np.zeros((2, 2))
    return np.asarray(obs.pos_cov, dtype=float)


def _psd_sqrt(m: np.ndarray, what: str) -> np.ndarray:
    """Square root of a symmetric 2×2 PSD matrix through its eigendecomposition."""
    sym = (m + m.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    scale = max(1.0, float(np.abs(vals).max()))
    if vals.min() < -PSD_TOLERANCE * scale:
        raise GeometryError(f"Covariance of {what} is not positive semi-definite (eigenvalue {vals.min():.6g})")
    root = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    return np.asarray(root)


def center_distance_2d(a: ObjectObservation, b: ObjectObservation) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def one_minus_iou_bev(a: ObjectObservation, b: ObjectObservation) -> float:
    """1 − IoU of the two yaw-oriented footprints."""
    pa, pb = box_polygon(a), box_polygon(b)
    inter = pa.intersection(pb).area
    union = pa.area + pb.area - inter
    return min(1.0, max(0.0, 1.0 - inter / union))


def mahalanobis_distance(a: ObjectObservation, b: ObjectObservation) -> float:
    """sqrt(Δᵀ Σ⁻¹ Δ) with Σ the sum of both position covariances."""
    if a.pos_cov is None and b.pos_cov is None:
        raise GeometryError(f"Mahalanobis distance of {_pair_name(a, b)} needs at least one covariance")
    sigma = _cov(a) + _cov(b)
    cond = float(np.linalg.cond(sigma))
    if not math.isfinite(cond) or cond > SINGULAR_CONDITION:
        raise GeometryError(f"Singular combined covariance for pair {_pair_name(a, b)} (condition {cond:.3g})")
    delta = np.array([a.x - b.x, a.y - b.y])
    quad = float(delta @ np.linalg.solve(sigma, delta))
    return math.sqrt(max(quad, 0.0))


def wasserstein2_gaussian(a: ObjectObservation, b: ObjectObservation) -> float:
    """Closed-form W₂ between the two position Gaussians. A missing covariance is the zero matrix."""
    sa, sb = _cov(a), _cov(b)
    _psd_sqrt(sa, f"{a.track_id}@{a.timestamp}")
    root_b = _psd_sqrt(sb, f"{b.track_id}@{b.timestamp}")
    cross = _psd_sqrt(root_b @ sa @ root_b, _pair_name(a, b))
    trace_term = max(0.0, float(np.trace(sa + sb - 2.0 * cross)))
    return math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + trace_term)


_METRICS = {
    Metric.ONE_MINUS_IOU: one_minus_iou_bev,
    Metric.MAHALANOBIS: mahalanobis_distance,
    Metric.WASSERSTEIN2: wasserstein2_gaussian,
}


def class_confidence_penalty(sut: ObjectObservation, res_class: str, kind: ClassPenalty) -> float:
    """NLL or Brier score of the SUT class confidences against the ReS label; 0 without confidences."""
    if kind == ClassPenalty.NONE or not sut.class_confs:
        return 0.0
    if kind == ClassPenalty.NLL:
        return -math.log(max(sut.class_confs.get(res_class, 0.0), CONF_FLOOR))
    labels = set(sut.class_confs) | {res_class}
    return math.fsum((sut.class_confs.get(c, 0.0) - (1.0 if c == res_class else 0.0)) ** 2 for c in sorted(labels))


# ---------------------------------------------------------------------------
# Cost matrix
# ---------------------------------------------------------------------------

class CostMatrix:
    """
    SUT × ReS costs of one frame, held as arrays.

    geometric — metric value per cell
    penalties — named penalty arrays, only the configured terms
    gated     — True where the match is forbidden
    total     — geometric + penalties, +inf where gated
    """

    def __init__(self, geometric: np.ndarray, penalties: Dict[str, np.ndarray], gated: np.ndarray) -> None:
        self.geometric = geometric
        self.penalties = penalties
        self.gated = gated
        total = geometric.copy()
        for values in penalties.values():
            total = total + values
        self.total = np.where(gated, np.inf, total)

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.geometric.shape[0]), int(self.geometric.shape[1]))

    def forbid(self, rows: Sequence[int], cols: Sequence[int]) -> None:
        """Gates every cell in the cross product of *rows* and *cols*."""
        if len(rows) and len(cols):
            idx = np.ix_(list(rows), list(cols))
            self.gated[idx] = True
            self.total[idx] = np.inf

    def breakdown(self, i: int, j: int) -> CostBreakdown:
        return CostBreakdown.build(
            geometric=float(self.geometric[i, j]),
            penalties={name: float(values[i, j]) for name, values in sorted(self.penalties.items())},
            gated=bool(self.gated[i, j]),
        )

    def breakdowns(self, cells: Sequence[Tuple[int, int]]) -> List[CostBreakdown]:
        """breakdown of every cell in *cells*, read from the arrays in one pass."""
        if not cells:
            return []
        rows = [i for i, _ in cells]
        cols = [j for _, j in cells]
        geometric = self.geometric[rows, cols].tolist()
        gated = self.gated[rows, cols].tolist()
        names = sorted(self.penalties)
        terms = [self.penalties[name][rows, cols].tolist() for name in names]
        return [
            CostBreakdown.build(geometric=g, penalties={name: values[k] for name, values in zip(names, terms)},
                                gated=blocked)
            for k, (g, blocked) in enumerate(zip(geometric, gated))
        ]

    @classmethod
    def from_totals(cls, totals: Sequence[Sequence[float]]) -> "CostMatrix":
        """Matrix whose geometric term is *totals*; infinite cells are gated."""
        arr = np.asarray(totals, dtype=float)
        if arr.ndim != 2:
            arr = arr.reshape(len(totals), 0)
        gated = ~np.isfinite(arr)
        return cls(np.where(gated, 0.0, arr), {}, gated)


def _pairwise(sut: Sequence[ObjectObservation], res: Sequence[ObjectObservation], fn: PairMetric) -> np.ndarray:
    out = np.zeros((len(sut), len(res)))
    for i, a in enumerate(sut):
        for j, b in enumerate(res):
            out[i, j] = fn(a, b)
    return out


def _iou_matrix(sut: Sequence[ObjectObservation], res: Sequence[ObjectObservation], centers: np.ndarray) -> np.ndarray:
    out = np.ones((len(sut), len(res)))
    half_diag_s = np.array([math.hypot(o.length, o.width) / 2.0 for o in sut])
    half_diag_r = np.array([math.hypot(o.length, o.width) / 2.0 for o in res])
    reach = half_diag_s[:, None] + half_diag_r[None, :]
    boxes_s = [box_polygon(o) for o in sut]
    boxes_r = [box_polygon(o) for o in res]
    for i, j in zip(*np.nonzero(centers < reach)):
        inter = boxes_s[i].intersection(boxes_r[j]).area
        union = boxes_s[i].area + boxes_r[j].area - inter
        out[i, j] = min(1.0, max(0.0, 1.0 - inter / union))
    return out


def build_cost_matrix(
    sut: Sequence[ObjectObservation],
    res: Sequence[ObjectObservation],
    cfg: DistanceConfig,
    threshold: Optional[float] = None,
) -> CostMatrix:
    """
    Costs of every SUT/ReS pair of one frame. The gate compares the geometric
    term against *threshold* (cfg.threshold when omitted) and, with class_gate,
    forbids pairs of different labels.
    """
    gate = cfg.threshold if threshold is None else threshold
    n, m = len(sut), len(res)
    if n == 0 or m == 0:
        empty = np.zeros((n, m))
        return CostMatrix(empty, {}, np.zeros((n, m), dtype=bool))

    sx = np.array([o.x for o in sut])
    sy = np.array([o.y for o in sut])
    rx = np.array([o.x for o in res])
    ry = np.array([o.y for o in res])
    centers = np.hypot(sx[:, None] - rx[None, :], sy[:, None] - ry[None, :])

    if cfg.metric == Metric.CENTER2D:
        geometric = centers
    elif cfg.metric == Metric.ONE_MINUS_IOU:
        geometric = _iou_matrix(sut, res, centers)
    else:
        geometric = _pairwise(sut, res, _METRICS[cfg.metric])

    s_cls = np.array([o.class_label for o in sut], dtype=object)
    r_cls = np.array([o.class_label for o in res], dtype=object)
    differ = s_cls[:, None] != r_cls[None, :]

    gated = geometric > gate
    if cfg.class_gate:
        gated = gated | differ

    penalties: Dict[str, np.ndarray] = {}
    if cfg.w_v > 0.0:
        dvx = np.array([o.vx for o in sut])[:, None] - np.array([o.vx for o in res])[None, :]
        dvy = np.array([o.vy for o in sut])[:, None] - np.array([o.vy for o in res])[None, :]
        penalties["velocity"] = cfg.w_v * np.hypot(dvx, dvy)
    if cfg.w_yaw > 0.0:
        period = math.pi if cfg.yaw_period == YawPeriod.PI else 2.0 * math.pi
        dyaw = np.array([o.yaw for o in sut])[:, None] - np.array([o.yaw for o in res])[None, :]
        penalties["yaw"] = cfg.w_yaw * np.abs((dyaw + period / 2.0) % period - period / 2.0)
    if cfg.class_penalty != ClassPenalty.NONE and cfg.w_cls > 0.0:
        penalties[cfg.class_penalty.value] = cfg.w_cls * np.array(
            [[class_confidence_penalty(a, b.class_label, cfg.class_penalty) for b in res] for a in sut]
        )
    if cfg.class_mismatch_penalty > 0.0 and not cfg.class_gate:
        penalties["class_mismatch"] = np.where(differ, cfg.class_mismatch_penalty, 0.0)

    return CostMatrix(geometric, penalties, gated)


def composite_cost(
    sut: ObjectObservation, res: ObjectObservation, cfg: DistanceConfig, threshold: Optional[float] = None,
) -> CostBreakdown:
    """Cost of one SUT/ReS pair: geometric term, configured penalties and gate."""
    return build_cost_matrix([sut], [res], cfg, threshold).breakdown(0, 0)


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------

def _poly3_terms(x: float, y: float) -> np.ndarray:
    return np.array([1.0, x, y, x * x, x * y, y * y, x ** 3, x * x * y, x * y * y, y ** 3])


def _poly3_jacobian(cx: np.ndarray, cy: np.ndarray, x: float, y: float) -> np.ndarray:
    d_dx = np.array([0.0, 1.0, 0.0, 2 * x, y, 0.0, 3 * x * x, 2 * x * y, y * y, 0.0])
    d_dy = np.array([0.0, 0.0, 1.0, 0.0, x, 2 * y, 0.0, x * x, 2 * x * y, 3 * y * y])
    return np.array([[cx @ d_dx, cx @ d_dy], [cy @ d_dx, cy @ d_dy]])


def _apply_linear(obs: ObjectObservation, x: float, y: float, jac: np.ndarray) -> ObjectObservation:
    heading = jac @ np.array([math.cos(obs.yaw), math.sin(obs.yaw)])
    velocity = jac @ np.array([obs.vx, obs.vy])
    cov = obs.pos_cov
    if cov is not None:
        mapped = jac @ np.asarray(cov, dtype=float) @ jac.T
        cov = ((float(mapped[0, 0]), float(mapped[0, 1])), (float(mapped[1, 0]), float(mapped[1, 1])))
    return obs.moved(
        x=x, y=y,
        yaw=math.atan2(float(heading[1]), float(heading[0])),
        vx=float(velocity[0]), vy=float(velocity[1]),
        pos_cov=cov,
    )


def apply_transform(t: Transform, obs: ObjectObservation) -> ObjectObservation:
    """
    Maps a ReS observation into the SUT frame. Rigid transforms rotate yaw,
    velocity and covariance by theta; poly3 uses the local Jacobian.
    """
    if t.kind == TransformKind.IDENTITY:
        return obs
    if t.kind == TransformKind.RIGID2D:
        c, s = math.cos(t.theta), math.sin(t.theta)
        rot = np.array([[c, -s], [s, c]])
        moved = _apply_linear(obs, c * obs.x - s * obs.y + t.tx, s * obs.x + c * obs.y + t.ty, rot)
        return moved.moved(yaw=obs.yaw + t.theta)
    cx, cy = np.asarray(t.cx), np.asarray(t.cy)
    terms = _poly3_terms(obs.x, obs.y)
    jac = _poly3_jacobian(cx, cy, obs.x, obs.y)
    return _apply_linear(obs, float(cx @ terms), float(cy @ terms), jac)


# ---------------------------------------------------------------------------
# Line of sight
# ---------------------------------------------------------------------------

def occlusion_fraction(viewer: Point, target: ObjectObservation, blockers: Sequence[ObjectObservation]) -> float:
    """
    Share of the five sight lines (viewer to the four footprint corners and the
    center) that cross any blocker footprint.
    """
    footprint = box_polygon(target)
    if footprint.covers(ShapelyPoint(viewer)):
        raise GeometryError(f"Viewer {viewer} lies inside the footprint of {target.track_id}@{target.timestamp}")
    if not blockers:
        return 0.0
    shadow = unary_union([box_polygon(b) for b in blockers])
    targets = footprint_corners(target) + [target.position]
    hits = sum(1 for p in targets if LineString([viewer, p]).intersects(shadow))
    return hits / len(targets)
