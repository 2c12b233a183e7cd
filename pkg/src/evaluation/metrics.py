"""
Tracking metrics: CLEAR-MOT (MOTA, MOTP, ID switches, MT/ML) and ID measures
(IDF1, IDP, IDR).

Both hypothesis and ground truth are GtSequence objects: frame -> identity
boxes in center form. A ground-truth box and a hypothesis box can be matched
when their IoU is at least the threshold.

CLEAR-MOT matching per frame: a ground-truth identity keeps the hypothesis it
was last matched to if that hypothesis is present and still overlaps enough;
the remaining pairs are assigned by Hungarian on 1 - IoU. An ID switch is
counted when a ground-truth identity is matched to a hypothesis other than
its last one, however long ago that was.

ID measures: hypothesis and ground-truth identities are paired once for the
whole sequence so that the number of frames where paired boxes overlap enough
(IDTP) is maximal.
"""

from collections import defaultdict
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np
import orjson
from scipy.optimize import linear_sum_assignment

from ..models.data_models import GtSequence, LabeledBox, MetricReport
from ..models.errors import FrameRangeMismatch
from ..utils.helpers import iou_matrix
from ..utils.logging_config import get_logger

logger = get_logger(__name__)

DEFAULT_IOU_THRESHOLD = 0.5
MOSTLY_TRACKED = 0.8
MOSTLY_LOST = 0.2
_INVALID = 1e6


def _check_range(gt: GtSequence, hyp: GtSequence) -> None:
    outside = [f for f, boxes in hyp.frames.items() if boxes and not gt.first_frame <= f <= gt.last_frame]
    if outside:
        raise FrameRangeMismatch(f"hypothesis has frames {min(outside)}..{max(outside)} outside ground truth "
                                 f"range {gt.first_frame}..{gt.last_frame}")


def _overlaps(gt_boxes: Sequence[LabeledBox], hyp_boxes: Sequence[LabeledBox]) -> np.ndarray:
    if not gt_boxes or not hyp_boxes:
        return np.zeros((len(gt_boxes), len(hyp_boxes)))
    return iou_matrix(np.array([b.box for b in gt_boxes], dtype=float),
                      np.array([b.box for b in hyp_boxes], dtype=float))


def _frames(gt: GtSequence, hyp: GtSequence) -> List[int]:
    return sorted(set(gt.frames) | set(hyp.frames))


def clear_mot(gt: GtSequence, hyp: GtSequence, iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> MetricReport:
    """
    CLEAR-MOT counts and scores.

    Returns:
        MetricReport with mota, motp, id_switches, fp, fn, matches, num_gt,
        num_hyp, mostly_tracked and mostly_lost filled in

    Raises:
        FrameRangeMismatch: hypothesis frames outside the ground-truth range
    """
    _check_range(gt, hyp)
    report = MetricReport(num_frames=max(gt.last_frame - gt.first_frame + 1, 0))
    last_match: Dict[int, int] = {}
    gt_frames: Dict[int, int] = defaultdict(int)
    gt_matched: Dict[int, int] = defaultdict(int)

    for frame in _frames(gt, hyp):
        gt_boxes, hyp_boxes = gt.boxes_at(frame), hyp.boxes_at(frame)
        overlap = _overlaps(gt_boxes, hyp_boxes)
        valid = overlap >= iou_threshold
        report.num_gt += len(gt_boxes)
        report.num_hyp += len(hyp_boxes)
        for b in gt_boxes:
            gt_frames[b.identity] += 1

        pairs: List[Tuple[int, int]] = []
        kept_h: Set[int] = set()
        hyp_index = {b.identity: k for k, b in enumerate(hyp_boxes)}
        for g, b in enumerate(gt_boxes):
            k = hyp_index.get(last_match.get(b.identity))
            # two GT ids can carry over the same hypothesis; the first keeps it
            if k is not None and valid[g, k] and k not in kept_h:
                pairs.append((g, k))
                kept_h.add(k)

        kept_g = {g for g, _ in pairs}
        free_g = [g for g in range(len(gt_boxes)) if g not in kept_g]
        free_h = [k for k in range(len(hyp_boxes)) if k not in kept_h]
        if free_g and free_h:
            sub = valid[np.ix_(free_g, free_h)]
            costs = np.where(sub, 1.0 - overlap[np.ix_(free_g, free_h)], _INVALID)
            rows, cols = linear_sum_assignment(costs)
            for r, c in zip(rows, cols):
                if not sub[r, c]:
                    continue
                g, k = free_g[r], free_h[c]
                previous = last_match.get(gt_boxes[g].identity)
                if previous is not None and previous != hyp_boxes[k].identity:
                    report.id_switches += 1
                pairs.append((g, k))

        for g, k in pairs:
            last_match[gt_boxes[g].identity] = hyp_boxes[k].identity
            gt_matched[gt_boxes[g].identity] += 1
            report.iou_sum += float(overlap[g, k])
        report.matches += len(pairs)
        report.fn += len(gt_boxes) - len(pairs)
        report.fp += len(hyp_boxes) - len(pairs)

    for identity, count in gt_frames.items():
        coverage = gt_matched[identity] / count
        if coverage >= MOSTLY_TRACKED:
            report.mostly_tracked += 1
        elif coverage < MOSTLY_LOST:
            report.mostly_lost += 1
    _finish_clear_mot(report)
    return report


def _finish_clear_mot(report: MetricReport) -> None:
    report.mota = 1.0 - (report.fp + report.fn + report.id_switches) / report.num_gt if report.num_gt else 0.0
    report.motp = report.iou_sum / report.matches if report.matches else 0.0


def idf1(gt: GtSequence, hyp: GtSequence, iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> MetricReport:
    """
    ID measures from one global identity pairing.

    Returns:
        MetricReport with idf1, idp, idr, idtp, idfp, idfn, num_gt and num_hyp
    """
    _check_range(gt, hyp)
    co_frames: Dict[Tuple[int, int], int] = defaultdict(int)
    gt_ids, hyp_ids = set(), set()
    num_gt = num_hyp = 0
    for frame in _frames(gt, hyp):
        gt_boxes, hyp_boxes = gt.boxes_at(frame), hyp.boxes_at(frame)
        num_gt += len(gt_boxes)
        num_hyp += len(hyp_boxes)
        gt_ids.update(b.identity for b in gt_boxes)
        hyp_ids.update(b.identity for b in hyp_boxes)
        overlap = _overlaps(gt_boxes, hyp_boxes)
        for g, k in zip(*np.nonzero(overlap >= iou_threshold)):
            co_frames[gt_boxes[g].identity, hyp_boxes[k].identity] += 1

    idtp = 0
    if gt_ids and hyp_ids:
        gt_list, hyp_list = sorted(gt_ids), sorted(hyp_ids)
        counts = np.array([[co_frames.get((g, h), 0) for h in hyp_list] for g in gt_list], dtype=float)
        rows, cols = linear_sum_assignment(-counts)
        idtp = int(counts[rows, cols].sum())

    report = MetricReport(num_gt=num_gt, num_hyp=num_hyp, idtp=idtp,
                          idfp=num_hyp - idtp, idfn=num_gt - idtp)
    _finish_id_measures(report)
    return report


def _finish_id_measures(report: MetricReport) -> None:
    denominator = 2 * report.idtp + report.idfp + report.idfn
    report.idf1 = 2 * report.idtp / denominator if denominator else 0.0
    report.idp = report.idtp / (report.idtp + report.idfp) if report.idtp + report.idfp else 0.0
    report.idr = report.idtp / (report.idtp + report.idfn) if report.idtp + report.idfn else 0.0


def evaluate(gt: GtSequence, hyp: GtSequence, name: str = "",
             iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> MetricReport:
    """Full report for one sequence."""
    report = clear_mot(gt, hyp, iou_threshold)
    ids = idf1(gt, hyp, iou_threshold)
    report.name = name
    report.idf1, report.idp, report.idr = ids.idf1, ids.idp, ids.idr
    report.idtp, report.idfp, report.idfn = ids.idtp, ids.idfp, ids.idfn
    logger.debug(f"{name or 'sequence'}: MOTA {report.mota:.3f} IDF1 {report.idf1:.3f} "
                 f"IDSW {report.id_switches}")
    return report


def aggregate(reports: Sequence[MetricReport], name: str = "OVERALL") -> MetricReport:
    """Pool counts over sequences and recompute the scores from the pooled counts."""
    total = MetricReport(name=name)
    for r in reports:
        for attr in ("id_switches", "fp", "fn", "matches", "num_gt", "num_hyp", "idtp", "idfp", "idfn",
                     "mostly_tracked", "mostly_lost", "num_frames"):
            setattr(total, attr, getattr(total, attr) + getattr(r, attr))
        total.iou_sum += r.iou_sum
    _finish_clear_mot(total)
    _finish_id_measures(total)
    return total


# Renderings -----------------------------------------------------------------

_COLUMNS = (("MOTA", "mota", "{:.3f}"), ("IDF1", "idf1", "{:.3f}"), ("MOTP", "motp", "{:.3f}"),
            ("IDP", "idp", "{:.3f}"), ("IDR", "idr", "{:.3f}"), ("IDSW", "id_switches", "{:d}"),
            ("FP", "fp", "{:d}"), ("FN", "fn", "{:d}"), ("MT", "mostly_tracked", "{:d}"),
            ("ML", "mostly_lost", "{:d}"), ("GT", "num_gt", "{:d}"))


def format_table(reports: Sequence[MetricReport]) -> str:
    """Plain-text table, one row per report."""
    width = max([len(r.name) for r in reports] + [8])
    header = f"{'Sequence':<{width}}  " + "  ".join(f"{title:>7}" for title, _, _ in _COLUMNS)
    lines = [header, "-" * len(header)]
    for r in reports:
        cells = "  ".join(f"{fmt.format(getattr(r, attr)):>7}" for _, attr, fmt in _COLUMNS)
        lines.append(f"{r.name:<{width}}  {cells}")
    return "\n".join(lines)


def format_key_value(report: MetricReport) -> str:
    """Single line of key=value pairs for machine parsing."""
    parts = []
    for key, value in report.to_dict().items():
        if isinstance(value, float):
            value = f"{value:.6f}"
        parts.append(f"{key}={value}")
    return " ".join(parts)


def format_summary(report: MetricReport) -> str:
    return f"MOTA={report.mota:.3f} IDF1={report.idf1:.3f} IDSW={report.id_switches}"


def reports_to_json(reports: Sequence[MetricReport]) -> bytes:
    return orjson.dumps([r.to_dict() for r in reports], option=orjson.OPT_INDENT_2)
