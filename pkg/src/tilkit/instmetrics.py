"""Instance segmentation and classification metric suite.

Instance maps pair a per-pixel label raster (0 = background) with a class
per instance. Ground truth and prediction are matched by IoU; from a single
match ledger the suite derives segmentation overlap scores (Dice, Dice2,
AJI, AJI+, DQ/SQ/PQ), per-class detection recall, classification-only
metrics over matched pairs, integrated detection+classification metrics
and the weighted detection+classification F-score with its companion
precision/recall.

Conventions (documented in reports): both maps empty gives segmentation
score 1.0, one side empty gives 0.0; a metric whose denominator is zero
is reported as absent (``None``), never as 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "DimensionMismatchError",
    "UnmappedClassError",
    "InstanceMap",
    "MatchPair",
    "MatchLedger",
    "ClassScores",
    "ReplicationScores",
    "MetricsReport",
    "MetricsAccumulator",
    "match_instances",
    "dice",
    "dice2",
    "aji",
    "aji_plus",
    "panoptic",
    "detection_recall",
    "classification_metrics",
    "integrated_metrics",
    "replication_fscore",
    "class_remap",
    "f1_from_pr",
    "compute_report",
]

DEFAULT_ALPHAS = (2.0, 2.0, 1.0, 1.0)


class DimensionMismatchError(ValueError):
    """Ground truth and prediction rasters differ in shape."""


class UnmappedClassError(KeyError):
    """A class occurring in the map is missing from a remapping."""


@dataclass
class InstanceMap:
    """Per-pixel instance labels plus a class label per instance."""

    labels: np.ndarray
    classes: dict[int, str]

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise ValueError("labels must be a 2-d raster")
        missing = [i for i in self.ids() if i not in self.classes]
        if missing:
            raise ValueError(f"instances without a class entry: {missing}")

    def ids(self) -> list[int]:
        ids = np.unique(self.labels)
        return [int(i) for i in ids if i != 0]

    def sizes(self) -> dict[int, int]:
        ids, counts = np.unique(self.labels[self.labels != 0], return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}


@dataclass(frozen=True)
class MatchPair:
    gt_id: int
    pred_id: int
    iou: float
    gt_class: str
    pred_class: str


@dataclass
class MatchLedger:
    """Instance pairing between ground truth and prediction.

    ``pairs`` hold the matched instances with their IoU and both class
    labels; ``unmatched_gt`` are the missed instances, ``unmatched_pred``
    the spurious ones.
    """

    pairs: list[MatchPair]
    unmatched_gt: list[int]
    unmatched_pred: list[int]
    gt_classes: dict[int, str]
    pred_classes: dict[int, str]
    iou_threshold: float = 0.5


def _intersections(gt: np.ndarray, pred: np.ndarray) -> dict[tuple[int, int], int]:
    """Pixel counts of every overlapping (gt_id, pred_id) instance pair."""
    both = (gt != 0) & (pred != 0)
    if not both.any():
        return {}
    keys = gt[both].astype(np.int64) << 32 | pred[both].astype(np.int64)
    uniq, counts = np.unique(keys, return_counts=True)
    return {
        (int(k >> 32), int(k & 0xFFFFFFFF)): int(c) for k, c in zip(uniq, counts)
    }


def _check_dims(gt: InstanceMap, pred: InstanceMap) -> None:
    if gt.labels.shape != pred.labels.shape:
        raise DimensionMismatchError(
            f"gt {gt.labels.shape} vs pred {pred.labels.shape}"
        )


def match_instances(
    gt: InstanceMap, pred: InstanceMap, iou_threshold: float = 0.5
) -> MatchLedger:
    """Pair ground-truth and predicted instances by IoU.

    With a threshold of at least 0.5 every pair with IoU above it is kept;
    such a pairing is automatically one-to-one. Below 0.5 a maximum-IoU
    one-to-one assignment is computed first and then thresholded, keeping
    the ledger invariant that every instance appears in at most one pair.
    """
    _check_dims(gt, pred)
    inter = _intersections(gt.labels, pred.labels)
    gt_sizes, pred_sizes = gt.sizes(), pred.sizes()
    iou = {
        (g, p): c / (gt_sizes[g] + pred_sizes[p] - c) for (g, p), c in inter.items()
    }
    if iou_threshold >= 0.5:
        matched = [(g, p, v) for (g, p), v in iou.items() if v > iou_threshold]
    else:
        gids = sorted(gt_sizes)
        pids = sorted(pred_sizes)
        cost = np.zeros((len(gids), len(pids)))
        for (g, p), v in iou.items():
            cost[gids.index(g), pids.index(p)] = v
        rows, cols = linear_sum_assignment(cost, maximize=True)
        matched = [
            (gids[r], pids[c], float(cost[r, c]))
            for r, c in zip(rows, cols)
            if cost[r, c] > iou_threshold
        ]
    matched.sort()
    pairs = [
        MatchPair(g, p, v, gt.classes[g], pred.classes[p]) for g, p, v in matched
    ]
    used_gt = {p.gt_id for p in pairs}
    used_pred = {p.pred_id for p in pairs}
    return MatchLedger(
        pairs=pairs,
        unmatched_gt=[g for g in sorted(gt_sizes) if g not in used_gt],
        unmatched_pred=[p for p in sorted(pred_sizes) if p not in used_pred],
        gt_classes=dict(gt.classes),
        pred_classes=dict(pred.classes),
        iou_threshold=iou_threshold,
    )


def dice(gt: InstanceMap, pred: InstanceMap) -> float:
    """Foreground Dice: 2TP / (2TP + FP + FN) over binarized pixels."""
    _check_dims(gt, pred)
    fg_g = gt.labels != 0
    fg_p = pred.labels != 0
    tp = int((fg_g & fg_p).sum())
    fp = int((fg_p & ~fg_g).sum())
    fn = int((fg_g & ~fg_p).sum())
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def dice2(
    gt: InstanceMap,
    pred: InstanceMap,
    ledger: MatchLedger,
    per_instance_average: bool = False,
) -> float:
    """Aggregated per-nucleus Dice over matched pairs.

    Default is the ratio of sums (sum of 2|G∩P| over sum of |G|+|P|);
    ``per_instance_average`` switches to the mean of per-pair Dice values.
    Zero when nothing matched.
    """
    _check_dims(gt, pred)
    if not ledger.pairs:
        return 0.0
    inter = _intersections(gt.labels, pred.labels)
    gt_sizes, pred_sizes = gt.sizes(), pred.sizes()
    if per_instance_average:
        values = [
            2.0 * inter[(p.gt_id, p.pred_id)] / (gt_sizes[p.gt_id] + pred_sizes[p.pred_id])
            for p in ledger.pairs
        ]
        return float(np.mean(values))
    num = sum(2.0 * inter[(p.gt_id, p.pred_id)] for p in ledger.pairs)
    den = sum(gt_sizes[p.gt_id] + pred_sizes[p.pred_id] for p in ledger.pairs)
    return num / den


def _aji_sums(gt: InstanceMap, pred: InstanceMap) -> tuple[float, float]:
    """Numerator/denominator of AJI under sequential greedy claiming.

    Ground-truth instances are visited in ascending id; each claims the
    still-unclaimed prediction maximizing the Jaccard index (smallest
    prediction id on ties). Unclaimed predictions are added to the
    denominator.
    """
    inter = _intersections(gt.labels, pred.labels)
    gt_sizes, pred_sizes = gt.sizes(), pred.sizes()
    by_gt: dict[int, list[tuple[int, int]]] = {}
    for (g, p), c in inter.items():
        by_gt.setdefault(g, []).append((p, c))
    claimed: set[int] = set()
    num = 0.0
    den = 0.0
    for g in sorted(gt_sizes):
        best = None
        for p, c in sorted(by_gt.get(g, [])):
            if p in claimed:
                continue
            jac = c / (gt_sizes[g] + pred_sizes[p] - c)
            if best is None or jac > best[0]:
                best = (jac, p, c)
        if best is None:
            den += gt_sizes[g]
            continue
        _, p, c = best
        claimed.add(p)
        num += c
        den += gt_sizes[g] + pred_sizes[p] - c
    for p, size in pred_sizes.items():
        if p not in claimed:
            den += size
    return num, den


def aji(gt: InstanceMap, pred: InstanceMap) -> float:
    """Aggregated Jaccard index (sequential greedy claiming)."""
    _check_dims(gt, pred)
    num, den = _aji_sums(gt, pred)
    if den == 0:
        return 1.0
    return num / den


def _aji_plus_sums(gt: InstanceMap, pred: InstanceMap) -> tuple[float, float]:
    """AJI numerator/denominator under the optimal one-to-one assignment.

    The denominator always equals total instance mass minus the numerator,
    so the score is maximized exactly by the assignment maximizing total
    matched intersection; that optimum is computed here. Because the
    sequential claiming of plain AJI is one feasible assignment, this
    variant can never score below it.
    """
    inter = _intersections(gt.labels, pred.labels)
    gt_sizes, pred_sizes = gt.sizes(), pred.sizes()
    num = 0.0
    if inter:
        gids = sorted({g for g, _ in inter})
        pids = sorted({p for _, p in inter})
        weights = np.zeros((len(gids), len(pids)))
        for (g, p), c in inter.items():
            weights[gids.index(g), pids.index(p)] = c
        rows, cols = linear_sum_assignment(weights, maximize=True)
        num = float(weights[rows, cols].sum())
    total_mass = float(sum(gt_sizes.values()) + sum(pred_sizes.values()))
    return num, total_mass - num


def aji_plus(gt: InstanceMap, pred: InstanceMap) -> float:
    """AJI over a one-to-one assignment instead of sequential claiming.

    Uses the overlap-maximizing (hence score-maximizing) assignment, which
    removes plain AJI's penalty for predictions shared between ground-truth
    instances; aji_plus >= aji holds for every input.
    """
    _check_dims(gt, pred)
    num, den = _aji_plus_sums(gt, pred)
    if den == 0:
        return 1.0
    return num / den


def panoptic(
    gt: InstanceMap, pred: InstanceMap, ledger: MatchLedger
) -> tuple[float, float, float]:
    """Detection, segmentation and panoptic quality from a 0.5 ledger.

    DQ = |TP| / (|TP| + 0.5 |FP| + 0.5 |FN|), SQ = mean matched IoU
    (0 when nothing matched), PQ = DQ * SQ. All three are 1.0 when neither
    map contains instances.
    """
    tp = len(ledger.pairs)
    fp = len(ledger.unmatched_pred)
    fn = len(ledger.unmatched_gt)
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0
    dq = tp / (tp + 0.5 * fp + 0.5 * fn)
    sq = float(np.mean([p.iou for p in ledger.pairs])) if ledger.pairs else 0.0
    return dq, sq, dq * sq


def detection_recall(ledger: MatchLedger, cls: str) -> float | None:
    """Fraction of ground-truth instances of ``cls`` that were detected.

    Absent (``None``) when the ground truth contains no instance of the
    class.
    """
    tp = sum(1 for p in ledger.pairs if p.gt_class == cls)
    fn = sum(1 for g in ledger.unmatched_gt if ledger.gt_classes[g] == cls)
    if tp + fn == 0:
        return None
    return tp / (tp + fn)


@dataclass(frozen=True)
class ClassScores:
    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None


def _scores(tp: int, tn: int, fp: int, fn: int) -> ClassScores:
    total = tp + tn + fp + fn
    return ClassScores(
        accuracy=(tp + tn) / total if total else None,
        precision=tp / (tp + fp) if tp + fp else None,
        recall=tp / (tp + fn) if tp + fn else None,
        f1=tp / (tp + 0.5 * (fp + fn)) if tp + fp + fn else None,
    )


def classification_metrics(ledger: MatchLedger, cls: str) -> ClassScores:
    """Classification confusion restricted to matched pairs.

    All four scores are absent when no matched pair involves ``cls`` on
    either side.
    """
    if not any(cls in (p.gt_class, p.pred_class) for p in ledger.pairs):
        return ClassScores(None, None, None, None)
    tp = sum(1 for p in ledger.pairs if p.gt_class == cls and p.pred_class == cls)
    tn = sum(1 for p in ledger.pairs if p.gt_class != cls and p.pred_class != cls)
    fp = sum(1 for p in ledger.pairs if p.gt_class != cls and p.pred_class == cls)
    fn = sum(1 for p in ledger.pairs if p.gt_class == cls and p.pred_class != cls)
    return _scores(tp, tn, fp, fn)


def _integrated_confusion(ledger: MatchLedger, cls: str) -> tuple[int, int, int, int]:
    # Cells: matched pairs carry their GT class; spurious predictions carry
    # an effective GT class of "none". Missed GT instances count only toward
    # the FN of their own class.
    tp = tn = fp = fn = 0
    for p in ledger.pairs:
        if p.gt_class == cls:
            if p.pred_class == cls:
                tp += 1
            else:
                fn += 1
        else:
            if p.pred_class == cls:
                fp += 1
            else:
                tn += 1
    for pid in ledger.unmatched_pred:
        if ledger.pred_classes[pid] == cls:
            fp += 1
        else:
            tn += 1
    fn += sum(1 for g in ledger.unmatched_gt if ledger.gt_classes[g] == cls)
    return tp, tn, fp, fn


def integrated_metrics(ledger: MatchLedger, cls: str) -> ClassScores:
    """Detection+classification confusion for one class.

    True positives are detected instances of the class classified
    correctly; missed instances of the class count as false negatives;
    spurious detections count against whatever class they were given.
    """
    return _scores(*_integrated_confusion(ledger, cls))


@dataclass(frozen=True)
class ReplicationScores:
    f: float | None
    precision: float | None
    recall: float | None


def replication_fscore(
    ledger: MatchLedger,
    cls: str,
    alphas: tuple[float, float, float, float] = DEFAULT_ALPHAS,
) -> ReplicationScores:
    """Weighted detection+classification F-score and companion P/R.

    Classification confusion is taken over matched pairs; detection errors
    enter as the total counts of spurious and missed instances. The weights
    (default 2, 2, 1, 1) emphasize classification mistakes over detection
    mistakes:

        F = 2 (TP + TN) / (2 (TP + TN) + a0 FP + a1 FN + a2 FP_d + a3 FN_d)

    with Precision = TPN / (TPN + 2 FP + FP_d) and
    Recall = TPN / (TPN + 2 FN + FN_d) for TPN = TP + TN.
    """
    a0, a1, a2, a3 = alphas
    tp = sum(1 for p in ledger.pairs if p.gt_class == cls and p.pred_class == cls)
    tn = sum(1 for p in ledger.pairs if p.gt_class != cls and p.pred_class != cls)
    fp = sum(1 for p in ledger.pairs if p.gt_class != cls and p.pred_class == cls)
    fn = sum(1 for p in ledger.pairs if p.gt_class == cls and p.pred_class != cls)
    fp_d = len(ledger.unmatched_pred)
    fn_d = len(ledger.unmatched_gt)
    tpn = tp + tn
    f_den = 2.0 * tpn + a0 * fp + a1 * fn + a2 * fp_d + a3 * fn_d
    p_den = tpn + 2.0 * fp + fp_d
    r_den = tpn + 2.0 * fn + fn_d
    return ReplicationScores(
        f=2.0 * tpn / f_den if f_den else None,
        precision=tpn / p_den if p_den else None,
        recall=tpn / r_den if r_den else None,
    )


def class_remap(imap: InstanceMap, mapping: Mapping[str, str]) -> InstanceMap:
    """Return a copy of the map with instance classes renamed.

    Every class occurring in the map must appear in ``mapping``.
    """
    missing = sorted({c for c in imap.classes.values() if c not in mapping})
    if missing:
        raise UnmappedClassError(f"classes without a mapping: {missing}")
    return InstanceMap(
        labels=imap.labels.copy(),
        classes={i: mapping[c] for i, c in imap.classes.items()},
    )


def f1_from_pr(precision: float, recall: float) -> float | None:
    """Harmonic mean of precision and recall; absent when both are zero."""
    if not 0 <= precision <= 1 or not 0 <= recall <= 1:
        raise ValueError("precision and recall must lie in [0, 1]")
    if precision + recall == 0:
        return None
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class MetricsReport:
    """Image- or corpus-level metric report.

    ``per_class`` maps class name to detection recall, classification-only
    scores, integrated scores and the weighted replication scores.
    """

    dice: float
    dice2: float
    aji: float
    aji_plus: float
    dq: float
    sq: float
    pq: float
    per_class: dict[str, dict] = field(default_factory=dict)

    def to_json(self) -> dict:
        """Serialization mirroring the usual results-table row names."""

        def r(v):
            return None if v is None else round(v, 4)

        out = {
            "Dice": r(self.dice),
            "Dice2": r(self.dice2),
            "AJI": r(self.aji),
            "AJI+": r(self.aji_plus),
            "DQ": r(self.dq),
            "SQ": r(self.sq),
            "PQ": r(self.pq),
        }
        for cls, scores in sorted(self.per_class.items()):
            out[f"Recall_d^{cls}"] = r(scores["detection_recall"])
            for level, key in (("c", "classification"), ("dc", "integrated")):
                s: ClassScores = scores[key]
                out[f"Accuracy_{level}^{cls}"] = r(s.accuracy)
                out[f"Precision_{level}^{cls}"] = r(s.precision)
                out[f"Recall_{level}^{cls}"] = r(s.recall)
                out[f"F1_{level}^{cls}"] = r(s.f1)
            rep: ReplicationScores = scores["replication"]
            out[f"F_dcr^{cls}"] = r(rep.f)
            out[f"Precision_dcr^{cls}"] = r(rep.precision)
            out[f"Recall_dcr^{cls}"] = r(rep.recall)
        return out


class MetricsAccumulator:
    """Corpus-level aggregation: counts are summed across images and turned
    into ratios only at the end, so aggregation is associative."""

    def __init__(
        self,
        iou_threshold: float = 0.5,
        alphas: tuple[float, float, float, float] = DEFAULT_ALPHAS,
    ):
        self.iou_threshold = iou_threshold
        self.alphas = alphas
        self._dice = np.zeros(3)  # tp, fp, fn pixels
        self._dice2 = np.zeros(2)  # numerator, denominator
        self._aji = np.zeros(2)
        self._aji_plus = np.zeros(2)
        self._pq = np.zeros(4)  # tp, fp, fn, iou sum
        self._classes: set[str] = set()
        self._det: dict[str, np.ndarray] = {}  # tp, fn
        self._cls: dict[str, np.ndarray] = {}  # tp, tn, fp, fn
        self._cls_involved: set[str] = set()
        self._int: dict[str, np.ndarray] = {}

    def _bucket(self, store: dict, cls: str, n: int) -> np.ndarray:
        self._classes.add(cls)
        if cls not in store:
            store[cls] = np.zeros(n)
        return store[cls]

    def update(self, gt: InstanceMap, pred: InstanceMap) -> MatchLedger:
        _check_dims(gt, pred)
        ledger = match_instances(gt, pred, self.iou_threshold)
        fg_g = gt.labels != 0
        fg_p = pred.labels != 0
        self._dice += (
            int((fg_g & fg_p).sum()),
            int((fg_p & ~fg_g).sum()),
            int((fg_g & ~fg_p).sum()),
        )
        inter = _intersections(gt.labels, pred.labels)
        gt_sizes, pred_sizes = gt.sizes(), pred.sizes()
        for p in ledger.pairs:
            c = inter[(p.gt_id, p.pred_id)]
            self._dice2 += (2.0 * c, gt_sizes[p.gt_id] + pred_sizes[p.pred_id])
        self._aji += _aji_sums(gt, pred)
        self._aji_plus += _aji_plus_sums(gt, pred)
        self._pq += (
            len(ledger.pairs),
            len(ledger.unmatched_pred),
            len(ledger.unmatched_gt),
            sum(p.iou for p in ledger.pairs),
        )
        seen = set(gt.classes.values()) | set(pred.classes.values())
        for cls in seen:
            tp = sum(1 for p in ledger.pairs if p.gt_class == cls)
            fn = sum(1 for g in ledger.unmatched_gt if ledger.gt_classes[g] == cls)
            det = self._bucket(self._det, cls, 2)
            det += (tp, fn)
            if any(cls in (p.gt_class, p.pred_class) for p in ledger.pairs):
                self._cls_involved.add(cls)
            conf = self._bucket(self._cls, cls, 4)
            conf += (
                sum(1 for p in ledger.pairs if p.gt_class == cls and p.pred_class == cls),
                sum(1 for p in ledger.pairs if p.gt_class != cls and p.pred_class != cls),
                sum(1 for p in ledger.pairs if p.gt_class != cls and p.pred_class == cls),
                sum(1 for p in ledger.pairs if p.gt_class == cls and p.pred_class != cls),
            )
            integrated = self._bucket(self._int, cls, 4)
            integrated += _integrated_confusion(ledger, cls)
        return ledger

    def finalize(self) -> MetricsReport:
        tp, fp, fn = self._dice
        dice_v = 1.0 if tp + fp + fn == 0 else 2.0 * tp / (2.0 * tp + fp + fn)
        dice2_v = self._dice2[0] / self._dice2[1] if self._dice2[1] else 0.0
        aji_v = self._aji[0] / self._aji[1] if self._aji[1] else 1.0
        ajip_v = self._aji_plus[0] / self._aji_plus[1] if self._aji_plus[1] else 1.0
        ptp, pfp, pfn, iou_sum = self._pq
        if ptp + pfp + pfn == 0:
            dq = sq = pq = 1.0
        else:
            dq = ptp / (ptp + 0.5 * pfp + 0.5 * pfn)
            sq = iou_sum / ptp if ptp else 0.0
            pq = dq * sq
        per_class = {}
        for cls in sorted(self._classes):
            det_tp, det_fn = self._det[cls]
            fp_d = self._pq[1]
            fn_d = self._pq[2]
            ctp, ctn, cfp, cfn = self._cls[cls]
            a0, a1, a2, a3 = self.alphas
            tpn = ctp + ctn
            f_den = 2.0 * tpn + a0 * cfp + a1 * cfn + a2 * fp_d + a3 * fn_d
            p_den = tpn + 2.0 * cfp + fp_d
            r_den = tpn + 2.0 * cfn + fn_d
            per_class[cls] = {
                "detection_recall": (
                    det_tp / (det_tp + det_fn) if det_tp + det_fn else None
                ),
                "classification": (
                    _scores(int(ctp), int(ctn), int(cfp), int(cfn))
                    if cls in self._cls_involved
                    else ClassScores(None, None, None, None)
                ),
                "integrated": _scores(*(int(v) for v in self._int[cls])),
                "replication": ReplicationScores(
                    f=2.0 * tpn / f_den if f_den else None,
                    precision=tpn / p_den if p_den else None,
                    recall=tpn / r_den if r_den else None,
                ),
            }
        return MetricsReport(
            dice=dice_v,
            dice2=dice2_v,
            aji=aji_v,
            aji_plus=ajip_v,
            dq=dq,
            sq=sq,
            pq=pq,
            per_class=per_class,
        )


def compute_report(
    gt: InstanceMap,
    pred: InstanceMap,
    iou_threshold: float = 0.5,
    alphas: tuple[float, float, float, float] = DEFAULT_ALPHAS,
) -> MetricsReport:
    """Full metric report for a single image pair."""
    acc = MetricsAccumulator(iou_threshold=iou_threshold, alphas=alphas)
    acc.update(gt, pred)
    return acc.finalize()
