import numpy as np
import pytest

from tilkit.instmetrics import InstanceMap

CLASS_POOL = ["inflammatory", "cancer", "stromal"]


def random_instance_map(rng, width=32, height=32, max_instances=6, classes=None):
    """Random blob map: rectangles and disks painted in id order (later ids
    overwrite earlier ones), so instances may abut, overlap or vanish."""
    classes = classes or CLASS_POOL
    labels = np.zeros((height, width), dtype=np.int32)
    n = int(rng.integers(0, max_instances + 1))
    mapping = {}
    yy, xx = np.mgrid[:height, :width]
    next_id = 1
    for _ in range(n):
        cx = rng.integers(0, width)
        cy = rng.integers(0, height)
        if rng.random() < 0.5:
            r = int(rng.integers(1, 6))
            blob = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        else:
            w = int(rng.integers(1, 9))
            h = int(rng.integers(1, 9))
            blob = (np.abs(xx - cx) <= w // 2) & (np.abs(yy - cy) <= h // 2)
        labels[blob] = next_id
        next_id += 1
    ids = [int(i) for i in np.unique(labels) if i != 0]
    for i in ids:
        mapping[i] = str(rng.choice(classes))
    return InstanceMap(labels=labels, classes=mapping)


def perturb_map(rng, imap, drop_prob=0.3, shift_max=3, relabel_prob=0.3):
    """Degrade a map into a plausible 'prediction': shift, drop and
    misclassify instances, then add occasional spurious blobs."""
    h, w = imap.labels.shape
    labels = np.zeros_like(imap.labels)
    classes = {}
    yy, xx = np.mgrid[:h, :w]
    next_id = 1
    for i in imap.ids():
        if rng.random() < drop_prob:
            continue
        dy, dx = rng.integers(-shift_max, shift_max + 1, size=2)
        ys, xs = np.nonzero(imap.labels == i)
        ys = np.clip(ys + dy, 0, h - 1)
        xs = np.clip(xs + dx, 0, w - 1)
        labels[ys, xs] = next_id
        cls = imap.classes[i]
        if rng.random() < relabel_prob:
            cls = str(rng.choice(CLASS_POOL))
        classes[next_id] = cls
        next_id += 1
    if rng.random() < 0.4:
        cx, cy = rng.integers(0, w), rng.integers(0, h)
        r = int(rng.integers(1, 4))
        blob = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        labels[blob] = next_id
        classes[next_id] = str(rng.choice(CLASS_POOL))
    ids = [int(i) for i in np.unique(labels) if i != 0]
    return InstanceMap(labels=labels, classes={i: classes[i] for i in ids})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" not in rep.nodeid:
                continue
            name = rep.nodeid.split("::")[-1]
            lines.append((name, "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, status in sorted(lines):
            terminalreporter.write_line(f"{status}  {name}")
