import os
from collections import OrderedDict
from pathlib import Path

import numpy as np
import pytest

from liteie.image import save_image

CRITERIA = OrderedDict([
    (1, "parameter counts for the nine topologies"),
    (2, "analytic vs finite-difference gradients"),
    (3, "algebraic invariants of the enhancement curve"),
    (4, "closed-form iteration with phi3 = -1"),
    (5, "desk-scale training on LOL"),
    (6, "restoration-step ablation on LOL"),
    (7, "exposure-alpha sweep optimum"),
    (8, "oracle equivalences"),
    (9, "efficiency sanity (1080p latency, 4K/720p scaling)"),
    (10, "training determinism"),
])

_outcomes: dict[int, list[tuple[str, str]]] = {k: [] for k in CRITERIA}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if report.skipped:
            reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else str(report.longrepr)
            _outcomes[crit].append(("skipped", reason))
        else:
            _outcomes[crit].append((report.outcome, report.nodeid))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep.criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not any(_outcomes.values()):
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes[n]
        if not results:
            continue
        states = [s for s, _ in results]
        if "failed" in states:
            status = "FAIL"
        elif all(s == "skipped" for s in states):
            status = "NOT RUN"
        elif "skipped" in states:
            status = "PARTIAL"
        else:
            status = "PASS"
        line = f"criterion {n:2d} {status:8s} {title}"
        if status == "NOT RUN":
            line += f"; {results[0][1].removeprefix('Skipped: ')}"
        tr.write_line(line)


# -- shared fixtures -----------------------------------------------------------------

@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _synthetic_set(root: Path, names=("astronaut", "coffee", "chelsea", "rocket",
                                      "immunohistochemistry", "colorwheel")):
    """Darkened copies of bundled sample photos plus the originals as references."""
    import skimage.data

    from liteie.image import resize_bilinear

    low, high = root / "low", root / "high"
    low.mkdir(parents=True)
    high.mkdir(parents=True)
    for name in names:
        img = np.moveaxis(getattr(skimage.data, name)().astype(np.float64) / 255.0, -1, 0)
        h, w = img.shape[1:]
        s = min(1.0, 160 / max(h, w))
        img = resize_bilinear(img, int(h * s), int(w * s))
        save_image(img, high / f"{name}.png")
        save_image(0.25 * img ** 1.6, low / f"{name}.png")
    return low, high


@pytest.fixture(scope="session")
def synthetic_pairs(tmp_path_factory):
    return _synthetic_set(tmp_path_factory.mktemp("synthetic"))


def lol_root():
    root = os.environ.get("LITEIE_LOL_DIR")
    if not root:
        return None
    p = Path(root)
    needed = [p / "our485" / "low", p / "eval15" / "low", p / "eval15" / "high"]
    return p if all(d.is_dir() for d in needed) else None
