import numpy as np
import pytest


def central_difference(fn, arrays, eps=1e-5):
    """Finite-difference gradient of scalar ``fn(*arrays)`` w.r.t. every array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            up = fn(*arrays)
            arr[idx] = orig - eps
            down = fn(*arrays)
            arr[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


def direct_conv2d(x, w, stride=1, dilation=1, groups=1):
    """Loop-by-loop reference convolution with 'same' zero padding."""
    n, c, h, wd = x.shape
    oc, cg, k, _ = w.shape
    pad = dilation * (k - 1) // 2
    oh, ow = (h - 1) // stride + 1, (wd - 1) // stride + 1
    og = oc // groups
    out = np.zeros((n, oc, oh, ow))
    for b in range(n):
        for o in range(oc):
            g = o // og
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cg):
                        for a in range(k):
                            for bb in range(k):
                                r = i * stride + a * dilation - pad
                                s = j * stride + bb * dilation - pad
                                if 0 <= r < h and 0 <= s < wd:
                                    acc += x[b, g * cg + ci, r, s] * w[o, ci, a, bb]
                    out[b, o, i, j] = acc
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_KEY = pytest.StashKey[list]()


class CriterionRecorder:
    """Collects one pass/fail line per acceptance criterion."""

    def __init__(self, lines: list):
        self.lines = lines

    def record(self, number: int, title: str, passed: bool, detail: str = "") -> str:
        line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
        self.lines.append((number, line))
        print(line)
        return line


@pytest.fixture(scope="session")
def acceptance(request):
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])
    return CriterionRecorder(lines)


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
