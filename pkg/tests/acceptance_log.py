"""Pass/fail lines for the acceptance criteria, printed in the pytest terminal summary."""
from __future__ import annotations

TITLES = {
    1: "gradient correctness",
    2: "FA-SNN oracles",
    3: "loss oracles",
    4: "overfit sanity",
    5: "distillation benefit",
    6: "missing-data robustness",
    7: "capacity ratio",
    8: "determinism and formats",
    9: "KDM balancing",
}

RESULTS: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), detail)
    print(line(n))


def line(n: int) -> str:
    ok, detail = RESULTS.get(n, (False, "did not run to completion"))
    return f"criterion {n} ({TITLES[n]}): {'PASS' if ok else 'FAIL'} | {detail}"
