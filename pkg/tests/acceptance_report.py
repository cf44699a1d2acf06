"""Shared state for the acceptance suite: one verdict line per criterion."""

RESULTS: dict[int, tuple[bool, str]] = {}
# builds from criteria 1-5: (criterion, violations, kernel_calls == misses)
BUILDS: list[tuple[int, int, bool]] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    RESULTS[criterion] = (ok, detail)
    print(line(criterion))


def line(criterion: int) -> str:
    ok, detail = RESULTS[criterion]
    return f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
