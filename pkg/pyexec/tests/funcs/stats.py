def _check(row):
    if isinstance(row, bool) or not isinstance(row, (int, float)):
        raise ValueError(f"expected numeric rows, got {row!r}")
    return row


def sum(xs):
    total = 0
    for row in xs:
        total += _check(row)
    if isinstance(total, float) and total.is_integer():
        return int(total)
    return total


def minmax(xs):
    rows = list(xs)
    if not rows:
        raise ValueError("empty input")
    return min(rows), max(rows)
