"""Number formatting for console summaries."""


def format_number(value, decimals=0):
    """Format number with thousand separators."""
    if value is None:
        return "N/A"
    if decimals == 0:
        return f"{int(value):,}"
    return f"{float(value):,.{decimals}f}"


def format_probability(value, digits=4):
    """Scientific notation for small probabilities."""
    if value is None:
        return "N/A"
    return f"{float(value):.{digits}e}"


def format_seconds(value):
    if value is None:
        return "N/A"
    if value < 1:
        return f"{value * 1000:.1f} ms"
    return f"{value:.2f} s"


def format_level_counts(counts, labels):
    """'4:3 8:0 hifi:2' in level order."""
    return " ".join(f"{label}:{counts.get(label, 0)}" for label in labels)
