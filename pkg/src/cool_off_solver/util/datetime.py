from datetime import timedelta


def format_time(elapsed):
    """Format elapsed seconds (or a timedelta) into a human readable string."""
    if not isinstance(elapsed, timedelta):
        elapsed = timedelta(seconds=elapsed)

    total_seconds = int(elapsed.total_seconds())
    hours, rest = divmod(total_seconds, 3600)
    minutes, seconds = divmod(rest, 60)
    milliseconds = elapsed.microseconds // 1000

    if hours:
        return f"{hours}h {minutes}m {seconds}s"

    if minutes:
        return f"{minutes}m {seconds}s"

    if seconds:
        return f"{seconds}.{milliseconds:03d}s"

    return f"{milliseconds}ms"
