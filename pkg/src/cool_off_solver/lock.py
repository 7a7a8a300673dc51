import atexit
import sys

from filelock import FileLock, Timeout

from cool_off_solver.util.paths import get_lock_file_path

_held_locks = []
"""Output-directory locks held by this process, released at exit if a command did not."""


def _release_all():
    for lock in list(_held_locks):
        release_output_lock(lock)


atexit.register(_release_all)


def acquire_output_lock(output_dir):
    """
    Lock an output directory so two runs never interleave their writes.

    The lock file lives in the cache directory, not in the output directory, so it
    never shows up among the results. Exits if another run holds the lock.
    """
    lock_file = get_lock_file_path(output_dir)
    lock_file.parent.mkdir(parents=True, exist_ok=True)

    lock = FileLock(lock_file)

    try:
        lock.acquire(timeout=0.1)
    except Timeout:
        print(f"Another run is already writing to {output_dir}. Exiting.")
        sys.exit(1)

    _held_locks.append(lock)

    return lock


def release_output_lock(lock):
    if lock.is_locked:
        lock.release()

    if lock in _held_locks:
        _held_locks.remove(lock)
