import json
import logging
import os
import sys
from multiprocessing import Pool

from tqdm import tqdm

from maskcount import settings

logger = logging.getLogger(__name__)


def progress_bar(iterable, **tqdm_kwargs):
    """
    Wrapper around tqdm that writes to stderr and stays quiet off a terminal.
    """
    tqdm_kwargs.setdefault("file", sys.stderr)
    tqdm_kwargs.setdefault("disable", not sys.stderr.isatty())
    tqdm_kwargs.setdefault("leave", False)
    return tqdm(iterable, **tqdm_kwargs)


def parallel_map(func, items, threads=None):
    """
    Map func over items, keeping the input order of the results.

    Runs serially unless MASKCOUNT_THREADS (or `threads`) asks for more than
    one worker; func must then be picklable (a module-level function or a
    functools.partial of one).
    """
    items = list(items)
    threads = threads or settings.THREADS
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with Pool(processes=min(threads, len(items))) as pool:
        return pool.map(func, items)


def write_json(filename, result):
    """
    Write output to json file
    """
    os.makedirs(os.path.dirname(os.path.abspath(filename)), exist_ok=True)
    with open(filename, "w") as fd:
        fd.write(json.dumps(result, indent=4))


def read_json(filename):
    with open(filename, "r") as fd:
        return json.loads(fd.read())
