import contextlib
import dataclasses
import hashlib
import json
import multiprocessing.pool
import os
import sys
import tempfile
from enum import IntEnum
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Type, TypeVar

from splat_autolabel.constants import CONFIG_VERSION, THREADS
from splat_autolabel.errors import InvalidConfig

T = TypeVar("T")
R = TypeVar("R")


def stdout(line: str) -> None:
    """
    Write line to standard output.
    """
    sys.stdout.write(line)
    sys.stdout.flush()


def stderr(line: str) -> None:
    """
    Write line to standard error.
    """
    sys.stderr.write(line)
    sys.stderr.flush()


class Level(IntEnum):
    """
    A class for severity levels.
    """

    ERROR = 0
    INFO = 1
    DEBUG = 2


class Tracer:
    """
    Severity-filtered messages on standard error.

    Long-running components hold a tracer instead of printing directly, so the
    command-line verbosity flags apply everywhere.
    """

    def __init__(self, verbosity: Level = Level.INFO) -> None:
        self.verbosity = verbosity

    def trace(self, message: str, level: Level = Level.DEBUG, *, exact: bool = False) -> None:
        """
        Log a message with a given severity level.
        """
        if level > self.verbosity:
            return
        if exact:
            if level == self.verbosity:
                stderr(message)
            return
        if level <= Level.ERROR:
            stderr(f"error: {message}\n")
        elif level == Level.INFO:
            stderr(f"info: {message}\n")
        elif level >= Level.DEBUG:
            stderr(f"debug: {message}\n")

    def progress(self, label: str, done: int, total: int) -> None:
        """
        Show a carriage-return progress line, finishing it when done == total.
        """
        if total <= 0:
            return
        pct = int(float(done) / total * 100)
        message = f"\r{label}: {pct:3.0f}% ({done}/{total})"
        if done == total:
            message = f"{message}, done.\n"
        self.trace(message, level=Level.INFO, exact=True)


QUIET = Tracer(Level.ERROR)


def parallel_map(func: Callable[[T], R], items: Iterable[T], threads: int = THREADS) -> List[R]:
    """
    Apply func to every item using a pool of threads.

    Results come back in input order, so any reduction over them happens in a
    fixed order regardless of scheduling.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with multiprocessing.pool.ThreadPool(processes=min(threads, len(items))) as pool:
        return pool.map(func, items)


def atomic_write(contents: bytes, path: str) -> None:
    # same directory as path to avoid being on a different filesystem
    directory = os.path.dirname(path) or "."
    try:
        temp_file = tempfile.NamedTemporaryFile(dir=directory, delete=False)
        temp_file.write(contents)
        temp_file.flush()
        os.fsync(temp_file.fileno())
        temp_file.close()  # necessary on Windows because we can't move an open file
        os.replace(temp_file.name, path)
    finally:
        with contextlib.suppress(Exception):
            os.unlink(temp_file.name)


def write_json(data: Any, path: str) -> None:
    atomic_write((json.dumps(data, indent=2) + "\n").encode("utf8"), path)


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def dataclass_from_dict(cls: Type[T], data: Mapping[str, Any], *, section: str = "") -> T:
    """
    Build a dataclass instance from a mapping, rejecting unknown keys.

    Missing keys take the dataclass defaults. Lists are converted to tuples
    where the default is a tuple, so JSON round trips compare equal.
    """
    fields = {f.name: f for f in dataclasses.fields(cls)}  # type: ignore[arg-type]
    unknown = sorted(set(data) - set(fields))
    if unknown:
        where = f" in section '{section}'" if section else ""
        msg = f"unknown config keys{where}: {', '.join(unknown)}"
        raise InvalidConfig(msg)
    kwargs: Dict[str, Any] = {}
    for name, value in data.items():
        default = fields[name].default
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


class Config:
    """
    A class to manage configuration data.

    A configuration is a set of named sections, each a flat mapping of
    settings. The file carries a version number so that files written by an
    incompatible release are rejected instead of being misread.
    """

    _VERSION: int = CONFIG_VERSION

    _filename: Optional[str]
    _sections: Dict[str, Dict[str, Any]]

    def __init__(self, filename: Optional[str] = None, *, create: bool = False) -> None:
        self._filename = filename
        self._sections = {}
        if filename is None:
            return
        if create:
            self.save()
        else:
            self.load()

    def save(self, filename: Optional[str] = None) -> None:
        path = filename or self._filename
        if path is None:
            msg = "no file name given for config"
            raise InvalidConfig(msg)
        write_json(self.to_json(), path)

    def load(self) -> None:
        if self._filename is None:
            return
        try:
            with open(self._filename) as f:
                rep = json.load(f)
        except json.JSONDecodeError as e:
            msg = f'cannot parse config file "{self._filename}": {e}'
            raise InvalidConfig(msg) from e
        version = rep.get("version")
        if version != self._VERSION:
            msg = 'expected config version %d, got %s; delete the config file "%s" to re-initialize' % (
                self._VERSION,
                version,
                self._filename,
            )
            raise InvalidConfig(msg)
        sections = rep.get("sections", {})
        if not isinstance(sections, dict):
            msg = f'config file "{self._filename}" has no valid "sections" object'
            raise InvalidConfig(msg)
        for name, values in sections.items():
            self.update(name, values)

    def to_json(self) -> Dict[str, Any]:
        return {"version": self._VERSION, "sections": self._sections}

    def section(self, name: str) -> Dict[str, Any]:
        return dict(self._sections.get(name, {}))

    def update(self, name: str, values: Mapping[str, Any]) -> None:
        """
        Merge values into a section; later updates win.
        """
        if not isinstance(values, Mapping):
            msg = f"config section '{name}' must be an object"
            raise InvalidConfig(msg)
        self._sections.setdefault(name, {}).update(values)

    def set_dataclass(self, name: str, value: Any) -> None:
        self._sections[name] = dataclasses.asdict(value)

    def get_dataclass(self, name: str, cls: Type[T]) -> T:
        return dataclass_from_dict(cls, self.section(name), section=name)
