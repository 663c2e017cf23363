import logging
import time
from contextlib import contextmanager
from io import StringIO
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

LOG_FORMAT = '%(name)s|%(levelname)s|%(message)s'


def deep_merge(a: Dict[str, Any], b: Dict[str, Any], path: Optional[List[str]] = None) -> List[str]:
    """
    Overlay the nested settings in b onto a, in place.

    Mappings present on both sides are merged key by key, any other value from b
    replaces the one in a.

    Returns:
        Dotted names of the keys b introduced that a did not have, e.g. ``['ep.damping']``
    """
    prefix = path or []
    added: List[str] = []
    for key, value in b.items():
        current = a.get(key)
        if isinstance(current, dict) and isinstance(value, dict):
            added.extend(deep_merge(current, value, prefix + [str(key)]))
            continue
        if key not in a:
            added.append('.'.join(prefix + [str(key)]))
        a[key] = value
    return added


def get_logger(name: str = 'ogfmap',
               handlers: Union[logging.Handler, Sequence[logging.Handler], None] = None,
               formatter: Optional[logging.Formatter] = None,
               level: int = logging.INFO) -> logging.Logger:
    """
    Return the named logger at `level`, attaching handlers on first use only.

    Args:
        name: dotted logger name, modules pass ``ogfmap.<module>``
        handlers: handler or handlers to attach (default: a stderr StreamHandler)
        formatter: applied to the new handlers, LOG_FORMAT when omitted
        level: logging level
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)
    if logger.handlers:
        return logger

    if handlers is None:
        handlers = [logging.StreamHandler()]
    elif isinstance(handlers, logging.Handler):
        handlers = [handlers]

    for handler in handlers:
        handler.setFormatter(formatter or logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
    return logger


def set_formatter(logger: logging.Logger, new_format: str) -> Optional[str]:
    """Switch every handler of `logger` to `new_format`; return the previous format string."""
    previous = None
    for handler in logger.handlers:
        if handler.formatter is not None:
            previous = handler.formatter._fmt
        handler.setFormatter(logging.Formatter(new_format))
    return previous


def logging_to_file(logger: logging.Logger,
                    filename: Optional[str] = None) -> Tuple[List[logging.Handler], Optional[StringIO]]:
    """
    Send the records of `logger` to `filename`, or to an in-memory buffer when no
    filename is given. Pass the returned handlers to restore_logging to undo.

    Returns:
        (previous handlers, buffer or None)
    """
    previous = list(logger.handlers)
    buffer: Optional[StringIO] = None
    if filename:
        handler: logging.Handler = logging.FileHandler(filename, mode='w')
    else:
        buffer = StringIO()
        handler = logging.StreamHandler(buffer)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.handlers = [handler]
    return previous, buffer


def restore_logging(logger: logging.Logger, original_handlers: List[logging.Handler]) -> None:
    for handler in logger.handlers:
        if handler not in original_handlers:
            handler.close()
    logger.handlers = original_handlers


class Stopwatch:
    """Accumulates wall time in milliseconds over one or more `with sw.running():` blocks."""

    def __init__(self) -> None:
        self.elapsed_ms = 0.0

    @contextmanager
    def running(self) -> Iterator['Stopwatch']:
        start = time.perf_counter()
        try:
            yield self
        finally:
            self.elapsed_ms += (time.perf_counter() - start) * 1000.0
