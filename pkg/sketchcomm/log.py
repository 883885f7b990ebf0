"""
Logging Setup
One stream handler for the whole package. Messages carry a bracket tag
naming the subsystem, e.g. "[FABRIC] run_spmd P=4 backend=lockstep".
"""

import logging
import sys
from typing import Optional, TextIO

_HANDLER_NAME = "sketchcomm-stream"


def configure_logging(level: str = "INFO", stream: Optional[TextIO] = None) -> logging.Logger:
    """Attach (or retarget) the package handler; stdout unless `stream` is given."""
    root = logging.getLogger("sketchcomm")
    root.setLevel(level.upper())
    stream = stream or sys.stdout

    for handler in root.handlers:
        if handler.get_name() == _HANDLER_NAME:
            handler.setStream(stream)
            return root

    handler = logging.StreamHandler(stream)
    handler.set_name(_HANDLER_NAME)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)-7s %(message)s"))
    root.addHandler(handler)
    return root
