"""Bundled protocols and a by-name factory."""

from __future__ import annotations

from .base import PROPERTY_NAMES, UNWRITTEN, ProtocolSpec, WriteArityExceeded
from .cops_rw import make_cops_rw_like
from .cops_snow import make_cops_snow_like
from .strawman import make_strawman
from .wren import make_wren_like

PROTOCOLS = ("cops-snow", "wren", "cops-rw", "strawman-eager", "strawman-commit_wait")


def make_protocol(name: str, **params) -> ProtocolSpec:
    if name == "cops-snow":
        return make_cops_snow_like(**params)
    if name == "wren":
        return make_wren_like(**params)
    if name == "cops-rw":
        return make_cops_rw_like(**params)
    if name in ("strawman-eager", "eager"):
        return make_strawman("eager", **params)
    if name in ("strawman-commit_wait", "commit_wait"):
        return make_strawman("commit_wait", **params)
    raise ValueError(f"unknown protocol {name!r}; choose from {', '.join(PROTOCOLS)}")


__all__ = [
    "PROPERTY_NAMES", "PROTOCOLS", "UNWRITTEN", "ProtocolSpec", "WriteArityExceeded",
    "make_cops_rw_like", "make_cops_snow_like", "make_protocol", "make_strawman", "make_wren_like",
]
