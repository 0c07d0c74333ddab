"""Python access to the geoaddr pipeline and geocoding helpers."""

import json

from ._geoaddr import GeoaddrError, decode_center, encode, haversine_km, verify
from ._geoaddr import run as _run

__all__ = ["GeoaddrError", "decode_center", "encode", "haversine_km", "run", "verify"]


def run(*args):
    """Run a CLI command. Returns (exit_code, status, stderr); status is the
    parsed JSON line on success and None otherwise."""
    code, out, err = _run([str(a) for a in args])
    status = json.loads(out) if code == 0 and out.strip().startswith("{") else None
    return code, status, err
