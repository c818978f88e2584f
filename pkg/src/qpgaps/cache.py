"""Content-addressed caching of band structures and hashing of run configs.

The cache is advisory: a missing, unreadable or mismatched entry means
recompute, never a wrong answer.  Keys are SHA-256 of the canonical JSON of
every numeric input; entries embed the key so corruption is detectable.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from . import __version__
from .errors import CacheCorruptionError
from .fourier import FourierMap
from .spectrum import BandStructure


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def content_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:24]


def _f_signature(f):
    return {
        "period": f.period,
        "coeffs": [[float(c.real), float(c.imag)] for c in f.coeffs.reshape(-1)],
    }


def band_structure_key(lam, f, pq, theta_samples, e_resolution):
    return content_hash({
        "kind": "band_structure",
        "version": __version__,
        "lambda": float(lam),
        "potential": _f_signature(f),
        "p": pq[0], "q": pq[1],
        "theta_samples": theta_samples,
        "e_resolution": float(e_resolution),
    })


def store_band_structure(cache_dir, key, bs):
    os.makedirs(cache_dir, exist_ok=True)
    payload = {
        "key": key,
        "version": __version__,
        "approximant": list(bs.approximant),
        "lambda": bs.lam,
        "bands": [[a, b] for a, b in bs.bands],
        "theta_grid": bs.theta_grid,
        "ref_edges": list(bs.ref_edges),
        "flagged": bs.flagged,
        "potential": _f_signature(bs.potential),
    }
    path = os.path.join(cache_dir, key + ".json")
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(canonical_json(payload))
    os.replace(tmp, path)
    return path


def load_band_structure(cache_dir, key, strict=False):
    """None on any miss or damage unless strict, which raises on damage."""
    path = os.path.join(cache_dir, key + ".json")
    if not os.path.exists(path):
        return None
    try:
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("key") != key:
            raise CacheCorruptionError(f"key mismatch in {path}")
        coeffs = np.array([a + 1j * b for a, b in payload["potential"]["coeffs"]])
        f = FourierMap(coeffs, payload["potential"]["period"])
        return BandStructure(
            approximant=tuple(payload["approximant"]),
            lam=payload["lambda"],
            potential=f,
            bands=tuple((a, b) for a, b in payload["bands"]),
            theta_grid=payload["theta_grid"],
            ref_edges=tuple(payload["ref_edges"]),
            flagged=payload["flagged"],
        )
    except CacheCorruptionError:
        if strict:
            raise
        return None
    except Exception as exc:
        if strict:
            raise CacheCorruptionError(f"unreadable cache entry {path}: {exc}") from exc
        return None


def cache_stats(cache_dir):
    if not os.path.isdir(cache_dir):
        return {"entries": 0, "bytes": 0}
    names = [n for n in os.listdir(cache_dir) if n.endswith(".json")]
    total = sum(os.path.getsize(os.path.join(cache_dir, n)) for n in names)
    return {"entries": len(names), "bytes": total}


def cache_verify(cache_dir):
    """Raises CacheCorruptionError on the first damaged entry."""
    if not os.path.isdir(cache_dir):
        return 0
    count = 0
    for name in sorted(os.listdir(cache_dir)):
        if not name.endswith(".json"):
            continue
        key = name[:-5]
        load_band_structure(cache_dir, key, strict=True)
        count += 1
    return count


def cache_clear(cache_dir):
    if not os.path.isdir(cache_dir):
        return 0
    count = 0
    for name in os.listdir(cache_dir):
        if name.endswith(".json"):
            os.remove(os.path.join(cache_dir, name))
            count += 1
    return count
