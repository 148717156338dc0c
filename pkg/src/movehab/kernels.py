"""Kernel backend selection.

Imports the compiled extension when available, otherwise the pure-Python
fallback. The environment variable ``MOVEHAB_BACKEND`` forces a choice:
``compiled`` (raise if the extension is missing), ``python``, or unset for
auto-detection. ``movehab.kernels.BACKEND`` reports what was loaded.
"""

from __future__ import annotations

import logging
import os

logger = logging.getLogger(__name__)

_requested = os.environ.get("MOVEHAB_BACKEND", "").strip().lower()

if _requested not in ("", "auto", "compiled", "python"):
    raise ImportError(
        f"MOVEHAB_BACKEND must be 'compiled', 'python', or unset; got {_requested!r}"
    )

if _requested == "python":
    from . import _kernels_py as _impl
elif _requested == "compiled":
    from . import _speedups as _impl  # type: ignore[no-redef]
else:
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]
    except ImportError:
        logger.info("compiled kernels unavailable, using pure-Python fallback")
        from . import _kernels_py as _impl  # type: ignore[no-redef]

BACKEND = _impl.BACKEND

CHAIN_OK = _impl.CHAIN_OK
CHAIN_BAD_SHAPE = _impl.CHAIN_BAD_SHAPE
CHAIN_EXHAUSTED = _impl.CHAIN_EXHAUSTED

forward_loglik = _impl.forward_loglik
viterbi_path = _impl.viterbi_path
smoothing_probs = _impl.smoothing_probs
ssf_chain = _impl.ssf_chain
rng_uniforms = _impl.rng_uniforms
rng_gammas = _impl.rng_gammas
rng_vonmises = _impl.rng_vonmises
