"""Fit results and their on-disk form.

Every model writes the same two files: a coefficients CSV with columns
``term,estimate,se,se_valid`` and a ``key=value`` sidecar carrying scalar
metadata (log likelihood, convergence flag, seed, counts). Floats are
serialized with ``repr`` so a rewrite of an unchanged fit is byte
identical.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import ParseError, UnknownCovariate


@dataclass
class FitResult:
    """Coefficients and uncertainty for one fitted model."""

    model_kind: str
    term_names: List[str]
    coefs: np.ndarray
    se: np.ndarray
    se_valid: np.ndarray
    cov: np.ndarray
    loglik: float
    n_obs: int
    converged: bool
    covariate_means: Dict[str, float] = field(default_factory=dict)
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        k = len(self.term_names)
        self.coefs = np.asarray(self.coefs, dtype=np.float64)
        self.se = np.asarray(self.se, dtype=np.float64)
        self.se_valid = np.asarray(self.se_valid, dtype=bool)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if not (self.coefs.shape == self.se.shape == self.se_valid.shape == (k,)):
            raise ValueError("term_names, coefs, se, se_valid lengths disagree")
        if self.cov.shape != (k, k):
            raise ValueError("covariance shape does not match terms")

    @property
    def terms(self) -> Dict[str, float]:
        return dict(zip(self.term_names, map(float, self.coefs)))

    def coef(self, term: str) -> float:
        try:
            return float(self.coefs[self.term_names.index(term)])
        except ValueError:
            raise UnknownCovariate(f"fit has no term {term!r}") from None

    def index_of(self, term: str) -> int:
        try:
            return self.term_names.index(term)
        except ValueError:
            raise UnknownCovariate(f"fit has no term {term!r}") from None


def _fmt(x: float) -> str:
    return repr(float(x))


def save_fit(fit: FitResult, path) -> None:
    """Write the coefficients CSV; sidecar goes to ``<path stem>.meta``."""
    path = str(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "estimate", "se", "se_valid"])
        for i, name in enumerate(fit.term_names):
            w.writerow([
                name,
                _fmt(fit.coefs[i]),
                _fmt(fit.se[i]),
                "1" if fit.se_valid[i] else "0",
            ])
    meta_path = path.rsplit(".", 1)[0] + ".meta" if "." in path else path + ".meta"
    lines = [
        f"model_kind={fit.model_kind}",
        f"loglik={_fmt(fit.loglik)}",
        f"n_obs={fit.n_obs}",
        f"converged={'1' if fit.converged else '0'}",
    ]
    for k in sorted(fit.covariate_means):
        lines.append(f"mean.{k}={_fmt(fit.covariate_means[k])}")
    for k in sorted(fit.meta):
        lines.append(f"{k}={fit.meta[k]}")
    with open(meta_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_fit(path) -> FitResult:
    """Read a coefficients CSV and sidecar back into a FitResult.

    The covariance matrix is not serialized; the loaded fit carries a
    diagonal built from the standard errors (enough for single-term
    uncertainty, not for contrasts).
    """
    path = str(path)
    names: List[str] = []
    est: List[float] = []
    se: List[float] = []
    valid: List[bool] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["term", "estimate", "se", "se_valid"]:
            raise ParseError(f"{path}: line 1: bad header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"{path}: line {lineno}: expected 4 columns")
            names.append(row[0])
            try:
                est.append(float(row[1]))
                se.append(float(row[2]))
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: bad number") from None
            valid.append(row[3].strip() == "1")
    meta_path = path.rsplit(".", 1)[0] + ".meta" if "." in path else path + ".meta"
    meta: Dict[str, str] = {}
    means: Dict[str, float] = {}
    model_kind = "unknown"
    loglik = math.nan
    n_obs = 0
    converged = False
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ParseError(f"{meta_path}: line {lineno}: expected key=value")
                k, v = line.split("=", 1)
                if k == "model_kind":
                    model_kind = v
                elif k == "loglik":
                    loglik = float(v)
                elif k == "n_obs":
                    n_obs = int(v)
                elif k == "converged":
                    converged = v == "1"
                elif k.startswith("mean."):
                    means[k[5:]] = float(v)
                else:
                    meta[k] = v
    except FileNotFoundError:
        pass
    se_arr = np.asarray(se)
    return FitResult(
        model_kind=model_kind,
        term_names=names,
        coefs=np.asarray(est),
        se=se_arr,
        se_valid=np.asarray(valid, dtype=bool),
        cov=np.diag(np.where(np.isfinite(se_arr), se_arr, 0.0) ** 2),
        loglik=loglik,
        n_obs=n_obs,
        converged=converged,
        covariate_means=means,
        meta=meta,
    )
