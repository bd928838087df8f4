"""Reference selection schemes: a fixed RAT, or a uniformly random one."""
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from hetv2v.core.radio_model import RatProfile, find_rat
from hetv2v.errors import ConfigurationError

SINGLE_RAT = "single_rat"
RANDOM = "random"
CARHET = "carhet"
SCHEMES = (SINGLE_RAT, RANDOM, CARHET)

DEFAULT_SINGLE_RAT = 1  # DSRC 5.9

_SCHEME_RE = re.compile(r"^\s*([a-z_]+)\s*(?:[:(]\s*([^)]*?)\s*\)?)?\s*$")


@dataclass(frozen=True)
class Scheme:
    kind: str
    rat_id: Optional[int] = None

    def label(self) -> str:
        if self.kind == SINGLE_RAT:
            return f"{SINGLE_RAT}({self.rat_id})"
        return self.kind


def parse_scheme(text, catalog: Optional[Sequence[RatProfile]] = None) -> Scheme:
    """
    Parse ``single_rat``, ``single_rat:1``, ``single_rat(DSRC 5.9)``,
    ``random`` or ``carhet``.
    """
    if isinstance(text, Scheme):
        return text
    match = _SCHEME_RE.match(str(text).lower())
    kind = match.group(1) if match else None
    if kind not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {text!r}; valid schemes: {', '.join(SCHEMES)}")
    argument = match.group(2)
    if kind != SINGLE_RAT:
        if argument:
            raise ConfigurationError(f"scheme {kind!r} takes no argument")
        return Scheme(kind)
    if not argument:
        return Scheme(SINGLE_RAT, DEFAULT_SINGLE_RAT)
    if argument.isdigit():
        rat_id = int(argument)
        if catalog is not None:
            find_rat(catalog, rat_id)
        return Scheme(SINGLE_RAT, rat_id)
    if catalog is None:
        raise ConfigurationError(f"RAT name {argument!r} needs a catalog to resolve")
    return Scheme(SINGLE_RAT, find_rat(catalog, argument).id)


def random_selection(n_rat: int, rng: np.random.Generator) -> int:
    """Any RAT with equal probability, the current one included."""
    if n_rat < 1:
        raise ConfigurationError("random selection needs at least one RAT")
    return int(rng.integers(n_rat))


def initial_rat(scheme: Scheme, n_rat: int, rng: np.random.Generator) -> int:
    if scheme.kind == SINGLE_RAT:
        return scheme.rat_id
    return random_selection(n_rat, rng)
