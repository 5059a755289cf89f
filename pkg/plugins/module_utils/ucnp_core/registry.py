from __future__ import annotations

from typing import Callable

import pandas as pd

from . import figures
from .config import Scenario
from .errors import ConfigError

FigureFactory = Callable[[Scenario], dict[str, pd.DataFrame]]

_REGISTRY: dict[str, FigureFactory] = {}


def register_figure(name: str, factory: FigureFactory) -> None:
    """Register a dataset factory under a figure name."""
    _REGISTRY[name] = factory


def get_figure(name: str) -> FigureFactory:
    """Return the factory for a figure name.

    Raises:
        ConfigError: If the name is not registered.
    """
    try:
        return _REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY)) or "(none)"
        raise ConfigError(f"Unknown figure: {name!r}. Known figures: {known}.") from None


def available_figures() -> list[str]:
    return sorted(_REGISTRY)


register_figure("nb_ion", figures.nb_ion)
register_figure("spike", figures.spike)
register_figure("king_vs_mc", figures.king_vs_mc)
register_figure("simp_king", figures.simp_king)
register_figure("thr_test", figures.thr_test)
register_figure("mk_test", figures.mk_test)
