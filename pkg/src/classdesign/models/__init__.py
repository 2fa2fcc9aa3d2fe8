from .base import ConstantFamily, Family, generate_labeled_set
from .epidemic import EpidemicFamily, EpiModel, EpiParams, sample_epi_prior, simulate_epi
from .gillespie import ModelDefinitionError, gillespie_simulate
from .logistic import (
    LogisticFamily,
    LogisticModel,
    LogisticParams,
    model_prior,
    sample_logistic_model_and_params,
    simulate_logistic,
)
from .macrophage import (
    MacroModel,
    MacroObservation,
    MacrophageFamily,
    MacroSettings,
    sample_macro_prior,
    simulate_macro,
)


def get_family(name: str, **options) -> Family:
    """Family presets: epi4, epi2, macro, logistic-fe, logistic-re, const-K<k>."""
    if name in ("epi4", "epi2"):
        return EpidemicFamily(name, **options)
    if name == "macro":
        return MacrophageFamily(MacroSettings(**options))
    if name.startswith("logistic-"):
        parts = name.split("-")
        structure = parts[1].upper()
        prior = parts[2] if len(parts) > 2 else options.get("prior", "equal")
        return LogisticFamily(structure, prior)
    if name.startswith("const-K"):
        return ConstantFamily(int(name[len("const-K"):]))
    raise KeyError(f"unknown family {name!r}")
